"""Planner configuration."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional


@dataclass
class NavConfig:
    """Tunables shared by map extraction, graph construction and planning.

    Distances are meters, times milliseconds. Fields left as ``None`` are
    derived from ``resolution`` / ``inflation_radius`` (see the properties).
    """

    resolution: float = 0.15
    slab_height: float = 0.5
    z_floor: float = 0.0
    z_ceiling: float = 10.0
    inflation_radius: float = 0.3
    knn_k: int = 3
    knn_radius: Optional[float] = None
    simplify_epsilon: Optional[float] = None
    sample_count: int = 5
    time_budget: float = 20.0
    local_extent: float = 60.0
    disappear_frames: int = 5
    correspondence_tolerance: Optional[float] = None
    max_refine_iterations: int = 2
    rng_seed: int = 0
    # When set, wall-clock budgets are not enforced so outputs depend only on inputs.
    deterministic: bool = True

    def __post_init__(self) -> None:
        positive = ["resolution", "slab_height", "time_budget", "local_extent"]
        for name in positive:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.inflation_radius < 0:
            raise ValueError("inflation_radius must be >= 0")
        if self.z_ceiling <= self.z_floor:
            raise ValueError("z_ceiling must be above z_floor")
        for name in ("knn_k", "disappear_frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sample_count < 0 or self.max_refine_iterations < 0:
            raise ValueError("sample_count and max_refine_iterations must be >= 0")

    @property
    def knn_search_radius(self) -> float:
        if self.knn_radius is not None:
            return self.knn_radius
        return max(2.0 * self.inflation_radius, self.resolution)

    @property
    def epsilon(self) -> float:
        if self.simplify_epsilon is not None:
            return self.simplify_epsilon
        return 2.0 * self.resolution

    @property
    def match_tolerance(self) -> float:
        if self.correspondence_tolerance is not None:
            return self.correspondence_tolerance
        return 2.0 * self.resolution

    @property
    def n_slabs(self) -> int:
        return max(1, int(math.ceil((self.z_ceiling - self.z_floor) / self.slab_height - 1e-9)))

    def slabs(self):
        from visnav.geometry import LayerSlab

        h = self.slab_height
        return [
            LayerSlab(i, self.z_floor + i * h, self.z_floor + (i + 1) * h)
            for i in range(self.n_slabs)
        ]

    def replace(self, **changes: Any) -> "NavConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NavConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "NavConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        return cls.from_dict(data.get("nav", data))
