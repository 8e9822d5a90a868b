"""Category prior registry: reference sizes, canonical up axes, and the
floor / wall / supported membership flags."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping


@dataclass(frozen=True)
class CategoryPrior:
    category: str
    ref_scale: tuple[float, float, float]  # width (x), height (y), depth (z), meters
    canonical_up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    is_floor_class: bool = False
    is_wall_class: bool = False
    is_supported_class: bool = False

    def __post_init__(self):
        if len(self.ref_scale) != 3 or any(not (v > 0) for v in self.ref_scale):
            raise ValueError(f"{self.category}: ref_scale components must be positive")
        n = math.sqrt(sum(c * c for c in self.canonical_up))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"{self.category}: canonical_up must be unit-norm")


PriorRegistry = Mapping[str, CategoryPrior]

# (width, height, depth), floor, wall, supported
_DEFAULT_TABLE = {
    "bed": ((1.6, 0.5, 2.0), True, False, False),
    "sofa": ((2.0, 0.85, 0.9), True, True, False),
    "armchair": ((0.8, 0.9, 0.8), True, False, False),
    "chair": ((0.5, 0.9, 0.5), True, False, False),
    "stool": ((0.4, 0.45, 0.4), True, False, False),
    "dining_table": ((1.6, 0.75, 0.9), True, False, False),
    "coffee_table": ((1.0, 0.45, 0.6), True, False, False),
    "desk": ((1.2, 0.75, 0.6), True, True, False),
    "nightstand": ((0.5, 0.55, 0.4), True, False, False),
    "wardrobe": ((1.2, 2.0, 0.6), True, True, False),
    "bookshelf": ((0.9, 1.8, 0.35), True, True, False),
    "cabinet": ((0.8, 0.9, 0.45), True, True, False),
    "tv_stand": ((1.5, 0.5, 0.45), True, True, False),
    "plant": ((0.5, 1.1, 0.5), True, False, False),
    "table_lamp": ((0.3, 0.5, 0.3), False, False, True),
    "vase": ((0.2, 0.35, 0.2), False, False, True),
    "monitor": ((0.55, 0.4, 0.2), False, False, True),
    "books": ((0.3, 0.25, 0.22), False, False, True),
}

# categories whose top surface hosts supported objects in generated corpora
SUPPORT_HOSTS = ("dining_table", "coffee_table", "desk", "nightstand", "cabinet", "tv_stand")


def default_priors() -> dict[str, CategoryPrior]:
    return {
        name: CategoryPrior(name, scale, (0.0, 1.0, 0.0), floor, wall, sup)
        for name, (scale, floor, wall, sup) in _DEFAULT_TABLE.items()
    }


def load_priors(path: str | Path, base: PriorRegistry | None = None) -> dict[str, CategoryPrior]:
    """Read a priors JSON file and overlay it on ``base`` (default table if None).

    Format: ``{category: {ref_scale: [w,h,d], canonical_up: [x,y,z],
    flags: ["floor", "wall", "supported"]}}``.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    out = dict(default_priors() if base is None else base)
    for name, entry in raw.items():
        flags = set(entry.get("flags", []))
        unknown = flags - {"floor", "wall", "supported"}
        if unknown:
            raise ValueError(f"{name}: unknown prior flags {sorted(unknown)}")
        out[name] = CategoryPrior(
            name,
            tuple(float(v) for v in entry["ref_scale"]),  # type: ignore[arg-type]
            tuple(float(v) for v in entry.get("canonical_up", (0.0, 1.0, 0.0))),  # type: ignore[arg-type]
            "floor" in flags,
            "wall" in flags,
            "supported" in flags,
        )
    return out
