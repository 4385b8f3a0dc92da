"""Problem instances: generation and JSON-lines persistence.

All generators are seeded and reproducible.  Distance matrices are derived
from coordinates on construction and never serialized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..beliefs import make_rng


def _euclidean_matrix(coords: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    return np.ascontiguousarray(d)


@dataclass
class TspInstance:
    coords: np.ndarray                 # (n, 2) points in the unit square
    dist: np.ndarray = field(default=None)  # (n, n) Euclidean, derived
    ref: Optional[float] = None        # reference tour length, if known

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.dist is None:
            self.dist = _euclidean_matrix(self.coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass
class KpInstance:
    values: np.ndarray
    weights: np.ndarray
    capacity: float
    ref: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class BppInstance:
    sizes: np.ndarray          # arrival order fixed
    capacity: int
    tag: str = ""

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if self.sizes.size and not (1 <= self.sizes.min() and self.sizes.max() <= self.capacity):
            raise ValueError("item sizes must lie in [1, capacity]")

    @property
    def n(self) -> int:
        return self.sizes.shape[0]

    @property
    def lower_bound(self) -> int:
        return int(math.ceil(self.sizes.sum() / self.capacity))


def gen_tsp(n: int, count: int, seed) -> list:
    if n < 3:
        raise ValueError("TSP instances need n >= 3")
    rng = make_rng(seed)
    return [TspInstance(coords=rng.random((n, 2))) for _ in range(count)]


def gen_kp(n: int, capacity: float, count: int, seed) -> list:
    if n < 1:
        raise ValueError("KP instances need n >= 1")
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        values = rng.random(n)
        weights = rng.random(n)
        out.append(KpInstance(values=values, weights=weights, capacity=float(capacity)))
    return out


def gen_bpp_weibull(n_items: int, capacity: int, shape: float, scale: float, count: int, seed, tag: str = "") -> list:
    """Item sizes ceil(min(sample, capacity)) with sample ~ Weibull(shape, scale)."""
    if shape <= 0 or scale <= 0:
        raise ValueError("Weibull shape and scale must be positive")
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        raw = scale * rng.weibull(shape, n_items)
        sizes = np.clip(np.ceil(np.minimum(raw, capacity)), 1, capacity).astype(np.int64)
        out.append(BppInstance(sizes=sizes, capacity=int(capacity), tag=tag))
    return out


# Mixture of short/long sequences and small/large capacities.  The Weibull
# scale grows with capacity (0.45 * C) so every cell keeps a comparable
# items-per-bin profile; with the scale pinned at the small-capacity value,
# large bins pack near-perfectly and the configuration stops discriminating
# between placement rules.
BPP_MIXTURE_CELLS = ((1000, 100), (1000, 500), (5000, 100), (5000, 500))
WEIBULL_SHAPE = 3.0
WEIBULL_SCALE_FACTOR = 0.45


def gen_bpp_mixture(seed, count_per_cell: int = 1, shape: float = WEIBULL_SHAPE) -> list:
    out = []
    for i, (n_items, capacity) in enumerate(BPP_MIXTURE_CELLS):
        out.extend(
            gen_bpp_weibull(
                n_items,
                capacity,
                shape,
                WEIBULL_SCALE_FACTOR * capacity,
                count_per_cell,
                np.random.SeedSequence([_seed_int(seed), i]),
                tag=f"n{n_items}_c{capacity}",
            )
        )
    return out


def _seed_int(seed) -> int:
    return int(seed) & 0xFFFFFFFF


def save_instances(path, instances) -> None:
    """One JSON document per line with a `kind` tag."""
    with open(path, "w") as fh:
        for inst in instances:
            if isinstance(inst, TspInstance):
                doc = {"kind": "tsp", "coords": inst.coords.tolist(), "ref": inst.ref}
            elif isinstance(inst, KpInstance):
                doc = {
                    "kind": "kp",
                    "values": inst.values.tolist(),
                    "weights": inst.weights.tolist(),
                    "capacity": inst.capacity,
                    "ref": inst.ref,
                }
            elif isinstance(inst, BppInstance):
                doc = {
                    "kind": "bpp",
                    "sizes": inst.sizes.tolist(),
                    "capacity": inst.capacity,
                    "tag": inst.tag,
                }
            else:
                raise TypeError(f"unknown instance type {type(inst)!r}")
            fh.write(json.dumps(doc) + "\n")


def load_instances(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        kind = doc.get("kind")
        if kind == "tsp":
            out.append(TspInstance(coords=np.asarray(doc["coords"]), ref=doc.get("ref")))
        elif kind == "kp":
            out.append(
                KpInstance(
                    values=np.asarray(doc["values"]),
                    weights=np.asarray(doc["weights"]),
                    capacity=float(doc["capacity"]),
                    ref=doc.get("ref"),
                )
            )
        elif kind == "bpp":
            out.append(
                BppInstance(
                    sizes=np.asarray(doc["sizes"], dtype=np.int64),
                    capacity=int(doc["capacity"]),
                    tag=doc.get("tag", ""),
                )
            )
        else:
            raise ValueError(f"unknown instance kind {kind!r} in {path}")
    return out


def dataset_kind(instances) -> str:
    kinds = {type(i).__name__ for i in instances}
    if len(kinds) != 1:
        raise ValueError(f"mixed-kind dataset: {sorted(kinds)}")
    return {"TspInstance": "tsp", "KpInstance": "kp", "BppInstance": "bpp"}[kinds.pop()]
