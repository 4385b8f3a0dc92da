"""Constructive evaluators and feature schemas.

raw_score orientation is uniform: larger is better.  Minimization tasks
(tour length, bin count) are negated at this boundary so the Beta "success"
semantics upstream never need to know the problem sense.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .. import _kernels
from ..dsl import Expr, compile_expr
from .instances import BppInstance, KpInstance, TspInstance


@dataclass(frozen=True)
class FeatureSchema:
    kind: str
    feature_names: Tuple[str, ...]


TSP_SCHEMA = FeatureSchema(
    "tsp",
    (
        "dist_to_cand",              # current -> candidate
        "dist_cand_to_dest",         # candidate -> destination (the start node)
        "cand_mean_dist_unvisited",  # candidate -> other unvisited, mean (0 if none)
        "cand_min_dist_unvisited",   # candidate -> other unvisited, min (0 if none)
        "frac_remaining",            # |unvisited| / n before this selection
    ),
)
KP_SCHEMA = FeatureSchema("kp", ("value", "weight", "remaining_capacity", "frac_items_left"))
BPP_SCHEMA = FeatureSchema("bpp", ("item_size", "bin_residual", "frac_bins_open"))
ACO_TSP_SCHEMA = FeatureSchema("aco_tsp", ("d_ij", "d_j_mean", "d_j_min"))

SCHEMAS_BY_KIND = {s.kind: s for s in (TSP_SCHEMA, KP_SCHEMA, BPP_SCHEMA, ACO_TSP_SCHEMA)}


@dataclass
class EvalResult:
    raw_score: float
    per_instance: list
    wall_time: float


def tsp_features(instance: TspInstance, current: int, candidate: int, destination: int, unvisited) -> np.ndarray:
    """Reference feature computation for one candidate (mirrors the kernels)."""
    d = instance.dist
    others = [u for u in unvisited if u != candidate]
    if others:
        rest = d[candidate, others]
        mean_rest = float(rest.mean())
        min_rest = float(rest.min())
    else:
        mean_rest = min_rest = 0.0
    return np.array(
        [
            d[current, candidate],
            d[candidate, destination],
            mean_rest,
            min_rest,
            len(unvisited) / instance.n,
        ],
        dtype=np.float64,
    )


def eval_tsp_constructive(expr: Expr, instances: Sequence[TspInstance]) -> EvalResult:
    """Greedy tours on every instance; raw_score = -mean(tour length)."""
    program = compile_expr(expr, TSP_SCHEMA.feature_names)
    t0 = time.perf_counter()
    lengths = []
    for inst in instances:
        length, tour = _kernels.tsp_construct(program, inst.dist, 0)
        assert sorted(tour.tolist()) == list(range(inst.n)), "tour is not a permutation"
        lengths.append(length)
    wall = time.perf_counter() - t0
    return EvalResult(raw_score=-float(np.mean(lengths)), per_instance=lengths, wall_time=wall)


def eval_kp_constructive(expr: Expr, instances: Sequence[KpInstance]) -> EvalResult:
    """Greedy packing on every instance; raw_score = mean(total value)."""
    program = compile_expr(expr, KP_SCHEMA.feature_names)
    t0 = time.perf_counter()
    totals = []
    for inst in instances:
        total, order = _kernels.kp_construct(program, inst.values, inst.weights, inst.capacity)
        assert inst.weights[order].sum() <= inst.capacity + 1e-9, "capacity exceeded"
        totals.append(total)
    wall = time.perf_counter() - t0
    return EvalResult(raw_score=float(np.mean(totals)), per_instance=totals, wall_time=wall)


def eval_bpp_online(expr: Expr, instances: Sequence[BppInstance]) -> EvalResult:
    """Online placement; objective = bins used, raw_score = -mean(gap% to lower bound)."""
    program = compile_expr(expr, BPP_SCHEMA.feature_names)
    t0 = time.perf_counter()
    bins_used = []
    gaps = []
    for inst in instances:
        bins, assignment = _kernels.bpp_construct(program, inst.sizes, inst.capacity)
        loads = np.bincount(assignment, weights=inst.sizes.astype(np.float64), minlength=bins)
        assert loads.max(initial=0.0) <= inst.capacity, "bin capacity exceeded"
        lb = inst.lower_bound
        assert bins >= lb, "beat the volume lower bound"
        bins_used.append(bins)
        gaps.append(100.0 * (bins - lb) / lb)
    wall = time.perf_counter() - t0
    return EvalResult(raw_score=-float(np.mean(gaps)), per_instance=bins_used, wall_time=wall)


def write_per_instance_csv(path, result: EvalResult) -> None:
    with open(path, "w") as fh:
        fh.write("instance_index,objective\n")
        for i, obj in enumerate(result.per_instance):
            fh.write(f"{i},{obj!r}\n")
