"""Ant System TSP solver whose edge-desirability matrix comes from a DSL rule.

The expression scores each directed edge from per-edge features; scores are
shifted to be strictly positive and plugged into the classic Ant System
loop (probability ∝ tau^alpha * eta^beta over unvisited, evaporation, then
best-of-iteration deposit).  Ants are vectorized with NumPy; the only
wall-clock guard in the package lives here because iterations, not single
evaluations, dominate the cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..beliefs import Rng
from ..dsl import Expr, compile_expr
from .evaluate import ACO_TSP_SCHEMA
from .instances import TspInstance

ETA_EPS = 1e-6


@dataclass
class AcoConfig:
    ants: int = 10
    iterations: int = 50
    alpha_pher: float = 1.0
    beta_heur: float = 2.0
    rho_evap: float = 0.1
    tau_init: float = 1.0
    q_deposit: float = 1.0
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.ants < 1 or self.iterations < 1:
            raise ValueError("ants and iterations must be >= 1")
        if not (0.0 <= self.rho_evap < 1.0):
            raise ValueError("rho_evap must be in [0, 1)")
        if self.tau_init <= 0 or self.q_deposit <= 0 or self.timeout_s <= 0:
            raise ValueError("tau_init, q_deposit, timeout_s must be positive")


def build_eta(expr: Expr, instance: TspInstance) -> np.ndarray:
    """Edge desirability matrix, shifted to be strictly positive off-diagonal."""
    d = instance.dist
    n = instance.n
    off = ~np.eye(n, dtype=bool)
    # column stats exclude the self-distance
    col_sum = d.sum(axis=0)
    col_mean = col_sum / (n - 1)
    masked = np.where(off, d, np.inf)
    col_min = masked.min(axis=0)
    feats = np.empty((n * n, 3), dtype=np.float64)
    feats[:, 0] = d.reshape(-1)
    feats[:, 1] = np.broadcast_to(col_mean, (n, n)).reshape(-1)
    feats[:, 2] = np.broadcast_to(col_min, (n, n)).reshape(-1)
    program = compile_expr(expr, ACO_TSP_SCHEMA.feature_names)
    scores = np.asarray(_kernels.run_program_batch(program, feats)).reshape(n, n)
    shift = scores[off].min()
    eta = np.maximum(scores - shift + ETA_EPS, ETA_EPS)
    eta[~off] = 0.0
    return eta


def _tour_lengths(d: np.ndarray, tours: np.ndarray) -> np.ndarray:
    closed = np.concatenate([tours, tours[:, :1]], axis=1)
    return d[closed[:, :-1], closed[:, 1:]].sum(axis=1)


def aco_solve_tsp(expr: Expr, instance: TspInstance, cfg: AcoConfig, rng: Rng) -> float:
    """Best tour length found by Ant System guided by the expression."""
    d = instance.dist
    n = instance.n
    eta = build_eta(expr, instance)
    tau = np.full((n, n), cfg.tau_init, dtype=np.float64)
    best_len = np.inf
    deadline = time.monotonic() + cfg.timeout_s
    ants = cfg.ants
    for _ in range(cfg.iterations):
        with np.errstate(all="ignore"):
            weight = (tau ** cfg.alpha_pher) * (eta ** cfg.beta_heur)
        np.fill_diagonal(weight, 0.0)
        tours = np.empty((ants, n), dtype=np.int64)
        start = rng.integers(n, size=ants)
        tours[:, 0] = start
        visited = np.zeros((ants, n), dtype=bool)
        visited[np.arange(ants), start] = True
        current = start.copy()
        for step in range(1, n):
            w = weight[current].copy()
            w[visited] = 0.0
            totals = w.sum(axis=1)
            # degenerate rows (all-zero mass) fall back to uniform over unvisited
            bad = totals <= 0.0
            if bad.any():
                w[bad] = (~visited[bad]).astype(np.float64)
                totals = w.sum(axis=1)
            cum = np.cumsum(w, axis=1)
            u = rng.random(ants) * totals
            nxt = (cum < u[:, None]).sum(axis=1)
            nxt = np.minimum(nxt, n - 1)
            # guard against landing on a visited cell through rounding
            stuck = visited[np.arange(ants), nxt]
            if stuck.any():
                nxt[stuck] = np.argmax(w[stuck], axis=1)
            tours[:, step] = nxt
            visited[np.arange(ants), nxt] = True
            current = nxt
        lengths = _tour_lengths(d, tours)
        it_best = int(np.argmin(lengths))
        it_len = float(lengths[it_best])
        if it_len < best_len:
            best_len = it_len
        tau *= 1.0 - cfg.rho_evap
        path = tours[it_best]
        closed = np.concatenate([path, path[:1]])
        deposit = cfg.q_deposit / it_len
        tau[closed[:-1], closed[1:]] += deposit
        tau[closed[1:], closed[:-1]] += deposit
        # checked after the work so even a tiny budget completes one iteration
        if time.monotonic() > deadline:
            break
    return float(best_len)


def eval_tsp_aco(expr: Expr, instances, cfg: AcoConfig, rng: Rng):
    """EvalResult-style wrapper: raw_score = -mean(best length)."""
    from .evaluate import EvalResult

    t0 = time.perf_counter()
    lengths = [aco_solve_tsp(expr, inst, cfg, rng) for inst in instances]
    return EvalResult(
        raw_score=-float(np.mean(lengths)),
        per_instance=lengths,
        wall_time=time.perf_counter() - t0,
    )
