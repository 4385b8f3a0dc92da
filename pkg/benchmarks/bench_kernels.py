"""Compare the compiled evaluation kernels against the NumPy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat N] [--tsp-n N] [--batch N]

Times the expression interpreter and the three constructive rollouts on the
same inputs under both backends and prints a speedup table.  Run with
CLADESEARCH_FORCE_FALLBACK unset so the compiled extension is importable.
"""

import argparse
import time

import numpy as np

from cladesearch import _kernels
from cladesearch.beliefs import make_rng
from cladesearch.dsl import compile_expr, parse
from cladesearch.problems.evaluate import BPP_SCHEMA, KP_SCHEMA, TSP_SCHEMA

TSP_RULE = "sub(neg(dist_to_cand), mul(0.3, max(dist_cand_to_dest, cand_min_dist_unvisited)))"
KP_RULE = "div_p(value, weight)"
BPP_RULE = "neg(sub(bin_residual, item_size))"


def time_call(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions, best-of")
    ap.add_argument("--tsp-n", type=int, default=100, help="TSP instance size")
    ap.add_argument("--kp-n", type=int, default=2000, help="KP item count")
    ap.add_argument("--bpp-n", type=int, default=5000, help="BPP item count")
    ap.add_argument("--batch", type=int, default=200_000, help="interpreter batch rows")
    args = ap.parse_args()

    if _kernels.compiled is None:
        ap.error(
            "compiled extension not importable (is CLADESEARCH_FORCE_FALLBACK set, "
            "or was the package installed without building extensions?)"
        )

    rng = make_rng(0)
    coords = rng.random((args.tsp_n, 2))
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    dist = np.ascontiguousarray(dist)
    values = rng.random(args.kp_n)
    weights = rng.random(args.kp_n)
    sizes = np.clip(np.ceil(45.0 * rng.weibull(3.0, args.bpp_n)), 1, 100).astype(np.int64)
    tsp_prog = compile_expr(parse(TSP_RULE, TSP_SCHEMA.feature_names), TSP_SCHEMA.feature_names)
    kp_prog = compile_expr(parse(KP_RULE, KP_SCHEMA.feature_names), KP_SCHEMA.feature_names)
    bpp_prog = compile_expr(parse(BPP_RULE, BPP_SCHEMA.feature_names), BPP_SCHEMA.feature_names)
    feats = rng.random((args.batch, len(TSP_SCHEMA.feature_names)))

    cases = [
        ("run_program_batch", lambda b: b.run_program_batch(tsp_prog, feats)),
        ("tsp_construct", lambda b: b.tsp_construct(tsp_prog, dist)),
        ("kp_construct", lambda b: b.kp_construct(kp_prog, values, weights, 0.25 * args.kp_n)),
        ("bpp_construct", lambda b: b.bpp_construct(bpp_prog, sizes, 100)),
    ]

    print(f"{'kernel':<20} {'compiled':>12} {'fallback':>12} {'speedup':>9}")
    for name, call in cases:
        t_c, out_c = time_call(lambda: call(_kernels.compiled), args.repeat)
        t_f, out_f = time_call(lambda: call(_kernels.fallback), args.repeat)
        flag = "" if _matches(out_c, out_f) else "  MISMATCH"
        print(f"{name:<20} {t_c * 1e3:>10.2f}ms {t_f * 1e3:>10.2f}ms {t_f / t_c:>8.1f}x{flag}")


def _matches(a, b) -> bool:
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_matches(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


if __name__ == "__main__":
    main()
