"""NumPy implementations of the evaluation kernels.

Semantics must match the compiled extension bit-for-bit up to libm/SIMD
rounding; the shared protected-operator constants come from the DSL module.
Scores are compared with strict ``>`` while scanning candidates in ascending
index order, so ties always resolve to the lowest index (for bins: the
oldest bin, with the new-bin option scanned last).
"""

from __future__ import annotations

import numpy as np

from ..dsl import (
    DIV_EPS,
    EXP_ARG_CLAMP,
    OP_ABS,
    OP_ADD,
    OP_CONST,
    OP_DIV,
    OP_EXP,
    OP_IFLT,
    OP_LOG,
    OP_MAX,
    OP_MIN,
    OP_MUL,
    OP_NEG,
    OP_POW,
    OP_SQRT,
    OP_SUB,
    OP_VAR,
    POW_EXP_CLAMP,
    RESULT_CLAMP,
    Program,
)


def run_program_batch(program: Program, feats: np.ndarray) -> np.ndarray:
    """Evaluate the program on every row of a (m, n_features) matrix."""
    feats = np.asarray(feats, dtype=np.float64)
    m = feats.shape[0]
    stack = np.empty((program.stack_need, m), dtype=np.float64)
    consts = program.consts
    sp = 0
    with np.errstate(all="ignore"):
        for op, arg in zip(program.ops.tolist(), program.args.tolist()):
            if op == OP_CONST:
                stack[sp] = consts[arg]
                sp += 1
                continue
            if op == OP_VAR:
                stack[sp] = feats[:, arg]
                sp += 1
                continue
            if op == OP_IFLT:
                els = stack[sp - 1]
                then = stack[sp - 2]
                b = stack[sp - 3]
                a = stack[sp - 4]
                sp -= 3
                stack[sp - 1] = np.where(a < b, then, els)
                continue
            if op in (OP_NEG, OP_ABS, OP_SQRT, OP_LOG, OP_EXP):
                x = stack[sp - 1]
                if op == OP_NEG:
                    r = -x
                elif op == OP_ABS:
                    r = np.abs(x)
                elif op == OP_SQRT:
                    r = np.sqrt(np.abs(x))
                elif op == OP_LOG:
                    ax = np.abs(x)
                    r = np.where(ax == 0.0, 0.0, np.log(np.where(ax == 0.0, 1.0, ax)))
                else:
                    r = np.exp(np.clip(x, -EXP_ARG_CLAMP, EXP_ARG_CLAMP))
            else:
                y = stack[sp - 1]
                sp -= 1
                x = stack[sp - 1]
                if op == OP_ADD:
                    r = x + y
                elif op == OP_SUB:
                    r = x - y
                elif op == OP_MUL:
                    r = x * y
                elif op == OP_DIV:
                    small = np.abs(y) < DIV_EPS
                    r = np.where(small, x, x / np.where(small, 1.0, y))
                elif op == OP_MIN:
                    r = np.minimum(x, y)
                elif op == OP_MAX:
                    r = np.maximum(x, y)
                else:  # OP_POW
                    base = np.maximum(x, 0.0)
                    ex = np.clip(y, -POW_EXP_CLAMP, POW_EXP_CLAMP)
                    undef = (base == 0.0) & (ex < 0.0)
                    r = np.power(np.where(undef, 1.0, base), np.where(undef, 0.0, ex))
                    r = np.where(undef, 0.0, r)
            stack[sp - 1] = np.clip(r, -RESULT_CLAMP, RESULT_CLAMP)
    return stack[0].copy()


def run_program(program: Program, feats: np.ndarray) -> float:
    return float(run_program_batch(program, np.asarray(feats, dtype=np.float64)[None, :]))


def tsp_construct(program: Program, dist: np.ndarray, start: int = 0):
    """Build a tour by repeated argmax of the priority rule.

    Feature order: dist_to_cand, dist_cand_to_dest, cand_mean_dist_unvisited,
    cand_min_dist_unvisited, frac_remaining (the destination is the start
    node; candidate-to-rest statistics exclude the candidate itself and are
    0 when no other unvisited node remains).
    """
    n = dist.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    tour = np.empty(n, dtype=np.int32)
    tour[0] = start
    cur = start
    total = 0.0
    for step in range(1, n):
        unv = np.flatnonzero(~visited)
        m = unv.size
        if m == 1:
            mean_rest = np.zeros(1)
            min_rest = np.zeros(1)
        else:
            sub = dist[np.ix_(unv, unv)]
            mean_rest = sub.sum(axis=1) / (m - 1)  # diagonal contributes 0
            np.fill_diagonal(sub, np.inf)
            min_rest = sub.min(axis=1)
        feats = np.empty((m, 5), dtype=np.float64)
        feats[:, 0] = dist[cur, unv]
        feats[:, 1] = dist[unv, start]
        feats[:, 2] = mean_rest
        feats[:, 3] = min_rest
        feats[:, 4] = m / n
        scores = run_program_batch(program, feats)
        nxt = int(unv[int(np.argmax(scores))])
        total += dist[cur, nxt]
        visited[nxt] = True
        tour[step] = nxt
        cur = nxt
    total += dist[cur, start]
    return float(total), tour


def kp_construct(program: Program, values: np.ndarray, weights: np.ndarray, capacity: float):
    """Pack items by repeated argmax over the currently feasible items.

    Feature order: value, weight, remaining_capacity, frac_items_left
    (unpacked items over total, counted before the selection).
    """
    n = values.shape[0]
    avail = np.ones(n, dtype=bool)
    remaining = float(capacity)
    total = 0.0
    order = []
    while True:
        idxs = np.flatnonzero(avail & (weights <= remaining))
        if idxs.size == 0:
            break
        feats = np.empty((idxs.size, 4), dtype=np.float64)
        feats[:, 0] = values[idxs]
        feats[:, 1] = weights[idxs]
        feats[:, 2] = remaining
        feats[:, 3] = avail.sum() / n
        scores = run_program_batch(program, feats)
        pick = int(idxs[int(np.argmax(scores))])
        total += float(values[pick])
        remaining -= float(weights[pick])
        avail[pick] = False
        order.append(pick)
    return total, np.asarray(order, dtype=np.int32)


def bpp_construct(program: Program, sizes: np.ndarray, capacity: int):
    """Place a fixed item sequence into bins chosen by the priority rule.

    Candidates for each item are the feasible open bins (oldest first) plus
    a virtual new bin with residual = capacity, scanned last.  Feature
    order: item_size, bin_residual, frac_bins_open (open bins over total
    item count).
    """
    n = sizes.shape[0]
    residual = np.empty(n, dtype=np.int64)
    assignment = np.empty(n, dtype=np.int32)
    nbins = 0
    for i in range(n):
        s = int(sizes[i])
        open_res = residual[:nbins]
        feas = np.flatnonzero(open_res >= s)
        cand_res = np.concatenate([open_res[feas], [capacity]]).astype(np.float64)
        feats = np.empty((cand_res.size, 3), dtype=np.float64)
        feats[:, 0] = s
        feats[:, 1] = cand_res
        feats[:, 2] = nbins / n
        scores = run_program_batch(program, feats)
        k = int(np.argmax(scores))
        if k == cand_res.size - 1:
            residual[nbins] = capacity - s
            assignment[i] = nbins
            nbins += 1
        else:
            b = int(feas[k])
            residual[b] -= s
            assignment[i] = b
    return nbins, assignment
