"""Compiled evaluation kernels.

Mirrors fallback.py exactly: same opcode numbering, same protected-operator
semantics, same lowest-index tie-breaking (strict > over an ascending scan).
The opcode values and numeric guards are duplicated here as C constants;
test_kernels asserts they agree with the DSL module.
"""

cimport cython
from libc.math cimport fabs, sqrt, log, exp, pow

import numpy as np


cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_NEG = 2
    OP_ABS = 3
    OP_SQRT = 4
    OP_LOG = 5
    OP_EXP = 6
    OP_ADD = 7
    OP_SUB = 8
    OP_MUL = 9
    OP_DIV = 10
    OP_MIN = 11
    OP_MAX = 12
    OP_POW = 13
    OP_IFLT = 14

cdef double RESULT_CLAMP = 1e300
cdef double DIV_EPS = 1e-9
cdef double EXP_ARG_CLAMP = 30.0
cdef double POW_EXP_CLAMP = 5.0

OPCODES = {
    "OP_CONST": OP_CONST, "OP_VAR": OP_VAR, "OP_NEG": OP_NEG, "OP_ABS": OP_ABS,
    "OP_SQRT": OP_SQRT, "OP_LOG": OP_LOG, "OP_EXP": OP_EXP, "OP_ADD": OP_ADD,
    "OP_SUB": OP_SUB, "OP_MUL": OP_MUL, "OP_DIV": OP_DIV, "OP_MIN": OP_MIN,
    "OP_MAX": OP_MAX, "OP_POW": OP_POW, "OP_IFLT": OP_IFLT,
}
GUARDS = {
    "RESULT_CLAMP": RESULT_CLAMP, "DIV_EPS": DIV_EPS,
    "EXP_ARG_CLAMP": EXP_ARG_CLAMP, "POW_EXP_CLAMP": POW_EXP_CLAMP,
}


cdef inline double _clamp(double x) nogil:
    if x > RESULT_CLAMP:
        return RESULT_CLAMP
    if x < -RESULT_CLAMP:
        return -RESULT_CLAMP
    return x


cdef double _run(const int* ops, const int* args, const double* consts,
                 int n_ops, const double* feats, double* stack) nogil:
    cdef int k, sp = 0
    cdef int op
    cdef double x, y, a, b, t, e, base, ex, r
    for k in range(n_ops):
        op = ops[k]
        if op == OP_CONST:
            stack[sp] = consts[args[k]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = feats[args[k]]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = _clamp(-stack[sp - 1])
        elif op == OP_ABS:
            stack[sp - 1] = _clamp(fabs(stack[sp - 1]))
        elif op == OP_SQRT:
            stack[sp - 1] = _clamp(sqrt(fabs(stack[sp - 1])))
        elif op == OP_LOG:
            x = stack[sp - 1]
            stack[sp - 1] = 0.0 if x == 0.0 else _clamp(log(fabs(x)))
        elif op == OP_EXP:
            x = stack[sp - 1]
            if x > EXP_ARG_CLAMP:
                x = EXP_ARG_CLAMP
            elif x < -EXP_ARG_CLAMP:
                x = -EXP_ARG_CLAMP
            stack[sp - 1] = _clamp(exp(x))
        elif op == OP_IFLT:
            e = stack[sp - 1]
            t = stack[sp - 2]
            b = stack[sp - 3]
            a = stack[sp - 4]
            sp -= 3
            stack[sp - 1] = t if a < b else e
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
                r = x if fabs(y) < DIV_EPS else x / y
            elif op == OP_MIN:
                r = x if x < y else y
            elif op == OP_MAX:
                r = x if x > y else y
            else:  # OP_POW
                base = x if x > 0.0 else 0.0
                ex = y
                if ex > POW_EXP_CLAMP:
                    ex = POW_EXP_CLAMP
                elif ex < -POW_EXP_CLAMP:
                    ex = -POW_EXP_CLAMP
                if base == 0.0 and ex < 0.0:
                    r = 0.0
                else:
                    r = pow(base, ex)
            stack[sp - 1] = _clamp(r)
    return stack[0]


cdef class _Prog:
    # Borrowed, decoded view of a dsl.Program for the duration of one call.
    cdef const int[::1] ops
    cdef const int[::1] args
    cdef const double[::1] consts
    cdef double[::1] stack
    cdef int n_ops

    def __cinit__(self, program):
        self.ops = program.ops
        self.args = program.args
        self.consts = np.ascontiguousarray(program.consts, dtype=np.float64)
        self.stack = np.empty(max(program.stack_need, 1), dtype=np.float64)
        self.n_ops = self.ops.shape[0]

    cdef inline double run(self, const double* feats) nogil:
        return _run(&self.ops[0], &self.args[0],
                    &self.consts[0] if self.consts.shape[0] else NULL,
                    self.n_ops, feats, &self.stack[0])


def run_program(program, feats):
    cdef _Prog prog = _Prog(program)
    cdef const double[::1] f = np.ascontiguousarray(feats, dtype=np.float64)
    return float(prog.run(&f[0]))


def run_program_batch(program, feats):
    cdef _Prog prog = _Prog(program)
    cdef const double[:, ::1] f = np.ascontiguousarray(feats, dtype=np.float64)
    cdef Py_ssize_t m = f.shape[0]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(m):
        out[i] = prog.run(&f[i, 0])
    return out_arr


def tsp_construct(program, dist, int start=0):
    """Greedy tour construction; see fallback.tsp_construct for semantics."""
    cdef _Prog prog = _Prog(program)
    cdef const double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef int n = d.shape[0]
    tour_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] tour = tour_arr
    visited_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] visited = visited_arr
    cdef double feats[5]
    cdef int step, j, k, m, cur, best_j
    cdef double total = 0.0, s, mn, dd, score, best_score
    cur = start
    visited[start] = 1
    tour[0] = start
    for step in range(1, n):
        m = n - step
        best_score = 0.0
        best_j = -1
        feats[4] = (<double> m) / n
        for j in range(n):
            if visited[j]:
                continue
            s = 0.0
            mn = 0.0
            if m > 1:
                mn = -1.0
                for k in range(n):
                    if visited[k] or k == j:
                        continue
                    dd = d[j, k]
                    s += dd
                    if mn < 0.0 or dd < mn:
                        mn = dd
                s /= (m - 1)
            feats[0] = d[cur, j]
            feats[1] = d[j, start]
            feats[2] = s
            feats[3] = mn
            score = prog.run(feats)
            if best_j < 0 or score > best_score:
                best_score = score
                best_j = j
        total += d[cur, best_j]
        visited[best_j] = 1
        tour[step] = best_j
        cur = best_j
    total += d[cur, start]
    return float(total), tour_arr


def kp_construct(program, values, weights, double capacity):
    """Greedy packing; see fallback.kp_construct for semantics."""
    cdef _Prog prog = _Prog(program)
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int n = v.shape[0]
    avail_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] avail = avail_arr
    order_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] order = order_arr
    cdef double feats[4]
    cdef int j, best_j, navail = n, picked = 0
    cdef double remaining = capacity, total = 0.0, score, best_score
    while True:
        best_j = -1
        best_score = 0.0
        feats[2] = remaining
        feats[3] = (<double> navail) / n
        for j in range(n):
            if not avail[j] or w[j] > remaining:
                continue
            feats[0] = v[j]
            feats[1] = w[j]
            score = prog.run(feats)
            if best_j < 0 or score > best_score:
                best_score = score
                best_j = j
        if best_j < 0:
            break
        total += v[best_j]
        remaining -= w[best_j]
        avail[best_j] = 0
        navail -= 1
        order[picked] = best_j
        picked += 1
    return float(total), order_arr[:picked].copy()


def bpp_construct(program, sizes, long long capacity):
    """Online bin placement; see fallback.bpp_construct for semantics."""
    cdef _Prog prog = _Prog(program)
    cdef const long long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef int n = sz.shape[0]
    residual_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] residual = residual_arr
    assignment_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] assignment = assignment_arr
    cdef double feats[3]
    cdef int i, b, nbins = 0, best_b
    cdef long long s
    cdef double score, best_score
    for i in range(n):
        s = sz[i]
        feats[0] = <double> s
        feats[2] = (<double> nbins) / n
        best_b = -1
        best_score = 0.0
        for b in range(nbins):
            if residual[b] >= s:
                feats[1] = <double> residual[b]
                score = prog.run(feats)
                if best_b < 0 or score > best_score:
                    best_score = score
                    best_b = b
        feats[1] = <double> capacity
        score = prog.run(feats)
        if best_b < 0 or score > best_score:
            best_b = nbins
        if best_b == nbins:
            residual[nbins] = capacity - s
            assignment[i] = nbins
            nbins += 1
        else:
            residual[best_b] -= s
            assignment[i] = best_b
    return nbins, assignment_arr
