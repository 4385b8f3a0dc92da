"""Priority-rule expression language: AST, parser, compiler, variation operators.

Expressions are small arithmetic trees over named features.  Every operator
is total: division, sqrt, log, exp, and pow are protected so any expression
evaluates to a finite float on finite inputs.  The same semantics are
implemented three times (tree walk here, NumPy batch fallback, compiled
kernel) and cross-checked in tests; the shared numeric constants below are
the single source of truth for all three.

Size limits: depth <= 8 (a leaf has depth 0) and <= 64 nodes.  The variation
operators (random generation, mutation, crossover, blending) all revalidate
against these limits and fall back to the unmodified input after a bounded
number of retries, so they never raise on valid input.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .beliefs import Rng, _polar_normal

MAX_DEPTH = 8
MAX_NODES = 64

# Protected-operator constants, shared verbatim by every evaluator backend.
RESULT_CLAMP = 1e300   # every operator result is clamped to +/- this
DIV_EPS = 1e-9         # |denominator| below this returns the numerator
EXP_ARG_CLAMP = 30.0   # exp argument clamped to +/- this
POW_EXP_CLAMP = 5.0    # pow exponent clamped to +/- this

UNARY_OPS = ("neg", "abs", "sqrt_p", "log_p", "exp_c")
BINARY_OPS = ("add", "sub", "mul", "div_p", "min", "max", "pow_c")


class DslError(ValueError):
    """Invalid expression: bad operator, unknown variable, or size limits."""


class ParseError(DslError):
    """Syntax or validation failure with a 0-based source position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class _Node:
    __slots__ = ()

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True)
class Const(_Node):
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v):
            raise DslError(f"constant must be finite, got {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Var(_Node):
    name: str

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.name or ""):
            raise DslError(f"invalid variable name {self.name!r}")


@dataclass(frozen=True)
class Unary(_Node):
    op: str
    arg: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise DslError(f"unknown unary operator {self.op!r}")


@dataclass(frozen=True)
class Binary(_Node):
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise DslError(f"unknown binary operator {self.op!r}")


@dataclass(frozen=True)
class IfLess(_Node):
    """iflt(a, b, then, otherwise): `then` if a < b else `otherwise`.

    Both branches are evaluated; selection happens on values, which keeps
    the compiled form branch-free.
    """

    a: "Expr"
    b: "Expr"
    then: "Expr"
    otherwise: "Expr"


Expr = Union[Const, Var, Unary, Binary, IfLess]


def children(e: Expr) -> tuple:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, IfLess):
        return (e.a, e.b, e.then, e.otherwise)
    return ()


def _with_children(e: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(e, Unary):
        return Unary(e.op, kids[0])
    if isinstance(e, Binary):
        return Binary(e.op, kids[0], kids[1])
    if isinstance(e, IfLess):
        return IfLess(kids[0], kids[1], kids[2], kids[3])
    return e


def expr_size(e: Expr) -> int:
    return 1 + sum(expr_size(c) for c in children(e))


def expr_depth(e: Expr) -> int:
    kids = children(e)
    return 0 if not kids else 1 + max(expr_depth(c) for c in kids)


def subtree_paths(e: Expr) -> list:
    """Preorder list of paths; a path is a tuple of child indices from the root."""
    out = []

    def walk(node, path):
        out.append(path)
        for i, c in enumerate(children(node)):
            walk(c, path + (i,))

    walk(e, ())
    return out


def subtree_at(e: Expr, path: tuple) -> Expr:
    node = e
    for i in path:
        node = children(node)[i]
    return node


def replace_at(e: Expr, path: tuple, sub: Expr) -> Expr:
    if not path:
        return sub
    kids = list(children(e))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], sub)
    return _with_children(e, kids)


def validate(e: Expr, features: Optional[Sequence[str]] = None) -> None:
    """Raise DslError if the expression breaks size limits or names unknown variables."""
    if expr_depth(e) > MAX_DEPTH:
        raise DslError(f"expression depth {expr_depth(e)} exceeds limit {MAX_DEPTH}")
    if expr_size(e) > MAX_NODES:
        raise DslError(f"expression size {expr_size(e)} exceeds limit {MAX_NODES}")
    if features is not None:
        allowed = set(features)
        for path in subtree_paths(e):
            node = subtree_at(e, path)
            if isinstance(node, Var) and node.name not in allowed:
                raise DslError(f"unknown variable {node.name!r}")


def free_variables(e: Expr) -> set:
    out = set()
    for path in subtree_paths(e):
        node = subtree_at(e, path)
        if isinstance(node, Var):
            out.add(node.name)
    return out


# ---------------------------------------------------------------------------
# Rendering and parsing


def _format_const(v: float) -> str:
    return repr(v)


def render(e: Expr) -> str:
    """Canonical text form; parse(render(e)) reproduces e exactly."""
    if isinstance(e, Const):
        return _format_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"{e.op}({render(e.arg)})"
    if isinstance(e, Binary):
        return f"{e.op}({render(e.left)}, {render(e.right)})"
    if isinstance(e, IfLess):
        return "iflt({}, {}, {}, {})".format(
            render(e.a), render(e.b), render(e.then), render(e.otherwise)
        )
    raise DslError(f"not an expression node: {e!r}")


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),+-])
    """,
    re.VERBOSE,
)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(text: str) -> list:
    tokens = []
    line = col = 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(_Token(kind if kind != "punct" else chunk, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n") - 1
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, features):
        self.tokens = tokens
        self.i = 0
        self.features = None if features is None else set(features)

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.peek()
        if tok.kind != kind:
            shown = tok.text or "end of input"
            raise ParseError(f"expected {kind!r}, found {shown!r}", tok.line, tok.col)
        return self.advance()

    def parse_expr(self) -> Expr:
        tok = self.peek()
        if tok.kind in ("+", "-"):
            sign = self.advance()
            num = self.expect("number")
            v = float(num.text)
            return self.make_const(-v if sign.kind == "-" else v, num)
        if tok.kind == "number":
            num = self.advance()
            return self.make_const(float(num.text), num)
        if tok.kind == "name":
            name = self.advance()
            if self.peek().kind != "(":
                if self.features is not None and name.text not in self.features:
                    raise ParseError(f"unknown variable {name.text!r}", name.line, name.col)
                return Var(name.text)
            self.advance()  # "("
            args = [self.parse_expr()]
            while self.peek().kind == ",":
                self.advance()
                args.append(self.parse_expr())
            self.expect(")")
            return self.make_call(name, args)
        shown = tok.text or "end of input"
        raise ParseError(f"expected an expression, found {shown!r}", tok.line, tok.col)

    def make_const(self, v: float, tok: _Token) -> Const:
        try:
            return Const(v)
        except DslError as exc:
            raise ParseError(str(exc), tok.line, tok.col) from None

    def make_call(self, name: _Token, args: list) -> Expr:
        # Operator names are resolved after the argument list so that a
        # truncated call reports the position where input ran out, not the name.
        op = name.text
        if op in UNARY_OPS:
            want = 1
        elif op in BINARY_OPS:
            want = 2
        elif op == "iflt":
            want = 4
        else:
            raise ParseError(f"unknown operator {op!r}", name.line, name.col)
        if len(args) != want:
            raise ParseError(
                f"{op!r} takes {want} argument(s), got {len(args)}", name.line, name.col
            )
        if want == 1:
            return Unary(op, args[0])
        if want == 2:
            return Binary(op, args[0], args[1])
        return IfLess(*args)


def parse(text: str, features: Optional[Sequence[str]] = None) -> Expr:
    """Parse canonical call syntax, e.g. ``div_p(value, weight)``.

    Whitespace-insensitive.  If `features` is given, variable names outside
    it are rejected.  Size limits are enforced after parsing.  All failures
    raise ParseError with 0-based line/column of the offending token.
    """
    tokens = _tokenize(text)
    parser = _Parser(tokens, features)
    expr = parser.parse_expr()
    tail = parser.peek()
    if tail.kind != "eof":
        raise ParseError(f"unexpected trailing input {tail.text!r}", tail.line, tail.col)
    try:
        validate(expr)
    except DslError as exc:
        raise ParseError(str(exc), 0, 0) from None
    return expr


def structure_signature(e: Expr) -> str:
    """Shape plus operator and variable labels; constant values erased."""
    if isinstance(e, Const):
        return "C"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"{e.op}({structure_signature(e.arg)})"
    if isinstance(e, Binary):
        return f"{e.op}({structure_signature(e.left)},{structure_signature(e.right)})"
    return "iflt({},{},{},{})".format(
        *(structure_signature(c) for c in children(e))
    )


def structure_hash(e: Expr) -> int:
    """Process-independent hash of structure_signature (constants ignored)."""
    digest = hashlib.blake2b(structure_signature(e).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# Reference evaluation (tree walk)


def _clamp(x: float) -> float:
    if x > RESULT_CLAMP:
        return RESULT_CLAMP
    if x < -RESULT_CLAMP:
        return -RESULT_CLAMP
    return x


def _apply_unary(op: str, x: float) -> float:
    if op == "neg":
        return -x
    if op == "abs":
        return abs(x)
    if op == "sqrt_p":
        return math.sqrt(abs(x))
    if op == "log_p":
        return 0.0 if x == 0.0 else math.log(abs(x))
    # exp_c
    return math.exp(min(max(x, -EXP_ARG_CLAMP), EXP_ARG_CLAMP))


def _apply_binary(op: str, x: float, y: float) -> float:
    if op == "add":
        return x + y
    if op == "sub":
        return x - y
    if op == "mul":
        return x * y
    if op == "div_p":
        return x if abs(y) < DIV_EPS else x / y
    if op == "min":
        return min(x, y)
    if op == "max":
        return max(x, y)
    # pow_c: base floored at 0, exponent clamped; 0^negative defined as 0
    base = max(x, 0.0)
    exp = min(max(y, -POW_EXP_CLAMP), POW_EXP_CLAMP)
    if base == 0.0 and exp < 0.0:
        return 0.0
    try:
        return base ** exp
    except OverflowError:
        return RESULT_CLAMP


def evaluate(e: Expr, features: dict) -> float:
    """Reference tree-walk evaluation; features maps variable name to value."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(features[e.name])
    if isinstance(e, Unary):
        return _clamp(_apply_unary(e.op, evaluate(e.arg, features)))
    if isinstance(e, Binary):
        x = evaluate(e.left, features)
        y = evaluate(e.right, features)
        return _clamp(_apply_binary(e.op, x, y))
    a = evaluate(e.a, features)
    b = evaluate(e.b, features)
    t = evaluate(e.then, features)
    o = evaluate(e.otherwise, features)
    return t if a < b else o


# ---------------------------------------------------------------------------
# Compilation to a flat postfix program

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

_UNARY_OPCODE = {"neg": OP_NEG, "abs": OP_ABS, "sqrt_p": OP_SQRT, "log_p": OP_LOG, "exp_c": OP_EXP}
_BINARY_OPCODE = {
    "add": OP_ADD,
    "sub": OP_SUB,
    "mul": OP_MUL,
    "div_p": OP_DIV,
    "min": OP_MIN,
    "max": OP_MAX,
    "pow_c": OP_POW,
}


@dataclass(frozen=True)
class Program:
    """Postfix form of an expression, ready for the evaluation kernels."""

    ops: np.ndarray      # int32, opcode per instruction
    args: np.ndarray     # int32, const index / feature index (0 otherwise)
    consts: np.ndarray   # float64 constant pool
    stack_need: int
    n_features: int


def compile_expr(e: Expr, features: Sequence[str]) -> Program:
    """Flatten to postfix against an ordered feature list.

    Raises DslError for unknown variables or size violations, so a compiled
    program is always safe to hand to a kernel.
    """
    validate(e, features)
    index = {name: i for i, name in enumerate(features)}
    ops: list = []
    args: list = []
    consts: list = []

    def emit(node: Expr):
        if isinstance(node, Const):
            ops.append(OP_CONST)
            args.append(len(consts))
            consts.append(node.value)
        elif isinstance(node, Var):
            ops.append(OP_VAR)
            args.append(index[node.name])
        elif isinstance(node, Unary):
            emit(node.arg)
            ops.append(_UNARY_OPCODE[node.op])
            args.append(0)
        elif isinstance(node, Binary):
            emit(node.left)
            emit(node.right)
            ops.append(_BINARY_OPCODE[node.op])
            args.append(0)
        else:
            for c in children(node):
                emit(c)
            ops.append(OP_IFLT)
            args.append(0)

    emit(e)
    depth = need = 0
    for op in ops:
        if op in (OP_CONST, OP_VAR):
            depth += 1
        elif op == OP_IFLT:
            depth -= 3
        elif op >= OP_ADD:
            depth -= 1
        need = max(need, depth)
    return Program(
        ops=np.asarray(ops, dtype=np.int32),
        args=np.asarray(args, dtype=np.int32),
        consts=np.asarray(consts, dtype=np.float64),
        stack_need=need,
        n_features=len(features),
    )


# ---------------------------------------------------------------------------
# Variation operators


def _random_const(rng: Rng) -> Const:
    return Const(float(rng.uniform(-2.0, 2.0)))


def random_expr(features: Sequence[str], rng: Rng, max_depth: int = 4) -> Expr:
    """Grow-style random expression within the global size limits."""
    if not features:
        raise DslError("feature list must be nonempty")
    max_depth = min(max_depth, MAX_DEPTH)

    def gen(depth_left: int, allow: int) -> Expr:
        # `allow` bounds this subtree's node count, so the result can never
        # break the global size limit regardless of sibling choices.
        kinds = []
        if depth_left > 0:
            if allow >= 2:
                kinds.append("unary")
            if allow >= 3:
                kinds.extend(["binary", "binary"])  # weight toward binary ops
            if allow >= 5:
                kinds.append("iflt")
        if not kinds or rng.random() < 0.25:
            if rng.random() < 0.7:
                return Var(features[int(rng.integers(len(features)))])
            return _random_const(rng)
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "unary":
            return Unary(UNARY_OPS[int(rng.integers(len(UNARY_OPS)))], gen(depth_left - 1, allow - 1))
        if kind == "binary":
            op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
            share = (allow - 1) // 2
            return Binary(op, gen(depth_left - 1, share), gen(depth_left - 1, share))
        share = (allow - 1) // 4
        return IfLess(*(gen(depth_left - 1, share) for _ in range(4)))

    return gen(max_depth, MAX_NODES)


_MUTATION_RETRIES = 8


def mutate_structural(e: Expr, features: Sequence[str], rng: Rng) -> Expr:
    """Replace a uniformly chosen subtree with a fresh random expression.

    Revalidates against the size limits; after bounded retries the input is
    returned unchanged.
    """
    paths = subtree_paths(e)
    for _ in range(_MUTATION_RETRIES):
        path = paths[int(rng.integers(len(paths)))]
        room = MAX_DEPTH - len(path)
        sub = random_expr(features, rng, max_depth=min(3, room))
        cand = replace_at(e, path, sub)
        if expr_size(cand) <= MAX_NODES and expr_depth(cand) <= MAX_DEPTH:
            return cand
    return e


def _lognormal_factor(rng: Rng, sigma: float = 0.3) -> float:
    return math.exp(sigma * _polar_normal(rng))


def mutate_parametric(e: Expr, rng: Rng) -> Expr:
    """Jitter constants by lognormal factors; leaves structure intact.

    Each constant is rescaled with probability 1/2.  An expression with no
    constants gets one: a uniformly chosen variable occurrence is wrapped as
    mul(Const(c), var), giving later parametric mutations a handle.
    """
    const_paths = [p for p in subtree_paths(e) if isinstance(subtree_at(e, p), Const)]
    if const_paths:
        out = e
        for path in const_paths:
            if rng.random() < 0.5:
                node = subtree_at(out, path)
                out = replace_at(out, path, Const(node.value * _lognormal_factor(rng)))
        return out
    var_paths = [p for p in subtree_paths(e) if isinstance(subtree_at(e, p), Var)]
    if not var_paths:
        return e
    path = var_paths[int(rng.integers(len(var_paths)))]
    wrapped = Binary("mul", Const(_lognormal_factor(rng)), subtree_at(e, path))
    cand = replace_at(e, path, wrapped)
    if expr_size(cand) <= MAX_NODES and expr_depth(cand) <= MAX_DEPTH:
        return cand
    return e


def crossover(a: Expr, b: Expr, rng: Rng) -> Expr:
    """Replace a uniformly chosen subtree of b with one donated by a."""
    b_paths = subtree_paths(b)
    a_paths = subtree_paths(a)
    for _ in range(_MUTATION_RETRIES):
        donor = subtree_at(a, a_paths[int(rng.integers(len(a_paths)))])
        site = b_paths[int(rng.integers(len(b_paths)))]
        cand = replace_at(b, site, donor)
        if expr_size(cand) <= MAX_NODES and expr_depth(cand) <= MAX_DEPTH:
            return cand
    return b


def blend(parents: Sequence[Expr], features: Sequence[str], rng: Rng, mode: str) -> Expr:
    """Combine a parent pool into one expression.

    mode="novel": a fresh random expression whose structure differs from
    every parent (structure hash comparison); falls back to a structural
    mutation of the first parent if novelty keeps colliding.

    mode="sum": weighted sum w1*s_i + w2*s_j of random subtrees taken from
    two distinct parents, weights uniform on (0, 1).
    """
    if len(parents) < 2:
        raise DslError("blend requires at least two parents")
    if mode == "novel":
        seen = {structure_hash(p) for p in parents}
        for _ in range(_MUTATION_RETRIES):
            cand = random_expr(features, rng, max_depth=4)
            if structure_hash(cand) not in seen:
                return cand
        return mutate_structural(parents[0], features, rng)
    if mode == "sum":
        for _ in range(_MUTATION_RETRIES):
            i = int(rng.integers(len(parents)))
            j = int(rng.integers(len(parents) - 1))
            if j >= i:
                j += 1
            pi, pj = parents[i], parents[j]
            si = subtree_at(pi, subtree_paths(pi)[int(rng.integers(expr_size(pi)))])
            sj = subtree_at(pj, subtree_paths(pj)[int(rng.integers(expr_size(pj)))])
            w1, w2 = float(rng.random()), float(rng.random())
            cand = Binary(
                "add",
                Binary("mul", Const(w1), si),
                Binary("mul", Const(w2), sj),
            )
            if expr_size(cand) <= MAX_NODES and expr_depth(cand) <= MAX_DEPTH:
                return cand
        return mutate_structural(parents[0], features, rng)
    raise DslError(f"unknown blend mode {mode!r}")
