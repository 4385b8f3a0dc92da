"""Heuristic generation backends.

Two interchangeable sources of new candidate rules: a seeded mock that
applies DSL variation operators (the default, fully offline), and an HTTP
chat-completion adapter that fills prompt templates and parses expression
text out of the reply.  Both return the same GeneratedHeuristic shape, so
the search loop never knows which one it is talking to.
"""

from __future__ import annotations

import enum
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional, Tuple

from .beliefs import Rng
from .dsl import (
    DslError,
    Expr,
    blend,
    crossover,
    mutate_parametric,
    mutate_structural,
    parse,
    random_expr,
    render,
    validate,
)
from .problems.evaluate import FeatureSchema

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    """A backend could not produce a usable heuristic."""


class ActionKind(str, enum.Enum):
    I1 = "i1"   # fresh random rule
    E1 = "e1"   # divergent crossover against the pool
    E2 = "e2"   # elitist crossover: target x best-of-pool
    M1 = "m1"   # structural mutation of the target
    M2 = "m2"   # parametric mutation of the target
    S1 = "s1"   # synthesis over the pool


ALL_ACTIONS: Tuple[ActionKind, ...] = tuple(ActionKind)
POOL_ACTIONS = frozenset({ActionKind.E1, ActionKind.E2, ActionKind.S1})
TARGET_ACTIONS = frozenset({ActionKind.M1, ActionKind.M2, ActionKind.E2})


@dataclass(frozen=True)
class PoolEntry:
    expr: Expr
    description: str
    raw_score: float


@dataclass
class GenerationContext:
    action: ActionKind
    schema: FeatureSchema
    task_description: str
    target_node_id: Optional[int] = None
    target_expr: Optional[Expr] = None
    target_description: str = ""
    target_raw_score: Optional[float] = None
    parent_pool: Tuple[PoolEntry, ...] = ()

    def __post_init__(self):
        self.action = ActionKind(self.action)
        self.parent_pool = tuple(self.parent_pool)
        if self.action in POOL_ACTIONS and len(self.parent_pool) < 2:
            raise ValueError(f"action {self.action.value} needs a parent pool of at least 2")
        scores = [p.raw_score for p in self.parent_pool]
        if scores != sorted(scores, reverse=True):
            raise ValueError("parent pool must be sorted best (highest raw score) first")
        if self.action in TARGET_ACTIONS and self.target_expr is None:
            raise ValueError(f"action {self.action.value} needs a target expression")


@dataclass
class GeneratedHeuristic:
    expr: Expr
    description: str
    source: str                      # "mock" | "llm"
    raw_reply: Optional[str] = None


# ------------------------------------------------------------------ prompts

# Task blurbs shown to the model.  The TSP one doubles as the canonical
# example in the template suite; the others follow its register.
TASK_DESCRIPTIONS = {
    "tsp": (
        "Solving Traveling Salesman Problem (TSP) with constructive heuristics. "
        "TSP requires finding the shortest path that visits all given nodes and "
        "returns to the starting node."
    ),
    "kp": (
        "Solving a 0-1 Knapsack Problem (KP) with constructive heuristics. KP "
        "requires selecting a subset of items that maximizes the total value "
        "without exceeding the knapsack capacity."
    ),
    "bpp": (
        "Solving an online Bin Packing Problem (BPP) with placement heuristics. "
        "Online BPP requires assigning each arriving item to a bin immediately "
        "so that the number of bins used is minimized."
    ),
    "aco_tsp": (
        "Solving Traveling Salesman Problem (TSP) with a heuristic-guided ant "
        "colony framework. The heuristic scores every directed edge; shorter "
        "tours are better."
    ),
}

_SIGNATURES = {
    "tsp": (
        "Implement it in Python as a function named 'select_next_node'.\n"
        "This function should accept 4 input(s): 'current_node', 'destination_node', "
        "'unvisited_nodes', 'distance_matrix'.\n"
        "The function should return 1 output(s): 'next_node'. The select next node "
        "function takes as input the current node, the destination node, a set of "
        "unvisited nodes, and a distance matrix, and returns the next node to visit."
    ),
    "kp": (
        "Implement it in Python as a function named 'select_next_item'.\n"
        "This function should accept 4 input(s): 'remaining_capacity', 'remaining_items', "
        "'item_values', 'item_weights'.\n"
        "The function should return 1 output(s): 'next_item'. The select next item "
        "function takes as input the remaining knapsack capacity, the indices of the "
        "remaining items, the item values, and the item weights, and returns the next "
        "item to pack."
    ),
    "bpp": (
        "Implement it in Python as a function named 'score'.\n"
        "This function should accept 2 input(s): 'item', 'bins'.\n"
        "The function should return 1 output(s): 'scores'. The score function takes as "
        "input the size of the arriving item and the rest capacities of feasible bins, "
        "and returns the scores for the bins; the item is placed in the bin with the "
        "highest score."
    ),
    "aco_tsp": (
        "Implement it in Python as a function named 'heuristics'.\n"
        "This function should accept 1 input(s): 'distance_matrix'.\n"
        "The function should return 1 output(s): 'heuristics_matrix'. The heuristics "
        "function takes as input a distance matrix and returns prior indicators of how "
        "promising it is to include each edge in a solution; larger values mark more "
        "promising edges."
    ),
}


def _load_template(name: str) -> str:
    return resources.files("cladesearch.prompts").joinpath(f"{name}.txt").read_text()


def _objective(entry: PoolEntry) -> float:
    # prompts speak the minimization dialect: objective = -raw_score
    return -entry.raw_score


def _enumerated_parents(entries) -> str:
    lines = [f"I have {len(entries)} existing algorithms with their codes as follows:"]
    for i, entry in enumerate(entries, start=1):
        lines.append(
            f"No.{i} algorithm's description, its corresponding code, and its objective value are:"
        )
        lines.append(f"{{{entry.description}}}")
        lines.append(render(entry.expr))
        lines.append(f"objective value: {_objective(entry)!r}")
    return "\n".join(lines)


def build_prompt(ctx: GenerationContext) -> str:
    """Deterministic prompt text for a generation request."""
    action = ctx.action
    if action == ActionKind.I1:
        parents = ""
    elif action in (ActionKind.M1, ActionKind.M2):
        parents = "\n".join(
            [
                "I have one algorithm with its code as follows:",
                "# Its Description",
                f"{{{ctx.target_description}}}",
                "# It's Python Code Implementation of A Function",
                render(ctx.target_expr),
            ]
        )
    elif action == ActionKind.E2:
        # No.1 = elite of the pool, No.2 = the node being expanded
        best = ctx.parent_pool[0]
        target_obj = (
            "unknown" if ctx.target_raw_score is None else repr(-ctx.target_raw_score)
        )
        pairs = [
            (best.description, best.expr, repr(_objective(best))),
            (ctx.target_description, ctx.target_expr, target_obj),
        ]
        lines = ["I have 2 existing algorithms with their codes as follows:"]
        for i, (desc, expr, obj) in enumerate(pairs, start=1):
            lines.append(
                f"No.{i} algorithm's description, its corresponding code, and its objective value are:"
            )
            lines.append(f"{{{desc}}}")
            lines.append(render(expr))
            lines.append(f"objective value: {obj}")
        parents = "\n".join(lines)
    else:  # E1, S1
        parents = _enumerated_parents(ctx.parent_pool)
    preamble = _load_template("preamble").format(
        features=", ".join(ctx.schema.feature_names)
    )
    body = _load_template(action.value).format(
        task=ctx.task_description,
        parents=parents,
        signature=_SIGNATURES[ctx.schema.kind],
    )
    return preamble + "\n" + body


# ------------------------------------------------------------------ mock


class MockGenerator:
    """Seeded DSL variation. Pure function of (context, rng state)."""

    source = "mock"
    _RETRIES = 8

    def generate(self, ctx: GenerationContext, rng: Rng) -> GeneratedHeuristic:
        features = ctx.schema.feature_names
        expr = None
        for _ in range(self._RETRIES):
            candidate = self._dispatch(ctx, rng)
            try:
                validate(candidate, features)
            except DslError:
                continue
            expr = candidate
            break
        if expr is None:
            expr = random_expr(features, rng, max_depth=4)
        return GeneratedHeuristic(expr=expr, description=self._describe(ctx), source=self.source)

    def _dispatch(self, ctx: GenerationContext, rng: Rng) -> Expr:
        features = ctx.schema.feature_names
        action = ctx.action
        if action == ActionKind.I1:
            return random_expr(features, rng, max_depth=4)
        if action == ActionKind.M1:
            return mutate_structural(ctx.target_expr, features, rng)
        if action == ActionKind.M2:
            return mutate_parametric(ctx.target_expr, rng)
        if action == ActionKind.E2:
            # donate from the elite into the target's structure
            return crossover(ctx.parent_pool[0].expr, ctx.target_expr, rng)
        if action == ActionKind.E1:
            return blend([p.expr for p in ctx.parent_pool], features, rng, mode="novel")
        if action == ActionKind.S1:
            return blend([p.expr for p in ctx.parent_pool], features, rng, mode="sum")
        raise GenerationError(f"unhandled action {action!r}")

    @staticmethod
    def _describe(ctx: GenerationContext) -> str:
        return {
            ActionKind.I1: "random initial priority rule",
            ActionKind.M1: "structural variation of the parent rule",
            ActionKind.M2: "reweighted constants of the parent rule",
            ActionKind.E2: "parent rule spliced with the current best",
            ActionKind.E1: "fresh structure avoiding the current population",
            ActionKind.S1: "weighted combination of population components",
        }[ctx.action]


# ------------------------------------------------------------------ llm


@dataclass
class LlmConfig:
    endpoint: str
    model: str
    api_key_env: str = "CLADESEARCH_API_KEY"
    temperature: float = 1.0
    timeout: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4
    verbose: bool = False

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*\s*\n(.*?)```", re.DOTALL)
_BRACE_RE = re.compile(r"\{(.*?)\}", re.DOTALL)


def extract_heuristic(reply: str, schema: FeatureSchema) -> Tuple[Expr, str]:
    """Pull (expression, description) out of free-form reply text.

    The description is the first brace-delimited span (empty if absent).
    The expression is the first text block that parses: fenced code blocks
    are tried first, then every line of the reply with the description
    stripped out.
    """
    if not reply or not reply.strip():
        raise GenerationError("empty reply")
    m = _BRACE_RE.search(reply)
    description = m.group(1).strip() if m else ""
    candidates = []
    for block in _FENCE_RE.findall(reply):
        block = block.strip()
        if block:
            candidates.append(block)
            candidates.extend(line.strip() for line in block.splitlines() if line.strip())
    plain = _BRACE_RE.sub(" ", reply, count=1)
    candidates.extend(line.strip() for line in plain.splitlines() if line.strip())
    for cand in candidates:
        try:
            expr = parse(cand, schema.feature_names)
        except DslError:
            continue
        return expr, description
    raise GenerationError("no parseable expression in reply")


def _default_transport(url: str, payload: dict, headers: dict, timeout: float):
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = {"raw": resp.text}
    return resp.status_code, body


class LlmGenerator:
    """Chat-completion adapter.

    transport is injectable for tests: a callable
    (url, payload, headers, timeout) -> (status_code, body_dict).
    Total wall time per generate() call is bounded by
    timeout * (max_retries + 1), backoff sleeps included.
    """

    source = "llm"

    def __init__(
        self,
        cfg: LlmConfig,
        transport: Optional[Callable] = None,
        sleep=time.sleep,
        clock=time.monotonic,
    ):
        self.cfg = cfg
        self._transport = transport or _default_transport
        self._sleep = sleep
        self._clock = clock
        self._gate = threading.BoundedSemaphore(cfg.max_in_flight)

    def generate(self, ctx: GenerationContext, rng: Rng = None) -> GeneratedHeuristic:
        cfg = self.cfg
        key = os.environ.get(cfg.api_key_env, "")
        if not key:
            raise GenerationError(f"API key environment variable {cfg.api_key_env} is not set")
        prompt = build_prompt(ctx)
        payload = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
        }
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        deadline = self._clock() + cfg.timeout * (cfg.max_retries + 1)
        last_error = "exhausted retries"
        for attempt in range(cfg.max_retries + 1):
            remaining = deadline - self._clock()
            if remaining <= 0:
                break
            self._log(attempt, payload)
            try:
                with self._gate:
                    status, body = self._transport(
                        cfg.endpoint, payload, headers, min(cfg.timeout, remaining)
                    )
            except Exception as exc:  # transport-level failure, retryable
                last_error = f"transport error: {exc}"
                self._backoff(attempt, deadline)
                continue
            if status == 429 or status >= 500:
                last_error = f"HTTP {status}"
                self._backoff(attempt, deadline)
                continue
            if status != 200:
                raise GenerationError(f"HTTP {status}: {_truncate(body)}")
            reply = _reply_text(body)
            try:
                expr, description = extract_heuristic(reply, ctx.schema)
            except GenerationError as exc:
                last_error = str(exc)
                self._backoff(attempt, deadline)
                continue
            return GeneratedHeuristic(
                expr=expr, description=description, source=self.source, raw_reply=reply
            )
        raise GenerationError(f"generation failed: {last_error}")

    def _backoff(self, attempt: int, deadline: float) -> None:
        pause = min(0.5 * (2.0 ** attempt), max(0.0, deadline - self._clock()))
        if pause > 0:
            self._sleep(pause)

    def _log(self, attempt: int, payload: dict) -> None:
        emit = log.info if self.cfg.verbose else log.debug
        emit(
            "llm request attempt=%d model=%s auth=Bearer *** chars=%d",
            attempt,
            payload["model"],
            len(payload["messages"][0]["content"]),
        )


def _reply_text(body: dict) -> str:
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise GenerationError(f"malformed completion body: {_truncate(body)}")


def _truncate(body, limit: int = 200) -> str:
    text = repr(body)
    return text if len(text) <= limit else text[: limit - 3] + "..."
