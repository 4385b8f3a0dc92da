"""Selection policies: tempered Thompson sampling over clades, and UCT.

Selection descends from the root, at each level drawing one score per
unfrozen child and moving to the argmax, until a node with no unfrozen
children is reached.  Thompson scores are Beta samples from the child's
belief after two transforms: stabilization toward the child's own mean,
then tempering by the cooling temperature for the current budget progress.
A level with exactly one live child is traversed without drawing (the
argmax over a singleton is that child), which keeps deep chain-shaped
trees cheap without changing which node is selected.

Ties resolve to the lowest node id: candidates are scanned in ascending id
order under strict ``>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List

from .beliefs import Rng, beta_mean, sample_beta, stabilize, temper, temperature
from .tree import SearchTree

MODES = ("clade_thompson", "node_thompson", "uct")


class SearchExhaustedError(RuntimeError):
    """The whole tree is frozen; nothing remains to select."""


@dataclass
class PolicyConfig:
    mode: str = "clade_thompson"
    n_pseudo: float = 10.0
    omega_cool: float = 1.0
    budget: int = 1000
    uct_c: float = 1.41
    stabilize_anchor: str = "node"  # anchor mean: "node" (own record) or "clade"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_pseudo < 0:
            raise ValueError("n_pseudo must be nonnegative")
        if self.omega_cool < 0:
            raise ValueError("omega_cool must be nonnegative")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.uct_c < 0:
            raise ValueError("uct_c must be nonnegative")
        if self.stabilize_anchor not in ("node", "clade"):
            raise ValueError(f"stabilize_anchor must be 'node' or 'clade', got {self.stabilize_anchor!r}")


@dataclass
class SelectionResult:
    path: List[int]
    chosen: int
    samples: Dict[int, float]  # child id -> drawn score at contested levels


def progress(evals_done: int, budget: int) -> float:
    """Fraction of budget consumed, held strictly below 1 for the scheduler."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if evals_done < 0:
        raise ValueError("evals_done must be nonnegative")
    return min(evals_done / budget, 1.0 - 1.0 / budget)


def uct_score(child_visits, parent_visits, q_value: float, c: float) -> float:
    """Mean value plus the usual log-visit exploration bonus."""
    if child_visits < 1:
        raise ValueError("child_visits must be >= 1 (unvisited children are picked directly)")
    if parent_visits < 0:
        raise ValueError("parent_visits must be nonnegative")
    return q_value + c * math.sqrt(math.log(parent_visits + 1.0) / child_visits)


def select(tree: SearchTree, cfg: PolicyConfig, evals_done: int, rng: Rng) -> SelectionResult:
    if cfg.mode == "uct":
        return select_uct(tree, cfg, evals_done, rng)
    return select_thompson(tree, cfg, evals_done, rng)


def select_thompson(tree: SearchTree, cfg: PolicyConfig, evals_done: int, rng: Rng) -> SelectionResult:
    root = tree.root
    if root.frozen:
        raise SearchExhaustedError("root clade is frozen")
    tau = temperature(progress(evals_done, cfg.budget), cfg.omega_cool)
    use_clade = cfg.mode == "clade_thompson"
    cur = root
    path = [root.id]
    samples: Dict[int, float] = {}
    while True:
        cands = tree.unfrozen_children(cur.id)
        if not cands:
            return SelectionResult(path, cur.id, samples)
        if len(cands) == 1:
            cur = tree.node(cands[0])
            path.append(cur.id)
            continue
        best_id = -1
        best_s = -math.inf
        for cid in cands:
            child = tree.node(cid)
            base = child.clade if use_clade else child.local
            anchor = beta_mean(child.local if cfg.stabilize_anchor == "node" else child.clade)
            belief = temper(stabilize(base, anchor, cfg.n_pseudo), tau)
            s = sample_beta(belief, rng)
            samples[cid] = s
            if s > best_s:
                best_s = s
                best_id = cid
        cur = tree.node(best_id)
        path.append(best_id)


def select_uct(tree: SearchTree, cfg: PolicyConfig, evals_done: int, rng: Rng) -> SelectionResult:
    root = tree.root
    if root.frozen:
        raise SearchExhaustedError("root clade is frozen")
    cur = root
    path = [root.id]
    samples: Dict[int, float] = {}
    while True:
        cands = tree.unfrozen_children(cur.id)
        if not cands:
            return SelectionResult(path, cur.id, samples)
        best_id = -1
        best_s = -math.inf
        for cid in cands:
            child = tree.node(cid)
            if child.visits == 0:
                best_id = cid  # unvisited children take absolute priority
                break
            s = uct_score(child.visits, cur.visits, beta_mean(child.local), cfg.uct_c)
            samples[cid] = s
            if s > best_s:
                best_s = s
                best_id = cid
        cur = tree.node(best_id)
        path.append(best_id)
