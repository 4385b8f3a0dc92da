"""Search tree whose nodes carry two Beta beliefs: their own and their clade's.

A node's clade is the node together with all of its descendants.  Clade
beliefs aggregate every outcome observed inside the clade, attenuated by
lambda_decay ** distance, and are maintained incrementally: recording an
outcome at a node walks the ancestor path once.  `clade_params_bruteforce`
recomputes the same quantity from node-local beliefs by walking the subtree
and exists to cross-check the incremental bookkeeping.

Freezing removes whole clades from consideration.  It cascades downward and
is permanent; a sweep compares clade means on the pre-sweep state so the
outcome does not depend on iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .beliefs import BetaParams, beta_mean
from .dsl import Expr, render


class FrozenCladeError(RuntimeError):
    """Raised when attaching under a frozen node (a policy bug upstream)."""


@dataclass
class TreeConfig:
    lambda_decay: float = 0.8
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    gamma_freeze: float = 0.1
    v_min: int = 10
    freeze_check_interval: int = 10

    def __post_init__(self):
        if not (0.0 <= self.lambda_decay <= 1.0):
            raise ValueError(f"lambda_decay must be in [0, 1], got {self.lambda_decay!r}")
        if self.prior_alpha <= 0 or self.prior_beta <= 0:
            raise ValueError("priors must be positive")
        if not (0.0 <= self.gamma_freeze <= 1.0):
            raise ValueError(f"gamma_freeze must be in [0, 1], got {self.gamma_freeze!r}")
        if self.v_min < 1:
            raise ValueError(f"v_min must be >= 1, got {self.v_min!r}")
        if self.freeze_check_interval < 1:
            raise ValueError("freeze_check_interval must be >= 1")


@dataclass
class SearchNode:
    id: int
    parent: Optional[int]
    depth: int
    heuristic: Optional[Expr]
    local: BetaParams
    clade: BetaParams
    children: list = field(default_factory=list)
    visits: int = 0
    own_evals: int = 0
    frozen: bool = False
    best_raw_score: float = -math.inf
    created_at_eval: int = 0


class SearchTree:
    def __init__(self, config: TreeConfig):
        self.config = config
        prior = BetaParams(config.prior_alpha, config.prior_beta)
        self.nodes = {0: SearchNode(id=0, parent=None, depth=0, heuristic=None, local=prior, clade=prior)}
        self.root_id = 0
        self._next_id = 1

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> SearchNode:
        return self.nodes[node_id]

    @property
    def root(self) -> SearchNode:
        return self.nodes[self.root_id]

    def add_child(self, parent_id: int, heuristic: Optional[Expr], created_at_eval: int = 0) -> int:
        parent = self.nodes[parent_id]
        if parent.frozen:
            raise FrozenCladeError(f"node {parent_id} is frozen; cannot attach children")
        prior = BetaParams(self.config.prior_alpha, self.config.prior_beta)
        nid = self._next_id
        self._next_id += 1
        self.nodes[nid] = SearchNode(
            id=nid,
            parent=parent_id,
            depth=parent.depth + 1,
            heuristic=heuristic,
            local=prior,
            clade=prior,
            created_at_eval=created_at_eval,
        )
        parent.children.append(nid)
        return nid

    def record_outcome(self, node_id: int, outcome: float) -> None:
        """Fold one normalized outcome into the node and every ancestor clade.

        The node's own belief takes the outcome at full weight; ancestor
        clades take it attenuated by lambda ** distance.  Visit counts along
        the path increment by one regardless of attenuation.
        """
        if not (0.0 <= outcome <= 1.0) or not math.isfinite(outcome):
            raise ValueError(f"outcome must be in [0, 1], got {outcome!r}")
        node = self.nodes[node_id]
        node.local = BetaParams(node.local.alpha + outcome, node.local.beta + (1.0 - outcome))
        node.own_evals += 1
        lam = self.config.lambda_decay
        weight = 1.0
        cursor: Optional[SearchNode] = node
        while cursor is not None:
            if weight > 0.0:
                cursor.clade = BetaParams(
                    cursor.clade.alpha + weight * outcome,
                    cursor.clade.beta + weight * (1.0 - outcome),
                )
            cursor.visits += 1
            weight *= lam
            cursor = self.nodes[cursor.parent] if cursor.parent is not None else None

    def update_best_raw(self, node_id: int, raw_score: float) -> None:
        """Propagate a raw objective up the path as a running maximum."""
        cursor: Optional[SearchNode] = self.nodes[node_id]
        while cursor is not None:
            if raw_score > cursor.best_raw_score:
                cursor.best_raw_score = raw_score
            cursor = self.nodes[cursor.parent] if cursor.parent is not None else None

    def subtree_ids(self, node_id: int) -> list:
        out = []
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def clade_params_bruteforce(self, node_id: int) -> BetaParams:
        """Recompute clade parameters from node-local beliefs (test oracle).

        Uses repeated multiplication for the attenuation weights, matching
        the incremental path updates step for step.
        """
        cfg = self.config
        a = cfg.prior_alpha
        b = cfg.prior_beta
        stack = [(node_id, 1.0)]
        while stack:
            nid, weight = stack.pop()
            node = self.nodes[nid]
            if weight > 0.0:
                a += weight * (node.local.alpha - cfg.prior_alpha)
                b += weight * (node.local.beta - cfg.prior_beta)
            for c in node.children:
                stack.append((c, weight * cfg.lambda_decay))
        return BetaParams(a, b)

    def unfrozen_children(self, node_id: int) -> list:
        return [c for c in self.nodes[node_id].children if not self.nodes[c].frozen]

    def frozen_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.frozen)

    def best_unfrozen_clade_mean(self) -> Optional[float]:
        best = None
        for node in self.nodes.values():
            if node.frozen:
                continue
            m = beta_mean(node.clade)
            if best is None or m > best:
                best = m
        return best

    def freeze_clade(self, node_id: int) -> list:
        """Freeze a node and its whole subtree; returns newly frozen ids."""
        newly = []
        for nid in self.subtree_ids(node_id):
            node = self.nodes[nid]
            if not node.frozen:
                node.frozen = True
                newly.append(nid)
        return newly

    def freeze_sweep(self, global_best_mean: float) -> list:
        """Freeze every underperforming, sufficiently visited clade.

        A node qualifies if it is unfrozen, its visit count has reached
        v_min, and its clade mean has fallen below gamma_freeze times
        `global_best_mean`.  Qualification is decided on the pre-sweep state
        for all nodes before any freezing happens, then freezing cascades to
        descendants.  Returns the sorted list of newly frozen ids.
        """
        if not math.isfinite(global_best_mean) or global_best_mean < 0.0:
            raise ValueError(f"global_best_mean must be finite and >= 0, got {global_best_mean!r}")
        threshold = self.config.gamma_freeze * global_best_mean
        candidates = [
            n.id
            for n in self.nodes.values()
            if not n.frozen and n.visits >= self.config.v_min and beta_mean(n.clade) < threshold
        ]
        newly: set = set()
        for nid in candidates:
            newly.update(self.freeze_clade(nid))
        return sorted(newly)

    def to_text(self) -> str:
        """Tab-separated snapshot, one node per line in id order."""
        lines = ["# id\tparent\tdepth\tlocal_alpha\tlocal_beta\tclade_alpha\tclade_beta\tfrozen\texpr"]
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            expr_text = render(n.heuristic) if n.heuristic is not None else "-"
            lines.append(
                "\t".join(
                    [
                        str(n.id),
                        str(-1 if n.parent is None else n.parent),
                        str(n.depth),
                        repr(n.local.alpha),
                        repr(n.local.beta),
                        repr(n.clade.alpha),
                        repr(n.clade.beta),
                        "1" if n.frozen else "0",
                        expr_text,
                    ]
                )
            )
        return "\n".join(lines) + "\n"
