"""The search harness: selection, generation, evaluation, belief update, freezing.

One coordinating loop owns the tree, the normalizer, and every CSV write.
Evaluation can fan out to a small thread pool (eval_workers > 1); outcomes
are always applied in submission order, so runs stay deterministic at any
width with the mock backend.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .beliefs import stream_rng, temperature
from .dsl import Expr, render
from .generators import (
    ActionKind,
    GeneratedHeuristic,
    GenerationContext,
    GenerationError,
    LlmConfig,
    LlmGenerator,
    MockGenerator,
    PoolEntry,
    TASK_DESCRIPTIONS,
)
from .policy import PolicyConfig, SearchExhaustedError, progress, select
from .problems.aco import AcoConfig, eval_tsp_aco
from .problems.evaluate import (
    SCHEMAS_BY_KIND,
    eval_bpp_online,
    eval_kp_constructive,
    eval_tsp_constructive,
)
from .problems.instances import (
    dataset_kind,
    gen_bpp_mixture,
    gen_kp,
    gen_tsp,
    load_instances,
)
from .problems.normalize import Normalizer
from .tree import SearchTree, TreeConfig

PROBLEMS = ("tsp", "kp", "bpp", "tsp_aco", "deep_payoff")
EXPANSION_ACTIONS = (ActionKind.E1, ActionKind.E2, ActionKind.M1, ActionKind.M2, ActionKind.S1)

# named sub-streams of the master seed; changing the policy or backend must
# never perturb instance generation, so each concern gets its own stream
STREAM_INSTANCES = 0
STREAM_POLICY = 1
STREAM_GENERATOR = 2
STREAM_ACTIONS = 3
STREAM_EVAL = 4

# latent success probabilities of the synthetic two-branch environment:
# branch A looks poor at its root but pays off from depth 2 down, branch B
# is uniformly mediocre
DEEP_A_ROOT = 0.2
DEEP_A_DEEP = 0.9
DEEP_B = 0.6

TRACE_COLUMNS = (
    "eval_index",
    "node_id",
    "parent_id",
    "action",
    "raw_score",
    "outcome",
    "global_best_raw",
    "frozen_count",
    "temperature",
)


@dataclass
class TraceRow:
    eval_index: int
    node_id: int
    parent_id: int
    action: str
    raw_score: float
    outcome: float
    global_best_raw: float
    frozen_count: int
    temperature: float

    def to_csv_line(self) -> str:
        return ",".join(
            [
                str(self.eval_index),
                str(self.node_id),
                str(self.parent_id),
                self.action,
                repr(self.raw_score),
                repr(self.outcome),
                repr(self.global_best_raw),
                str(self.frozen_count),
                repr(self.temperature),
            ]
        )


@dataclass
class RunTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(row.to_csv_line() + "\n")

    def best_curve(self) -> List[float]:
        return [r.global_best_raw for r in self.rows]


@dataclass
class BestHeuristic:
    expr: Optional[Expr]
    description: str
    raw_score: float
    found_at_eval: int


@dataclass
class RunConfig:
    problem: str = "tsp"
    # instance generation (field prefix picks which block applies)
    tsp_n: int = 20
    tsp_count: int = 32
    kp_n: int = 50
    kp_capacity: float = 12.5
    kp_count: int = 64
    bpp_count_per_cell: int = 1
    instances_path: Optional[str] = None
    aco: AcoConfig = field(default_factory=AcoConfig)
    # search machinery
    tree: TreeConfig = field(default_factory=TreeConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    backend: str = "mock"
    llm: Optional[LlmConfig] = None
    n_init: int = 4
    pool_size: int = 10
    action_weights: Dict[str, float] = field(
        default_factory=lambda: {a.value: 1.0 for a in EXPANSION_ACTIONS}
    )
    s1_parents: str = "pool"  # "path" reserved, not implemented
    normalizer_mode: str = "fractional"
    eval_workers: int = 1
    # seeding and output
    seed: int = 0
    instance_seed: Optional[int] = None  # pin across runs for fair comparisons
    outdir: Optional[str] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.policy.budget < self.n_init:
            raise ValueError(
                f"budget ({self.policy.budget}) must cover initialization ({self.n_init})"
            )
        if self.backend not in ("mock", "llm"):
            raise ValueError(f"backend must be 'mock' or 'llm', got {self.backend!r}")
        if self.backend == "llm" and self.llm is None:
            raise ValueError("backend 'llm' needs an LlmConfig")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.eval_workers < 1:
            raise ValueError("eval_workers must be >= 1")
        if self.s1_parents not in ("pool", "path"):
            raise ValueError(f"s1_parents must be 'pool' or 'path', got {self.s1_parents!r}")
        if self.s1_parents == "path":
            raise NotImplementedError("s1_parents='path' is reserved and not implemented")
        unknown = set(self.action_weights) - {a.value for a in EXPANSION_ACTIONS}
        if unknown:
            raise ValueError(f"unknown actions in action_weights: {sorted(unknown)}")
        if any(w < 0 for w in self.action_weights.values()):
            raise ValueError("action weights must be nonnegative")


# ------------------------------------------------------------------ problems


class _DslProblem:
    """Bundles a dataset with its evaluator and prompt context."""

    def __init__(self, cfg: RunConfig):
        kind = {"tsp": "tsp", "kp": "kp", "bpp": "bpp", "tsp_aco": "aco_tsp"}[cfg.problem]
        self.schema = SCHEMAS_BY_KIND[kind]
        self.task_description = TASK_DESCRIPTIONS[kind]
        self.aco_cfg = cfg.aco
        self.master_seed = cfg.seed
        self.is_aco = cfg.problem == "tsp_aco"
        seed = cfg.seed if cfg.instance_seed is None else cfg.instance_seed
        if cfg.instances_path is not None:
            self.instances = load_instances(cfg.instances_path)
            got = dataset_kind(self.instances)
            want = "tsp" if self.is_aco else cfg.problem
            if got != want:
                raise ValueError(f"dataset at {cfg.instances_path} is {got}, expected {want}")
        else:
            self.instances = _generate_instances(cfg.problem, cfg, seed)

    def evaluate(self, expr: Expr, eval_index: int) -> float:
        if self.is_aco:
            rng = stream_rng(self.master_seed, STREAM_EVAL, eval_index)
            return eval_tsp_aco(expr, self.instances, self.aco_cfg, rng).raw_score
        if self.schema.kind == "tsp":
            return eval_tsp_constructive(expr, self.instances).raw_score
        if self.schema.kind == "kp":
            return eval_kp_constructive(expr, self.instances).raw_score
        return eval_bpp_online(expr, self.instances).raw_score


def _generate_instances(problem: str, cfg: RunConfig, seed: int):
    base = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, STREAM_INSTANCES])
    if problem == "tsp" or problem == "tsp_aco":
        return gen_tsp(cfg.tsp_n, cfg.tsp_count, base)
    if problem == "kp":
        return gen_kp(cfg.kp_n, cfg.kp_capacity, cfg.kp_count, base)
    if problem == "bpp":
        return gen_bpp_mixture(seed, cfg.bpp_count_per_cell)
    raise ValueError(problem)


def _deep_latent(branch: str, depth: int) -> float:
    if branch == "A":
        return DEEP_A_ROOT if depth <= 1 else DEEP_A_DEEP
    return DEEP_B


# ------------------------------------------------------------------ run


class _Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.synthetic = cfg.problem == "deep_payoff"
        self.tree = SearchTree(cfg.tree)
        self.trace = RunTrace()
        self.best = BestHeuristic(expr=None, description="", raw_score=-math.inf, found_at_eval=0)
        self.evals = 0
        self.pool: List[Tuple[PoolEntry, int]] = []  # (entry, node_id), best first
        self.branch: Dict[int, str] = {}
        self.exprs: Dict[int, Optional[Expr]] = {}
        self.descriptions: Dict[int, str] = {}
        self.policy_rng = stream_rng(cfg.seed, STREAM_POLICY)
        self.actions_rng = stream_rng(cfg.seed, STREAM_ACTIONS)
        if not self.synthetic:
            self.problem = _DslProblem(cfg)
            self.normalizer = Normalizer(cfg.normalizer_mode)
            if cfg.backend == "mock":
                self.generator = MockGenerator()
            else:
                self.generator = LlmGenerator(cfg.llm)

    # -- shared plumbing

    def _temperature(self) -> float:
        return temperature(
            progress(self.evals, self.cfg.policy.budget), self.cfg.policy.omega_cool
        )

    def _record(self, node_id: int, action: str, raw: float, outcome: float, temp: float) -> None:
        self.evals += 1
        self.tree.record_outcome(node_id, outcome)
        if math.isfinite(raw):
            self.tree.update_best_raw(node_id, raw)
        node = self.tree.node(node_id)
        self.trace.rows.append(
            TraceRow(
                eval_index=self.evals,
                node_id=node_id,
                parent_id=node.parent,
                action=action,
                raw_score=raw,
                outcome=outcome,
                global_best_raw=self.best.raw_score,
                frozen_count=self.tree.frozen_count(),
                temperature=temp,
            )
        )
        interval = self.cfg.tree.freeze_check_interval
        if self.evals % interval == 0:
            reference = self.tree.best_unfrozen_clade_mean()
            if reference is not None:
                self.tree.freeze_sweep(reference)

    def _update_best(self, node_id: int, expr: Optional[Expr], desc: str, raw: float) -> None:
        if raw > self.best.raw_score:
            self.best = BestHeuristic(
                expr=expr, description=desc, raw_score=raw, found_at_eval=self.evals + 1
            )

    def _update_pool(self, entry: PoolEntry, node_id: int) -> None:
        self.pool.append((entry, node_id))
        self.pool.sort(key=lambda item: -item[0].raw_score)
        del self.pool[self.cfg.pool_size :]

    def _pool_entries(self) -> Tuple[PoolEntry, ...]:
        return tuple(entry for entry, _ in self.pool)

    def _fail_child(self, parent_id: int, action: str, temp: float) -> None:
        # a generation failure still consumes budget: attach a dead child,
        # record a zero outcome, and freeze it so selection never returns
        node_id = self.tree.add_child(parent_id, None, created_at_eval=self.evals + 1)
        self.exprs[node_id] = None
        self.descriptions[node_id] = ""
        self._record(node_id, action, float("nan"), 0.0, temp)
        self.tree.freeze_clade(node_id)

    # -- synthetic environment

    def _run_deep_payoff(self) -> None:
        cfg = self.cfg
        budget = cfg.policy.budget
        for i in range(cfg.n_init):
            temp = self._temperature()
            branch = "A" if i % 2 == 0 else "B"
            node_id = self.tree.add_child(0, None, created_at_eval=self.evals + 1)
            self.branch[node_id] = branch
            latent = _deep_latent(branch, 1)
            self._update_best(node_id, None, f"branch {branch} depth 1", latent)
            outcome = self._deep_outcome(latent)
            self._record(node_id, "i1", latent, outcome, temp)
        while self.evals < budget:
            temp = self._temperature()
            try:
                chosen = select(self.tree, cfg.policy, self.evals, self.policy_rng).chosen
            except SearchExhaustedError:
                break
            node_id = self.tree.add_child(chosen, None, created_at_eval=self.evals + 1)
            branch = self.branch[chosen]
            self.branch[node_id] = branch
            depth = self.tree.node(node_id).depth
            latent = _deep_latent(branch, depth)
            self._update_best(node_id, None, f"branch {branch} depth {depth}", latent)
            outcome = self._deep_outcome(latent)
            self._record(node_id, "expand", latent, outcome, temp)

    def _deep_outcome(self, latent: float) -> float:
        rng = stream_rng(self.cfg.seed, STREAM_EVAL, self.evals + 1)
        return 1.0 if rng.random() < latent else 0.0

    # -- DSL search

    def _applicable_actions(self) -> List[ActionKind]:
        out = []
        for action in EXPANSION_ACTIONS:
            if self.cfg.action_weights.get(action.value, 0.0) <= 0.0:
                continue
            if action in (ActionKind.E1, ActionKind.E2, ActionKind.S1) and len(self.pool) < 2:
                continue
            out.append(action)
        return out

    def _choose_action(self, applicable: Sequence[ActionKind]) -> ActionKind:
        weights = [self.cfg.action_weights[a.value] for a in applicable]
        total = sum(weights)
        r = float(self.actions_rng.random()) * total
        acc = 0.0
        for action, w in zip(applicable, weights):
            acc += w
            if r < acc:
                return action
        return applicable[-1]

    def _generate(
        self, action: ActionKind, target_id: Optional[int], eval_tag: int
    ) -> GeneratedHeuristic:
        ctx = GenerationContext(
            action=action,
            schema=self.problem.schema,
            task_description=self.problem.task_description,
            target_node_id=target_id,
            target_expr=None if target_id is None else self.exprs[target_id],
            target_description="" if target_id is None else self.descriptions[target_id],
            target_raw_score=None
            if target_id is None
            else _finite_or_none(self.tree.node(target_id).best_raw_score),
            parent_pool=self._pool_entries() if action != ActionKind.I1 else (),
        )
        rng = stream_rng(self.cfg.seed, STREAM_GENERATOR, eval_tag)
        return self.generator.generate(ctx, rng)

    def _run_dsl(self) -> None:
        cfg = self.cfg
        budget = cfg.policy.budget
        executor = None
        if cfg.eval_workers > 1:
            executor = concurrent.futures.ThreadPoolExecutor(max_workers=cfg.eval_workers)
        try:
            for _ in range(cfg.n_init):
                if self.evals >= budget:
                    break
                temp = self._temperature()
                try:
                    gen = self._generate(ActionKind.I1, None, self.evals + 1)
                except GenerationError:
                    self._fail_child(0, "i1", temp)
                    continue
                node_id = self.tree.add_child(0, gen.expr, created_at_eval=self.evals + 1)
                self.exprs[node_id] = gen.expr
                self.descriptions[node_id] = gen.description
                self._evaluate_and_apply([(node_id, "i1", gen, temp)], executor)
            stop = False
            while self.evals < budget and not stop:
                batch = []
                width = min(cfg.eval_workers, budget - self.evals)
                for _ in range(width):
                    temp = self._temperature()
                    try:
                        chosen = select(self.tree, cfg.policy, self.evals, self.policy_rng).chosen
                    except SearchExhaustedError:
                        stop = True
                        break
                    if self.exprs.get(chosen) is None:
                        # selection landed on a node with no heuristic (the
                        # root, once every child froze): only a fresh start
                        # makes sense from there
                        action, target = ActionKind.I1, None
                    else:
                        applicable = self._applicable_actions()
                        if not applicable:
                            # nothing the action set can do (e.g. crossover-only
                            # weights with a pool that never filled): stop early
                            stop = True
                            break
                        action, target = self._choose_action(applicable), chosen
                    try:
                        gen = self._generate(action, target, self.evals + 1 + len(batch))
                    except GenerationError:
                        self._fail_child(chosen, action.value, temp)
                        continue
                    node_id = self.tree.add_child(chosen, gen.expr, created_at_eval=self.evals + 1)
                    self.exprs[node_id] = gen.expr
                    self.descriptions[node_id] = gen.description
                    batch.append((node_id, action.value, gen, temp))
                if batch:
                    self._evaluate_and_apply(batch, executor)
        finally:
            if executor is not None:
                executor.shutdown(wait=True)

    def _evaluate_and_apply(self, batch, executor) -> None:
        # evaluation may run wide; application is strictly in submission order
        indexed = list(enumerate(batch))
        if executor is not None and len(batch) > 1:
            futures = {
                i: executor.submit(self.problem.evaluate, gen.expr, self.evals + 1 + i)
                for i, (_, _, gen, _) in indexed
            }
            raws = {i: futures[i].result() for i in futures}
        else:
            raws = {
                i: self.problem.evaluate(gen.expr, self.evals + 1 + i)
                for i, (_, _, gen, _) in indexed
            }
        for i, (node_id, action, gen, temp) in indexed:
            raw = float(raws[i])
            self._update_best(node_id, gen.expr, gen.description, raw)
            self._update_pool(PoolEntry(gen.expr, gen.description, raw), node_id)
            outcome = self.normalizer.observe(raw)
            self._record(node_id, action, raw, outcome, temp)

    # -- entry

    def run(self) -> Tuple[BestHeuristic, RunTrace]:
        if self.synthetic:
            self._run_deep_payoff()
        else:
            self._run_dsl()
        if self.cfg.outdir is not None:
            self._write_outputs(Path(self.cfg.outdir))
        return self.best, self.trace

    def _write_outputs(self, outdir: Path) -> None:
        outdir.mkdir(parents=True, exist_ok=True)
        self.trace.to_csv(outdir / "trace.csv")
        (outdir / "tree.txt").write_text(self.tree.to_text())
        best = self.best
        lines = [
            f"description: {best.description}",
            f"expression: {'-' if best.expr is None else render(best.expr)}",
            f"raw_score: {best.raw_score!r}",
            f"found_at_eval: {best.found_at_eval}",
        ]
        (outdir / "best.txt").write_text("\n".join(lines) + "\n")


def _finite_or_none(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None


def run(cfg: RunConfig) -> Tuple[BestHeuristic, RunTrace]:
    """Execute one full search and return the best heuristic plus the trace."""
    return _Runner(cfg).run()


# ------------------------------------------------------------------ comparison


def _apply_variant(cfg: RunConfig, variant) -> Tuple[str, RunConfig]:
    """A variant is a policy mode name or a lambda value."""
    if isinstance(variant, str):
        return f"policy={variant}", replace(cfg, policy=replace(cfg.policy, mode=variant))
    lam = float(variant)
    return f"lambda={lam:g}", replace(cfg, tree=replace(cfg.tree, lambda_decay=lam))


@dataclass
class ComparisonResult:
    labels: List[str]
    final_best: Dict[str, List[float]]          # label -> per-seed final best raw
    curves: Dict[str, List[List[float]]]        # label -> per-seed best-so-far curves
    traces: Dict[str, List[RunTrace]]           # label -> per-seed full traces

    def mean_final_best(self, label: str) -> float:
        return float(np.mean(self.final_best[label]))


def run_comparison(
    cfg: RunConfig, variants: Sequence, seeds: Sequence[int], outdir: Optional[str] = None
) -> ComparisonResult:
    """Run every (variant, seed) pair on bit-identical instances.

    Variants are policy mode names or lambda values.  The instance seed is
    pinned to the base config's so all variants see the same datasets; each
    seed keeps its own policy/generator streams.
    """
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    instance_seed = cfg.instance_seed if cfg.instance_seed is not None else cfg.seed
    out_root = Path(outdir) if outdir is not None else None
    labels: List[str] = []
    final_best: Dict[str, List[float]] = {}
    curves: Dict[str, List[List[float]]] = {}
    traces: Dict[str, List[RunTrace]] = {}
    for variant in variants:
        label, vcfg = _apply_variant(cfg, variant)
        labels.append(label)
        final_best[label] = []
        curves[label] = []
        traces[label] = []
        for seed in seeds:
            run_dir = None
            if out_root is not None:
                run_dir = str(out_root / label.replace("=", "_") / f"seed_{seed}")
            rcfg = replace(vcfg, seed=int(seed), instance_seed=instance_seed, outdir=run_dir)
            best, trace = run(rcfg)
            final_best[label].append(best.raw_score)
            curves[label].append(trace.best_curve())
            traces[label].append(trace)
    result = ComparisonResult(labels=labels, final_best=final_best, curves=curves, traces=traces)
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)
        _write_aggregate(out_root / "aggregate.csv", result)
    return result


def _write_aggregate(path: Path, result: ComparisonResult) -> None:
    """Mean and std of best-so-far at each eval index, one column pair per variant."""
    horizon = max(
        len(curve) for curves in result.curves.values() for curve in curves
    )
    header = ["eval_index"]
    for label in result.labels:
        header.append(f"{label}_mean")
        header.append(f"{label}_std")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(horizon):
            cells = [str(t + 1)]
            for label in result.labels:
                # a curve that ended early (search exhaustion) stays flat
                vals = [
                    curve[t] if t < len(curve) else curve[-1]
                    for curve in result.curves[label]
                ]
                cells.append(repr(float(np.mean(vals))))
                cells.append(repr(float(np.std(vals))))
            fh.write(",".join(cells) + "\n")


# ------------------------------------------------------- deep payoff analysis


def deep_payoff_branch_fractions(trace: RunTrace, last_n: int = 100) -> Dict[str, float]:
    """Fraction of the final `last_n` expansions that targeted each branch.

    Branch membership is recovered from the trace alone: init rows attach
    the branch roots to node 0 in alternating order (A, B, A, ...).
    """
    parent_of: Dict[int, int] = {}
    root_branch: Dict[int, str] = {}
    init_rank = 0
    for row in trace.rows:
        parent_of[row.node_id] = row.parent_id
        if row.action == "i1" and row.parent_id == 0:
            root_branch[row.node_id] = "A" if init_rank % 2 == 0 else "B"
            init_rank += 1

    def branch_of(node_id: int) -> str:
        while parent_of.get(node_id, 0) != 0:
            node_id = parent_of[node_id]
        return root_branch.get(node_id, "?")

    expansions = [row for row in trace.rows if row.action != "i1"]
    window = expansions[-last_n:]
    if not window:
        return {"A": 0.0, "B": 0.0}
    counts = {"A": 0, "B": 0}
    for row in window:
        b = branch_of(row.parent_id)
        if b in counts:
            counts[b] += 1
    return {k: v / len(window) for k, v in counts.items()}
