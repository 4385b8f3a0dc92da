"""Command-line interface: run, compare, gen-instances, eval, export-tree.

Configuration comes from an optional ``key = value`` file (dotted keys reach
nested sections, e.g. ``policy.budget = 500``), overridden by repeated
``--set key=value`` flags, overridden in turn by the first-class flags
(``--seed``, ``--budget``, ``--policy``, ``--lambda``, ...).
"""

from __future__ import annotations

import argparse
import ast
import sys
import tempfile
from dataclasses import fields as dataclass_fields, replace
from pathlib import Path
from typing import Dict, Optional, get_type_hints

from .dsl import DslError, parse as parse_expr, render
from .experiment import RunConfig, run, run_comparison
from .generators import LlmConfig
from .policy import PolicyConfig
from .problems.aco import AcoConfig
from .problems.evaluate import (
    SCHEMAS_BY_KIND,
    eval_bpp_online,
    eval_kp_constructive,
    eval_tsp_constructive,
    write_per_instance_csv,
)
from .problems.instances import (
    dataset_kind,
    gen_bpp_mixture,
    gen_kp,
    gen_tsp,
    load_instances,
    save_instances,
)
from .tree import TreeConfig


class CliError(Exception):
    """Anything that should abort with a message and exit code 2."""


_SECTIONS = {"tree": TreeConfig, "policy": PolicyConfig, "aco": AcoConfig, "llm": LlmConfig}
_TOP_FIELDS = {f.name for f in dataclass_fields(RunConfig)} - set(_SECTIONS)


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text  # bare strings may appear unquoted


def parse_config_file(path) -> Dict[str, object]:
    settings: Dict[str, object] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise CliError(f"cannot read config file: {e}")
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        settings[key.strip()] = _parse_value(value.strip())
    return settings


def _coerced(cls, kwargs: Dict[str, object]) -> Dict[str, object]:
    """Validate field names against cls and widen ints where floats are due."""
    hints = get_type_hints(cls)
    known = {f.name for f in dataclass_fields(cls)}
    out = {}
    for name, value in kwargs.items():
        if name not in known:
            raise CliError(f"unknown {cls.__name__} field: {name!r}")
        if hints.get(name) is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        out[name] = value
    return out


def build_run_config(settings: Dict[str, object]) -> RunConfig:
    """Flat dotted-key mapping -> RunConfig with nested sections."""
    top: Dict[str, object] = {}
    sections: Dict[str, Dict[str, object]] = {name: {} for name in _SECTIONS}
    weights: Dict[str, float] = {}
    for key, value in settings.items():
        head, dot, rest = key.partition(".")
        if dot:
            if head == "action_weights":
                weights[rest] = float(value)
            elif head in sections:
                sections[head][rest] = value
            else:
                raise CliError(f"unknown config section: {head!r} (in {key!r})")
        elif key in _TOP_FIELDS:
            top[key] = value
        else:
            raise CliError(f"unknown config key: {key!r}")
    if weights:
        top["action_weights"] = weights
    for name, cls in _SECTIONS.items():
        if name == "llm":
            continue
        if sections[name]:
            top[name] = cls(**_coerced(cls, sections[name]))
    if sections["llm"]:
        top["llm"] = LlmConfig(**_coerced(LlmConfig, sections["llm"]))
    try:
        return RunConfig(**_coerced(RunConfig, top))
    except (ValueError, NotImplementedError) as e:
        raise CliError(str(e))


def _settings_from_args(args) -> Dict[str, object]:
    settings: Dict[str, object] = {}
    if args.config:
        settings.update(parse_config_file(args.config))
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq or not key.strip():
            raise CliError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = _parse_value(value.strip())
    # first-class flags win over file and --set
    if getattr(args, "problem", None) is not None:
        settings["problem"] = args.problem
    if getattr(args, "backend", None) is not None:
        settings["backend"] = args.backend
    if getattr(args, "instances", None) is not None:
        settings["instances_path"] = args.instances
    if getattr(args, "workers", None) is not None:
        settings["eval_workers"] = args.workers
    if getattr(args, "outdir", None) is not None:
        settings["outdir"] = args.outdir
    if args.seed is not None:
        settings["seed"] = args.seed
    if args.budget is not None:
        settings["policy.budget"] = args.budget
    if args.policy is not None:
        settings["policy.mode"] = args.policy
    if args.lam is not None:
        settings["tree.lambda_decay"] = args.lam
    return settings


def _add_config_flags(p: argparse.ArgumentParser, with_outdir: bool = True) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--budget", type=int, help="evaluation budget T")
    p.add_argument("--policy", help="selection policy mode")
    p.add_argument("--lambda", dest="lam", type=float, help="clade decay factor")
    p.add_argument("--problem", help="problem kind")
    p.add_argument("--backend", help="generator backend: mock or llm")
    p.add_argument("--instances", help="path to a JSON-lines instance dataset")
    p.add_argument("--workers", type=int, help="parallel evaluation width")
    if with_outdir:
        p.add_argument("--outdir", help="directory for trace.csv / best.txt / tree.txt")


# ------------------------------------------------------------------ commands


def cmd_run(args) -> int:
    cfg = build_run_config(_settings_from_args(args))
    best, trace = run(cfg)
    print(f"problem: {cfg.problem}  backend: {cfg.backend}  seed: {cfg.seed}  budget: {cfg.policy.budget}")
    print(f"evaluations: {len(trace.rows)}")
    print(f"best raw_score: {best.raw_score!r} (found at eval {best.found_at_eval})")
    if best.description:
        print(f"description: {best.description}")
    print(f"expression: {'-' if best.expr is None else render(best.expr)}")
    if cfg.outdir:
        print(f"outputs written to {cfg.outdir}")
    return 0


def cmd_compare(args) -> int:
    settings = _settings_from_args(args)
    settings.pop("outdir", None)  # per-run dirs are laid out by the comparison
    cfg = build_run_config(settings)
    variants = []
    for item in args.variants.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            variants.append(float(item))
        except ValueError:
            variants.append(item)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not variants or not seeds:
        raise CliError("--variants and --seeds must each name at least one value")
    try:
        result = run_comparison(cfg, variants, seeds, outdir=args.outdir)
    except ValueError as exc:  # e.g. a variant string that is not a policy mode
        raise CliError(str(exc)) from exc
    import numpy as np

    for label in result.labels:
        scores = result.final_best[label]
        print(
            f"{label}: mean final best {float(np.mean(scores))!r} "
            f"(std {float(np.std(scores))!r}, n={len(scores)})"
        )
    if args.outdir:
        print(f"aggregate written to {Path(args.outdir) / 'aggregate.csv'}")
    return 0


def cmd_gen_instances(args) -> int:
    if args.kind == "tsp":
        instances = gen_tsp(args.n, args.count, args.seed)
    elif args.kind == "kp":
        instances = gen_kp(args.n, args.capacity, args.count, args.seed)
    elif args.kind == "bpp":
        instances = gen_bpp_mixture(args.seed, args.count)
    else:  # argparse choices guard this
        raise CliError(f"unknown kind {args.kind!r}")
    save_instances(args.out, instances)
    sizes = sorted({inst.n for inst in instances})
    print(f"wrote {len(instances)} {args.kind} instances to {args.out} (sizes {sizes}, seed {args.seed})")
    return 0


def _gap_percent(objective: float, ref: float, minimize: bool) -> float:
    if minimize:
        return 100.0 * (objective - ref) / ref
    return 100.0 * (ref - objective) / ref


def cmd_eval(args) -> int:
    instances = load_instances(args.dataset)
    kind = dataset_kind(instances)
    schema = SCHEMAS_BY_KIND[kind]
    try:
        expr = parse_expr(args.expr, schema.feature_names)
    except DslError as e:
        print(f"parse error: {e}", file=sys.stderr)
        print(f"expected an expression over features: {', '.join(schema.feature_names)}", file=sys.stderr)
        return 2
    if kind == "tsp":
        result = eval_tsp_constructive(expr, instances)
        minimize = True
    elif kind == "kp":
        result = eval_kp_constructive(expr, instances)
        minimize = False
    else:
        result = eval_bpp_online(expr, instances)
        minimize = True
    print(f"kind: {kind}  instances: {len(instances)}")
    print(f"raw_score: {result.raw_score!r}")
    refs = [getattr(inst, "ref", None) for inst in instances]
    gaps = []
    for i, obj in enumerate(result.per_instance):
        line = f"  {i}: {obj!r}"
        if refs[i] is not None:
            gap = _gap_percent(obj, refs[i], minimize)
            gaps.append(gap)
            line += f" (ref {refs[i]!r}, gap {gap:+.3f}%)"
        print(line)
    if gaps:
        print(f"mean gap vs reference: {sum(gaps) / len(gaps):+.3f}%")
    if args.csv:
        write_per_instance_csv(args.csv, result)
        print(f"per-instance CSV written to {args.csv}")
    return 0


def cmd_export_tree(args) -> int:
    settings = _settings_from_args(args)
    settings.pop("outdir", None)
    cfg = build_run_config(settings)
    with tempfile.TemporaryDirectory() as tmp:
        run(replace(cfg, outdir=tmp))
        text = (Path(tmp) / "tree.txt").read_text()
    if args.out:
        Path(args.out).write_text(text)
        print(f"tree written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cladesearch",
        description="Belief-guided tree search over priority-rule expressions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one search run")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run variants (policies or lambda values) over seeds")
    _add_config_flags(p, with_outdir=False)
    p.add_argument("--variants", required=True, help="comma list: policy modes or lambda values")
    p.add_argument("--seeds", required=True, help="comma list of seeds")
    p.add_argument("--outdir", help="directory for per-run outputs and aggregate.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-instances", help="generate a JSON-lines instance dataset")
    p.add_argument("kind", choices=("tsp", "kp", "bpp"))
    p.add_argument("--n", type=int, default=50, help="instance size (tsp nodes / kp items)")
    p.add_argument("--count", type=int, default=64, help="instance count (bpp: per mixture cell)")
    p.add_argument("--capacity", type=float, default=12.5, help="kp capacity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path")
    p.set_defaults(func=cmd_gen_instances)

    p = sub.add_parser("eval", help="evaluate one expression on a dataset")
    p.add_argument("expr", help="prefix-notation expression")
    p.add_argument("dataset", help="JSON-lines instance file")
    p.add_argument("--csv", help="also write per-instance objectives to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-tree", help="re-run a configured search and print its tree")
    _add_config_flags(p, with_outdir=False)
    p.add_argument("--out", help="write the snapshot here instead of stdout")
    p.set_defaults(func=cmd_export_tree)

    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
