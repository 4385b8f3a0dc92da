"""Problem domains: instance generators, evaluators, normalization, ACO."""

from .aco import AcoConfig, aco_solve_tsp, build_eta, eval_tsp_aco
from .evaluate import (
    ACO_TSP_SCHEMA,
    BPP_SCHEMA,
    KP_SCHEMA,
    SCHEMAS_BY_KIND,
    TSP_SCHEMA,
    EvalResult,
    FeatureSchema,
    eval_bpp_online,
    eval_kp_constructive,
    eval_tsp_constructive,
    write_per_instance_csv,
)
from .instances import (
    BPP_MIXTURE_CELLS,
    WEIBULL_SCALE_FACTOR,
    WEIBULL_SHAPE,
    BppInstance,
    KpInstance,
    TspInstance,
    dataset_kind,
    gen_bpp_mixture,
    gen_bpp_weibull,
    gen_kp,
    gen_tsp,
    load_instances,
    save_instances,
)
from .normalize import Normalizer

__all__ = [
    "ACO_TSP_SCHEMA",
    "AcoConfig",
    "BPP_MIXTURE_CELLS",
    "BPP_SCHEMA",
    "BppInstance",
    "EvalResult",
    "FeatureSchema",
    "KP_SCHEMA",
    "KpInstance",
    "Normalizer",
    "SCHEMAS_BY_KIND",
    "TSP_SCHEMA",
    "TspInstance",
    "WEIBULL_SCALE_FACTOR",
    "WEIBULL_SHAPE",
    "aco_solve_tsp",
    "build_eta",
    "dataset_kind",
    "eval_bpp_online",
    "eval_kp_constructive",
    "eval_tsp_aco",
    "eval_tsp_constructive",
    "gen_bpp_mixture",
    "gen_bpp_weibull",
    "gen_kp",
    "gen_tsp",
    "load_instances",
    "save_instances",
    "write_per_instance_csv",
]
