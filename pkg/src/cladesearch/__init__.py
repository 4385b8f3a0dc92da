"""Belief-guided tree search over priority-rule expressions.

The package evolves small arithmetic expressions (priority rules) for
constructive combinatorial-optimization solvers.  Candidate rules live in a
search tree; every node carries a Beta belief over normalized outcomes, and
whole subtrees are compared, sampled, and frozen as units.
"""

__version__ = "0.1.0"

from .beliefs import BetaParams, beta_mean, beta_variance, sample_beta
from .dsl import Expr, parse, render

__all__ = [
    "BetaParams",
    "Expr",
    "beta_mean",
    "beta_variance",
    "parse",
    "render",
    "sample_beta",
    "__version__",
]
