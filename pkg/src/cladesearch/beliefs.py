"""Beta beliefs over normalized outcomes, plus the sampling transforms.

Everything here is deliberately small and closed-form: beliefs are plain
(alpha, beta) pairs, and the two transforms applied before sampling
(stabilization toward a point estimate, tempering by a cooling temperature)
are pure functions so they can be unit-tested against hand-derived values.

The Beta sampler is implemented from scratch on top of
``numpy.random.Generator.random()`` (Marsaglia-Tsang gamma variates with
polar-method normals) so that seeded draws depend only on the documented
algorithm, not on library-internal distribution code that may change between
releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Rng = np.random.Generator

# Tempering can push pseudo-counts to absurd magnitudes late in a run; the
# sum alpha+beta is capped (ratio preserved) so downstream gamma variates
# stay in a numerically sane range.
TEMPER_COUNT_CAP = 1e7

# Samples are kept strictly inside (0, 1) so log-density and argmax code
# never sees the endpoints.
_SAMPLE_EPS = 1e-12


@dataclass(frozen=True)
class BetaParams:
    """Parameters of a Beta distribution; both must be positive and finite."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name, v in (("alpha", self.alpha), ("beta", self.beta)):
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"BetaParams.{name} must be positive and finite, got {v!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))


def make_rng(seed) -> Rng:
    """PCG64 generator; `seed` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def stream_rng(master_seed: int, *tags: int) -> Rng:
    """Independent named stream derived from a master seed.

    Streams are identified by integer tags, e.g. ``stream_rng(seed, 3, k)``
    for the k-th evaluation stream.  Built on SeedSequence so distinct tag
    tuples give statistically independent states.
    """
    return make_rng(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *map(int, tags)]))


def beta_mean(p: BetaParams) -> float:
    return p.alpha / (p.alpha + p.beta)


def beta_variance(p: BetaParams) -> float:
    s = p.alpha + p.beta
    return (p.alpha * p.beta) / (s * s * (s + 1.0))


def beta_log_pdf(theta: float, p: BetaParams) -> float:
    """Log-density at theta; theta must lie strictly inside (0, 1)."""
    if not (0.0 < theta < 1.0):
        raise ValueError(f"theta must be in (0, 1), got {theta!r}")
    log_b = math.lgamma(p.alpha) + math.lgamma(p.beta) - math.lgamma(p.alpha + p.beta)
    return (p.alpha - 1.0) * math.log(theta) + (p.beta - 1.0) * math.log1p(-theta) - log_b


def _polar_normal(rng: Rng) -> float:
    # Marsaglia polar method; consumes uniforms only, one deviate per call.
    while True:
        u = 2.0 * rng.random() - 1.0
        v = 2.0 * rng.random() - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * math.sqrt(-2.0 * math.log(s) / s)


def _gamma_variate(shape: float, rng: Rng) -> float:
    # Marsaglia-Tsang (2000) squeeze method for shape >= 1, with the usual
    # boost G(a) = G(a+1) * U^(1/a) below 1.
    if shape < 1.0:
        u = 1.0 - rng.random()  # in (0, 1], avoids log/pow of exact zero
        return _gamma_variate(shape + 1.0, rng) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _polar_normal(rng)
        t = 1.0 + c * x
        if t <= 0.0:
            continue
        v = t * t * t
        u = rng.random()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if u > 0.0 and math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(p: BetaParams, rng: Rng) -> float:
    """One draw from Beta(p), clamped to the open interval (0, 1)."""
    ga = _gamma_variate(p.alpha, rng)
    gb = _gamma_variate(p.beta, rng)
    total = ga + gb
    x = 0.5 if total <= 0.0 else ga / total  # both variates underflowed
    return min(max(x, _SAMPLE_EPS), 1.0 - _SAMPLE_EPS)


def stabilize(p: BetaParams, node_mean: float, n_pseudo: float) -> BetaParams:
    """Blend in `n_pseudo` pseudo-observations at a point estimate.

    The pseudo-counts are split between alpha and beta in proportion to
    `node_mean`, anchoring an aggregated belief to the node's own record
    before sampling.  n_pseudo = 0 is the identity.
    """
    if not (0.0 <= node_mean <= 1.0):
        raise ValueError(f"node_mean must be in [0, 1], got {node_mean!r}")
    if n_pseudo < 0.0:
        raise ValueError(f"n_pseudo must be nonnegative, got {n_pseudo!r}")
    return BetaParams(p.alpha + n_pseudo * node_mean, p.beta + n_pseudo * (1.0 - node_mean))


def temper(p: BetaParams, tau: float) -> BetaParams:
    """Sharpen a belief by scaling both counts by tau >= 1.

    The mean is preserved; variance shrinks roughly by 1/tau.  If the scaled
    counts exceed TEMPER_COUNT_CAP in total they are rescaled to the cap,
    again preserving the mean.
    """
    if tau < 1.0:
        raise ValueError(f"tau must be >= 1, got {tau!r}")
    a = p.alpha * tau
    b = p.beta * tau
    total = a + b
    if total > TEMPER_COUNT_CAP:
        scale = TEMPER_COUNT_CAP / total
        a *= scale
        b *= scale
    return BetaParams(a, b)


def temperature(progress: float, omega: float) -> float:
    """Cooling schedule tau = (1 / (1 - progress)) ** omega.

    Starts at 1 and diverges as progress approaches 1; omega = 0 disables
    cooling entirely (tau = 1 throughout).
    """
    if not (0.0 <= progress < 1.0):
        raise ValueError(f"progress must be in [0, 1), got {progress!r}")
    if omega < 0.0:
        raise ValueError(f"omega must be nonnegative, got {omega!r}")
    return (1.0 / (1.0 - progress)) ** omega
