"""Monte Carlo checks of concentration and convergence rates.

The subgaussian constant of a replicate sample is read off the empirical
moment generating function: for centred values ``c`` and each ``lam`` on the
grid ``{+-2^j / sd : j = -2..4}``,

    sigma^2(lam) = 2 log(mean exp(lam c)) / lam^2,

and the estimate is the largest of these. Finite samples make this an
upper-biased proxy at large ``|lam|``, where the empirical MGF is dominated
by the extreme replicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special, stats

from .errors import ConfigurationError
from .measures import DiscreteMeasure, empirical, is_finitely_supported, make_rng
from .ot_solver import wasserstein_1d, wasserstein_discrete

LAMBDA_EXPONENTS = np.arange(-2, 5)
MIN_REPLICATES = 100
MIN_SCALING_REPLICATES = 200
REFERENCE_FACTOR = 20
MAX_LP_ENTRIES = 250_000


@dataclass(frozen=True, eq=False)
class ReplicateSample:
    """One statistic per Monte Carlo replicate at sample size ``n``."""

    values: np.ndarray
    n: int
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size < 2 or not np.all(np.isfinite(values)):
            raise ConfigurationError("a replicate sample needs at least two finite values")
        object.__setattr__(self, "values", values)

    def rows(self) -> list[tuple[int, int, float]]:
        """CSV rows ``(n, replicate, value)``."""
        return [(self.n, i, float(v)) for i, v in enumerate(self.values)]


def lambda_grid(sd: float) -> np.ndarray:
    pos = 2.0**LAMBDA_EXPONENTS / sd
    return np.concatenate([-pos[::-1], pos])


def estimate_subgaussian_constant(sample: ReplicateSample | Sequence[float]) -> float:
    """Smallest ``sigma^2`` with ``mean exp(lam c) <= exp(lam^2 sigma^2 / 2)`` on the grid."""
    values = sample.values if isinstance(sample, ReplicateSample) else np.asarray(sample, dtype=float)
    if values.size < MIN_REPLICATES:
        raise ConfigurationError(f"need at least {MIN_REPLICATES} replicates, got {values.size}")
    centred = values - values.mean()
    sd = float(centred.std())
    if sd == 0.0 or sd <= 1e-15 * max(1.0, float(np.abs(values).max())):
        return 0.0
    lam = lambda_grid(sd)
    log_mgf = special.logsumexp(np.outer(lam, centred), axis=1) - math.log(values.size)
    return float(max(0.0, np.max(2.0 * log_mgf / lam**2)))


def _distance(sample: DiscreteMeasure, ref: DiscreteMeasure, p: float) -> float:
    if sample.dim == 1:
        return wasserstein_1d(sample, ref, p).cost
    if sample.n * ref.n > MAX_LP_ENTRIES:
        raise ConfigurationError(
            f"exact W_p between {sample.n} and {ref.n} atoms in R^{sample.dim} exceeds the LP budget"
        )
    return wasserstein_discrete(sample, ref, p).cost


def reference_measure(generator, n: int, seed, replicate: int, tag: int = 0) -> DiscreteMeasure:
    """Exact law if finitely supported, else an independent ``20 n`` sample."""
    if is_finitely_supported(generator):
        return generator.as_measure()
    return empirical(generator, REFERENCE_FACTOR * n, seed, tag, n, replicate, 1)


def replicate_distance(generator, p: float, n: int, replicate: int, seed, tag: int = 0) -> float:
    """``W_p(mu_n, mu_ref)`` for one replicate, drawn on sub-stream ``(tag, n, replicate, 0)``."""
    mu_n = empirical(generator, n, seed, tag, n, replicate, 0)
    return _distance(mu_n, reference_measure(generator, n, seed, replicate, tag), p)


def replicate_distances(generator, p: float, n: int, replicates: int, seed, tag: int = 0) -> ReplicateSample:
    """``W_p(mu_n, mu_ref)`` for replicates ``0..replicates-1``.

    ``mu_ref`` is the exact law when ``generator`` is finitely supported and
    otherwise an independent sample of size ``20 n`` drawn per replicate on
    sub-stream ``(tag, n, r, 1)``.
    """
    values = [replicate_distance(generator, p, n, r, seed, tag) for r in range(replicates)]
    meta = {
        "generator": generator.to_config(),
        "p": p,
        "seed": seed,
        "replicates": replicates,
        "exact_reference": is_finitely_supported(generator),
    }
    return ReplicateSample(np.asarray(values), n, meta)


def subgaussian_scaling_check(generator, p: float, n_list: Sequence[int], replicates: int, seed) -> list[tuple[int, float]]:
    """``(n, sigma_hat^2(n))`` for each ``n``; ``n * sigma_hat^2`` should be roughly constant."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError("n_list must be strictly increasing")
    if replicates < MIN_SCALING_REPLICATES:
        raise ConfigurationError(f"need at least {MIN_SCALING_REPLICATES} replicates per n")
    return [(n, estimate_subgaussian_constant(replicate_distances(generator, p, n, replicates, seed))) for n in n_list]


# ---------------------------------------------------------------------------
# rate fits


@dataclass(frozen=True, eq=False)
class RateFit:
    log_n: np.ndarray
    log_err: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float

    @property
    def residuals(self) -> np.ndarray:
        return self.log_err - (self.intercept + self.slope * self.log_n)

    def rows(self) -> list[tuple[float, float, float, float]]:
        """CSV rows ``(n, mean_err, log_n, log_err)``."""
        return [(math.exp(a), math.exp(b), float(a), float(b)) for a, b in zip(self.log_n, self.log_err)]

    def to_dict(self) -> dict[str, float]:
        return {"slope": self.slope, "intercept": self.intercept, "slope_stderr": self.slope_stderr}


def rate_fit(pairs: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log n, log err)``."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] != 2:
        raise ConfigurationError("rate_fit needs at least three (n, error) pairs")
    n, err = arr[:, 0], arr[:, 1]
    if np.any(n <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ConfigurationError("sample sizes and errors must be positive and finite")
    if np.unique(n).size != n.size:
        raise ConfigurationError("sample sizes must be distinct")
    log_n, log_err = np.log(n), np.log(err)
    fit = stats.linregress(log_n, log_err)
    return RateFit(log_n, log_err, float(fit.slope), float(fit.intercept), float(fit.stderr))


# ---------------------------------------------------------------------------
# Lipschitz witnesses


@dataclass(frozen=True, eq=False)
class WitnessReport:
    constants: list[float]
    kinds: list[str]
    sigma_target: float
    slack: float

    @property
    def max_constant(self) -> float:
        return max(self.constants)

    @property
    def passed(self) -> bool:
        return self.max_constant <= self.sigma_target * self.slack


def random_witnesses(dim: int, trials: int, rng: np.random.Generator, anchors: np.ndarray) -> list[tuple[str, Callable]]:
    """Alternating distance-to-point and unit-direction linear 1-Lipschitz maps."""
    out = []
    for t in range(trials):
        if t % 2 == 0:
            anchor = anchors[t % anchors.shape[0]].copy()
            out.append(("distance", lambda x, a=anchor: np.linalg.norm(x - a, axis=1)))
        else:
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            out.append(("linear", lambda x, v=direction: x @ v))
    return out


def lipschitz_witness_check(
    sampler,
    sigma_target: float,
    trials: int,
    seed,
    n_samples: int = 2000,
    slack: float = 2.0,
    witnesses: Sequence[tuple[str, Callable]] | None = None,
) -> WitnessReport:
    """Subgaussian constants of ``f(X)`` for random 1-Lipschitz ``f``.

    Each witness is evaluated on ``n_samples`` fresh draws; the check passes
    when the largest constant is at most ``slack * sigma_target``.
    """
    if trials < 1 and witnesses is None:
        raise ConfigurationError("trials must be positive")
    rng = make_rng(seed, 0)
    if witnesses is None:
        anchors = np.atleast_2d(sampler.sample(rng, trials)).reshape(trials, -1)
        witnesses = random_witnesses(sampler.dim, trials, rng, anchors)
    constants, kinds = [], []
    for i, (kind, fn) in enumerate(witnesses):
        x = np.asarray(sampler.sample(make_rng(seed, 1, i), n_samples), dtype=float).reshape(n_samples, -1)
        constants.append(estimate_subgaussian_constant(np.asarray(fn(x), dtype=float)))
        kinds.append(kind)
    return WitnessReport(constants, kinds, float(sigma_target), float(slack))


__all__ = [
    "RateFit",
    "ReplicateSample",
    "WitnessReport",
    "estimate_subgaussian_constant",
    "lambda_grid",
    "lipschitz_witness_check",
    "random_witnesses",
    "rate_fit",
    "reference_measure",
    "replicate_distance",
    "replicate_distances",
    "subgaussian_scaling_check",
]
