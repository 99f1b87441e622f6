"""Moment-matched hard instances.

Two families live here:

* the Gaussian-quadrature law ``A = Q * N(0, delta)`` which agrees with the
  standard normal on its first ``2m - 1`` moments while staying a positive
  distance away from it in W1;
* the pair of priors ``(Y, Y')`` built from an extremal moment-matched pair
  ``(X, X')`` on ``[1, 16 L^2]``.

Every construction is cheap to verify independently (power sums, binomial
expansion of convolution moments), so the verification helpers never trust
the construction path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
from scipy import integrate, linalg, optimize, special, stats

from .errors import ConfigurationError, ConstructionError, QuadratureError

GAUSS_HERMITE_MAX_NODES = 30


class QuadResult(NamedTuple):
    value: float
    error: float


# ---------------------------------------------------------------------------
# laws


@dataclass(frozen=True, eq=False)
class AtomicLaw:
    """Finitely supported law on the real line.

    Attributes
    ----------
    atoms : ndarray, shape (m,)
        Strictly increasing support points.
    weights : ndarray, shape (m,)
        Probabilities, summing to one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape != weights.shape or atoms.size == 0:
            raise ConfigurationError("atoms and weights must be non-empty and of equal length")
        if not np.all(np.isfinite(atoms)):
            raise ConfigurationError("atoms must be finite")
        if np.any(np.diff(atoms) <= 0):
            raise ConfigurationError("atoms must be strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must lie on the probability simplex")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_unsorted(cls, atoms, weights, drop_below: float = 0.0) -> "AtomicLaw":
        """Sort atoms, merge duplicates and drop atoms with weight <= drop_below."""
        atoms = np.asarray(atoms, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        keep = weights > drop_below
        atoms, weights = atoms[keep], weights[keep]
        uniq, inverse = np.unique(atoms, return_inverse=True)
        merged = np.bincount(inverse, weights=weights, minlength=uniq.size)
        return cls(uniq, merged / merged.sum())

    @property
    def size(self) -> int:
        return self.atoms.size

    def moment(self, j: int) -> float:
        return float(np.dot(self.weights, self.atoms**j))

    def moments(self, order: int) -> np.ndarray:
        return np.array([self.moment(j) for j in range(order + 1)])

    def expect(self, f) -> float:
        return float(np.dot(self.weights, f(self.atoms)))

    def mean(self) -> float:
        return self.moment(1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.atoms, x, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return np.minimum(cum[idx], 1.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.atoms, size=n, p=self.weights)

    def to_dict(self) -> dict[str, Any]:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data) -> "AtomicLaw":
        return cls(data["atoms"], data["weights"])


@dataclass(frozen=True, eq=False)
class ConvolvedLaw:
    """Gaussian mixture ``base * N(0, delta)``."""

    base: AtomicLaw
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError("noise variance delta must be positive")

    @property
    def scale(self) -> float:
        return math.sqrt(self.delta)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        comps = stats.norm.logpdf(x[..., None], loc=self.base.atoms, scale=self.scale)
        return special.logsumexp(comps, b=self.base.weights, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return stats.norm.cdf(x[..., None], loc=self.base.atoms, scale=self.scale) @ self.base.weights

    def moment(self, j: int) -> float:
        # binomial expansion of E (Y + sqrt(delta) Z)^j
        total = 0.0
        for i in range(j + 1):
            total += math.comb(j, i) * self.base.moment(i) * gaussian_moment(j - i, self.delta)
        return total

    def moments(self, order: int) -> np.ndarray:
        return np.array([self.moment(j) for j in range(order + 1)])

    def interval(self, tail: float = 1e-16) -> tuple[float, float]:
        z = stats.norm.isf(tail)
        return self.base.atoms[0] - z * self.scale, self.base.atoms[-1] + z * self.scale

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        centers = rng.choice(self.base.atoms, size=n, p=self.base.weights)
        return centers + self.scale * rng.standard_normal(n)

    def to_dict(self) -> dict[str, Any]:
        return {"base": self.base.to_dict(), "delta": self.delta}

    @classmethod
    def from_dict(cls, data) -> "ConvolvedLaw":
        return cls(AtomicLaw.from_dict(data["base"]), float(data["delta"]))


def gaussian_moment(j: int, variance: float = 1.0) -> float:
    """E X^j for X ~ N(0, variance)."""
    if j == 0:
        return 1.0
    if j % 2:
        return 0.0
    return float(special.factorial2(j - 1, exact=True)) * variance ** (j // 2)


# ---------------------------------------------------------------------------
# quadrature construction


def gauss_hermite_measure(m: int, variance: float = 1.0, max_nodes: int = GAUSS_HERMITE_MAX_NODES) -> AtomicLaw:
    """m-point Gaussian quadrature rule of N(0, variance) as a probability law.

    Nodes and weights come from the Golub-Welsch eigenproblem of the Jacobi
    matrix of the probabilists' Hermite polynomials. The rule integrates
    polynomials of degree up to ``2m - 1`` exactly, so the returned law shares
    those moments with N(0, variance).
    """
    if m < 1:
        raise ConfigurationError("m must be a positive integer")
    if m > max_nodes:
        raise ConfigurationError(f"m={m} exceeds the numerical stability cap {max_nodes}")
    if not variance > 0:
        raise ConfigurationError("variance must be positive")
    if m == 1:
        return AtomicLaw([0.0], [1.0])
    off = np.sqrt(np.arange(1, m, dtype=float))
    nodes, vecs = linalg.eigh_tridiagonal(np.zeros(m), off)
    weights = vecs[0] ** 2
    # enforce the exact reflection symmetry of the rule
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    return AtomicLaw(nodes * math.sqrt(variance), weights)


def hard_distribution_A(m: int, delta: float | None = None) -> ConvolvedLaw:
    """Law ``Q * N(0, delta)`` matching N(0, 1) on its first 2m - 1 moments.

    ``Q`` is the m-point quadrature law of N(0, 1 - delta). The default noise
    level is ``min(1/m, 1/2)``.
    """
    if delta is None:
        delta = min(1.0 / m, 0.5)
    if not 0 < delta < 1:
        raise ConfigurationError("delta must lie in (0, 1)")
    return ConvolvedLaw(gauss_hermite_measure(m, 1.0 - delta), float(delta))


@dataclass
class MomentReport:
    order: int
    target_moments: list[float]
    achieved_moments: list[float]
    max_abs_deviation: float

    def rows(self) -> list[dict[str, float]]:
        return [
            {"order": j, "target": t, "achieved": a, "deviation": a - t}
            for j, (t, a) in enumerate(zip(self.target_moments, self.achieved_moments))
        ]


def moment_report(law, order: int, variance: float = 1.0) -> MomentReport:
    """Compare the moments of ``law`` with those of N(0, variance) up to ``order``."""
    target = [gaussian_moment(j, variance) for j in range(order + 1)]
    achieved = [float(law.moment(j)) for j in range(order + 1)]
    dev = max(abs(a - t) for a, t in zip(achieved, target))
    return MomentReport(order, target, achieved, dev)


def tail_bound_constant(law: ConvolvedLaw) -> float:
    """A constant C with P(|X| > t) <= 2 exp(-t^2 / C) for all t >= 0.

    Beyond twice the largest atom the Gaussian noise dominates and gives
    ``C = 8 delta``; below it the bound is made trivial by ``C >= 4 c^2 / log 2``.
    """
    c = float(np.max(np.abs(law.base.atoms)))
    return max(8.0 * law.delta, 4.0 * c * c / math.log(2.0), 1e-300)


# ---------------------------------------------------------------------------
# numerical integrals


def _window(law) -> tuple[float, float]:
    if isinstance(law, AtomicLaw):
        return float(law.atoms[0]), float(law.atoms[-1])
    if isinstance(law, ConvolvedLaw):
        return law.interval()
    if hasattr(law, "ppf"):
        return float(law.ppf(1e-16)), float(law.isf(1e-16))
    raise ConfigurationError(f"cannot determine an integration window for {law!r}")


def _breakpoints(law) -> np.ndarray:
    if isinstance(law, AtomicLaw):
        return law.atoms
    return np.empty(0)


def quantile_w1(law1, law2, segments: int = 64, epsabs: float = 1e-12) -> QuadResult:
    """W1 between two one-dimensional laws as the integral of |F1 - F2|.

    Any object exposing a vectorised ``cdf`` works (``AtomicLaw``,
    ``ConvolvedLaw``, frozen ``scipy.stats`` distributions). The window is
    split into ``segments`` pieces, refined at every atom, and each piece is
    integrated adaptively.
    """
    lo1, hi1 = _window(law1)
    lo2, hi2 = _window(law2)
    lo, hi = min(lo1, lo2), max(hi1, hi2)
    if hi <= lo:
        return QuadResult(0.0, 0.0)
    grid = np.unique(np.concatenate([np.linspace(lo, hi, segments + 1), _breakpoints(law1), _breakpoints(law2)]))

    def integrand(x):
        return abs(float(law1.cdf(x)) - float(law2.cdf(x)))

    total = err = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        val, e, info = integrate.quad(integrand, a, b, limit=200, epsabs=epsabs, full_output=1)[:3]
        if e > 1e-6 * max(1.0, abs(val)) + 1e-9:
            raise QuadratureError(f"W1 quadrature did not converge on [{a}, {b}] (error {e:.2e})")
        total += val
        err += e
    return QuadResult(total, err)


def chi_square_1d(law: ConvolvedLaw, window: float | None = None) -> QuadResult:
    """chi^2(law || N(0, 1)) by quadrature on [-W, W].

    The returned error adds the quadrature error estimate to the exact mass of
    the integrand outside the window; each mixture pair contributes a Gaussian
    factor there, so the remainder has a closed form.
    """
    atoms, w, delta = law.base.atoms, law.base.weights, law.delta
    a = 1.0 / delta - 0.5
    if a <= 0:
        raise QuadratureError("chi-square integral diverges for delta >= 2")
    if window is None:
        window = max(8.0, 4.0 * math.sqrt(atoms.size))

    def integrand(x):
        return math.exp(2.0 * float(law.logpdf(x)) - float(stats.norm.logpdf(x)))

    inner = atoms[(atoms > -window) & (atoms < window)]
    val, qerr, info = integrate.quad(
        integrand, -window, window, points=inner if inner.size else None, limit=500, full_output=1
    )[:3]
    if not np.isfinite(val) or qerr > 1e-6 * max(1.0, val):
        raise QuadratureError(f"chi-square quadrature did not converge (error {qerr:.2e}); delta too small for the window")

    ci, cj = atoms[:, None], atoms[None, :]
    b = (ci + cj) / delta
    c = (ci**2 + cj**2) / (2.0 * delta)
    center = b / (2.0 * a)
    log_coef = 0.5 * math.log(2 * math.pi) - math.log(2 * math.pi * delta) + b**2 / (4 * a) - c
    mass = np.exp(log_coef) * math.sqrt(math.pi / a)
    outside = 0.5 * special.erfc(math.sqrt(a) * (window - center)) + 0.5 * special.erfc(math.sqrt(a) * (window + center))
    trunc = float(np.sum(w[:, None] * w[None, :] * mass * outside))
    return QuadResult(val - 1.0, qerr + trunc)


# ---------------------------------------------------------------------------
# extremal pair and priors


class ExtremalPair(NamedTuple):
    x: AtomicLaw
    x_prime: AtomicLaw
    objective: float
    order: int


def default_lp_grid(order: int, size: int = 512) -> np.ndarray:
    return np.geomspace(1.0, 16.0 * order**2, size)


def _polish(grid, w, wp, order, tol=1e-12):
    """Re-solve the equality system on the LP support to remove solver slack."""
    s = grid / grid[-1]
    sup, supp = np.flatnonzero(w > tol), np.flatnonzero(wp > tol)
    rows = [np.r_[np.ones(sup.size), np.zeros(supp.size)], np.r_[np.zeros(sup.size), np.ones(supp.size)]]
    for j in range(1, order):
        rows.append(np.r_[s[sup] ** j, -s[supp] ** j])
    mat = np.array(rows)
    rhs = np.r_[1.0, 1.0, np.zeros(order - 1)]
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    if np.any(sol < 0) or np.linalg.norm(mat @ sol - rhs) > 1e-13:
        return w, wp
    w2, wp2 = np.zeros_like(w), np.zeros_like(wp)
    w2[sup], wp2[supp] = sol[: sup.size], sol[sup.size :]
    return w2, wp2


def extremal_pair_lp(order: int, grid=None) -> ExtremalPair:
    """Maximise E[1/X] - E[1/X'] over laws on ``grid`` with equal moments below ``order``.

    The grid must lie in ``[1, 16 order^2]``; the default is a geometric grid of
    512 points. A warning is emitted when the optimum stays below 1/2.
    """
    if order < 1:
        raise ConfigurationError("moment order L must be >= 1")
    grid = default_lp_grid(order) if grid is None else np.unique(np.asarray(grid, dtype=float))
    upper = 16.0 * order**2
    if grid.size < order + 1:
        raise ConfigurationError(f"grid needs at least L + 1 = {order + 1} points")
    if grid[0] < 1.0 - 1e-12 or grid[-1] > upper * (1 + 1e-12):
        raise ConfigurationError(f"grid must lie in [1, {upper:g}]")

    n = grid.size
    s = grid / grid[-1]
    c = np.r_[-1.0 / grid, 1.0 / grid]
    a_eq = [np.r_[np.ones(n), np.zeros(n)], np.r_[np.zeros(n), np.ones(n)]]
    for j in range(1, order):
        a_eq.append(np.r_[s**j, -(s**j)])
    b_eq = np.r_[1.0, 1.0, np.zeros(order - 1)]
    res = optimize.linprog(
        c,
        A_eq=np.array(a_eq),
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise ConstructionError(f"moment LP failed: {res.message}")
    w, wp = np.clip(res.x[:n], 0, None), np.clip(res.x[n:], 0, None)
    w, wp = _polish(grid, w, wp, order)
    x = AtomicLaw.from_unsorted(grid, w, drop_below=1e-15)
    xp = AtomicLaw.from_unsorted(grid, wp, drop_below=1e-15)
    objective = x.expect(np.reciprocal) - xp.expect(np.reciprocal)
    if objective < 0.5:
        warnings.warn(
            f"extremal LP objective {objective:.4f} < 1/2 for L={order}; prior guarantees may fail",
            RuntimeWarning,
            stacklevel=2,
        )
    return ExtremalPair(x, xp, float(objective), order)


@dataclass
class PriorPair:
    y: AtomicLaw
    y_prime: AtomicLaw
    delta: float
    delta_prime: float
    normalizer: float
    eps: float
    order: int
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def build_priors(x: AtomicLaw, x_prime: AtomicLaw, eps: float, order: int) -> PriorPair:
    """Transform an extremal pair into the priors ``(Y, Y')``.

    With ``P, P'`` the laws of ``X / eps`` and ``X' / eps``::

        Delta  = E_P  1 / ((y - 1)(y - 2))
        Delta' = E_P' 1 / ((y - 1)(y - 2))
        Z      = E_P 1 / (y - 2) - E_P' 1 / (y - 1)
        Y  ~ delta_1 + (P(dy)  / ((y - 1)(y - 2)) - Delta  delta_1) / Z
        Y' ~ delta_2 + (P'(dy) / ((y - 1)(y - 2)) - Delta' delta_2) / Z

    ``checks`` records the four target properties, each evaluated directly on
    the returned atomic laws.
    """
    if not 0 < eps <= 1 / 6:
        raise ConfigurationError("eps must lie in (0, 1/6]")
    y_atoms, yp_atoms = x.atoms / eps, x_prime.atoms / eps
    if y_atoms[0] <= 2 or yp_atoms[0] <= 2:
        raise ConstructionError("rescaled supports must exceed 2; inputs must be >= 1")
    kern = 1.0 / ((y_atoms - 1) * (y_atoms - 2))
    kern_p = 1.0 / ((yp_atoms - 1) * (yp_atoms - 2))
    delta = float(np.dot(x.weights, kern))
    delta_p = float(np.dot(x_prime.weights, kern_p))
    z = float(np.dot(x.weights, 1.0 / (y_atoms - 2)) - np.dot(x_prime.weights, 1.0 / (yp_atoms - 1)))
    if z < 0.3 * eps:
        raise ConstructionError(f"normaliser {z:.4g} below the guaranteed floor 0.3*eps={0.3 * eps:.4g}")

    y = AtomicLaw(np.r_[1.0, y_atoms], np.r_[1.0 - delta / z, x.weights * kern / z])
    y_prime = AtomicLaw(np.r_[2.0, yp_atoms], np.r_[1.0 - delta_p / z, x_prime.weights * kern_p / z])

    upper = 16.0 * order**2 / eps
    tol = 1e-12 * upper
    mean_y, mean_yp = y.mean(), y_prime.mean()
    checks = {
        "moments_match": all(_relative_gap(y.moment(j), y_prime.moment(j)) <= 1e-8 for j in range(order)),
        "support": bool(
            y.atoms[0] >= 1 - tol and y_prime.atoms[0] >= 1 - tol and y.atoms[-1] <= upper + tol and y_prime.atoms[-1] <= upper + tol
        ),
        "means": abs(mean_y - mean_yp) <= 1e-10 and mean_y <= 6.0,
        "inverse_moments": y.expect(np.reciprocal) >= 1 - 6 * eps and y_prime.expect(np.reciprocal) <= 0.5,
    }
    return PriorPair(y, y_prime, delta, delta_p, z, eps, order, checks)
