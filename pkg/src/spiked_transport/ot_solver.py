"""Exact optimal transport between discrete measures.

Routes
------
* one dimension: the monotone (quantile) coupling, built by merging the two
  cumulative weight sequences;
* uniform weights with ``n == m``: the assignment problem
  (``scipy.optimize.linear_sum_assignment``), whose optimum is a vertex of
  the transport polytope and hence an optimal coupling;
* anything else: the Kantorovich linear program solved with HiGHS.

Small instances are certified after the fact: the plan's marginals are
checked against the prescribed weights and its cost is compared with the
value of a feasible dual pair ``(f, g)`` with ``f_i + g_j <= C_ij``.

Also here: greedy packings, the triadic partition tree and its
multiscale upper bound on ``W_p^p``, and random bijections onto packings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from scipy import optimize, sparse
from scipy.spatial.distance import cdist

from .errors import CertificationError, ConfigurationError, DimensionMismatchError
from .measures import DiscreteMeasure, make_rng

FEASIBILITY_TOL = 1e-9
DUAL_GAP_TOL = 1e-7
CERTIFY_MAX_ENTRIES = 10_000
SCALE_RATIO = 1.0 / 3.0


def cost_power(r: np.ndarray, p: float) -> np.ndarray:
    """Elementwise ``r**p`` with an exact zero at ``r == 0``."""
    r = np.asarray(r, dtype=float)
    if p == 1:
        return r.copy()
    if p == 2:
        return r * r
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = np.exp(p * np.log(r[pos]))
    return out


def cost_matrix(x: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    return cost_power(cdist(x, y), p)


def _check_p(p: float) -> float:
    p = float(p)
    if not p >= 1 or not math.isfinite(p):
        raise ConfigurationError("transport order p must be a finite real >= 1")
    return p


# ---------------------------------------------------------------------------
# result types


@dataclass(frozen=True, eq=False)
class Coupling:
    """Sparse transport plan stored as ``(row, col, mass)`` triplets."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        if np.any(self.mass < 0):
            raise CertificationError("coupling has negative entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_marginal.size, self.col_marginal.size

    @cached_property
    def matrix(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def marginal_residual(self) -> float:
        r = np.bincount(self.rows, self.mass, minlength=self.shape[0]) - self.row_marginal
        c = np.bincount(self.cols, self.mass, minlength=self.shape[1]) - self.col_marginal
        return float(max(np.abs(r).max(), np.abs(c).max()))

    def transport_cost(self, x: np.ndarray, y: np.ndarray, p: float) -> float:
        """``sum_ij pi_ij |x_i - y_j|^p`` evaluated on the stored entries."""
        dist = np.linalg.norm(x[self.rows] - y[self.cols], axis=1)
        return float(self.mass @ cost_power(dist, p))

    def to_csr(self) -> dict[str, Any]:
        mat = sparse.csr_matrix((self.mass, (self.rows, self.cols)), shape=self.shape)
        mat.sum_duplicates()
        return {
            "shape": list(self.shape),
            "indptr": mat.indptr.tolist(),
            "indices": mat.indices.tolist(),
            "data": mat.data.tolist(),
        }


@dataclass(frozen=True, eq=False)
class TransportResult:
    cost: float
    coupling: Coupling
    p: float
    dual_gap: float | None = None

    def to_json(self, include_coupling: bool = True) -> str:
        out: dict[str, Any] = {"cost": self.cost, "p": self.p}
        if self.dual_gap is not None:
            out["dual_gap"] = self.dual_gap
        if include_coupling:
            out["coupling"] = self.coupling.to_csr()
        return json.dumps(out)


def _result(mu, nu, rows, cols, mass, p, dual_gap=None) -> TransportResult:
    keep = mass > 0
    coupling = Coupling(rows[keep], cols[keep], mass[keep], mu.weights, nu.weights)
    total = coupling.transport_cost(mu.points, nu.points, p)
    return TransportResult(max(total, 0.0) ** (1.0 / p), coupling, p, dual_gap)


# ---------------------------------------------------------------------------
# one dimension


def _quantile_plan(x, wx, y, wy):
    """Monotone coupling of two weighted 1-D samples as triplets (ix, iy, mass)."""
    ox = np.argsort(x, kind="stable")
    oy = np.argsort(y, kind="stable")
    cx = np.cumsum(wx[ox])
    cy = np.cumsum(wy[oy])
    cx[-1] = cy[-1] = 1.0
    t = np.unique(np.concatenate([cx, cy]))
    t = t[t > 0]
    mass = np.diff(np.concatenate([[0.0], t]))
    ix = np.minimum(np.searchsorted(cx, t, side="left"), cx.size - 1)
    iy = np.minimum(np.searchsorted(cy, t, side="left"), cy.size - 1)
    return ox[ix], oy[iy], mass


def wasserstein_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0) -> TransportResult:
    """W_p on the line via the monotone quantile coupling.

    Ties are broken by original index (stable sort), so the returned coupling
    is deterministic.
    """
    p = _check_p(p)
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionMismatchError("wasserstein_1d needs one-dimensional measures")
    x, y = mu.points[:, 0], nu.points[:, 0]
    if mu.n == nu.n and mu.is_uniform and nu.is_uniform:
        rows = np.argsort(x, kind="stable")
        cols = np.argsort(y, kind="stable")
        mass = np.full(mu.n, 1.0 / mu.n)
    else:
        rows, cols, mass = _quantile_plan(x, mu.weights, y, nu.weights)
    return _result(mu, nu, rows, cols, mass, p)


def wasserstein_1d_value(x: np.ndarray, y: np.ndarray, p: float = 1.0) -> float:
    """W_p between equal-size uniform 1-D samples, without building a coupling."""
    d = np.abs(np.sort(x) - np.sort(y))
    return float(np.mean(cost_power(d, p)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# general dimension


def _transport_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    n, m = cost.shape
    ones_m = sparse.csr_matrix(np.ones((1, m)))
    ones_n = sparse.csr_matrix(np.ones((1, n)))
    a_eq = sparse.vstack([sparse.kron(sparse.eye(n), ones_m), sparse.kron(ones_n, sparse.eye(m))], format="csr")
    res = optimize.linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise CertificationError(f"transport LP failed: {res.message}")
    duals = res.eqlin.marginals
    return np.clip(res.x, 0.0, None).reshape(n, m), duals[:n], duals[n:]


def certify(coupling: Coupling, cost: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """Check a plan against a dual pair; return the duality gap.

    The pair ``(f, g)`` is first shifted into dual feasibility, so the
    returned gap is an honest upper bound on the plan's suboptimality.
    """
    residual = coupling.marginal_residual()
    if residual > FEASIBILITY_TOL:
        raise CertificationError(f"marginal residual {residual:.2e} exceeds {FEASIBILITY_TOL:.0e}")
    slack = cost - f[:, None] - g[None, :]
    f = f + min(0.0, float(slack.min()))
    primal = float(coupling.mass @ cost[coupling.rows, coupling.cols])
    dual = float(coupling.row_marginal @ f + coupling.col_marginal @ g)
    gap = primal - dual
    if gap > DUAL_GAP_TOL * max(1.0, abs(primal)):
        raise CertificationError(f"duality gap {gap:.2e} exceeds {DUAL_GAP_TOL:.0e}")
    return gap


def wasserstein_discrete(
    mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0, certify_plan: bool | None = None
) -> TransportResult:
    """Exact W_p between two discrete measures in R^d.

    Parameters
    ----------
    certify_plan : bool, optional
        Run the dual certificate. Defaults to on when ``n * m <= 10_000``.
    """
    p = _check_p(p)
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"ambient dimensions differ: {mu.dim} vs {nu.dim}")
    cost = cost_matrix(mu.points, nu.points, p)
    if certify_plan is None:
        certify_plan = mu.n * nu.n <= CERTIFY_MAX_ENTRIES
    if mu.n == nu.n and mu.is_uniform and nu.is_uniform:
        rows, cols = optimize.linear_sum_assignment(cost)
        mass = np.full(mu.n, 1.0 / mu.n)
        f = g = None
    else:
        plan, f, g = _transport_lp(cost, mu.weights, nu.weights)
        rows, cols = np.nonzero(plan)
        mass = plan[rows, cols]
    result = _result(mu, nu, rows, cols, mass, p)
    if not certify_plan:
        return result
    if f is None:
        _, f, g = _transport_lp(cost, mu.weights, nu.weights)
    gap = certify(result.coupling, cost, f, g)
    return TransportResult(result.cost, result.coupling, p, gap)


# ---------------------------------------------------------------------------
# packings and partitions


def greedy_packing(points, separation: float) -> np.ndarray:
    """Indices of a maximal ``separation``-packing, scanning candidates in order.

    Selected points are pairwise at least ``separation`` apart; every other
    candidate is strictly closer than ``separation`` to a selected one.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ConfigurationError("greedy_packing needs at least one candidate")
    if not separation > 0:
        raise ConfigurationError("separation must be positive")
    nearest = np.full(pts.shape[0], np.inf)
    chosen = []
    idx = 0
    while True:
        chosen.append(idx)
        nearest = np.minimum(nearest, np.linalg.norm(pts - pts[idx], axis=1))
        open_ = np.flatnonzero(nearest >= separation)
        if open_.size == 0:
            return np.asarray(chosen)
        idx = int(open_[0])


@dataclass(frozen=True, eq=False)
class PartitionTree:
    """Nested triadic partitions of a bounding cube.

    Level ``k`` splits every axis of the cube ``[lower, lower + side]^d`` into
    ``3^k`` equal pieces, so level ``k`` refines level ``k - 1`` and its cells
    have diameter ``3^-k * diameter``.
    """

    lower: np.ndarray
    side: float
    depth: int
    support: np.ndarray = field(repr=False)
    scale_ratio: float = SCALE_RATIO

    @classmethod
    def build(cls, points, depth: int) -> "PartitionTree":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if int(depth) < 0:
            raise ConfigurationError("depth must be >= 0")
        lower = pts.min(axis=0)
        side = float((pts.max(axis=0) - lower).max())
        return cls(lower, side, int(depth), pts)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.dim)

    def cell_diameter(self, level: int) -> float:
        return self.diameter * self.scale_ratio**level

    def covers(self, points) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            return False
        tol = 1e-12 * max(1.0, self.side, float(np.abs(self.lower).max()))
        rel = pts - self.lower
        return bool(np.all(rel >= -tol) and np.all(rel <= self.side + tol))

    def cell_keys(self, points, level: int) -> np.ndarray:
        """Integer cell coordinates of ``points`` at ``level`` (one row per point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells = 3**level
        if self.side == 0:
            return np.zeros(pts.shape, dtype=np.int64)
        scaled = np.floor((pts - self.lower) / self.side * cells)
        return np.clip(scaled, 0, cells - 1).astype(np.int64)

    @cached_property
    def levels(self) -> list[np.ndarray]:
        """Cell label of each support point, for levels ``0..depth``."""
        out = []
        for level in range(self.depth + 1):
            _, labels = np.unique(self.cell_keys(self.support, level), axis=0, return_inverse=True)
            out.append(labels.reshape(-1))
        return out


def cell_discrepancy(mu: DiscreteMeasure, nu: DiscreteMeasure, tree: PartitionTree, level: int) -> float:
    """``sum_Q |mu(Q) - nu(Q)|`` over the cells of one tree level."""
    keys = np.vstack([tree.cell_keys(mu.points, level), tree.cell_keys(nu.points, level)])
    _, labels = np.unique(keys, axis=0, return_inverse=True)
    labels = labels.reshape(-1)
    signed = np.concatenate([mu.weights, -nu.weights])
    return float(np.abs(np.bincount(labels, signed)).sum())


def dyadic_upper_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float, tree: PartitionTree) -> float:
    """Multiscale upper bound on ``W_p^p(mu, nu)``.

    ``(3^-K D)^p + sum_{k=1..K} (3^-(k-1) D)^p * sum_{Q at level k} |mu(Q) - nu(Q)|``
    with ``D`` the tree diameter and ``K`` its depth.
    """
    p = _check_p(p)
    if mu.dim != nu.dim or mu.dim != tree.dim:
        raise DimensionMismatchError("tree and measures must share the ambient dimension")
    if not (tree.covers(mu.points) and tree.covers(nu.points)):
        raise ConfigurationError("partition tree does not cover every atom")
    total = tree.cell_diameter(tree.depth) ** p
    for level in range(1, tree.depth + 1):
        total += tree.cell_diameter(level - 1) ** p * cell_discrepancy(mu, nu, tree, level)
    return float(total)


@dataclass(frozen=True, eq=False)
class RandomInjection:
    """A bijection ``F: {0..m-1} -> points`` given by ``F(i) = points[perm[i]]``."""

    perm: np.ndarray
    points: np.ndarray

    def __call__(self, i: int) -> np.ndarray:
        return self.points[self.perm[i]]

    def pushforward(self, q) -> DiscreteMeasure:
        q = np.asarray(q, dtype=float)
        if q.size != self.perm.size:
            raise DimensionMismatchError("distribution length must equal m")
        return DiscreteMeasure(self.points[self.perm], q)


def random_injection(m: int, packed_points, seed, *keys: int) -> RandomInjection:
    """Uniformly random bijection from ``{0..m-1}`` onto ``packed_points``."""
    pts = np.asarray(packed_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if int(m) < 1 or pts.shape[0] != int(m):
        raise DimensionMismatchError(f"need exactly m={m} packed points, got {pts.shape[0]}")
    perm = make_rng(seed, *keys).permutation(int(m))
    return RandomInjection(perm, pts)


def chi_square_discrete(q, u) -> float:
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ConfigurationError("reference distribution must be strictly positive")
    return float(np.sum((q - u) ** 2 / u))


__all__ = [
    "Coupling",
    "PartitionTree",
    "RandomInjection",
    "TransportResult",
    "cell_discrepancy",
    "certify",
    "chi_square_discrete",
    "cost_matrix",
    "cost_power",
    "dyadic_upper_bound",
    "greedy_packing",
    "random_injection",
    "wasserstein_1d",
    "wasserstein_1d_value",
    "wasserstein_discrete",
]
