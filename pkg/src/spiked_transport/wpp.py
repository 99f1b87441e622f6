"""Wasserstein projection pursuit.

The estimator maximises ``W_p(U mu, U nu)`` over frames ``U`` with ``k``
orthonormal rows. The objective is a maximum of smooth functions of ``U``
(one per coupling), so with the optimal coupling held fixed its gradient is
a supergradient. We run projected ascent from several Haar-random starts,
with Armijo backtracking along the QR retraction, and keep the best frame.

For ``k = 1`` each evaluation is a sort of the two projected samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, NetSizeError, RetractionError
from .measures import DiscreteMeasure
from .ot_solver import TransportResult, _check_p, _quantile_plan, cost_power, wasserstein_1d, wasserstein_discrete
from .stiefel import as_frame, epsilon_net, project_tangent, random_frame, retract

NET_MAX_DIM = 3


@dataclass(frozen=True)
class WppOptions:
    """Knobs for the multi-restart ascent.

    ``tol`` is the relative improvement below which a restart is declared
    converged. ``net_fallback`` is an eps for an exhaustive net search, used
    only when ``d <= 3`` and ``k = 1``.
    """

    restarts: int = 16
    max_iters: int = 200
    step_init: float = 0.5
    step_decay: float = 0.5
    tol: float = 1e-6
    net_fallback: float | None = None
    seed: int = 0
    armijo: float = 1e-4
    min_step: float = 1e-10

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ConfigurationError("restarts and max_iters must be positive")
        if not (self.step_init > 0 and 0 < self.step_decay < 1 and self.tol > 0):
            raise ConfigurationError("step_init and tol must be positive, step_decay in (0, 1)")
        if self.net_fallback is not None and not 0 < self.net_fallback <= 1:
            raise ConfigurationError("net_fallback must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class WppResult:
    value: float
    frame: np.ndarray
    per_restart_values: list[float]
    converged_flags: list[bool]
    iterations: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "value": self.value,
                "frame": np.asarray(self.frame).tolist(),
                "per_restart_values": list(self.per_restart_values),
                "converged_flags": list(self.converged_flags),
            }
        )


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure, frame: np.ndarray | None = None) -> None:
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"ambient dimensions differ: {mu.dim} vs {nu.dim}")
    if frame is not None and frame.shape[1] != mu.dim:
        raise DimensionMismatchError(f"frame acts on R^{frame.shape[1]}, measures live in R^{mu.dim}")


def project_measure(mu: DiscreteMeasure, frame) -> DiscreteMeasure:
    """Push ``mu`` forward through ``x -> U x``."""
    frame = as_frame(frame)
    if frame.shape[1] != mu.dim:
        raise DimensionMismatchError(f"frame acts on R^{frame.shape[1]}, measure lives in R^{mu.dim}")
    return DiscreteMeasure(mu.points @ frame.T, mu.weights)


def projected_wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, frame, p: float = 2.0) -> TransportResult:
    """Exact ``W_p(U mu, U nu)``; the 1-D quantile coupling is used when ``k = 1``."""
    frame = as_frame(frame)
    _check_pair(mu, nu, frame)
    pm, pn = project_measure(mu, frame), project_measure(nu, frame)
    if frame.shape[0] == 1:
        return wasserstein_1d(pm, pn, p)
    return wasserstein_discrete(pm, pn, p, certify_plan=False)


def max_over_frames(mu: DiscreteMeasure, nu: DiscreteMeasure, frames, p: float = 2.0) -> float:
    """``max_U W_p(U mu, U nu)`` over a finite frame collection."""
    return max(projected_wasserstein(mu, nu, f, p).cost for f in frames)


class _Plan(NamedTuple):
    value: float
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray


def _evaluate(mu: DiscreteMeasure, nu: DiscreteMeasure, frame: np.ndarray, p: float) -> _Plan:
    """Objective value plus the optimal coupling in triplet form."""
    if frame.shape[0] == 1:
        a = mu.points @ frame[0]
        b = nu.points @ frame[0]
        if mu.n == nu.n and mu.is_uniform and nu.is_uniform:
            rows = np.argsort(a, kind="stable")
            cols = np.argsort(b, kind="stable")
            mass = np.full(mu.n, 1.0 / mu.n)
        else:
            rows, cols, mass = _quantile_plan(a, mu.weights, b, nu.weights)
        total = float(mass @ cost_power(np.abs(a[rows] - b[cols]), p))
    else:
        res = wasserstein_discrete(
            DiscreteMeasure(mu.points @ frame.T, mu.weights),
            DiscreteMeasure(nu.points @ frame.T, nu.weights),
            p,
            certify_plan=False,
        )
        c = res.coupling
        rows, cols, mass = c.rows, c.cols, c.mass
        total = res.cost**p
    return _Plan(max(total, 0.0) ** (1.0 / p), rows, cols, mass)


def _gradient_from_plan(mu, nu, frame, p, plan: _Plan) -> tuple[np.ndarray, bool]:
    if plan.value <= 0:
        return np.zeros_like(frame), True
    diff = mu.points[plan.rows] - nu.points[plan.cols]
    proj = diff @ frame.T
    r = np.linalg.norm(proj, axis=1)
    coef = np.zeros_like(r)
    pos = r > 0
    coef[pos] = plan.mass[pos] * np.exp((p - 2.0) * np.log(r[pos]))
    total = plan.value**p
    grad = total ** (1.0 / p - 1.0) * ((coef[:, None] * proj).T @ diff)
    return grad, False


def wpp_supergradient(mu: DiscreteMeasure, nu: DiscreteMeasure, frame, p: float = 2.0) -> tuple[np.ndarray, float, bool]:
    """Ambient gradient of the fixed-coupling objective at ``frame``.

    With the optimal coupling ``pi`` held fixed the objective is
    ``S(U)^(1/p)`` with ``S(U) = sum_ij pi_ij |U (x_i - y_j)|^p`` and

    ``d/dU = S^(1/p - 1) sum_ij pi_ij |U d_ij|^(p-2) (U d_ij) d_ij^T``.

    Pairs with ``U d_ij = 0`` contribute nothing, which for ``p = 1`` is the
    subgradient convention.

    Returns
    -------
    grad : ndarray, shape (k, d)
    value : float
        Objective at ``frame``.
    degenerate : bool
        True when the objective is zero; ``grad`` is then zero.
    """
    p = _check_p(p)
    frame = as_frame(frame)
    _check_pair(mu, nu, frame)
    plan = _evaluate(mu, nu, frame, p)
    grad, degenerate = _gradient_from_plan(mu, nu, frame, p, plan)
    return grad, plan.value, degenerate


class _Trace(NamedTuple):
    frame: np.ndarray
    value: float
    converged: bool
    iterations: int
    history: list[float]


def ascend(mu: DiscreteMeasure, nu: DiscreteMeasure, frame: np.ndarray, p: float, opts: WppOptions) -> _Trace:
    """Projected supergradient ascent with Armijo backtracking from one start."""
    plan = _evaluate(mu, nu, frame, p)
    history = [plan.value]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        grad, degenerate = _gradient_from_plan(mu, nu, frame, p, plan)
        if degenerate:
            converged = True
            break
        tangent = project_tangent(frame, grad)
        slope = float(np.sum(tangent * tangent))
        if slope <= 1e-24:
            converged = True
            break
        step = opts.step_init
        accepted = None
        while step >= opts.min_step:
            try:
                cand = retract(frame, tangent, step)
            except RetractionError:
                step *= opts.step_decay
                continue
            cand_plan = _evaluate(mu, nu, cand, p)
            if cand_plan.value >= plan.value + opts.armijo * step * slope:
                accepted = cand, cand_plan
                break
            step *= opts.step_decay
        if accepted is None:
            converged = True
            break
        gain = accepted[1].value - plan.value
        frame, plan = accepted
        history.append(plan.value)
        if gain <= opts.tol * max(plan.value, 1e-300):
            converged = True
            break
    return _Trace(frame, plan.value, converged, it, history)


def wpp_estimate(mu_n: DiscreteMeasure, nu_n: DiscreteMeasure, p: float = 2.0, k: int = 1, opts: WppOptions | None = None) -> WppResult:
    """WPP estimate ``max_U W_p(U mu_n, U nu_n)`` over ``k x d`` frames.

    Restart ``r`` starts from a Haar frame drawn on sub-stream ``(seed, r)``.
    Ties between restarts go to the lowest index. With ``net_fallback`` set
    and ``d <= 3``, ``k = 1``, the best frame of an exhaustive net is
    ascended as one extra restart appended at the end.
    """
    opts = opts or WppOptions()
    p = _check_p(p)
    _check_pair(mu_n, nu_n)
    d = mu_n.dim
    if not 1 <= k <= d:
        raise DimensionMismatchError(f"need 1 <= k <= d, got k={k}, d={d}")
    if k == d:
        frame = np.eye(d)
        value = projected_wasserstein(mu_n, nu_n, frame, p).cost
        return WppResult(value, frame, [value], [True], [0])

    traces = [ascend(mu_n, nu_n, random_frame(d, k, opts.seed, r), p, opts) for r in range(opts.restarts)]
    if opts.net_fallback is not None and d <= NET_MAX_DIM and k == 1:
        try:
            net = epsilon_net(d, k, opts.net_fallback)
        except NetSizeError:
            net = None
        if net is not None:
            values = [_evaluate(mu_n, nu_n, f, p).value for f in net]
            traces.append(ascend(mu_n, nu_n, net[int(np.argmax(values))], p, opts))

    values = [t.value for t in traces]
    best = int(np.argmax(values))
    return WppResult(
        values[best],
        traces[best].frame,
        values,
        [t.converged for t in traces],
        [t.iterations for t in traces],
    )


def recover_spike(mu_n: DiscreteMeasure, nu_n: DiscreteMeasure, p: float = 2.0, k: int = 1, opts: WppOptions | None = None) -> np.ndarray:
    """Frame maximising the projected distance; an estimate of the spike."""
    return wpp_estimate(mu_n, nu_n, p, k, opts).frame


__all__ = [
    "WppOptions",
    "WppResult",
    "ascend",
    "max_over_frames",
    "project_measure",
    "projected_wasserstein",
    "recover_spike",
    "wpp_estimate",
    "wpp_supergradient",
]
