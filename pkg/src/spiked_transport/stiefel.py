"""Primitives on the Stiefel manifold of ``k x d`` matrices with orthonormal rows.

Frames are plain ``(k, d)`` ndarrays; :func:`as_frame` validates one. The
row convention is used throughout: a frame ``U`` maps ``x in R^d`` to
``U x in R^k``, tangent vectors at ``U`` are ``k x d`` matrices ``T`` with
``U T^T + T U^T = 0``, and the Riemannian projection of an ambient gradient
``G`` is ``G - sym(G U^T) U``.
"""

from __future__ import annotations

import itertools
import json
import math

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, NetSizeError, RetractionError
from .measures import make_rng, orthonormality_residual

FRAME_TOL = 1e-10
NET_CAP = 1_000_000
COVERING_CONSTANT = 3.0


def as_frame(frame, tol: float = FRAME_TOL) -> np.ndarray:
    """Return ``frame`` as a ``(k, d)`` float array after checking orthonormality."""
    arr = np.atleast_2d(np.asarray(frame, dtype=float))
    k, d = arr.shape
    if not 1 <= k <= d:
        raise DimensionMismatchError(f"frame must satisfy 1 <= k <= d, got k={k}, d={d}")
    if orthonormality_residual(arr) > tol:
        raise ConfigurationError("frame rows are not orthonormal")
    return arr


def frame_to_json(frame) -> str:
    return json.dumps(np.asarray(frame, dtype=float).tolist())


def frame_from_json(text: str) -> np.ndarray:
    return as_frame(json.loads(text))


def _sign_fixed_qr(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(mat)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def random_frame(d: int, k: int, seed, *keys: int) -> np.ndarray:
    """Haar-distributed frame from the sign-fixed QR of a Gaussian ``d x k`` matrix."""
    if not 1 <= k <= d:
        raise DimensionMismatchError(f"need 1 <= k <= d, got k={k}, d={d}")
    gauss = make_rng(seed, *keys).standard_normal((d, k))
    q, _ = _sign_fixed_qr(gauss)
    return q.T.copy()


def retract(frame: np.ndarray, tangent: np.ndarray, step: float) -> np.ndarray:
    """QR retraction of ``frame + step * tangent``.

    Raises
    ------
    RetractionError
        If the moved matrix is numerically rank deficient.
    """
    moved = np.asarray(frame, dtype=float) + step * np.asarray(tangent, dtype=float)
    if not np.all(np.isfinite(moved)):
        raise RetractionError("non-finite entries in retraction input")
    q, r = _sign_fixed_qr(moved.T)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise RetractionError("retraction input is numerically rank deficient")
    return q.T.copy()


def project_tangent(frame: np.ndarray, ambient_grad: np.ndarray) -> np.ndarray:
    """Project ``ambient_grad`` onto the tangent space at ``frame``: ``G - sym(G U^T) U``."""
    frame = np.asarray(frame, dtype=float)
    grad = np.asarray(ambient_grad, dtype=float)
    if grad.shape != frame.shape:
        raise DimensionMismatchError("gradient and frame shapes differ")
    inner = grad @ frame.T
    return grad - 0.5 * (inner + inner.T) @ frame


def tangent_residual(frame: np.ndarray, tangent: np.ndarray) -> float:
    """Frobenius norm of ``U T^T + T U^T``; zero for tangent vectors."""
    s = frame @ tangent.T
    return float(np.linalg.norm(s + s.T))


# ---------------------------------------------------------------------------
# nets


def covering_log_bound(d: int, k: int, eps: float, c: float = COVERING_CONSTANT) -> float:
    """``d k log(c sqrt(k) / eps)``, the log-size scale of an eps-net."""
    return d * k * math.log(c * math.sqrt(k) / eps)


def _circle_net(radius: float) -> np.ndarray:
    spacing = 2.0 * math.asin(min(radius, 2.0) / 2.0)
    count = max(3, math.ceil(2.0 * math.pi / spacing))
    theta = 2.0 * math.pi * np.arange(count) / count
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _sphere_net_size(d: int, radius: float) -> int:
    if d == 1:
        return 2
    if d == 2:
        return max(3, math.ceil(2.0 * math.pi / (2.0 * math.asin(min(radius, 2.0) / 2.0))))
    per_axis = math.ceil(2.0 / (2.0 * radius / math.sqrt(d - 1))) + 1
    return 2 * d * per_axis ** (d - 1)


def _sphere_net(d: int, radius: float) -> np.ndarray:
    """Points of S^{d-1} such that every unit vector is within ``radius`` of one.

    For ``d >= 3`` a lattice on each face of the cube ``[-1, 1]^d`` is pushed
    radially onto the sphere; radial projection from outside the unit ball is
    1-Lipschitz, so lattice spacing ``2 r / sqrt(d - 1)`` suffices.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        return _circle_net(radius)
    per_axis = math.ceil(2.0 / (2.0 * radius / math.sqrt(d - 1))) + 1
    axis = np.linspace(-1.0, 1.0, per_axis)
    face = np.array(list(itertools.product(axis, repeat=d - 1)))
    pts = []
    for i in range(d):
        for sign in (1.0, -1.0):
            block = np.insert(face, i, sign, axis=1)
            pts.append(block)
    pts = np.vstack(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.unique(np.round(pts, 12), axis=0)


def epsilon_net(d: int, k: int, eps: float, cap: int = NET_CAP) -> np.ndarray:
    """Operator-norm ``eps``-net of the Stiefel manifold, shape ``(N, k, d)``.

    Rows are drawn from a sphere net of radius ``eps / (2 sqrt(k))`` (radius
    ``eps`` when ``k = 1``), combined over the product of spheres, mapped to
    their polar factor and deduplicated. Candidates with smallest singular
    value below 1/2 are dropped; none of them can be the near neighbour of a
    frame.

    Raises
    ------
    NetSizeError
        If the candidate count exceeds ``cap``.
    """
    if not 1 <= k <= d:
        raise DimensionMismatchError(f"need 1 <= k <= d, got k={k}, d={d}")
    if not 0 < eps <= 1:
        raise ConfigurationError("eps must lie in (0, 1]")
    radius = eps if k == 1 else eps / (2.0 * math.sqrt(k))
    size = _sphere_net_size(d, radius) ** k
    if size > cap:
        raise NetSizeError(
            f"epsilon-net for d={d}, k={k}, eps={eps} needs about {size} frames (cap {cap}); "
            f"covering bound d*k*log(c*sqrt(k)/eps) = {covering_log_bound(d, k, eps):.2f} with c={COVERING_CONSTANT:g}"
        )
    sphere = _sphere_net(d, radius)
    if k == 1:
        return sphere[:, None, :].copy()
    idx = np.array(list(itertools.product(range(sphere.shape[0]), repeat=k)))
    cand = sphere[idx]
    left, sing, right = np.linalg.svd(cand, full_matrices=False)
    keep = sing.min(axis=1) >= 0.5
    polar = left[keep] @ right[keep]
    flat = np.unique(np.round(polar.reshape(polar.shape[0], -1), 12), axis=0)
    return flat.reshape(-1, k, d)


def net_covering_radius(net: np.ndarray, frames: np.ndarray) -> float:
    """Largest operator-norm distance from any of ``frames`` to its nearest net element."""
    worst = 0.0
    for frame in frames:
        dist = np.linalg.norm(net - frame, ord=2, axis=(1, 2))
        worst = max(worst, float(dist.min()))
    return worst


# ---------------------------------------------------------------------------
# angles


def _orthonormal_basis(basis) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(basis, dtype=float))
    if arr.size == 0 or not np.any(arr):
        raise ConfigurationError("subspace basis is zero")
    q, r = np.linalg.qr(arr.T)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-12 * diag.max()))
    if rank < arr.shape[0]:
        raise ConfigurationError("subspace basis is rank deficient")
    return q.T


def _bases(u1, u2) -> tuple[np.ndarray, np.ndarray]:
    b1 = _orthonormal_basis(u1)
    b2 = _orthonormal_basis(u2)
    if b1.shape[1] != b2.shape[1]:
        raise DimensionMismatchError("subspaces live in different ambient dimensions")
    return (b1, b2) if b1.shape[0] <= b2.shape[0] else (b2, b1)


def cos_minimal_angle(u1, u2) -> float:
    """``||B1 B2^T||_op`` for orthonormal bases, clamped to ``[0, 1]``."""
    b1, b2 = _bases(u1, u2)
    return float(min(max(np.linalg.norm(b1 @ b2.T, ord=2), 0.0), 1.0))


def minimal_angle(u1, u2) -> float:
    """Smallest principal angle between ``span(u1)`` and ``span(u2)``, in ``[0, pi/2]``.

    Rows of each argument span the subspace; they need not be orthonormal.
    The angle is ``atan2(sin, cos)`` with the cosine ``||B1 B2^T||_op`` and
    the sine the smallest singular value of ``B1 (I - B2^T B2)`` (``B1`` the
    smaller basis); this stays accurate where ``arccos`` of a cosine near 1
    loses half the digits.
    """
    b1, b2 = _bases(u1, u2)
    cos = min(max(float(np.linalg.norm(b1 @ b2.T, ord=2)), 0.0), 1.0)
    resid = b1 - (b1 @ b2.T) @ b2
    sin = min(max(float(np.linalg.svd(resid, compute_uv=False).min()), 0.0), 1.0)
    return float(math.atan2(sin, cos))


def sin_squared_minimal_angle(u1, u2) -> float:
    """``1 - ||U1 U2^T||_op^2`` for orthonormalised bases."""
    c = cos_minimal_angle(u1, u2)
    return 1.0 - c * c


__all__ = [
    "as_frame",
    "cos_minimal_angle",
    "covering_log_bound",
    "epsilon_net",
    "frame_from_json",
    "frame_to_json",
    "minimal_angle",
    "net_covering_radius",
    "project_tangent",
    "random_frame",
    "retract",
    "sin_squared_minimal_angle",
    "tangent_residual",
]
