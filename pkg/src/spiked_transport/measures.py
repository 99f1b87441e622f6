"""Discrete measures, seeded samplers and spiked-pair generators.

All randomness flows through :func:`make_rng`, which derives a PCG64 stream
from a 64-bit seed plus an optional spawn key (``SeedSequence`` splitting).
Sub-streams are addressed by keys such as ``(n_index, replicate, measure)``,
so replicates can run in any order or in parallel and still reproduce
bit-for-bit. Gaussian draws use numpy's ziggurat ``standard_normal``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy import special

from .errors import ConfigurationError, DimensionMismatchError
from .hardness import AtomicLaw, ConvolvedLaw, hard_distribution_A

SEED_MAX = 2**64 - 1


# ---------------------------------------------------------------------------
# randomness


def seed_sequence(seed, *keys: int) -> np.random.SeedSequence:
    """SeedSequence for ``seed`` extended by the integer spawn ``keys``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(int(k) for k in keys))
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))


def make_rng(seed, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


# ---------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d.

    Attributes
    ----------
    points : ndarray, shape (n, d)
        Support atoms. One-dimensional input is read as ``d = 1``.
    weights : ndarray, shape (n,)
        Nonnegative masses summing to one (within 1e-12).
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if points.ndim != 2 or points.shape[0] == 0:
            raise ConfigurationError("points must be a non-empty (n, d) array")
        if weights.shape[0] != points.shape[0]:
            raise DimensionMismatchError("one weight per support point required")
        if not np.all(np.isfinite(points)):
            raise ConfigurationError("support points must be finite")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be nonnegative and sum to 1")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    # --- serialisation -----------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["w"] + [f"x{i + 1}" for i in range(self.dim)])
        for w, row in zip(self.weights, self.points):
            writer.writerow([repr(float(w))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "DiscreteMeasure":
        """Read ``w,x1,...,xd`` rows from a path or a CSV string."""
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0].strip() != "w" or [h.strip() for h in header[1:]] != [f"x{i + 1}" for i in range(len(header) - 1)]:
            raise ConfigurationError("CSV header must be 'w,x1,...,xd'")
        data = np.array(body, dtype=float)
        weights = data[:, 0]
        # tolerate decimal rounding in hand-written files
        if abs(weights.sum() - 1.0) <= 1e-9:
            weights = weights / weights.sum()
        return cls(data[:, 1:], weights)

    def to_json(self) -> str:
        return json.dumps({"points": self.points.tolist(), "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        data = json.loads(text)
        return cls(np.asarray(data["points"], dtype=float), np.asarray(data["weights"], dtype=float))


# ---------------------------------------------------------------------------
# sampler descriptors


def _as_matrix(x, dim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, 1) if dim in (None, 1) else x.reshape(1, -1)
    return x


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    covariance: np.ndarray
    family = "gaussian"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError("covariance must be (d, d) matching the mean")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ConfigurationError("covariance must be symmetric")
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise ConfigurationError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", evecs * np.sqrt(np.clip(evals, 0, None)))

    @classmethod
    def standard(cls, dim: int, variance: float = 1.0) -> "Gaussian":
        return cls(np.zeros(dim), variance * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.dim)) @ self._factor.T

    def to_config(self):
        return {"family": self.family, "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


@dataclass(frozen=True, eq=False)
class UniformCube:
    """Uniform law on the cube of side ``side`` centred at the origin."""

    dim: int
    side: float = 2.0
    family = "uniform_cube"

    def __post_init__(self):
        if int(self.dim) < 1 or not self.side > 0:
            raise ConfigurationError("uniform_cube needs dim >= 1 and side > 0")

    def sample(self, rng, n):
        half = 0.5 * self.side
        return rng.uniform(-half, half, size=(n, self.dim))

    def to_config(self):
        return {"family": self.family, "dim": int(self.dim), "side": float(self.side)}


@dataclass(frozen=True, eq=False)
class Atomic:
    points: np.ndarray
    weights: np.ndarray
    family = "atomic"

    def __post_init__(self):
        measure = DiscreteMeasure(_as_matrix(self.points), self.weights)
        object.__setattr__(self, "points", measure.points)
        object.__setattr__(self, "weights", measure.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def as_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points, self.weights)

    def sample(self, rng, n):
        idx = rng.choice(self.points.shape[0], size=n, p=self.weights)
        return self.points[idx]

    def to_config(self):
        return {"family": self.family, "points": self.points.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class TwoPoint(Atomic):
    family = "two_point"

    def __post_init__(self):
        super().__post_init__()
        if self.points.shape[0] != 2:
            raise ConfigurationError("two_point needs exactly two locations")

    @classmethod
    def on_line(cls, a: float, b: float, prob_a: float = 0.5) -> "TwoPoint":
        return cls([[a], [b]], [prob_a, 1.0 - prob_a])

    def to_config(self):
        return {"family": self.family, "locations": self.points.tolist(), "probabilities": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class GaussHermiteConvolved:
    """One-dimensional moment-matched law ``A(m, delta)``."""

    m: int
    delta: float | None = None
    family = "gauss_hermite_convolved"
    dim = 1

    def __post_init__(self):
        object.__setattr__(self, "law", hard_distribution_A(int(self.m), self.delta))
        object.__setattr__(self, "delta", self.law.delta)

    def sample(self, rng, n):
        return self.law.sample(rng, n)[:, None]

    def to_config(self):
        return {"family": self.family, "m": int(self.m), "delta": float(self.delta)}


SamplerDescriptor = Union[Gaussian, UniformCube, Atomic, TwoPoint, GaussHermiteConvolved]


SAMPLER_PARAMS = {
    "gaussian": {"mean", "covariance", "dim", "variance"},
    "uniform_cube": {"dim", "side"},
    "two_point": {"locations", "probabilities"},
    "atomic": {"points", "weights"},
    "gauss_hermite_convolved": {"m", "delta"},
}


def sampler_from_config(cfg: dict[str, Any]) -> SamplerDescriptor:
    """Build a sampler from a ``{"family": ..., **params}`` mapping."""
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise ConfigurationError("sampler config needs a 'family' key")
    family = cfg["family"]
    allowed = SAMPLER_PARAMS.get(family)
    if allowed is None:
        raise ConfigurationError(f"unknown sampler family {family!r}")
    extra = sorted(set(cfg) - allowed - {"family"})
    if extra:
        raise ConfigurationError(f"sampler family {family!r} does not accept {', '.join(map(repr, extra))}")
    try:
        if family == "gaussian":
            if "covariance" not in cfg and "dim" in cfg:
                return Gaussian.standard(int(cfg["dim"]), float(cfg.get("variance", 1.0)))
            return Gaussian(cfg["mean"], cfg["covariance"])
        if family == "uniform_cube":
            return UniformCube(int(cfg["dim"]), float(cfg.get("side", 2.0)))
        if family == "two_point":
            return TwoPoint(cfg["locations"], cfg["probabilities"])
        if family == "atomic":
            return Atomic(cfg["points"], cfg["weights"])
        if family == "gauss_hermite_convolved":
            return GaussHermiteConvolved(int(cfg["m"]), cfg.get("delta"))
    except KeyError as exc:
        raise ConfigurationError(f"sampler family {family!r} is missing parameter {exc.args[0]!r}") from None
    raise ConfigurationError(f"unknown sampler family {family!r}")


def is_finitely_supported(sampler) -> bool:
    return isinstance(sampler, Atomic)


def empirical(sampler: SamplerDescriptor, n: int, seed, *keys: int) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws, each with weight ``1/n``."""
    if int(n) < 1:
        raise ConfigurationError("n must be >= 1")
    rng = make_rng(seed, *keys)
    return DiscreteMeasure.uniform(_as_matrix(sampler.sample(rng, int(n)), sampler.dim))


# ---------------------------------------------------------------------------
# spiked transport model


def orthonormality_residual(frame: np.ndarray) -> float:
    frame = np.atleast_2d(frame)
    return float(np.linalg.norm(frame @ frame.T - np.eye(frame.shape[0])))


@dataclass(frozen=True, eq=False)
class SpikedPairSpec:
    """Generative description of a pair obeying the (relaxed) spiked model.

    Each measure is the law of ``X U + Z C`` (row convention), with ``U`` the
    ``k x d`` spike frame and ``C`` the ``(d - k) x d`` orthonormal complement
    basis. Without ``relaxed_law_z2`` both measures share ``law_z``.
    """

    ambient_dim: int
    spike_frame: np.ndarray
    law_x1: SamplerDescriptor
    law_x2: SamplerDescriptor
    law_z: SamplerDescriptor | None
    relaxed_law_z2: SamplerDescriptor | None = None

    def __post_init__(self):
        frame = np.atleast_2d(np.asarray(self.spike_frame, dtype=float))
        d = int(self.ambient_dim)
        k = frame.shape[0]
        if frame.shape[1] != d or not 1 <= k <= d:
            raise DimensionMismatchError(f"spike frame must be k x {d} with 1 <= k <= {d}")
        if orthonormality_residual(frame) > 1e-10:
            raise ConfigurationError("spike frame rows must be orthonormal within 1e-10")
        for name in ("law_x1", "law_x2"):
            if getattr(self, name).dim != k:
                raise DimensionMismatchError(f"{name} must be {k}-dimensional")
        for name in ("law_z", "relaxed_law_z2"):
            law = getattr(self, name)
            if law is None:
                if name == "law_z" and d > k:
                    raise DimensionMismatchError("law_z is required when k < d")
                continue
            if law.dim != d - k:
                raise DimensionMismatchError(f"{name} must be {d - k}-dimensional")
        frame.setflags(write=False)
        object.__setattr__(self, "spike_frame", frame)

    @property
    def k(self) -> int:
        return self.spike_frame.shape[0]

    @property
    def d(self) -> int:
        return int(self.ambient_dim)

    @property
    def law_z2(self):
        return self.law_z if self.relaxed_law_z2 is None else self.relaxed_law_z2

    @cached_property
    def complement_basis(self) -> np.ndarray:
        """Rows spanning the orthogonal complement of the spike (QR completion)."""
        q, _ = np.linalg.qr(self.spike_frame.T, mode="complete")
        return q[:, self.k :].T.copy()

    def embed(self, x: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        out = x @ self.spike_frame
        if z is not None and self.k < self.d:
            out = out + z @ self.complement_basis
        return out

    def to_config(self) -> dict[str, Any]:
        cfg = {
            "kind": "custom",
            "d": self.d,
            "spike_frame": self.spike_frame.tolist(),
            "law_x1": self.law_x1.to_config(),
            "law_x2": self.law_x2.to_config(),
            "law_z": None if self.law_z is None else self.law_z.to_config(),
        }
        if self.relaxed_law_z2 is not None:
            cfg["relaxed_law_z2"] = self.relaxed_law_z2.to_config()
        return cfg


def sample_spiked_pair(spec: SpikedPairSpec, n: int, seed, *keys: int) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Draw ``n`` samples from each measure of the pair on independent streams."""
    if int(n) < 1:
        raise ConfigurationError("n must be >= 1")
    out = []
    for idx, (law_x, law_z) in enumerate(((spec.law_x1, spec.law_z), (spec.law_x2, spec.law_z2))):
        rng = make_rng(seed, *keys, idx)
        x = _as_matrix(law_x.sample(rng, n), law_x.dim)
        z = None if law_z is None else _as_matrix(law_z.sample(rng, n), law_z.dim)
        out.append(DiscreteMeasure.uniform(spec.embed(x, z)))
    return out[0], out[1]


def population_pair(spec: SpikedPairSpec) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Exact population measures when every component law is finitely supported."""
    laws = (spec.law_x1, spec.law_x2, spec.law_z, spec.law_z2)
    if not all(law is None or is_finitely_supported(law) for law in laws):
        raise ConfigurationError("population_pair needs finitely supported component laws")
    out = []
    for law_x, law_z in ((spec.law_x1, spec.law_z), (spec.law_x2, spec.law_z2)):
        if law_z is None:
            out.append(DiscreteMeasure(spec.embed(law_x.points, None), law_x.weights))
            continue
        xi, zi = np.meshgrid(np.arange(law_x.points.shape[0]), np.arange(law_z.points.shape[0]), indexing="ij")
        pts = spec.embed(law_x.points[xi.ravel()], law_z.points[zi.ravel()])
        w = (law_x.weights[:, None] * law_z.weights[None, :]).ravel()
        out.append(DiscreteMeasure(pts, w / w.sum()))
    return out[0], out[1]


def _unit(u, d=None) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if d is not None and u.size != d:
        raise DimensionMismatchError(f"direction must have length {d}")
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ConfigurationError("direction must be a unit vector within 1e-10")
    return u


def spiked_gaussian_spec(d: int, u, beta: float) -> SpikedPairSpec:
    """``N(0, I_d)`` against ``N(0, I_d + beta u u^T)`` in spiked form (k = 1)."""
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    u = _unit(u, d)
    law_z = Gaussian.standard(d - 1) if d > 1 else None
    return SpikedPairSpec(d, u[None, :], Gaussian.standard(1), Gaussian.standard(1, 1.0 + beta), law_z)


def hard_instance_spec(d: int, v, m: int, delta: float | None = None) -> SpikedPairSpec:
    """``P_v = law(X v + Z)`` with ``X ~ A(m, delta)`` against ``N(0, I_d)``."""
    v = _unit(v, d)
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    if delta is not None and not 0 < delta < 1:
        raise ConfigurationError("delta must lie in (0, 1)")
    law_z = Gaussian.standard(d - 1) if d > 1 else None
    return SpikedPairSpec(d, v[None, :], GaussHermiteConvolved(m, delta), Gaussian.standard(1), law_z)


def gaussian_abs_moment_norm(p: float) -> float:
    """(E|Z|^p)^(1/p) for a standard normal Z."""
    return (2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)) ** (1 / p)


def gaussian_scale_wasserstein(sd1: float, sd2: float, p: float) -> float:
    """W_p(N(0, sd1^2), N(0, sd2^2)); the quantile coupling is a dilation."""
    return abs(sd1 - sd2) * gaussian_abs_moment_norm(p)


def spiked_gaussian_distance(beta: float, p: float) -> float:
    """Population W_p of the spiked Gaussian pair with spike strength ``beta``."""
    return gaussian_scale_wasserstein(1.0, math.sqrt(1.0 + beta), p)


def spec_from_config(cfg: dict[str, Any]) -> SpikedPairSpec:
    """Build a spiked pair from a config mapping.

    ``kind`` is one of ``spiked_gaussian`` (d, beta, optional u),
    ``hard_instance`` (d, m, optional delta, optional v) or ``custom``
    (d, spike_frame, law_x1, law_x2, law_z, optional relaxed_law_z2).
    """
    kind = cfg.get("kind", "custom")
    try:
        d = int(cfg["d"])
        if kind in ("spiked_gaussian", "hard_instance"):
            direction = cfg.get("u", cfg.get("v"))
            direction = np.eye(d)[0] if direction is None else np.asarray(direction, dtype=float)
            if kind == "spiked_gaussian":
                return spiked_gaussian_spec(d, direction, float(cfg["beta"]))
            return hard_instance_spec(d, direction, int(cfg["m"]), cfg.get("delta"))
        if kind == "custom":
            return SpikedPairSpec(
                d,
                np.asarray(cfg["spike_frame"], dtype=float),
                sampler_from_config(cfg["law_x1"]),
                sampler_from_config(cfg["law_x2"]),
                None if cfg.get("law_z") is None else sampler_from_config(cfg["law_z"]),
                None if cfg.get("relaxed_law_z2") is None else sampler_from_config(cfg["relaxed_law_z2"]),
            )
    except KeyError as exc:
        raise ConfigurationError(f"model {kind!r} is missing parameter {exc.args[0]!r}") from None
    raise ConfigurationError(f"unknown model kind {kind!r}")


__all__ = [
    "Atomic",
    "AtomicLaw",
    "ConvolvedLaw",
    "DiscreteMeasure",
    "GaussHermiteConvolved",
    "Gaussian",
    "SamplerDescriptor",
    "SpikedPairSpec",
    "TwoPoint",
    "UniformCube",
    "empirical",
    "gaussian_scale_wasserstein",
    "hard_instance_spec",
    "make_rng",
    "orthonormality_residual",
    "population_pair",
    "sample_spiked_pair",
    "sampler_from_config",
    "seed_sequence",
    "spec_from_config",
    "spiked_gaussian_distance",
    "spiked_gaussian_spec",
]
