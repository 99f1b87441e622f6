import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import gaussian_abs_moment, ks_critical
from scipy import stats

from spiked_transport.errors import ConfigurationError, DimensionMismatchError
from spiked_transport.measures import (
    Atomic,
    DiscreteMeasure,
    GaussHermiteConvolved,
    Gaussian,
    SpikedPairSpec,
    TwoPoint,
    UniformCube,
    empirical,
    gaussian_scale_wasserstein,
    hard_instance_spec,
    make_rng,
    population_pair,
    sample_spiked_pair,
    sampler_from_config,
    spec_from_config,
    spiked_gaussian_distance,
    spiked_gaussian_spec,
)
from spiked_transport.ot_solver import wasserstein_1d, wasserstein_discrete


class TestDiscreteMeasure:
    def test_rejects_bad_weights(self):
        with pytest.raises(ConfigurationError):
            DiscreteMeasure([[0.0], [1.0]], [0.7, 0.7])
        with pytest.raises(ConfigurationError):
            DiscreteMeasure([[0.0], [1.0]], [1.5, -0.5])

    def test_rejects_non_finite_and_empty(self):
        with pytest.raises(ConfigurationError):
            DiscreteMeasure([[np.nan]], [1.0])
        with pytest.raises(ConfigurationError):
            DiscreteMeasure(np.empty((0, 2)), np.empty(0))

    def test_weight_count_must_match(self):
        with pytest.raises(DimensionMismatchError):
            DiscreteMeasure([[0.0], [1.0]], [1.0])

    def test_one_dimensional_input(self):
        mu = DiscreteMeasure.uniform(np.array([0.0, 1.0, 2.0]))
        assert mu.dim == 1 and mu.n == 3 and mu.is_uniform

    def test_immutable(self):
        mu = DiscreteMeasure.uniform(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            mu.points[0, 0] = 1.0

    @given(
        st.integers(1, 6),
        st.integers(1, 3),
        st.integers(0, 2**32 - 1),
    )
    def test_csv_and_json_round_trip(self, n, d, seed):
        r = np.random.default_rng(seed)
        mu = DiscreteMeasure(r.normal(size=(n, d)), r.dirichlet(np.ones(n)) if n > 1 else [1.0])
        for back in (DiscreteMeasure.from_csv(mu.to_csv()), DiscreteMeasure.from_json(mu.to_json())):
            np.testing.assert_array_equal(back.points, mu.points)
            np.testing.assert_allclose(back.weights, mu.weights, rtol=0, atol=1e-15)

    def test_csv_header_checked(self):
        with pytest.raises(ConfigurationError):
            DiscreteMeasure.from_csv("weight,x\n1,0\n")


class TestEmpirical:
    def test_degenerate_law(self):
        mu = empirical(Atomic([[0.0]], [1.0]), 3, seed=1)
        np.testing.assert_array_equal(mu.points, np.zeros((3, 1)))
        np.testing.assert_array_equal(mu.weights, np.full(3, 1 / 3))

    def test_gaussian_mean(self):
        mu = empirical(Gaussian([0.0], [[1.0]]), 1000, seed=7)
        assert abs(mu.points.mean()) < 0.1

    @pytest.mark.parametrize(
        "sampler",
        [Gaussian.standard(3), UniformCube(4), TwoPoint.on_line(-1, 2, 0.3), GaussHermiteConvolved(4)],
        ids=["gaussian", "cube", "two_point", "hermite"],
    )
    def test_bit_identical_for_same_seed(self, sampler):
        a = empirical(sampler, 50, 99, 3)
        b = empirical(sampler, 50, 99, 3)
        c = empirical(sampler, 50, 99, 4)
        np.testing.assert_array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_n_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            empirical(UniformCube(2), 0, 1)

    def test_seed_range(self):
        with pytest.raises(ConfigurationError):
            make_rng(-1)
        with pytest.raises(ConfigurationError):
            make_rng(2**64)

    def test_uniform_cube_support(self):
        pts = empirical(UniformCube(5, side=2.0), 2000, 3).points
        assert pts.min() >= -1 and pts.max() <= 1


class TestSamplerConfig:
    @pytest.mark.parametrize(
        "cfg",
        [
            {"family": "gaussian", "mean": [0, 1], "covariance": [[2, 0.5], [0.5, 1]]},
            {"family": "gaussian", "dim": 3, "variance": 2.0},
            {"family": "uniform_cube", "dim": 5, "side": 2},
            {"family": "two_point", "locations": [[0], [1]], "probabilities": [0.5, 0.5]},
            {"family": "atomic", "points": [[0, 0], [1, 1], [2, 0]], "weights": [0.2, 0.3, 0.5]},
            {"family": "gauss_hermite_convolved", "m": 3, "delta": 0.25},
        ],
    )
    def test_round_trip(self, cfg):
        sampler = sampler_from_config(cfg)
        again = sampler_from_config(sampler.to_config())
        r1, r2 = make_rng(5), make_rng(5)
        np.testing.assert_array_equal(sampler.sample(r1, 10), again.sample(r2, 10))

    @pytest.mark.parametrize(
        "cfg",
        [
            {"family": "gaussian", "mean": [0, 0], "covariance": [[1, 2], [2, 1]]},
            {"family": "gaussian", "mean": [0], "covariance": [[1, 0], [0, 1]]},
            {"family": "two_point", "locations": [[0], [1], [2]], "probabilities": [0.2, 0.3, 0.5]},
            {"family": "atomic", "points": [[0]], "weights": [0.5]},
            {"family": "uniform_cube", "dim": 2, "side": -1},
            {"family": "laplace", "scale": 1},
            {"family": "uniform_cube"},
        ],
        ids=["not_psd", "shape", "three_points", "mass", "side", "unknown", "missing"],
    )
    def test_invalid(self, cfg):
        with pytest.raises(ConfigurationError):
            sampler_from_config(cfg)


class TestSpikedPair:
    def test_identical_on_spike_laws_give_zero_distance(self):
        law = Atomic([[0.0], [1.0]], [0.5, 0.5])
        spec = SpikedPairSpec(2, [[1.0, 0.0]], law, law, Atomic([[0.0], [3.0]], [0.25, 0.75]))
        mu, nu = population_pair(spec)
        assert wasserstein_discrete(mu, nu, 2).cost == pytest.approx(0.0, abs=1e-12)

    def test_point_masses(self):
        spec = SpikedPairSpec(2, [[1.0, 0.0]], Atomic([[0.0]], [1.0]), Atomic([[1.0]], [1.0]), Atomic([[0.0]], [1.0]))
        _, nu = sample_spiked_pair(spec, 5, seed=0)
        np.testing.assert_allclose(nu.points, np.tile([1.0, 0.0], (5, 1)), atol=1e-15)

    def test_strict_model_shares_descriptor(self):
        spec = spiked_gaussian_spec(4, np.eye(4)[2], 1.0)
        assert spec.law_z2 is spec.law_z

    def test_complement_is_orthonormal_completion(self):
        u = np.array([1.0, 2.0, 2.0]) / 3
        spec = spiked_gaussian_spec(3, u, 0.5)
        full = np.vstack([spec.spike_frame, spec.complement_basis])
        np.testing.assert_allclose(full @ full.T, np.eye(3), atol=1e-12)

    def test_complement_projections_agree_in_law(self):
        """Two-sample KS along a complement direction stays below the 0.999 critical value."""
        u = np.ones(4) / 2
        spec = spiked_gaussian_spec(4, u, 1.0)
        direction = spec.complement_basis[1]
        n, reps = 400, 200
        crit = ks_critical(n, n, 0.001)
        below = 0
        for r in range(reps):
            mu, nu = sample_spiked_pair(spec, n, 11, r)
            stat = stats.ks_2samp(mu.points @ direction, nu.points @ direction).statistic
            below += stat < crit
        assert below >= 0.99 * reps

    def test_spiked_covariance(self):
        u = np.array([0.6, 0.0, 0.8])
        _, nu = sample_spiked_pair(spiked_gaussian_spec(3, u, 1.0), 100_000, seed=4)
        cov = np.cov(nu.points.T)
        assert np.linalg.norm(cov - (np.eye(3) + np.outer(u, u)), ord=2) < 0.1

    def test_relaxed_model_uses_second_law(self):
        spec = SpikedPairSpec(
            2, [[0.0, 1.0]], Atomic([[0.0]], [1.0]), Atomic([[0.0]], [1.0]), Atomic([[0.0]], [1.0]), Atomic([[2.0]], [1.0])
        )
        mu, nu = sample_spiked_pair(spec, 3, seed=0)
        assert np.allclose(np.abs(mu.points), 0) and np.allclose(np.abs(nu.points[:, 0]), 2)

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatchError):
            SpikedPairSpec(3, [[1.0, 0.0, 0.0]], Gaussian.standard(2), Gaussian.standard(1), Gaussian.standard(2))
        with pytest.raises(DimensionMismatchError):
            SpikedPairSpec(3, [[1.0, 0.0, 0.0]], Gaussian.standard(1), Gaussian.standard(1), Gaussian.standard(1))
        with pytest.raises(ConfigurationError):
            SpikedPairSpec(2, [[1.0, 0.1]], Gaussian.standard(1), Gaussian.standard(1), Gaussian.standard(1))

    def test_beta_and_direction_validated(self):
        with pytest.raises(ConfigurationError):
            spiked_gaussian_spec(2, [1.0, 0.0], -0.1)
        with pytest.raises(ConfigurationError):
            spiked_gaussian_spec(2, [1.0, 1.0], 1.0)

    def test_spec_from_config(self):
        spec = spec_from_config({"kind": "spiked_gaussian", "d": 3, "beta": 2.0})
        np.testing.assert_array_equal(spec.spike_frame, [[1.0, 0.0, 0.0]])
        custom = spec_from_config(spec.to_config())
        assert custom.d == 3 and custom.law_x2.covariance[0, 0] == 3.0


class TestGaussianDistances:
    def test_w2_closed_form(self):
        assert spiked_gaussian_distance(1.0, 2) == pytest.approx(math.sqrt(2) - 1, abs=1e-14)

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
    def test_scale_family_matches_quadrature(self, p):
        expected = (math.sqrt(2) - 1) * gaussian_abs_moment(p) ** (1 / p)
        assert gaussian_scale_wasserstein(1.0, math.sqrt(2), p) == pytest.approx(expected, rel=1e-9)

    def test_beta_zero(self):
        assert spiked_gaussian_distance(0.0, 1) == 0.0

    def test_high_dimensional_w1_lower_bound(self):
        """W1 of the d=10, beta=1 pair equals its 1-D value, at least 0.33 * beta."""
        c = 0.33
        assert spiked_gaussian_distance(1.0, 1) >= c * 1.0
        u = np.eye(10)[3]
        mu, nu = sample_spiked_pair(spiked_gaussian_spec(10, u, 1.0), 20_000, seed=2)
        proj = wasserstein_1d(DiscreteMeasure.uniform(mu.points @ u), DiscreteMeasure.uniform(nu.points @ u), 1).cost
        assert proj >= 0.3


class TestHardInstance:
    def test_one_dimensional_collapse(self):
        spec = hard_instance_spec(1, [1.0], 3)
        assert spec.law_z is None
        assert isinstance(spec.law_x1, GaussHermiteConvolved) and spec.law_x2.dim == 1

    def test_projection_onto_v_gives_law_a(self):
        """Projected samples of P_v along v follow A; the orthogonal part is N(0, I)."""
        v = np.array([0.0, 0.6, 0.8])
        spec = hard_instance_spec(3, v, 2, 0.1)
        mu, _ = sample_spiked_pair(spec, 20_000, seed=3)
        on = mu.points @ v
        law = spec.law_x1.law
        assert stats.kstest(on, law.cdf).pvalue > 1e-3
        off = mu.points @ spec.complement_basis.T
        assert stats.kstest(off[:, 0], "norm").pvalue > 1e-3

    @pytest.mark.parametrize("kwargs", [dict(m=0), dict(m=2, delta=1.0), dict(m=2, delta=0.0)])
    def test_parameter_ranges(self, kwargs):
        with pytest.raises(ConfigurationError):
            hard_instance_spec(2, [1.0, 0.0], **kwargs)
