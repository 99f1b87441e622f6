import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiked_transport.concentration import (
    ReplicateSample,
    estimate_subgaussian_constant,
    lambda_grid,
    lipschitz_witness_check,
    rate_fit,
    reference_measure,
    replicate_distances,
    subgaussian_scaling_check,
)
from spiked_transport.errors import ConfigurationError
from spiked_transport.measures import Atomic, Gaussian, TwoPoint, UniformCube, empirical, make_rng
from spiked_transport.ot_solver import wasserstein_1d


def brute_constant(values):
    """Direct loop over the grid, without logsumexp."""
    c = np.asarray(values, dtype=float)
    c = c - c.mean()
    sd = c.std()
    best = 0.0
    for j in range(-2, 5):
        for sign in (-1, 1):
            lam = sign * 2.0**j / sd
            best = max(best, 2 * math.log(np.mean(np.exp(lam * c))) / lam**2)
    return best


class TestEstimator:
    def test_constant_values(self):
        assert estimate_subgaussian_constant(np.full(200, 3.7)) == 0.0

    def test_gaussian_variance(self):
        values = make_rng(3).normal(0.0, 2.0, 100_000)
        assert 3.2 <= estimate_subgaussian_constant(values) <= 5.0

    def test_matches_direct_loop(self, rng):
        values = rng.exponential(size=500)
        assert estimate_subgaussian_constant(values) == pytest.approx(brute_constant(values), rel=1e-10)

    @settings(max_examples=40)
    @given(st.lists(st.floats(-3, 3), min_size=100, max_size=300), st.floats(0.01, 100))
    def test_exact_square_scaling(self, values, t):
        base = estimate_subgaussian_constant(values)
        assert estimate_subgaussian_constant(np.asarray(values) * t) == pytest.approx(t * t * base, rel=1e-9, abs=1e-300)

    @settings(max_examples=40)
    @given(st.lists(st.floats(0, 1), min_size=100, max_size=300))
    def test_bounded_range_ceiling(self, values):
        # Hoeffding's lemma applied to the empirical law
        arr = np.asarray(values)
        span = arr.max() - arr.min()
        assert estimate_subgaussian_constant(arr) <= span**2 / 4 + 1e-12

    def test_lambda_grid(self):
        grid = lambda_grid(2.0)
        assert grid.size == 14 and grid.max() == 8.0 and grid[grid > 0].min() == 0.125

    def test_too_few(self):
        with pytest.raises(ConfigurationError):
            estimate_subgaussian_constant(np.arange(99.0))

    def test_accepts_replicate_sample(self, rng):
        values = rng.normal(size=150)
        sample = ReplicateSample(values, 10, {})
        assert estimate_subgaussian_constant(sample) == estimate_subgaussian_constant(values)
        assert sample.rows()[0] == (10, 0, values[0])


class TestReplicates:
    def test_exact_reference_for_finite_law(self):
        law = TwoPoint.on_line(0.0, 1.0, 0.3)
        ref = reference_measure(law, 50, 0, 0)
        assert ref.n == 2

    def test_proxy_reference_size(self):
        assert reference_measure(Gaussian.standard(1), 40, 0, 3).n == 800

    def test_values_match_direct_solve(self):
        law = TwoPoint.on_line(0.0, 1.0)
        sample = replicate_distances(law, 1, 30, 5, seed=4)
        for r, v in enumerate(sample.values):
            direct = wasserstein_1d(empirical(law, 30, 4, 0, 30, r, 0), law.as_measure(), 1).cost
            assert v == direct

    def test_two_point_w1_closed_form(self):
        # W1 between an empirical two-point law and the truth is |hat p - p| times the gap
        law = TwoPoint.on_line(0.0, 2.0, 0.5)
        sample = replicate_distances(law, 1, 40, 10, seed=1)
        for r, v in enumerate(sample.values):
            pts = empirical(law, 40, 1, 0, 40, r, 0).points[:, 0]
            assert v == pytest.approx(2.0 * abs(np.mean(pts == 0.0) - 0.5), abs=1e-12)


class TestScalingCheck:
    def test_point_mass(self):
        out = subgaussian_scaling_check(Atomic([[0.0]], [1.0]), 1, [10, 20], 200, seed=0)
        assert out == [(10, 0.0), (20, 0.0)]

    def test_deterministic(self):
        law = TwoPoint.on_line(0.0, 1.0)
        a = subgaussian_scaling_check(law, 2, [50, 100], 200, seed=9)
        b = subgaussian_scaling_check(law, 2, [50, 100], 200, seed=9)
        assert a == b

    def test_two_point_scaling(self):
        law = TwoPoint.on_line(0.0, 1.0)
        out = subgaussian_scaling_check(law, 1, [250, 500, 1000], 300, seed=2)
        scaled = [n * s for n, s in out]
        for a, b in zip(scaled, scaled[1:]):
            assert 1 / 3 <= b / a <= 3

    def test_doubling_replicates_is_stable(self):
        law = TwoPoint.on_line(0.0, 1.0)
        small = subgaussian_scaling_check(law, 1, [400], 400, seed=5)[0][1]
        large = subgaussian_scaling_check(law, 1, [400], 800, seed=5)[0][1]
        assert abs(large - small) <= 0.3 * small

    @pytest.mark.parametrize("n_list,replicates", [([10, 10], 200), ([20, 10], 200), ([10], 199)])
    def test_preconditions(self, n_list, replicates):
        with pytest.raises(ConfigurationError):
            subgaussian_scaling_check(TwoPoint.on_line(0, 1), 1, n_list, replicates, 0)


class TestRateFit:
    @pytest.mark.parametrize("slope", [-0.5, -0.2, -1.0])
    def test_exact_power_law(self, slope):
        ns = [100, 200, 400, 800]
        fit = rate_fit([(n, 3.0 * n**slope) for n in ns])
        assert fit.slope == pytest.approx(slope, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert np.max(np.abs(fit.residuals)) < 1e-10

    def test_noisy_power_law(self):
        rng = make_rng(0)
        ns = np.geomspace(100, 10_000, 8)
        noise = rng.uniform(-0.05, 0.05, ns.size)
        fit = rate_fit([(n, n**-0.5 * math.exp(e)) for n, e in zip(ns, noise)])
        assert abs(fit.slope + 0.5) <= 0.05 and fit.slope_stderr < 0.05

    def test_rows_and_dict(self):
        fit = rate_fit([(10, 1.0), (20, 0.5), (40, 0.25)])
        assert fit.rows()[1][:2] == pytest.approx((20, 0.5))
        assert set(fit.to_dict()) == {"slope", "intercept", "slope_stderr"}

    @pytest.mark.parametrize(
        "pairs", [[(10, 1.0), (20, 0.5)], [(10, 1.0), (10, 0.5), (20, 0.2)], [(10, 1.0), (20, 0.0), (40, 0.1)]]
    )
    def test_rejects(self, pairs):
        with pytest.raises(ConfigurationError):
            rate_fit(pairs)


class TestWitnesses:
    def test_bounded_cube(self):
        d = 3
        report = lipschitz_witness_check(UniformCube(d, side=1.0), 0.25 * d, 10, seed=1)
        assert all(c <= d * 3.0 for c in report.constants)
        assert report.passed
        assert set(report.kinds) == {"distance", "linear"}

    def test_gaussian_linear_witnesses_near_one(self):
        report = lipschitz_witness_check(Gaussian.standard(4), 1.0, 8, seed=2, n_samples=20_000)
        linear = [c for c, k in zip(report.constants, report.kinds) if k == "linear"]
        assert all(0.8 <= c <= 1.3 for c in linear)

    def test_constant_witness(self):
        report = lipschitz_witness_check(Gaussian.standard(2), 1.0, 0, seed=0,
                                         witnesses=[("constant", lambda x: np.full(x.shape[0], 2.0))])
        assert report.constants == [0.0]

    def test_fail_reported(self):
        wide = Gaussian(np.zeros(1), np.array([[25.0]]))
        assert not lipschitz_witness_check(wide, 1.0, 4, seed=0).passed
