"""Unit tests for the estimators"""
import numpy as np
import pytest

from src.cone_geometry import Direction, act_batch, normalize
from src.ensembles import ab_ensemble, center, exp_uniform_ensemble, point_mass
from src.estimators import (ConfidenceEstimate, EmpiricalMeasure, contraction_profile, diagnose_ensemble,
                            harmonic_V, harmonic_V_star, harmonic_V_table, invariant_measure, lyapunov,
                            lyapunov_transfer, martingale_gap, martingale_increment_check, poisson_solve,
                            residual_drift, sigma2, survival_probability, transfer_apply, transfer_matrix)
from src.exceptions import NotCentered, UnsupportedDim
from src.walk_engine import SimulationPlan, WindowCollector, batch, enumerate_words

A = np.array([[2.0, 1.0], [1.0, 1.0]])
PERRON = np.log((3.0 + np.sqrt(5.0)) / 2.0)
BARY = Direction.barycenter(2)


class TestConfidenceEstimate:
    def test_negative_stderr_rejected(self):
        with pytest.raises(ValueError):
            ConfidenceEstimate(value=1.0, stderr=-0.1, n_samples=10, method='monte_carlo')

    def test_json_includes_companion(self):
        inner = ConfidenceEstimate(value=1.0, stderr=0.1, n_samples=10, method='monte_carlo')
        outer = ConfidenceEstimate(value=1.1, stderr=0.1, n_samples=10, method='monte_carlo', companion=inner)
        assert outer.to_json()['companion']['value'] == 1.0


class TestLyapunov:
    """Monte Carlo and transfer-operator estimates of lambda"""

    def test_identity_is_zero(self):
        assert lyapunov(point_mass(np.eye(2)), 50, 100).value == 0.0

    def test_point_mass_perron_root(self):
        estimate = lyapunov(point_mass(A), 2000, 20)
        assert estimate.value == pytest.approx(PERRON, abs=1e-3)

    def test_transfer_perron_root(self):
        estimate = lyapunov_transfer(point_mass(A))
        assert estimate.method == 'transfer_stationary'
        assert estimate.value == pytest.approx(PERRON, abs=1e-3)

    def test_centered_law_has_zero_drift(self, centered_ab_law):
        estimate = lyapunov(centered_ab_law, 500, 4000, seed=3)
        assert abs(estimate.value) <= 3 * estimate.stderr + 4.0 / 500

    def test_target_stderr_grows_the_sample(self, centered_ab_law):
        estimate = lyapunov(centered_ab_law, 100, 200, seed=1, target_stderr=1e-4)
        assert estimate.n_samples > 200
        assert estimate.stderr <= 1.2e-4

    def test_target_already_met(self, centered_ab_law):
        pilot = lyapunov(centered_ab_law, 100, 200, seed=1)
        assert lyapunov(centered_ab_law, 100, 200, seed=1, target_stderr=1.0) == pilot

    def test_residual_drift_on_grid_law(self):
        assert abs(residual_drift(point_mass(A), PERRON, 100, 10)) < 1e-3

    def test_residual_drift_by_monte_carlo(self):
        law = exp_uniform_ensemble(3)
        lam = lyapunov(law, 100, 2000, seed=1)
        drift = residual_drift(law, lam.value, 100, 2000, seed=2)
        assert abs(drift) <= 5 * np.sqrt(2.0) * lam.stderr + 1e-3

    def test_rejects_empty_sample(self):
        with pytest.raises(ValueError):
            lyapunov(ab_ensemble(), 0, 10)


class TestSigma2:
    """Asymptotic variance"""

    def test_point_mass_has_no_variance(self):
        lam = lyapunov(point_mass(A), 200, 10)
        estimate = sigma2(point_mass(A), lam.value, 200, 10, companion=False)
        assert estimate.value < 1e-12

    def test_companion_uses_double_length(self, centered_ab_law):
        estimate = sigma2(centered_ab_law, 0.0, 50, 500, seed=1)
        assert estimate.companion is not None
        assert estimate.value > 0 and estimate.companion.value > 0

    def test_start_independence(self, centered_ab_law):
        # shared draws, so only the start differs between the two estimates
        first = sigma2(centered_ab_law, 0.0, 1000, 2000, seed=5, x=Direction(np.array([1.0, 0.0])),
                       companion=False)
        second = sigma2(centered_ab_law, 0.0, 1000, 2000, seed=5, x=BARY, companion=False)
        assert abs(first.value - second.value) <= 0.05 * second.value


class TestInvariantMeasure:
    """Occupation measure of the direction chain"""

    def test_perron_direction(self):
        measure = invariant_measure(point_mass(A), burn_in=50, samples=1000, seed=0)
        assert abs(measure.mode() - 0.618034) <= 1.0 / measure.bins

    def test_identity_stays_and_is_flagged(self):
        x = Direction(np.array([0.3, 0.7]))
        measure = invariant_measure(point_mass(np.eye(2)), burn_in=10, samples=100, x=x)
        assert measure.a1_failed
        assert np.allclose(measure.samples, x.coords)

    def test_weights_sum_to_one(self, ab_law):
        measure = invariant_measure(ab_law, burn_in=20, samples=500, seed=2)
        assert measure.weights.sum() == pytest.approx(1.0)
        assert list(measure.to_frame().columns) == ['bin_center', 'mass']

    def test_one_step_stationarity(self, ab_law):
        measure = invariant_measure(ab_law, burn_in=200, samples=20_000, seed=3)
        points = measure.samples
        before = measure.mean(lambda s: s[:, 0] ** 2)
        after = 0.0
        for g, p in zip(ab_law.support_array(), ab_law.prob_array()):
            images, _ = act_batch(np.broadcast_to(g, (len(points), 2, 2)), points)
            after += p * float(measure.weights @ images[:, 0] ** 2)
        assert abs(before - after) <= 5e-3

    def test_agrees_with_transfer_stationary_vector(self, centered_ab_law):
        measure = invariant_measure(centered_ab_law, burn_in=200, samples=20_000, seed=4)
        solution = poisson_solve(centered_ab_law, 1)
        grid_mean = float(solution.stationary @ solution.grid ** 2)
        assert measure.mean(lambda s: s[:, 0] ** 2) == pytest.approx(grid_mean, abs=5e-3)

    def test_histogram_needs_d2(self):
        measure = EmpiricalMeasure(dim=3, samples=np.full((2, 3), 1 / 3), weights=np.array([0.5, 0.5]))
        with pytest.raises(UnsupportedDim):
            measure.histogram()


class TestHarmonic:
    """V and V* by Monte Carlo"""

    def test_large_level_ratio(self, centered_ab_law):
        estimate = harmonic_V(centered_ab_law, BARY, 50.0, 400, 4000, seed=1)
        assert 0.98 <= estimate.value / 50.0 <= 1.02

    def test_monotone_in_level(self, centered_ab_law):
        table = harmonic_V_table(centered_ab_law, BARY, [0.5, 1.0, 2.0, 4.0], 100, 2000, seed=2)
        values = [e.value for e in table]
        assert values == sorted(values)
        assert all(not e.dual for e in table)

    def test_dual_is_nonnegative(self, centered_ab_law):
        estimate = harmonic_V_star(centered_ab_law, BARY, 1.0, 100, 2000, seed=3)
        assert estimate.dual
        assert estimate.value >= -3 * estimate.stderr

    def test_one_step_harmonicity(self, centered_ab_law):
        # E[(y + S_n); tau > n] splits exactly over the first draw into (n - 1)-step terms
        y, n_V, m = 1.0, 200, 20_000
        parent = harmonic_V(centered_ab_law, BARY, y, n_V, m, seed=11)
        value, variance = 0.0, parent.stderr ** 2
        for i, (g, p) in enumerate(zip(centered_ab_law.support_array(), centered_ab_law.prob_array())):
            level = y + np.log(g.sum(axis=0) @ BARY.coords)
            assert level >= 0
            child = harmonic_V(centered_ab_law, normalize(g @ BARY.coords), level, n_V - 1, m, seed=12 + i)
            value += p * child.value
            variance += (p * child.stderr) ** 2
        assert abs(parent.value - value) <= 4 * np.sqrt(variance)

    def test_settles_along_n(self, centered_ab_law):
        ns = (50, 100, 200)
        values = [harmonic_V(centered_ab_law, BARY, 1.0, n, 10_000, seed=7).value for n in ns]
        assert max(values) <= 1.15 * min(values)
        scaled = [v / np.sqrt(n) for v, n in zip(values, ns)]
        assert scaled == sorted(scaled, reverse=True)

    def test_json_form(self, centered_ab_law):
        data = harmonic_V(centered_ab_law, BARY, 1.0, 20, 200).to_json()
        assert set(data) == {'x', 'y', 'n_V', 'value', 'stderr', 'plateau_flag', 'half_value', 'dual'}


class TestTransferOperator:
    """Grid transfer operator and the Poisson equation"""

    def test_rows_are_stochastic(self, ab_law):
        _, Q = transfer_matrix(ab_law, 65)
        assert np.allclose(Q.sum(axis=1), 1.0)

    def test_constants_are_preserved(self, ab_law):
        assert np.allclose(transfer_apply(ab_law, np.full(129, 2.5)), 2.5)

    def test_unsupported_dimension(self):
        with pytest.raises(UnsupportedDim):
            transfer_matrix(point_mass(np.ones((3, 3))))

    def test_parametric_law_rejected(self):
        with pytest.raises(ValueError):
            transfer_matrix(exp_uniform_ensemble())

    def test_requires_centering(self, ab_law):
        with pytest.raises(NotCentered):
            poisson_solve(ab_law, 10)

    def test_identity_solution_is_zero(self):
        solution = poisson_solve(point_mass(np.eye(2)), 5, points=33)
        assert solution.sup_norm == 0.0

    def test_residual_decreases(self, centered_ab_law):
        residuals = [poisson_solve(centered_ab_law, K).residual for K in (5, 10, 20, 40)]
        assert all(b <= a + 1e-15 for a, b in zip(residuals, residuals[1:]))

    def test_residual_is_the_poisson_defect(self, centered_ab_law):
        solution = poisson_solve(centered_ab_law, 10, points=129)
        grid, Q = transfer_matrix(centered_ab_law, 129)
        support, probs = centered_ab_law.support_array(), centered_ab_law.prob_array()
        theta = np.array([sum(p * np.log(g.sum(axis=0) @ [t, 1.0 - t]) for g, p in zip(support, probs)) for t in grid])
        defect = theta - (solution.values - Q @ solution.values)
        assert solution.residual == pytest.approx(np.abs(defect).max(), rel=1e-9, abs=1e-15)
        assert solution.residual >= abs(solution.theta_mean) - 1e-15

    def test_martingale_gap_bound(self, centered_ab_law):
        solution = poisson_solve(centered_ab_law, 40)
        gap = martingale_gap(centered_ab_law, solution, BARY, 200, 2000, seed=4)
        assert gap.sup_gap <= gap.bound + 1e-12

    def test_martingale_increments_are_centered(self, centered_ab_law):
        solution = poisson_solve(centered_ab_law, 40)
        frame = martingale_increment_check(centered_ab_law, solution, 20, 2000, seed=5)
        frame = frame[frame['count'] >= 100]
        assert len(frame) > 0
        assert np.all(np.abs(frame['mean']) <= 4 * frame['stderr'] + 1e-3)


class TestContraction:
    def test_ab_contracts(self, ab_law):
        profile = contraction_profile(ab_law, Direction(np.array([1.0, 0.0])), Direction(np.array([0.0, 1.0])),
                                      10, 200)
        assert 0.0 < profile.rate < 1.0
        assert profile.distances[0] == 1.0


class TestSurvivalAndDiagnostics:
    def test_survival_decreases_with_n(self, centered_ab_law):
        short = survival_probability(centered_ab_law, BARY, [1.0], 16, 20_000, seed=1)[0]
        long = survival_probability(centered_ab_law, BARY, [1.0], 64, 20_000, seed=1)[0]
        assert long.value < short.value

    def test_diagnose_ab(self, ab_law):
        diagnostics = diagnose_ensemble(ab_law, delta=1.0, n=50, m=500, seed=1)
        assert diagnostics.theorem_variant == 'A1'
        assert diagnostics.kappa_sup == 2.0
        assert diagnostics.a1_horizon == 1
        assert diagnostics.moment_2_delta == pytest.approx(np.log(3.0) ** 3)
        expected = lyapunov_transfer(ab_law).value - diagnostics.lyapunov_hat
        assert diagnostics.residual_drift == pytest.approx(expected, abs=1e-9)
        assert abs(diagnostics.residual_drift) < 0.05
        assert diagnostics.to_json()['non_arithmetic_asserted'] is True


def _centered_ab():
    law = ab_ensemble()
    return center(law, lyapunov_transfer(law).value)


def _binomial_stderr(q: float, m: int) -> float:
    return float(np.sqrt(q * (1.0 - q) / m))


class TestEnumerationOracle:
    """Monte Carlo estimators against the exact law of all 2^16 words"""

    N = 16
    M = 40_000

    @pytest.fixture(scope='class')
    def exact(self):
        return enumerate_words(_centered_ab(), BARY, self.N)

    def test_mean(self, exact):
        estimate = lyapunov(_centered_ab(), self.N, self.M, seed=1)
        mean = exact.expectation(exact.final_log_norm)
        assert abs(estimate.value * self.N - mean) <= 4 * estimate.stderr * self.N + 1e-12

    def test_sigma2(self, exact):
        estimate = sigma2(_centered_ab(), 0.0, self.N, self.M, seed=2, companion=False)
        second_moment = exact.expectation(exact.final_log_norm ** 2) / self.N
        assert abs(estimate.value - second_moment) <= 4 * estimate.stderr + 1e-12

    @pytest.mark.parametrize('y', [0.1, 0.25, 0.5])
    def test_survival(self, exact, y):
        estimate = survival_probability(_centered_ab(), BARY, [y], self.N, self.M, seed=3)[0]
        q = exact.survival(y)
        assert abs(estimate.value - q) <= 4 * _binomial_stderr(q, self.M) + 1e-12

    def test_windows(self, exact):
        cells = [(0.1, 0.0, 0.2), (0.25, 0.2, 0.2), (0.5, 0.4, 0.3)]
        plan = SimulationPlan(law=_centered_ab(), start=BARY, n=self.N, num_traj=self.M, seed=4)
        result = batch(plan, WindowCollector(cells))
        for (y, z, delta), p in zip(cells, result['prob']):
            q = exact.window(y, z, delta)
            assert abs(p - q) <= 4 * _binomial_stderr(q, self.M) + 1e-12
