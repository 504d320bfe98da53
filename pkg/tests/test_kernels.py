"""Unit tests for the analytic kernels"""
import numpy as np
import pytest

from src import kernels
from src.exceptions import ConfigError
from src.kernels import (H, KernelConfig, L_func, TheoremInputs, bound_shape, caravenna_term, cclt_rhs,
                         conv_identity_check, ell, large_y_term, main_term_thm1, psi, psi_scaled, rayleigh_cdf,
                         rayleigh_pdf, smooth_indicator, tabulate, upper_bound_thm3)

SQRT_2PI = np.sqrt(2 * np.pi)


def cell(y=2.0, z=3.0, delta=1.0, n=1024, sigma=0.2, v=1.5, v_star=None):
    return TheoremInputs(y=y, z=z, delta_window=delta, n=n, sigma_hat=sigma, V_hat=v, V_star_hat=v_star)


class TestHeatKernel:
    """psi, H, ell and L"""

    @pytest.mark.parametrize("y", [-3.0, 0.0, 1.7])
    def test_psi_vanishes_on_boundary(self, y):
        assert psi(y, 0.0) == 0.0

    def test_psi_worked_value(self):
        assert psi(1.0, 1.0) == pytest.approx((1 - np.exp(-2.0)) / SQRT_2PI, rel=1e-12)
        assert psi(1.0, 1.0) == pytest.approx(0.34495, abs=1e-5)

    def test_psi_symmetry(self):
        assert psi(2.0, 3.0) == psi(3.0, 2.0)

    def test_psi_stable_far_out(self):
        assert np.isfinite(psi(40.0, 40.0))
        assert psi(40.0, 40.0) == pytest.approx(1 / SQRT_2PI)

    def test_H_values(self):
        assert H(0.0) == 0.0
        assert H(1.0) == pytest.approx(0.6826895, abs=1e-7)

    def test_H_is_mass_of_psi(self):
        mass = kernels.quad(lambda z: psi(0.7, z), 0.0, np.inf)
        assert mass == pytest.approx(H(0.7), abs=1e-9)

    @pytest.mark.parametrize("y", [0.1, 1.0, 5.0])
    def test_ell_is_a_density(self, y):
        mass = kernels.quad(lambda z: ell(y, z), 0.0, y + 24.0, points=(y,))
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_ell_worked_values(self):
        assert ell(1.0, 1.0) == pytest.approx(psi(1.0, 1.0) / H(1.0), rel=1e-12)
        assert ell(0.0, 1.0) == pytest.approx(np.exp(-0.5), abs=1e-7)

    @pytest.mark.parametrize("z", [-2.0, -0.5, 0.5, 2.0])
    def test_ell_at_zero_is_odd_and_continuous(self, z):
        assert ell(0.0, -z) == pytest.approx(-ell(0.0, z), rel=1e-12)
        assert ell(1e-4, z) == pytest.approx(ell(0.0, z), rel=1e-6)

    def test_L_values(self):
        assert L_func(0.0) == pytest.approx(2 / SQRT_2PI, abs=1e-12)
        assert L_func(1.0) == pytest.approx(0.6826895, abs=1e-7)
        for y in (0.3, 2.0):
            assert L_func(-y) == pytest.approx(L_func(y))

    def test_vectorised(self):
        values = ell(1.0, np.linspace(0, 3, 7))
        assert values.shape == (7,)


class TestRayleigh:
    def test_cdf_limits(self):
        assert rayleigh_cdf(0.0) == 0.0
        assert rayleigh_cdf(np.inf) == 1.0

    def test_pdf_value(self):
        assert rayleigh_pdf(1.0) == pytest.approx(0.6065307, abs=1e-7)

    def test_cdf_integrates_pdf(self):
        assert kernels.quad(rayleigh_pdf, 0.0, 1.3) == pytest.approx(rayleigh_cdf(1.3), abs=1e-10)


class TestScaledKernels:
    """psi_v, ell_v and the convolution identity"""

    def test_unit_scale_reduces(self):
        assert psi_scaled(1.0, 0.8, 1.3) == pytest.approx(psi(0.8, 1.3))

    def test_scaling_identity(self):
        assert psi_scaled(0.25, 1.0, 1.0) == pytest.approx(2 * psi(2.0, 2.0))

    def test_zero_second_argument(self):
        assert psi_scaled(0.3, 1.0, 0.0) == 0.0

    def test_convolution_identity(self):
        lhs, rhs = conv_identity_check(0.5, 0.7, 1.3)
        assert lhs == pytest.approx(rhs, abs=1e-8)

    def test_convolution_at_zero(self):
        lhs, rhs = conv_identity_check(0.5, 0.7, 0.0)
        assert rhs == 0.0
        assert abs(lhs) <= 1e-8

    def test_convolution_small_v(self):
        lhs, rhs = conv_identity_check(0.01, 0.7, 1.3)
        assert lhs == pytest.approx(rhs, abs=1e-7)

    def test_v_outside_unit_interval(self):
        with pytest.raises(ValueError):
            conv_identity_check(1.0, 0.7, 1.3)


class TestSmoothIndicator:
    def test_ramp(self):
        eps = 0.4
        assert smooth_indicator(eps, -eps) == 0.0
        assert smooth_indicator(eps, 0.0) == 1.0
        assert smooth_indicator(eps, -eps / 2) == pytest.approx(0.5)

    @pytest.mark.parametrize("factor", [-2.0, -1 / 3, 1.0])
    def test_sandwich(self, factor):
        eps = 0.4
        t = factor * eps
        indicator = 1.0 if t > 0 else 0.0
        assert smooth_indicator(eps, t - eps) <= indicator <= smooth_indicator(eps, t)


class TestTheoremTerms:
    """Main terms and bounds"""

    def test_inputs_validated(self):
        with pytest.raises(ValueError):
            cell(sigma=0.0)
        with pytest.raises(ValueError):
            cell(z=-1.0)

    def test_empty_window(self):
        assert main_term_thm1(cell(delta=0.0)) == 0.0

    def test_caravenna_limit(self):
        inp = cell(y=0.0, z=2.0, delta=1.5)
        assert main_term_thm1(inp) == pytest.approx(caravenna_term(inp), rel=1e-8)

    def test_gaussian_tail(self):
        inp = cell(z=10 * 0.2 * 32)
        assert main_term_thm1(inp) < 1e-12
        assert large_y_term(inp) < 1e-12

    def test_large_y_ratio(self):
        inp = cell(y=5.0, z=4.0)
        assert main_term_thm1(inp) / large_y_term(inp) == pytest.approx(inp.V_hat / inp.y, rel=1e-7)

    def test_closed_form_matches_quadrature(self):
        inp = cell()
        closed = KernelConfig(quadrature='closed_form')
        assert main_term_thm1(inp, closed) == pytest.approx(main_term_thm1(inp), rel=1e-8)
        assert large_y_term(inp, closed) == pytest.approx(large_y_term(inp), rel=1e-8)

    def test_cclt_at_infinity(self):
        inp = cell()
        expected = inp.V_hat * L_func(inp.u) / inp.scale
        assert cclt_rhs(inp, np.inf, 'unified') == pytest.approx(expected, rel=1e-8)
        small = 2 * inp.V_hat / (inp.sigma_hat * np.sqrt(2 * np.pi * inp.n))
        assert cclt_rhs(inp, np.inf, 'small_y') == pytest.approx(small, rel=1e-12)

    @pytest.mark.parametrize("regime", ['small_y', 'large_y', 'unified'])
    def test_cclt_at_zero(self, regime):
        assert cclt_rhs(cell(), 0.0, regime) == 0.0

    def test_unknown_regime(self):
        with pytest.raises(ValueError):
            cclt_rhs(cell(), 1.0, 'medium_y')

    def test_bound_is_linear_in_delta(self):
        assert bound_shape(2.0, 100, 1.2, 0.8) == pytest.approx(2 * bound_shape(1.0, 100, 1.2, 0.8))

    def test_bound_without_harmonic_factors(self):
        inp = cell(v=0.0, v_star=0.0)
        assert upper_bound_thm3(inp) == pytest.approx(inp.delta_window * inp.n ** -1.5)

    def test_bound_exponent(self):
        assert bound_shape(1.0, 400, 1.0, 1.0) / bound_shape(1.0, 1600, 1.0, 1.0) == pytest.approx(8.0)

    def test_bound_needs_dual(self):
        with pytest.raises(ValueError):
            upper_bound_thm3(cell())


class TestTabulate:
    def test_grid_shape(self):
        frame = tabulate('psi', {'y': np.linspace(0, 1, 3), 'z': np.linspace(0, 2, 5)})
        assert list(frame.columns) == ['y', 'z', 'value']
        assert len(frame) == 15

    def test_unknown_kernel(self):
        with pytest.raises(ConfigError):
            tabulate('phi', {})

    def test_missing_axis(self):
        with pytest.raises(ConfigError):
            tabulate('ell', {'y': [1.0]})
