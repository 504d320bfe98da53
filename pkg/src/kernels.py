"""
Analytic kernels of the conditioned limit theorems

Gaussian and Rayleigh functions, the heat kernel psi of Brownian motion killed at 0,
the density ell = psi / H, the normalisation L = H / y, their scaled versions,
the chi_eps ramp, and the main-term evaluators that turn (sigma_hat, V_hat)
into theoretical probabilities. Every function here is pure.

At |y| below y_zero_threshold, ell switches to its y -> 0 limit z exp(-z^2 / 2),
taken for every real z. This is the odd extension: psi(y, .) is odd in z, and
ell(0, z) < 0 for z < 0 agrees with the limit of ell(y, z) from y > 0.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

from config import KERNEL_CONFIG
from src.exceptions import ConfigError, QuadratureFailure

logger = logging.getLogger(__name__)

SQRT_2PI = float(np.sqrt(2.0 * np.pi))
REGIMES = ('small_y', 'large_y', 'unified')


@dataclass(frozen=True)
class KernelConfig:
    """Branch threshold for ell at y = 0 and the adaptive quadrature settings"""

    y_zero_threshold: float = KERNEL_CONFIG['y_zero_threshold']
    quadrature: str = KERNEL_CONFIG['quadrature']
    abs_tol: float = KERNEL_CONFIG['quad_abs_tol']
    rel_tol: float = KERNEL_CONFIG['quad_rel_tol']
    limit: int = KERNEL_CONFIG['quad_limit']
    tail_sd: float = KERNEL_CONFIG['tail_sd']

    def __post_init__(self):
        if not self.y_zero_threshold > 0:
            raise ValueError(f"y_zero_threshold must be > 0, got {self.y_zero_threshold}")
        if self.quadrature not in ('gauss_kronrod', 'closed_form'):
            raise ValueError(f"Unknown quadrature rule '{self.quadrature}'")
        if self.limit < 1:
            raise ValueError(f"Node cap must be >= 1, got {self.limit}")


DEFAULT_CONFIG = KernelConfig()


@dataclass(frozen=True)
class TheoremInputs:
    """A window cell (y, z, delta, n) together with the estimated sigma and V values"""

    y: float
    z: float
    delta_window: float
    n: int
    sigma_hat: float
    V_hat: float
    V_star_hat: Optional[float] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.sigma_hat > 0:
            raise ValueError(f"sigma_hat must be > 0, got {self.sigma_hat}")
        if self.delta_window < 0:
            raise ValueError(f"Window width must be >= 0, got {self.delta_window}")
        if self.z < 0:
            raise ValueError(f"z must be >= 0, got {self.z}")

    @property
    def scale(self) -> float:
        """sigma_hat * sqrt(n)"""
        return self.sigma_hat * float(np.sqrt(self.n))

    @property
    def u(self) -> float:
        return self.y / self.scale


def _out(values):
    values = np.asarray(values, dtype=float)
    return float(values) if values.ndim == 0 else values


def quad(f: Callable[[float], float], a: float, b: float, config: KernelConfig = DEFAULT_CONFIG,
         points: Optional[Sequence[float]] = None) -> float:
    """
    Adaptive Gauss-Kronrod integral of f over [a, b]

    Breakpoints strictly inside a finite [a, b] are passed on to QUADPACK.
    Raises QuadratureFailure when the rule reports non-convergence.
    """
    if a == b:
        return 0.0
    inside = None
    if points is not None and np.isfinite(a) and np.isfinite(b):
        inside = sorted({float(p) for p in points if a < p < b}) or None
    value, abserr, info, *message = integrate.quad(f, a, b, epsabs=config.abs_tol, epsrel=config.rel_tol,
                                                   limit=config.limit, points=inside, full_output=1)
    if message and abserr > 1e3 * max(config.abs_tol, config.rel_tol * abs(value)):
        raise QuadratureFailure(f"Quadrature over [{a}, {b}] stopped at error {abserr:.2e}: {message[0]}")
    return float(value)


def std_normal_cdf(t):
    return _out(special.ndtr(t))


def normal_density(v: float, t):
    """phi_v(t), the centered normal density of variance v"""
    if not v > 0:
        raise ValueError(f"Variance must be > 0, got {v}")
    return _out(stats.norm.pdf(t, scale=np.sqrt(v)))


def psi(y, z):
    """
    Heat kernel of Brownian motion killed at 0

    psi(y, z) = (exp(-(y - z)^2 / 2) - exp(-(y + z)^2 / 2)) / sqrt(2 pi),
    computed from |y|, |z| and the sign of yz to avoid cancellation and overflow.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    a, b = np.abs(y), np.abs(z)
    values = np.exp(-0.5 * (a - b) ** 2) * -np.expm1(-2.0 * a * b) / SQRT_2PI
    return _out(np.sign(y) * np.sign(z) * values)


def psi_integral(y, a, b):
    """Closed form of the integral of psi(y, .) over [a, b]"""
    y, a, b = (np.asarray(v, dtype=float) for v in (y, a, b))
    upper = special.ndtr(b - y) - special.ndtr(a - y)
    lower = special.ndtr(b + y) - special.ndtr(a + y)
    return _out(upper - lower)


def H(y):
    """H(y) = 2 Phi(y) - 1, the total mass of psi(y, .) on the half-line"""
    return _out(special.erf(np.asarray(y, dtype=float) / np.sqrt(2.0)))


def rayleigh_pdf(z):
    z = np.asarray(z, dtype=float)
    return _out(np.where(z >= 0, z * np.exp(-0.5 * z * z), 0.0))


def rayleigh_cdf(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid='ignore'):
        return _out(np.where(t >= 0, -np.expm1(-0.5 * t * t), 0.0))


def ell(y, z, config: KernelConfig = DEFAULT_CONFIG):
    """
    ell(y, z) = psi(y, z) / H(y)

    Below y_zero_threshold in |y| the y -> 0 limit z exp(-z^2 / 2) is returned,
    which is the Rayleigh density on z >= 0.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    small = np.abs(y) < config.y_zero_threshold
    safe_y = np.where(small, 1.0, y)
    limit = z * np.exp(-0.5 * z * z)
    return _out(np.where(small, limit, np.asarray(psi(safe_y, z)) / np.asarray(H(safe_y))))


def L_func(y, config: KernelConfig = DEFAULT_CONFIG):
    """L(y) = H(y) / y, continued by 2 / sqrt(2 pi) at 0"""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < config.y_zero_threshold
    safe_y = np.where(small, 1.0, y)
    return _out(np.where(small, 2.0 / SQRT_2PI, np.asarray(H(safe_y)) / safe_y))


def psi_scaled(v: float, x, y):
    """psi_v(x, y) = psi(x / sqrt(v), y / sqrt(v)) / sqrt(v)"""
    if not v > 0:
        raise ValueError(f"Scale v must be > 0, got {v}")
    root = np.sqrt(v)
    return _out(np.asarray(psi(np.asarray(x) / root, np.asarray(y) / root)) / root)


def ell_scaled(v: float, x, y, config: KernelConfig = DEFAULT_CONFIG):
    """ell_v(x, y) = psi_v(x, y) / H(x); at x -> 0 the limit (y / v) phi_v(y) sqrt(2 pi)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    small = np.abs(x) < config.y_zero_threshold
    safe_x = np.where(small, 1.0, x)
    limit = y / v * np.asarray(normal_density(v, y)) * SQRT_2PI
    return _out(np.where(small, limit, np.asarray(psi_scaled(v, safe_x, y)) / np.asarray(H(safe_x))))


def conv_identity_check(v: float, x: float, y: float, config: KernelConfig = DEFAULT_CONFIG) -> Tuple[float, float]:
    """
    Both sides of phi_v * ell+_{1-v}(x, y) + phi_v * ell-_{1-v}(x, y) = ell(x, y)

    The convolutions run over [y - T, y + T] with T = tail_sd * sqrt(v), split at 0
    into the positive and negative parts.

    Returns:
        Tuple (lhs, rhs)
    """
    if not 0 < v < 1:
        raise ValueError(f"v must lie in (0, 1), got {v}")

    def integrand(z):
        return normal_density(v, y - z) * ell_scaled(1.0 - v, x, z, config)

    half_width = config.tail_sd * np.sqrt(v)
    lo, hi = y - half_width, y + half_width
    peaks = (x, -x, y)
    plus = quad(integrand, max(lo, 0.0), hi, config, peaks) if hi > 0 else 0.0
    minus = quad(integrand, lo, min(hi, 0.0), config, peaks) if lo < 0 else 0.0
    return plus + minus, ell(x, y, config)


def smooth_indicator(epsilon: float, t):
    """chi_eps: 0 below -eps, linear on (-eps, 0), 1 from 0 on"""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    return _out(np.clip((np.asarray(t, dtype=float) + epsilon) / epsilon, 0.0, 1.0))


def ell_lipschitz(y: float, z_max: float = 10.0, points: int = 10_001,
                  config: KernelConfig = DEFAULT_CONFIG) -> float:
    """Largest difference quotient of ell(y, .) on a uniform grid over [-z_max, z_max]"""
    grid = np.linspace(-z_max, z_max, points)
    values = np.asarray(ell(y, grid, config))
    return float(np.max(np.abs(np.diff(values)) / np.diff(grid)))


def _window_ell(inp: TheoremInputs, config: KernelConfig) -> float:
    # integral of ell(u, z'/scale) over z' in [z, z + delta]
    u, s = inp.u, inp.scale
    if config.quadrature == 'closed_form' and abs(u) >= config.y_zero_threshold:
        return s * psi_integral(u, inp.z / s, (inp.z + inp.delta_window) / s) / H(u)
    return quad(lambda w: ell(u, w / s, config), inp.z, inp.z + inp.delta_window, config)


def harmonic_scaled(V_hat: float, level: float, scale: float, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """V_n = V_hat * L(level / (sigma sqrt(n)))"""
    return V_hat * L_func(level / scale, config)


def main_term_thm1(inp: TheoremInputs, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """
    Leading term of P(y + S_n in [z, z + delta], tau > n)

    (V_hat L(u) / (sigma^2 n)) * integral over [z, z + delta] of ell(u, z' / (sigma sqrt(n)))
    with u = y / (sigma sqrt(n)).
    """
    if inp.delta_window == 0:
        return 0.0
    v_n = harmonic_scaled(inp.V_hat, inp.y, inp.scale, config)
    return v_n / (inp.sigma_hat ** 2 * inp.n) * _window_ell(inp, config)


def large_y_term(inp: TheoremInputs, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """(1 / (sigma sqrt(n))) * integral over [z, z + delta] of psi(u, z' / (sigma sqrt(n)))"""
    if inp.delta_window == 0:
        return 0.0
    u, s = inp.u, inp.scale
    if config.quadrature == 'closed_form':
        return psi_integral(u, inp.z / s, (inp.z + inp.delta_window) / s)
    return quad(lambda w: psi(u, w / s), inp.z, inp.z + inp.delta_window, config) / s


def caravenna_term(inp: TheoremInputs) -> float:
    """y -> 0 reduction (2 V_hat / (sqrt(2 pi) sigma^2 n)) * integral of the Rayleigh density over the window"""
    s = inp.scale
    window = s * (rayleigh_cdf((inp.z + inp.delta_window) / s) - rayleigh_cdf(inp.z / s))
    return 2.0 * inp.V_hat / (SQRT_2PI * inp.sigma_hat ** 2 * inp.n) * window


def cclt_rhs(inp: TheoremInputs, t: float, regime: str, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """
    Right-hand side of the conditioned central limit theorem at level t

    Args:
        inp: Cell inputs; only y, n, sigma_hat and V_hat are read
        t: Level for (y + S_n) / (sigma sqrt(n)), may be +inf
        regime: 'small_y' (Rayleigh), 'large_y' (psi) or 'unified' (ell)

    Returns:
        The limit of P((y + S_n) / (sigma sqrt(n)) <= t, tau > n)
    """
    if regime not in REGIMES:
        raise ValueError(f"Unknown regime '{regime}', expected one of {REGIMES}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0:
        return 0.0
    if regime == 'small_y':
        return rayleigh_cdf(t) * 2.0 * inp.V_hat / (inp.sigma_hat * SQRT_2PI * np.sqrt(inp.n))
    if regime == 'large_y':
        return quad(lambda w: psi(inp.u, w), 0.0, t, config)
    v_n = harmonic_scaled(inp.V_hat, inp.y, inp.scale, config)
    return v_n / inp.scale * quad(lambda w: ell(inp.u, w, config), 0.0, t, config)


def bound_shape(delta_window: float, n: int, v_n: float, v_star_n: float, positive: bool = False) -> float:
    """delta n^{-3/2} (1 + V_n)(1 + V*_n), or delta n^{-3/2} V_n V*_n when positive"""
    if positive:
        return delta_window * n ** -1.5 * v_n * v_star_n
    return delta_window * n ** -1.5 * (1.0 + v_n) * (1.0 + v_star_n)


def upper_bound_thm3(inp: TheoremInputs, positive: bool = False, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """
    Shape of the uniform n^{-3/2} bound with constant 1

    V_n is taken at (x, y) and V*_n at (x', z + delta), both composed with L.
    """
    if inp.V_star_hat is None:
        raise ValueError("upper_bound_thm3 needs V_star_hat")
    v_n = harmonic_scaled(inp.V_hat, inp.y, inp.scale, config)
    v_star_n = harmonic_scaled(inp.V_star_hat, inp.z + inp.delta_window, inp.scale, config)
    return bound_shape(inp.delta_window, inp.n, v_n, v_star_n, positive)


def survival_bound_shape(inp: TheoremInputs, config: KernelConfig = DEFAULT_CONFIG) -> float:
    """(1 + V_n) / sqrt(n)"""
    return (1.0 + harmonic_scaled(inp.V_hat, inp.y, inp.scale, config)) / np.sqrt(inp.n)


KERNELS: Dict[str, Tuple[Callable, Tuple[str, ...]]] = {
    'psi': (psi, ('y', 'z')),
    'H': (H, ('y',)),
    'ell': (ell, ('y', 'z')),
    'L': (L_func, ('y',)),
    'rayleigh_pdf': (rayleigh_pdf, ('z',)),
    'rayleigh_cdf': (rayleigh_cdf, ('t',)),
    'psi_scaled': (psi_scaled, ('v', 'x', 'y')),
    'ell_scaled': (ell_scaled, ('v', 'x', 'y')),
    'normal_density': (normal_density, ('v', 't')),
    'smooth_indicator': (smooth_indicator, ('epsilon', 't')),
}


def tabulate(name: str, axes: Dict[str, np.ndarray]) -> pd.DataFrame:
    """
    Evaluate a kernel on the product grid of its arguments

    Args:
        name: Key of KERNELS
        axes: Grid values for every argument of the kernel

    Returns:
        DataFrame with one column per argument and a 'value' column
    """
    if name not in KERNELS:
        raise ConfigError(f"Unknown kernel '{name}', expected one of {sorted(KERNELS)}")
    func, args = KERNELS[name]
    missing = [a for a in args if a not in axes]
    if missing:
        raise ConfigError(f"Kernel '{name}' needs grids for {missing}")
    mesh = np.meshgrid(*(np.asarray(axes[a], dtype=float) for a in args), indexing='ij')
    frame = pd.DataFrame({a: m.ravel() for a, m in zip(args, mesh)})
    frame['value'] = [float(func(*row)) for row in frame[list(args)].itertuples(index=False)]
    return frame
