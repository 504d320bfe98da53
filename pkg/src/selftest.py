"""Property suites for the analytic kernels and the cone geometry"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from src import kernels
from src.cone_geometry import (Direction, PositiveMatrix, act, cocycle, contraction_ratio, matrix_norm, min_gain,
                               random_directions, simplex_grid)
from src.streams import RandomStream

logger = logging.getLogger(__name__)


@dataclass
class SelfCheck:
    name: str
    passed: bool
    detail: str


def _psi_symmetry() -> Tuple[bool, str]:
    grid = np.linspace(-5.0, 5.0, 100)
    Y, Z = np.meshgrid(grid, grid, indexing='ij')
    swap = np.abs(kernels.psi(Y, Z) - kernels.psi(Z, Y)).max()
    zero_line = np.abs(kernels.psi(grid, np.zeros_like(grid))).max()
    positive = grid[grid > 0]
    P, Q = np.meshgrid(positive, positive, indexing='ij')
    ok = swap == 0 and zero_line == 0 and bool(np.all(kernels.psi(P, Q) > 0))
    return ok, f"max |psi(y,z) - psi(z,y)| = {swap:.1e}, max |psi(y,0)| = {zero_line:.1e}"


def _ell_mass() -> Tuple[bool, str]:
    worst = 0.0
    for y in (0.0, 0.01, 0.1, 1.0, 3.0, 10.0):
        upper = abs(y) + 2 * kernels.DEFAULT_CONFIG.tail_sd
        mass = kernels.quad(lambda z: kernels.ell(y, z), 0.0, upper, points=(abs(y),))
        worst = max(worst, abs(mass - 1.0))
    return worst <= 1e-8, f"max |integral of ell - 1| = {worst:.2e}"


def _L_at_zero() -> Tuple[bool, str]:
    gap = abs(kernels.L_func(0.0) - 2.0 / np.sqrt(2.0 * np.pi))
    return gap <= 1e-12, f"|L(0) - 2/sqrt(2 pi)| = {gap:.1e}"


def _convolution_identity() -> Tuple[bool, str]:
    worst = 0.0
    for v in (0.1, 0.3, 0.5, 0.7, 0.9):
        for x in (0.0, 0.5, 1.0, 2.0, 4.0):
            for y in (-1.0, 0.0, 0.7, 1.5, 3.0):
                lhs, rhs = kernels.conv_identity_check(v, x, y)
                worst = max(worst, abs(lhs - rhs))
    return worst <= 1e-8, f"max |lhs - rhs| over 125 points = {worst:.2e}"


def _chi_sandwich() -> Tuple[bool, str]:
    ok = True
    for eps in (0.1, 0.5, 2.0):
        for t in np.linspace(-3.0, 3.0, 601):
            indicator = 1.0 if t > 0 else 0.0
            ok &= kernels.smooth_indicator(eps, t - eps) <= indicator <= kernels.smooth_indicator(eps, t)
    return bool(ok), "chi_eps(t - eps) <= 1{t > 0} <= chi_eps(t) on a grid"


def _stitching() -> Tuple[bool, str]:
    z = np.linspace(0.0, 5.0, 501)
    threshold = kernels.DEFAULT_CONFIG.y_zero_threshold
    direct = np.asarray(kernels.psi(threshold, z)) / kernels.H(threshold)
    seam = np.abs(direct - np.asarray(kernels.rayleigh_pdf(z))).max()
    return seam <= 1e-6, f"seam at the y = 0 branch switch = {seam:.1e}"


def _lipschitz() -> Tuple[bool, str]:
    worst = 0.0
    for y in (0.0, 0.5, 2.0):
        coarse = kernels.ell_lipschitz(y, points=10_001)
        fine = kernels.ell_lipschitz(y, points=20_001)
        worst = max(worst, abs(fine - coarse) / coarse)
    return worst <= 0.01, f"relative change of the grid Lipschitz constant under refinement = {worst:.1e}"


def _random_fk_matrices(rng: np.random.Generator, size: int, kappa: float = 2.0) -> np.ndarray:
    return np.exp(rng.uniform(0.0, np.log(kappa), size=(size, 2, 2)))


def _cocycle_identity() -> Tuple[bool, str]:
    rng = RandomStream(7).generator()
    worst = 0.0
    for g1, g2, x in zip(_random_fk_matrices(rng, 500), _random_fk_matrices(rng, 500), random_directions(rng, 2, 500)):
        a, b, d = PositiveMatrix(g1), PositiveMatrix(g2), Direction(x / x.sum())
        lhs = cocycle(b @ a, d)
        rhs = cocycle(b, act(a, d)) + cocycle(a, d)
        worst = max(worst, abs(lhs - rhs))
    return worst <= 1e-10, f"max cocycle defect = {worst:.1e}"


def _norm_sandwich() -> Tuple[bool, str]:
    rng = RandomStream(11).generator()
    matrices = _random_fk_matrices(rng, 10_000)
    directions = random_directions(rng, 2, 10_000)
    gains = np.einsum('mij,mj->m', matrices, directions)
    norms = matrices.sum(axis=1).max(axis=1)
    ok = bool(np.all(gains <= norms * (1 + 1e-12)) and np.all(gains >= norms / 2.0 * (1 - 1e-12)))
    return ok, "||g|| / kappa <= |gx| <= ||g|| on 10^4 draws with kappa = 2"


def _contraction() -> Tuple[bool, str]:
    rng = RandomStream(13).generator()
    worst = 0.0
    for g, x, xp in zip(_random_fk_matrices(rng, 1000), random_directions(rng, 2, 1000),
                        random_directions(rng, 2, 1000)):
        worst = max(worst, contraction_ratio(PositiveMatrix(g), Direction(x / x.sum()), Direction(xp / xp.sum())))
    return worst < 1.0, f"largest Hilbert contraction ratio = {worst:.4f}"


def _min_gain_oracle() -> Tuple[bool, str]:
    rng = RandomStream(17).generator()
    worst = 0.0
    for dim in (2, 3):
        grid = simplex_grid(dim, 2001)
        for entries in np.exp(rng.uniform(0.0, 1.0, size=(50, dim, dim))):
            g = PositiveMatrix(entries)
            gains = grid @ g.col_sums
            worst = max(worst, abs(gains.min() - min_gain(g)), abs(gains.max() - matrix_norm(g)))
    return worst <= 1e-9, f"max gap to the simplex-grid oracle = {worst:.1e}"


KERNEL_SUITE: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ('psi_symmetry', _psi_symmetry),
    ('ell_is_density', _ell_mass),
    ('L_at_zero', _L_at_zero),
    ('convolution_identity', _convolution_identity),
    ('chi_sandwich', _chi_sandwich),
    ('ell_stitching', _stitching),
    ('ell_lipschitz', _lipschitz),
]

GEOMETRY_SUITE: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ('cocycle_identity', _cocycle_identity),
    ('norm_sandwich', _norm_sandwich),
    ('hilbert_contraction', _contraction),
    ('min_gain_oracle', _min_gain_oracle),
]


def run_selftest() -> List[SelfCheck]:
    """
    Run the kernel and geometry property suites

    Returns:
        One SelfCheck per property, in suite order
    """
    results = []
    for name, check in KERNEL_SUITE + GEOMETRY_SUITE:
        passed, detail = check()
        results.append(SelfCheck(name=name, passed=bool(passed), detail=detail))
        if passed:
            logger.info(f"✓ {name}: {detail}")
        else:
            logger.error(f"✗ {name}: {detail}")
    return results
