"""
Estimators for the quantities the limit theorems consume: lambda, sigma^2, nu, V, V*
and the martingale approximation of S_n built from the transfer operator.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from config import ESTIMATOR_CONFIG
from src.cone_geometry import Direction, act_batch, hilbert_metric, hilbert_metric_batch
from src.ensembles import (A1Result, EnsembleDiagnostics, MatrixLaw, center, estimate_moment, kappa_sup,
                           transpose_law, verify_contraction)
from src.exceptions import NotCentered, UnsupportedDim
from src.streams import RandomStream
from src.walk_engine import (HarmonicCollector, MomentCollector, SimulationPlan, SurvivalCollector, batch)

logger = logging.getLogger(__name__)


@dataclass
class ConfidenceEstimate:
    """Point estimate with its standard error"""

    value: float
    stderr: float
    n_samples: int
    method: str
    companion: Optional['ConfidenceEstimate'] = None

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError(f"stderr must be >= 0, got {self.stderr}")

    def to_json(self) -> Dict[str, Any]:
        data = {'value': self.value, 'stderr': self.stderr, 'n_samples': self.n_samples, 'method': self.method}
        if self.companion is not None:
            data['companion'] = self.companion.to_json()
        return data


@dataclass
class EmpiricalMeasure:
    """Weighted sample of directions approximating the invariant measure nu"""

    dim: int
    samples: np.ndarray
    weights: np.ndarray
    bins: int = ESTIMATOR_CONFIG['histogram_bins']
    a1_failed: bool = False

    def __post_init__(self):
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("Weights must be nonnegative and sum to 1")

    def mean(self, f) -> float:
        """nu(f) for a function acting on stacks of directions of shape (m, d)"""
        return float(self.weights @ np.asarray(f(self.samples), dtype=float))

    def histogram(self):
        """(bin_centers, masses) over the first coordinate in [0, 1]; d = 2 only"""
        if self.dim != 2:
            raise UnsupportedDim(f"Histogram is offered for d = 2, got d = {self.dim}")
        masses, edges = np.histogram(self.samples[:, 0], bins=self.bins, range=(0.0, 1.0), weights=self.weights)
        return 0.5 * (edges[:-1] + edges[1:]), masses

    def mode(self) -> float:
        centers, masses = self.histogram()
        return float(centers[np.argmax(masses)])

    def to_frame(self) -> pd.DataFrame:
        centers, masses = self.histogram()
        return pd.DataFrame({'bin_center': centers, 'mass': masses})


@dataclass
class HarmonicEstimate:
    """Monte Carlo value of E[(y + S_n) 1{tau > n}] at n = n_V"""

    x: Direction
    y: float
    n_V: int
    value: float
    stderr: float
    plateau_flag: bool
    half_value: float
    dual: bool = False

    def to_json(self) -> Dict[str, Any]:
        return {
            'x': self.x.to_json(), 'y': self.y, 'n_V': self.n_V, 'value': self.value,
            'stderr': self.stderr, 'plateau_flag': self.plateau_flag, 'half_value': self.half_value,
            'dual': self.dual,
        }


@dataclass
class PoissonSolution:
    """Grid solution of theta = psi - P psi on x = (t, 1 - t)"""

    grid: np.ndarray
    values: np.ndarray
    truncation_K: int
    residual: float
    theta_mean: float
    stationary: np.ndarray = field(repr=False)

    def evaluate(self, directions: np.ndarray) -> np.ndarray:
        """Linear interpolation at directions of shape (m, 2) or (2,)"""
        directions = np.asarray(directions, dtype=float)
        return np.interp(directions[..., 0], self.grid, self.values)

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


@dataclass
class ContractionProfile:
    distances: np.ndarray
    rate: float
    intercept: float


@dataclass
class MartingaleGap:
    sup_gap: float
    bound: float
    n: int
    num_traj: int


def _default_start(law: MatrixLaw, x: Optional[Direction]) -> Direction:
    return x if x is not None else Direction.barycenter(law.dim)


def lyapunov(law: MatrixLaw, n: int, m: int, seed: int = 0, x: Optional[Direction] = None,
             n_jobs: Optional[int] = None, target_stderr: Optional[float] = None) -> ConfidenceEstimate:
    """
    Mean of S_n / n over m independent trajectories

    Args:
        law: Matrix law
        n: Trajectory length
        m: Number of trajectories
        seed: Stream seed
        x: Start direction, barycenter by default
        n_jobs: Worker count
        target_stderr: When set, m is a pilot size; the batch is rerun with enough
            trajectories to bring the stderr down to the target, up to lyapunov_max_traj

    Returns:
        ConfidenceEstimate of lambda
    """
    if n < 1 or m < 1:
        raise ValueError(f"n and m must be >= 1, got n={n}, m={m}")
    plan = SimulationPlan(law=law, start=_default_start(law, x), n=n, num_traj=m, seed=seed)
    moments = batch(plan, MomentCollector(n), n_jobs=n_jobs)
    stderr = moments['mean_stderr'] / n
    if target_stderr is not None and stderr > target_stderr:
        # the first m trajectories of the larger batch are the pilot's
        needed = int(np.ceil(m * (stderr / target_stderr) ** 2))
        m = min(needed, ESTIMATOR_CONFIG['lyapunov_max_traj'])
        if m < needed:
            logger.warning(f"lambda needs {needed} trajectories for stderr {target_stderr:g}; capped at {m}")
        plan = SimulationPlan(law=law, start=plan.start, n=n, num_traj=m, seed=seed)
        moments = batch(plan, MomentCollector(n), n_jobs=n_jobs)
        stderr = moments['mean_stderr'] / n
    return ConfidenceEstimate(value=moments['mean'] / n, stderr=stderr, n_samples=m, method='monte_carlo')


def _sigma2_at(law: MatrixLaw, lyapunov_hat: float, n: int, m: int, seed: int, x: Direction,
               n_jobs: Optional[int]) -> ConfidenceEstimate:
    plan = SimulationPlan(law=law, start=x, n=n, num_traj=m, seed=seed)
    moments = batch(plan, MomentCollector(n, drift=lyapunov_hat), n_jobs=n_jobs)
    return ConfidenceEstimate(value=moments['var_over_n'], stderr=moments['var_over_n_stderr'], n_samples=m,
                              method='monte_carlo')


def sigma2(law: MatrixLaw, lyapunov_hat: float, n: int, m: int, seed: int = 0, x: Optional[Direction] = None,
           companion: bool = True, n_jobs: Optional[int] = None) -> ConfidenceEstimate:
    """
    Sample mean of (S_n - n * lyapunov_hat)^2 / n

    The companion estimate at 2n (independent stream) exposes the residual 1/n bias.
    """
    if n < 1 or m < 1:
        raise ValueError(f"n and m must be >= 1, got n={n}, m={m}")
    x = _default_start(law, x)
    estimate = _sigma2_at(law, lyapunov_hat, n, m, seed, x, n_jobs)
    if companion:
        child_seed = RandomStream(seed).child(2 * n).seed
        estimate.companion = _sigma2_at(law, lyapunov_hat, 2 * n, m, child_seed, x, n_jobs)
    return estimate


def invariant_measure(law: MatrixLaw, burn_in: int = ESTIMATOR_CONFIG['burn_in'], samples: int = 10_000,
                      seed: int = 0, stride: int = ESTIMATOR_CONFIG['stride'],
                      chains: int = ESTIMATOR_CONFIG['chains'], x: Optional[Direction] = None) -> EmpiricalMeasure:
    """
    Occupation measure of X_k after burn-in, thinned by stride

    Args:
        law: Matrix law
        burn_in: Steps discarded on every chain
        samples: Total number of recorded directions
        seed: Stream seed
        stride: Steps between two recorded directions of a chain
        chains: Number of chains run side by side
        x: Start direction of every chain

    Returns:
        EmpiricalMeasure with equal weights
    """
    if burn_in < 0 or samples < 1 or stride < 1 or chains < 1:
        raise ValueError(f"Invalid sampling parameters burn_in={burn_in}, samples={samples}, stride={stride}")
    a1 = verify_contraction(law, horizon=32)
    if a1 is A1Result.FAILED:
        logger.warning("No strictly positive product found: the chain may not forget its start")
    rng = RandomStream(seed).generator(0)
    chains = min(chains, samples)
    per_chain = -(-samples // chains)
    directions = np.tile(_default_start(law, x).coords, (chains, 1))
    for _ in range(burn_in):
        directions, _ = act_batch(law.sample_batch(rng, chains), directions)
    recorded = np.empty((per_chain, chains, law.dim))
    for j in range(per_chain):
        for _ in range(stride):
            directions, _ = act_batch(law.sample_batch(rng, chains), directions)
        recorded[j] = directions
    points = recorded.reshape(-1, law.dim)[:samples]
    return EmpiricalMeasure(dim=law.dim, samples=points, weights=np.full(samples, 1.0 / samples),
                            a1_failed=a1 is A1Result.FAILED)


def _harmonic(law: MatrixLaw, x: Direction, ys: Sequence[float], n_V: int, m: int, seed: int, sign: float,
              dual: bool, n_jobs: Optional[int]) -> List[HarmonicEstimate]:
    if n_V < 1 or m < 1:
        raise ValueError(f"n_V and m must be >= 1, got n_V={n_V}, m={m}")
    plan = SimulationPlan(law=law, start=x, n=n_V, num_traj=m, seed=seed, sign=sign)
    result = batch(plan, HarmonicCollector(ys, n_V), n_jobs=n_jobs)
    estimates = []
    for i, y in enumerate(result['ys']):
        value, half = float(result['mean'][i]), float(result['half_mean'][i])
        tolerance = max(2.0 * float(result['diff_stderr'][i]), ESTIMATOR_CONFIG['plateau_rel'] * abs(value))
        plateau = abs(value - half) <= tolerance
        if not plateau:
            logger.warning(f"No plateau for V at y={y:g}: {half:.5g} at n_V/2 vs {value:.5g} at n_V={n_V}")
        estimates.append(HarmonicEstimate(x=x, y=y, n_V=n_V, value=value, stderr=float(result['stderr'][i]),
                                          plateau_flag=plateau, half_value=half, dual=dual))
    return estimates


def harmonic_V_table(law: MatrixLaw, x: Direction, ys: Sequence[float], n_V: int, m: int, seed: int = 0,
                     n_jobs: Optional[int] = None) -> List[HarmonicEstimate]:
    """V estimates at several levels y, all sharing the same trajectories"""
    return _harmonic(law, x, ys, n_V, m, seed, 1.0, False, n_jobs)


def harmonic_V(law: MatrixLaw, x: Direction, y: float, n_V: int, m: int, seed: int = 0,
               n_jobs: Optional[int] = None) -> HarmonicEstimate:
    """
    Estimate V(x, y) = lim E[(y + S_n) 1{tau_{x,y} > n}] at n = n_V

    plateau_flag is set when the values at n_V / 2 and n_V agree within
    max(2 joint stderr, plateau_rel relative).
    """
    return harmonic_V_table(law, x, [y], n_V, m, seed, n_jobs)[0]


def harmonic_V_star_table(law: MatrixLaw, xp: Direction, zs: Sequence[float], n_V: int, m: int, seed: int = 0,
                          n_jobs: Optional[int] = None) -> List[HarmonicEstimate]:
    # S*_k = -log|h_k...h_1 x'| with h_i i.i.d. from the transposed law
    return _harmonic(transpose_law(law), xp, zs, n_V, m, seed, -1.0, True, n_jobs)


def harmonic_V_star(law: MatrixLaw, xp: Direction, z: float, n_V: int, m: int, seed: int = 0,
                    n_jobs: Optional[int] = None) -> HarmonicEstimate:
    """Estimate V*(x', z) from the dual walk S* and its exit time tau*"""
    return harmonic_V_star_table(law, xp, [z], n_V, m, seed, n_jobs)[0]


def _require_grid_law(law: MatrixLaw) -> None:
    if law.dim != 2:
        raise UnsupportedDim(f"Grid operations need d = 2, got d = {law.dim}")
    if not law.is_finite:
        raise ValueError("Grid operations need a finite-support law")


def transfer_matrix(law: MatrixLaw, points: int = ESTIMATOR_CONFIG['grid_points']):
    """
    Discretised transfer operator on the grid t_j = j / (B - 1), x_j = (t_j, 1 - t_j)

    Args:
        law: Finite-support law, d = 2
        points: Grid resolution B

    Returns:
        Tuple (grid, Q) where Q is row-stochastic and (Q f)_j approximates P f(x_j)
        by linear interpolation of f at the mapped points g . x_j
    """
    _require_grid_law(law)
    if points < 2:
        raise ValueError(f"Grid needs at least 2 points, got {points}")
    grid = np.linspace(0.0, 1.0, points)
    directions = np.column_stack([grid, 1.0 - grid])
    rows = np.arange(points)
    Q = np.zeros((points, points))
    for g, p in zip(law.support_array(), law.prob_array()):
        images = directions @ g.T
        mapped = images[:, 0] / images.sum(axis=1) * (points - 1)
        left = np.clip(np.floor(mapped).astype(int), 0, points - 2)
        w = mapped - left
        np.add.at(Q, (rows, left), p * (1.0 - w))
        np.add.at(Q, (rows, left + 1), p * w)
    return grid, Q


def transfer_apply(law: MatrixLaw, f: np.ndarray) -> np.ndarray:
    """P f on the grid of f's length"""
    f = np.asarray(f, dtype=float)
    _, Q = transfer_matrix(law, f.shape[0])
    return Q @ f


def _stationary(Q: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = linalg.eig(Q.T)
    vector = np.abs(np.real(vectors[:, np.argmin(np.abs(eigenvalues - 1.0))]))
    return vector / vector.sum()


def _expected_cocycle(law: MatrixLaw, grid: np.ndarray) -> np.ndarray:
    # theta(x) = sum_g p_g log|gx|, with |gx| = colsums(g) . x
    directions = np.column_stack([grid, 1.0 - grid])
    col_sums = law.support_array().sum(axis=1)
    return np.log(directions @ col_sums.T) @ law.prob_array()


def lyapunov_transfer(law: MatrixLaw, points: int = ESTIMATOR_CONFIG['grid_points']) -> ConfidenceEstimate:
    """lambda = nu(theta) with nu the stationary vector of the discretised transfer operator"""
    grid, Q = transfer_matrix(law, points)
    value = float(_stationary(Q) @ _expected_cocycle(law, grid))
    return ConfidenceEstimate(value=value, stderr=0.0, n_samples=points, method='transfer_stationary')


def poisson_solve(law: MatrixLaw, K: int, points: int = ESTIMATOR_CONFIG['grid_points'],
                  tol: float = ESTIMATOR_CONFIG['poisson_tol']) -> PoissonSolution:
    """
    Truncated Neumann series psi = sum_{k<=K} P^k theta for a centered law

    Args:
        law: Centered finite-support law, d = 2
        K: Truncation order
        points: Grid resolution B
        tol: Largest accepted |nu(theta)|

    Returns:
        PoissonSolution with residual ||theta - (psi - P psi)||_inf on the grid
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    grid, Q = transfer_matrix(law, points)
    stationary = _stationary(Q)
    theta = _expected_cocycle(law, grid)
    theta_mean = float(stationary @ theta)
    if abs(theta_mean) > tol:
        raise NotCentered(f"nu(theta) = {theta_mean:.3g} exceeds tolerance {tol:g}; center the law first")
    term = theta - theta_mean
    values = np.zeros(points)
    for _ in range(K + 1):
        values += term
        term = Q @ term
    # equals theta_mean + Q^{K+1} (theta - theta_mean), so it floors at |theta_mean|
    residual = float(np.abs(theta - (values - Q @ values)).max())
    return PoissonSolution(grid=grid, values=values, truncation_K=K, residual=residual, theta_mean=theta_mean,
                           stationary=stationary)


def contraction_profile(law: MatrixLaw, x: Direction, xp: Direction, n: int, m: int,
                        seed: int = 0) -> ContractionProfile:
    """
    Mean Hilbert distance E d(X_k^x, X_k^x') for k = 0..n under shared draws

    The geometric rate r is the exponential of the slope of log mean distance
    against k, fitted over the steps where the distance is still resolvable.
    """
    if n < 1 or m < 1:
        raise ValueError(f"n and m must be >= 1, got n={n}, m={m}")
    rng = RandomStream(seed).generator(0)
    a = np.tile(x.coords, (m, 1))
    b = np.tile(xp.coords, (m, 1))
    distances = np.empty(n + 1)
    distances[0] = hilbert_metric(x, xp)
    for k in range(1, n + 1):
        matrices = law.sample_batch(rng, m)
        a, _ = act_batch(matrices, a)
        b, _ = act_batch(matrices, b)
        distances[k] = hilbert_metric_batch(a, b).mean()
    steps = np.nonzero(distances > 1e-12)[0]
    if steps.size < 2:
        return ContractionProfile(distances=distances, rate=0.0, intercept=float(np.log(max(distances[0], 1e-300))))
    fit = stats.linregress(steps, np.log(distances[steps]))
    return ContractionProfile(distances=distances, rate=float(np.exp(fit.slope)), intercept=float(fit.intercept))


def martingale_increment_check(law: MatrixLaw, solution: PoissonSolution, n: int, m: int, seed: int = 0,
                               bins: int = 16, x: Optional[Direction] = None) -> pd.DataFrame:
    """
    Per-bin mean of M_{k+1} - M_k given X_k, with M_n = S_n - psi(x) + psi(X_n)

    Returns:
        DataFrame with columns bin_center, count, mean, stderr (empty bins dropped)
    """
    rng = RandomStream(seed).generator(0)
    directions = np.tile(_default_start(law, x).coords, (m, 1))
    counts = np.zeros(bins)
    sums = np.zeros(bins)
    sums_sq = np.zeros(bins)
    for _ in range(n):
        where = np.minimum((directions[:, 0] * bins).astype(int), bins - 1)
        new_directions, increments = act_batch(law.sample_batch(rng, m), directions)
        steps = increments + solution.evaluate(new_directions) - solution.evaluate(directions)
        counts += np.bincount(where, minlength=bins)
        sums += np.bincount(where, weights=steps, minlength=bins)
        sums_sq += np.bincount(where, weights=steps ** 2, minlength=bins)
        directions = new_directions
    seen = counts > 0
    means = sums[seen] / counts[seen]
    variances = np.maximum(sums_sq[seen] / counts[seen] - means ** 2, 0.0)
    centers = (np.arange(bins) + 0.5) / bins
    return pd.DataFrame({'bin_center': centers[seen], 'count': counts[seen].astype(int), 'mean': means,
                         'stderr': np.sqrt(variances / counts[seen])})


def martingale_gap(law: MatrixLaw, solution: PoissonSolution, x: Direction, n: int, m: int,
                   seed: int = 0) -> MartingaleGap:
    """sup over trajectories and k <= n of |S_k - M_k| = |psi(X_k) - psi(x)|"""
    rng = RandomStream(seed).generator(0)
    directions = np.tile(x.coords, (m, 1))
    start_value = float(solution.evaluate(x.coords))
    sup_gap = 0.0
    for _ in range(n):
        directions, _ = act_batch(law.sample_batch(rng, m), directions)
        sup_gap = max(sup_gap, float(np.abs(solution.evaluate(directions) - start_value).max()))
    return MartingaleGap(sup_gap=sup_gap, bound=2.0 * solution.sup_norm, n=n, num_traj=m)


def survival_probability(law: MatrixLaw, x: Direction, ys: Sequence[float], n: int, m: int, seed: int = 0,
                         n_jobs: Optional[int] = None) -> List[ConfidenceEstimate]:
    """P(tau_{x,y} > n) for each y, binomial stderr"""
    plan = SimulationPlan(law=law, start=x, n=n, num_traj=m, seed=seed)
    result = batch(plan, SurvivalCollector(ys), n_jobs=n_jobs)
    return [ConfidenceEstimate(value=float(p), stderr=float(s), n_samples=m, method='binomial')
            for p, s in zip(result['prob'], result['stderr'])]


def residual_drift(law: MatrixLaw, lyapunov_hat: float, n: int, m: int, seed: int = 0,
                   n_jobs: Optional[int] = None) -> float:
    """
    Per-step drift left in the walk after centering by lyapunov_hat

    Finite d = 2 laws use the transfer operator of the centered law; other laws
    a Monte Carlo estimate on a stream independent of the one lyapunov_hat came from.
    """
    centered = center(law, lyapunov_hat)
    if law.is_finite and law.dim == 2:
        return lyapunov_transfer(centered).value
    return lyapunov(centered, n, m, seed=seed, n_jobs=n_jobs).value


def diagnose_ensemble(law: MatrixLaw, delta: float = 1.0, n: int = 1000, m: int = 10_000, seed: int = 0,
                      horizon: int = 32, n_jobs: Optional[int] = None) -> EnsembleDiagnostics:
    """
    Check conditions A1, A2 and FK and estimate lambda and sigma^2

    Args:
        law: Matrix law
        delta: Moment excess used for A2; delta >= 1 selects the A1 variant,
            0 < delta < 1 needs a finite kappa
        n: Trajectory length for lambda and sigma^2
        m: Number of trajectories
        seed: Stream seed
        horizon: Largest product length tried for A1

    Returns:
        EnsembleDiagnostics
    """
    stream = RandomStream(seed)
    a1 = verify_contraction(law, horizon, rng=stream.child(1).generator())
    if a1 is A1Result.FAILED:
        logger.warning(f"Condition A1 failed up to horizon {horizon}")
    moment = estimate_moment(law, delta, stream=stream.child(2).generator())
    kappa, sampled = kappa_sup(law, stream=stream.child(3).generator())
    lam = lyapunov(law, n, m, seed=stream.child(4).seed, n_jobs=n_jobs)
    sig = sigma2(law, lam.value, n, m, seed=stream.child(5).seed, companion=False, n_jobs=n_jobs)
    if delta >= 1:
        variant = 'A1'
    elif np.isfinite(kappa):
        variant = 'FK'
    else:
        variant = 'unsupported'
        logger.warning(f"delta={delta} < 1 requires a finite kappa")
    logger.warning("Non-arithmeticity (A4) is asserted by the ensemble, not certified")
    residual = residual_drift(law, lam.value, n, m, seed=stream.child(6).seed, n_jobs=n_jobs)
    logger.info(f"✓ Diagnostics: lambda={lam.value:.6g}±{lam.stderr:.2g}, sigma2={sig.value:.6g}±{sig.stderr:.2g}")
    return EnsembleDiagnostics(
        lyapunov_hat=lam.value, lyapunov_stderr=lam.stderr, sigma2_hat=sig.value, sigma2_stderr=sig.stderr,
        kappa_sup=kappa, kappa_sampled=sampled, moment_2_delta=moment,
        a1_horizon=a1.value if a1 is A1Result.FAILED else a1, delta=delta, theorem_variant=variant,
        non_arithmetic_asserted=law.non_arithmetic, residual_drift=residual,
    )
