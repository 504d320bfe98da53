"""
Verification harness: Monte Carlo window probabilities against the limit theorems

An ExperimentRunner calibrates once (centering, sigma_hat, V and V* node tables,
nu when needed) and every verify_* operation reuses that calibration.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import ESTIMATOR_CONFIG, HARNESS_CONFIG, WALK_CONFIG
from src.cone_geometry import Direction
from src.ensembles import (A1Result, EnsembleDiagnostics, MatrixLaw, center, estimate_moment, kappa_sup,
                           verify_contraction)
from src.estimators import (ConfidenceEstimate, EmpiricalMeasure, harmonic_V_star_table, harmonic_V_table,
                            invariant_measure, lyapunov, lyapunov_transfer, martingale_gap, poisson_solve,
                            residual_drift, sigma2)
from src.exceptions import (ConfigError, InsufficientSamples, InsufficientSurvivors, NotCalibrated)
from src.kernels import (TheoremInputs, bound_shape, caravenna_term, cclt_rhs, ell, harmonic_scaled, large_y_term,
                         main_term_thm1, psi_integral, H, quad, rayleigh_cdf, smooth_indicator)
from src.reporting import CellResult, VerificationReport, build_provenance
from src.streams import RandomStream
from src.walk_engine import (BlockOutcome, Collector, CompositeCollector, ConditionalCollector, SimulationPlan,
                             SurvivalCollector, WindowCollector, batch, duality_gaps, norm_sandwich_gaps)

logger = logging.getLogger(__name__)

THEOREMS = ('thm1', 'target', 'caravenna', 'large_y', 'cclt', 'slope', 'duality')
WINDOW_THEOREMS = ('thm1', 'caravenna', 'large_y', 'slope')
CENTERINGS = ('transfer', 'monte_carlo', 'none')

# seed labels for RandomStream.child
_LYAPUNOV, _SIGMA, _V, _V_STAR, _NU, _DUALITY, _MARTINGALE, _DRIFT, _CELLS = 1, 2, 3, 4, 5, 6, 7, 8, 1000


@dataclass(frozen=True)
class WindowCell:
    """(y, z, delta, n); y and z may be given in units of sigma_hat sqrt(n)"""

    y: float
    z: float
    delta: float
    n: int
    y_scaled: bool = False
    z_scaled: bool = False

    def resolve(self, sigma_hat: float) -> Tuple[float, float]:
        scale = sigma_hat * np.sqrt(self.n)
        return (self.y * scale if self.y_scaled else self.y, self.z * scale if self.z_scaled else self.z)

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'WindowCell':
        return cls(y=float(data['y']), z=float(data.get('z', 0.0)), delta=float(data.get('delta', 0.0)),
                   n=int(data['n']), y_scaled=bool(data.get('y_scaled', False)),
                   z_scaled=bool(data.get('z_scaled', False)))


@dataclass(frozen=True)
class TargetFunction:
    """
    Separable target F(x, t) = a(x) b(t)

    a is given by its values on the grid t_j = j / (B - 1) of the first coordinate
    (d = 2); b is piecewise linear through its knots and vanishes outside them.
    """

    a_values: Tuple[float, ...]
    b_knots: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.a_values) < 2:
            raise ConfigError("Target a needs at least 2 grid values")
        if not np.all(np.isfinite(self.a_values)):
            raise ConfigError("Target a must be finite")
        ts = [t for t, _ in self.b_knots]
        if len(ts) < 2 or np.any(np.diff(ts) <= 0):
            raise ConfigError("Target b needs at least 2 strictly increasing knots")
        if self.b_knots[0][1] != 0 or self.b_knots[-1][1] != 0:
            raise ConfigError("Target b must vanish at its first and last knots")

    @property
    def knots(self) -> Tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.b_knots, dtype=float)
        return arr[:, 0], arr[:, 1]

    @property
    def support_width(self) -> float:
        ts, _ = self.knots
        return float(ts[-1] - ts[0])

    def a(self, directions: np.ndarray) -> np.ndarray:
        grid = np.linspace(0.0, 1.0, len(self.a_values))
        return np.interp(np.asarray(directions)[..., 0], grid, np.asarray(self.a_values, dtype=float))

    def b(self, t) -> np.ndarray:
        ts, vs = self.knots
        return np.interp(t, ts, vs, left=0.0, right=0.0)

    def lipschitz_a(self) -> float:
        values = np.asarray(self.a_values, dtype=float)
        return float(np.abs(np.diff(values)).max() * (len(values) - 1))

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'TargetFunction':
        try:
            return cls(a_values=tuple(float(v) for v in data['a']),
                       b_knots=tuple((float(t), float(v)) for t, v in data['b_knots']))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Malformed target function: {e}")


def window_sandwich(a_values: Sequence[float], delta: float, epsilon: float) -> Tuple[TargetFunction, TargetFunction]:
    """
    Inner and outer piecewise-linear envelopes of the window indicator 1{0 <= t <= delta}

    inner(t) = chi_eps(t - eps) chi_eps(delta - eps - t) and outer(t) = chi_eps(t) chi_eps(delta - t),
    so inner <= indicator <= outer.
    """
    if not 0 < 2 * epsilon < delta:
        raise ValueError(f"Need 0 < 2*epsilon < delta, got epsilon={epsilon}, delta={delta}")

    def knots(ts, ramp):
        # end knots are zero exactly; evaluating the ramps there leaves round-off
        inside = [(float(t), float(ramp(t))) for t in ts[1:-1]]
        return ((float(ts[0]), 0.0), *inside, (float(ts[-1]), 0.0))

    inner = knots([0.0, epsilon, delta - epsilon, delta],
                  lambda t: smooth_indicator(epsilon, t - epsilon) * smooth_indicator(epsilon, delta - epsilon - t))
    outer = knots([-epsilon, 0.0, delta, delta + epsilon],
                  lambda t: smooth_indicator(epsilon, t) * smooth_indicator(epsilon, delta - t))
    a_values = tuple(float(v) for v in a_values)
    return TargetFunction(a_values, inner), TargetFunction(a_values, outer)


def fit_decay_slope(ns: Sequence[float], qs: Sequence[float]) -> Tuple[float, float]:
    """Slope and intercept of log q against log n"""
    ns, qs = np.asarray(ns, dtype=float), np.asarray(qs, dtype=float)
    if ns.size < 2 or np.any(qs <= 0):
        raise ValueError("Slope fit needs at least two strictly positive values")
    fit = stats.linregress(np.log(ns), np.log(qs))
    return float(fit.slope), float(fit.intercept)


def judge_cell(n: int, y: float, z: float, delta: float, mc_prob: float, mc_stderr: float, theory: float,
               tol: float = HARNESS_CONFIG['tol_cell'], floor: float = HARNESS_CONFIG['floor']) -> CellResult:
    """
    Pass rule shared by all window experiments

    A cell passes when |mc / theory - 1| <= tol, or by floor when both values lie
    below floor. The ratio is only reported above the floor.
    """
    if theory < floor and mc_prob < floor:
        return CellResult(n, y, z, delta, mc_prob, mc_stderr, theory, None, True, floor_pass=True)
    if theory < floor:
        return CellResult(n, y, z, delta, mc_prob, mc_stderr, theory, None, False)
    if mc_stderr > HARNESS_CONFIG['max_rel_stderr'] * theory:
        raise InsufficientSamples(
            f"Cell (n={n}, y={y:g}, z={z:g}, delta={delta:g}): stderr {mc_stderr:.3g} exceeds "
            f"{HARNESS_CONFIG['max_rel_stderr']:.0%} of theory {theory:.3g}")
    ratio = mc_prob / theory
    return CellResult(n, y, z, delta, mc_prob, mc_stderr, theory, ratio, abs(ratio - 1.0) <= tol)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one verification experiment needs"""

    law: MatrixLaw
    theorem: str
    cells: Tuple[WindowCell, ...] = ()
    start: Optional[Direction] = None
    dual_start: Optional[Direction] = None
    num_traj: int = 100_000
    n_V: int = 400
    m_V: int = 100_000
    lyapunov_n: int = 2000
    lyapunov_m: int = 10_000
    sigma_n: int = 1000
    sigma_m: int = 10_000
    seed: int = 0
    centering: str = 'transfer'
    regime: str = 'small_y'
    delta_moment: float = 1.0
    tol: float = HARNESS_CONFIG['tol_cell']
    target: Optional[TargetFunction] = None
    nu_samples: int = 20_000
    duality_n: int = 512
    duality_traj: int = 10_000
    poisson_K: Tuple[int, ...] = (5, 10, 20, 40)

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ConfigError(f"Unknown theorem '{self.theorem}', expected one of {THEOREMS}")
        if self.centering not in CENTERINGS:
            raise ConfigError(f"Unknown centering '{self.centering}', expected one of {CENTERINGS}")
        if self.num_traj < 1 or self.m_V < 1 or self.n_V < 1:
            raise ConfigError("num_traj, n_V and m_V must be >= 1")
        for cell in self.cells:
            if cell.n < HARNESS_CONFIG['min_n']:
                raise ConfigError(f"Cell n={cell.n} is below the minimum {HARNESS_CONFIG['min_n']}")
            if self.theorem in WINDOW_THEOREMS and cell.delta < HARNESS_CONFIG['delta_floor']:
                raise ConfigError(f"Cell delta={cell.delta} is below the floor {HARNESS_CONFIG['delta_floor']}")
        if self.theorem != 'duality' and not self.cells:
            raise ConfigError(f"Theorem '{self.theorem}' needs at least one cell")
        if self.theorem == 'target' and self.target is None:
            raise ConfigError("Theorem 'target' needs a target function")
        if self.theorem == 'duality':
            if not 1 <= self.duality_n <= HARNESS_CONFIG['duality_max_n']:
                raise ConfigError(f"duality_n must lie in 1..{HARNESS_CONFIG['duality_max_n']}")
            if not 1 <= self.duality_traj <= HARNESS_CONFIG['duality_max_traj']:
                raise ConfigError(f"duality_traj must lie in 1..{HARNESS_CONFIG['duality_max_traj']}")

    @property
    def x(self) -> Direction:
        return self.start if self.start is not None else Direction.barycenter(self.law.dim)

    @property
    def xp(self) -> Direction:
        return self.dual_start if self.dual_start is not None else Direction.barycenter(self.law.dim)

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'ExperimentSpec':
        """
        Build a spec from its JSON form

        Slope experiments may give 'ladder', 'z_grid' (units of sigma sqrt(n)), 'y'
        and 'delta' instead of explicit cells.
        """
        try:
            law = MatrixLaw.from_json(data['ensemble'])
            theorem = data['theorem']
            cells = [WindowCell.from_json(c) for c in data.get('cells', [])]
            if theorem == 'slope' and 'ladder' in data:
                cells += [WindowCell(y=float(data['y']), z=float(zj), delta=float(data['delta']), n=int(n),
                                     z_scaled=True) for n in data['ladder'] for zj in data['z_grid']]
            optional = {}
            for key in ('num_traj', 'n_V', 'm_V', 'lyapunov_n', 'lyapunov_m', 'sigma_n', 'sigma_m', 'seed',
                        'nu_samples', 'duality_n', 'duality_traj'):
                if key in data:
                    optional[key] = int(data[key])
            for key in ('centering', 'regime'):
                if key in data:
                    optional[key] = str(data[key])
            for key in ('delta_moment', 'tol'):
                if key in data:
                    optional[key] = float(data[key])
            if 'poisson_K' in data:
                optional['poisson_K'] = tuple(int(k) for k in data['poisson_K'])
            if 'target' in data:
                optional['target'] = TargetFunction.from_json(data['target'])
            if 'start' in data:
                optional['start'] = Direction.from_json(data['start'])
            if 'dual_start' in data:
                optional['dual_start'] = Direction.from_json(data['dual_start'])
        except KeyError as e:
            raise ConfigError(f"Experiment spec is missing field {e}")
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Experiment spec is malformed: {e}")
        return cls(law=law, theorem=theorem, cells=tuple(cells), **optional)


class TargetCollector(Collector):
    """Sums of a(X_n) b(y + S_n - z) 1{tau > n}"""

    def __init__(self, target: TargetFunction, y: float, z: float):
        self.target = target
        self.y = y
        self.z = z

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        values = self.target.a(outcome.final_direction) * self.target.b(self.y + outcome.final_log_norm - self.z)
        values = np.where(outcome.survived(self.y), values, 0.0)
        return {'count': outcome.size, 'sum': float(np.sum(values)), 'sum_sq': float(np.sum(values ** 2))}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        count = total['count']
        mean = total['sum'] / count
        var = max(total['sum_sq'] / count - mean ** 2, 0.0) * count / max(count - 1, 1)
        return {'count': count, 'mean': mean, 'stderr': float(np.sqrt(var / count))}


class DualityCollector(Collector):
    """Largest duality gap and norm-sandwich slack per block, with offending indices"""

    needs_matrices = True

    def __init__(self, x: Direction, xp: Direction, kappa: float, tolerance: float = 1e-9):
        self.x = x
        self.xp = xp
        self.kappa = kappa
        self.gamma = 2.0 * np.log(kappa) + np.log(x.dim)
        self.tolerance = tolerance

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        gaps = duality_gaps(outcome.matrices, self.x, self.xp)
        lower, upper = norm_sandwich_gaps(outcome.matrices, self.x, self.kappa)
        bad = (gaps > self.gamma + self.tolerance) | (lower < -self.tolerance) | (upper < -self.tolerance)
        return {'count': outcome.size, 'max_gap': [float(gaps.max())], 'min_lower': [float(lower.min())],
                'min_upper': [float(upper.min())],
                'offenders': (outcome.start_index + np.nonzero(bad)[0]).tolist()}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        return {'count': total['count'], 'max_gap': max(total['max_gap']), 'min_lower': min(total['min_lower']),
                'min_upper': min(total['min_upper']), 'offenders': total['offenders'], 'gamma': self.gamma}


@dataclass
class HarmonicTable:
    """V or V* estimates at sorted nodes, interpolated linearly in between"""

    nodes: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    plateau: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def __call__(self, level: float) -> float:
        return float(np.interp(level, self.nodes, self.values))

    def to_json(self) -> Dict[str, Any]:
        return {'nodes': self.nodes, 'values': self.values, 'stderr': self.stderr, 'plateau': self.plateau}


class ExperimentRunner:
    """Calibrates an ensemble once and runs verification experiments against it"""

    def __init__(self, spec: ExperimentSpec, n_jobs: Optional[int] = None):
        """
        Initialize the runner

        Args:
            spec: Experiment specification
            n_jobs: Worker count for batches; defaults to WALK_CONFIG['n_jobs']
        """
        self.spec = spec
        self.n_jobs = WALK_CONFIG['n_jobs'] if n_jobs is None else n_jobs
        self.stream = RandomStream(spec.seed)
        self.is_calibrated = False
        self.centered_law: Optional[MatrixLaw] = None
        self.lyapunov_hat: Optional[ConfidenceEstimate] = None
        self.sigma2_hat: Optional[ConfidenceEstimate] = None
        self.diagnostics: Optional[EnsembleDiagnostics] = None
        self.kappa = float('inf')
        self.v_table: Optional[HarmonicTable] = None
        self.v_star_table: Optional[HarmonicTable] = None
        self.nu: Optional[EmpiricalMeasure] = None

    @property
    def sigma_hat(self) -> float:
        return float(np.sqrt(self.sigma2_hat.value))

    def _seed(self, label: int) -> int:
        return self.stream.child(label).seed

    def _centering(self) -> ConfidenceEstimate:
        law, spec = self.spec.law, self.spec
        if spec.centering == 'none':
            return ConfidenceEstimate(value=0.0, stderr=0.0, n_samples=0, method='none')
        if spec.centering == 'transfer' and law.is_finite and law.dim == 2:
            return lyapunov_transfer(law)
        if spec.centering == 'transfer':
            logger.warning("Transfer-operator centering needs a finite d = 2 law; using Monte Carlo")
        return lyapunov(law, spec.lyapunov_n, spec.lyapunov_m, seed=self._seed(_LYAPUNOV), n_jobs=self.n_jobs,
                        target_stderr=ESTIMATOR_CONFIG['lyapunov_target_stderr'])

    def calibrate(self) -> 'ExperimentRunner':
        """
        Estimate lambda, center the law, estimate sigma^2 and the V / V* / nu inputs

        Returns:
            self, calibrated
        """
        spec = self.spec
        law = spec.law
        self.lyapunov_hat = self._centering()
        self.centered_law = center(law, self.lyapunov_hat.value)
        self.sigma2_hat = sigma2(self.centered_law, 0.0, spec.sigma_n, spec.sigma_m, seed=self._seed(_SIGMA),
                                 x=spec.x, n_jobs=self.n_jobs)
        if not self.sigma2_hat.value > 0:
            raise ConfigError("Estimated sigma^2 is zero: the centered walk is degenerate")
        logger.info(f"✓ Calibration: lambda={self.lyapunov_hat.value:.8g} ({self.lyapunov_hat.method}), "
                    f"sigma^2={self.sigma2_hat.value:.6g}±{self.sigma2_hat.stderr:.2g}")

        self.kappa, sampled = kappa_sup(law)
        a1 = verify_contraction(law, horizon=32)
        if a1 is A1Result.FAILED:
            logger.warning("Condition A1 failed up to horizon 32")
        variant = 'A1' if spec.delta_moment >= 1 else ('FK' if np.isfinite(self.kappa) else 'unsupported')
        self.diagnostics = EnsembleDiagnostics(
            lyapunov_hat=self.lyapunov_hat.value, lyapunov_stderr=self.lyapunov_hat.stderr,
            sigma2_hat=self.sigma2_hat.value, sigma2_stderr=self.sigma2_hat.stderr,
            kappa_sup=self.kappa, kappa_sampled=sampled,
            moment_2_delta=estimate_moment(law, spec.delta_moment),
            a1_horizon=a1.value if a1 is A1Result.FAILED else a1, delta=spec.delta_moment,
            theorem_variant=variant, non_arithmetic_asserted=law.non_arithmetic,
            residual_drift=residual_drift(law, self.lyapunov_hat.value, spec.lyapunov_n, spec.lyapunov_m,
                                          seed=self._seed(_DRIFT), n_jobs=self.n_jobs),
        )

        if spec.theorem in ('thm1', 'target', 'caravenna', 'slope', 'cclt'):
            levels = sorted({self.resolve(c)[0] for c in spec.cells})
            estimates = harmonic_V_table(self.centered_law, spec.x, levels, spec.n_V, spec.m_V,
                                         seed=self._seed(_V), n_jobs=self.n_jobs)
            self.v_table = self._table(levels, estimates)
        if spec.theorem == 'slope':
            levels = sorted({self.resolve(c)[1] + c.delta for c in spec.cells})
            estimates = harmonic_V_star_table(self.centered_law, spec.xp, levels, spec.n_V, spec.m_V,
                                              seed=self._seed(_V_STAR), n_jobs=self.n_jobs)
            self.v_star_table = self._table(levels, estimates)
        if spec.theorem == 'target':
            self.nu = invariant_measure(self.centered_law, samples=spec.nu_samples, seed=self._seed(_NU), x=spec.x)

        self.is_calibrated = True
        return self

    @staticmethod
    def _table(levels, estimates) -> HarmonicTable:
        missing = [e.y for e in estimates if not e.plateau_flag]
        if missing:
            logger.warning(f"V estimates without plateau at levels {missing}")
        return HarmonicTable(nodes=np.asarray(levels, dtype=float),
                             values=np.array([e.value for e in estimates]),
                             stderr=np.array([e.stderr for e in estimates]),
                             plateau=np.array([e.plateau_flag for e in estimates]))

    def _require_calibrated(self) -> None:
        if not self.is_calibrated:
            raise NotCalibrated("Runner must be calibrated before verification")

    def resolve(self, cell: WindowCell) -> Tuple[float, float]:
        return cell.resolve(self.sigma_hat)

    def inputs(self, cell: WindowCell) -> TheoremInputs:
        y, z = self.resolve(cell)
        v_hat = self.v_table(y) if self.v_table is not None else 0.0
        v_star = self.v_star_table(z + cell.delta) if self.v_star_table is not None else None
        return TheoremInputs(y=y, z=z, delta_window=cell.delta, n=cell.n, sigma_hat=self.sigma_hat,
                             V_hat=v_hat, V_star_hat=v_star)

    def _by_n(self) -> Dict[int, List[WindowCell]]:
        grouped: Dict[int, List[WindowCell]] = {}
        for cell in self.spec.cells:
            grouped.setdefault(cell.n, []).append(cell)
        return dict(sorted(grouped.items()))

    def _plan(self, n: int, **kwargs) -> SimulationPlan:
        return SimulationPlan(law=self.centered_law, start=self.spec.x, n=n, num_traj=self.spec.num_traj,
                              seed=self._seed(_CELLS + n), **kwargs)

    def window_probabilities(self, n: int, cells: Sequence[WindowCell]) -> Dict[str, Any]:
        """Monte Carlo P(y + S_n in [z, z + delta], tau > n) for cells sharing n"""
        self._require_calibrated()
        triples = [(*self.resolve(c), c.delta) for c in cells]
        return batch(self._plan(n), WindowCollector(triples), n_jobs=self.n_jobs)

    def _report(self, theorem: str) -> VerificationReport:
        v_tables = {}
        if self.v_table is not None:
            v_tables['V'] = self.v_table.to_json()
        if self.v_star_table is not None:
            v_tables['V_star'] = self.v_star_table.to_json()
        report = VerificationReport(theorem=theorem)
        report.globals = {
            'lambda_hat': self.lyapunov_hat.value, 'lambda_method': self.lyapunov_hat.method,
            'sigma2_hat': self.sigma2_hat.value, 'sigma2_stderr': self.sigma2_hat.stderr,
            'sigma_hat': self.sigma_hat, 'kappa': self.kappa, 'diagnostics': self.diagnostics.to_json(),
        }
        report.provenance = build_provenance(self.spec.law.to_json(), self.lyapunov_hat.value,
                                             self.sigma2_hat.value, v_tables, {'seed': self.spec.seed})
        if self.v_table is not None:
            missing = [float(y) for y, ok in zip(self.v_table.nodes, self.v_table.plateau) if not ok]
            report.checks['v_plateau'] = not missing
            if missing:
                report.extras['plateau_missing'] = missing
        return report

    def _window_report(self, theorem: str, theory, sandwich: bool = False) -> VerificationReport:
        report = self._report(theorem)
        rows = []
        for n, cells in self._by_n().items():
            hats = [self._sandwich_hats(cell) for cell in cells] if sandwich else []
            collectors = {'window': WindowCollector([(*self.resolve(c), c.delta) for c in cells])}
            for i, (cell, (inner, outer)) in enumerate(zip(cells, hats)):
                collectors[f'inner_{i}'] = TargetCollector(inner, *self.resolve(cell))
                collectors[f'outer_{i}'] = TargetCollector(outer, *self.resolve(cell))
            result = batch(self._plan(n), CompositeCollector(**collectors), n_jobs=self.n_jobs)
            window = result['window']
            for i, (cell, p, se) in enumerate(zip(cells, window['prob'], window['stderr'])):
                inp = self.inputs(cell)
                judged = judge_cell(n, inp.y, inp.z, cell.delta, float(p), float(se), theory(inp), self.spec.tol)
                report.cells.append(judged)
                logger.info(f"{'✓' if judged.passed else '✗'} n={n} y={inp.y:.4g} z={inp.z:.4g} "
                            f"delta={cell.delta:g}: mc={float(p):.4g} theory={judged.theory:.4g}")
                if sandwich:
                    inner, outer = hats[i]
                    rows.append(self._sandwich_row(cell, float(p), main_term_thm1(inp), result[f'inner_{i}'],
                                                   result[f'outer_{i}'], inner, outer))
        if sandwich:
            report.checks['sandwich'] = all(row['mc_ok'] and row['theory_ok'] for row in rows)
            report.extras['sandwich'] = rows
        return report

    def _sandwich_hats(self, cell: WindowCell) -> Tuple[TargetFunction, TargetFunction]:
        return window_sandwich((1.0, 1.0), cell.delta, HARNESS_CONFIG['sandwich_epsilon'] * cell.delta)

    def _sandwich_row(self, cell: WindowCell, mc_prob: float, theory: float, inner_mc: Dict[str, Any],
                      outer_mc: Dict[str, Any], inner: TargetFunction, outer: TargetFunction) -> Dict[str, Any]:
        """
        Indicator window against its inner and outer hats with a = 1

        The hats run over the same trajectories as the window, so inner <= indicator <= outer
        holds path by path and the Monte Carlo means are ordered up to round-off.
        """
        inner_theory = self.target_theory(cell, inner, a_mean=1.0)
        outer_theory = self.target_theory(cell, outer, a_mean=1.0)
        slack = 1e-9 * outer_theory + 1e-15
        return {
            'n': cell.n, 'delta': cell.delta, 'mc_prob': mc_prob,
            'inner_mc': inner_mc['mean'], 'outer_mc': outer_mc['mean'],
            'theory': theory, 'inner_theory': inner_theory, 'outer_theory': outer_theory,
            'mc_ok': bool(inner_mc['mean'] - 1e-12 <= mc_prob <= outer_mc['mean'] + 1e-12),
            'theory_ok': bool(inner_theory - slack <= theory <= outer_theory + slack),
        }

    def verify_local_theorem(self) -> VerificationReport:
        """
        Window probabilities against the leading term of the local limit theorem

        Each window is also bracketed by its inner and outer hat targets, run over the
        same trajectories; the outcome is the 'sandwich' check.
        """
        self._require_calibrated()
        return self._window_report('thm1', main_term_thm1, sandwich=True)

    def verify_caravenna(self) -> VerificationReport:
        """Window probabilities against the y -> 0 reduction, for cells with y <= n^(1/4)"""
        self._require_calibrated()
        for cell in self.spec.cells:
            y, _ = self.resolve(cell)
            if y > cell.n ** 0.25:
                raise ConfigError(f"Cell y={y:g} exceeds n^(1/4)={cell.n ** 0.25:.4g}")
        return self._window_report('caravenna', caravenna_term)

    def verify_large_y(self) -> VerificationReport:
        """Window probabilities against the psi form, for y in [sigma sqrt(n), 3 sigma sqrt(n)]"""
        self._require_calibrated()
        for cell in self.spec.cells:
            y, _ = self.resolve(cell)
            scale = self.sigma_hat * np.sqrt(cell.n)
            if not scale * (1 - 1e-12) <= y <= 3 * scale * (1 + 1e-12):
                raise ConfigError(f"Cell y={y:g} lies outside [{scale:.4g}, {3 * scale:.4g}]")
        return self._window_report('large_y', large_y_term)

    def target_theory(self, cell: WindowCell, target: TargetFunction, a_mean: Optional[float] = None) -> float:
        """
        (V_n / (sigma^2 n)) nu(a) integral of b(z' - z) ell(u, z' / (sigma sqrt(n))) over z' >= 0

        a_mean replaces nu(a) when it is known, as for a constant a.
        """
        inp = self.inputs(cell)
        ts, _ = target.knots
        s = inp.scale
        pieces = np.clip(inp.z + ts, 0.0, None)
        integral = sum(quad(lambda w: float(target.b(w - inp.z)) * ell(inp.u, w / s), lo, hi)
                       for lo, hi in zip(pieces[:-1], pieces[1:]) if hi > lo)
        v_n = harmonic_scaled(inp.V_hat, inp.y, s)
        if a_mean is None:
            a_mean = self.nu.mean(target.a)
        return v_n / (inp.sigma_hat ** 2 * inp.n) * a_mean * integral

    def verify_target(self, target: Optional[TargetFunction] = None) -> VerificationReport:
        """E[a(X_n) b(y + S_n - z); tau > n] against its limit with nu and ell"""
        self._require_calibrated()
        target = target if target is not None else self.spec.target
        if self.spec.law.dim != 2:
            raise ConfigError("Target functions are grid-based and need d = 2")
        report = self._report('target')
        report.extras['lipschitz_a'] = target.lipschitz_a()
        for n, cells in self._by_n().items():
            collectors = {str(i): TargetCollector(target, *self.resolve(c)) for i, c in enumerate(cells)}
            result = batch(self._plan(n), CompositeCollector(**collectors), n_jobs=self.n_jobs)
            for i, cell in enumerate(cells):
                y, z = self.resolve(cell)
                judged = judge_cell(n, y, z, target.support_width, result[str(i)]['mean'],
                                    result[str(i)]['stderr'], self.target_theory(cell, target), self.spec.tol)
                report.cells.append(judged)
        return report

    def verify_cclt(self, regime: Optional[str] = None) -> VerificationReport:
        """
        Conditional law of (y + S_n) / (sigma sqrt(n)) given survival

        The Kolmogorov-Smirnov distance to the regime's limit law is checked
        against ks_tol, and the survival frequency is compared, as a cell, with
        the unified right-hand side at t = infinity.
        """
        self._require_calibrated()
        regime = regime if regime is not None else self.spec.regime
        report = self._report(f'cclt_{regime}')
        report.extras['ks'] = []
        for n, cells in self._by_n().items():
            for cell in cells:
                y, _ = self.resolve(cell)
                inp = self.inputs(cell)
                collector = CompositeCollector(values=ConditionalCollector(y, inp.scale),
                                               survival=SurvivalCollector([y]))
                result = batch(self._plan(n), collector, n_jobs=self.n_jobs)
                values = result['values']['values']
                if values.size < HARNESS_CONFIG['min_survivors']:
                    raise InsufficientSurvivors(
                        f"Only {values.size} survivors at n={n}, y={y:g}; need {HARNESS_CONFIG['min_survivors']}")
                if regime == 'small_y':
                    cdf = rayleigh_cdf
                else:
                    u = inp.u
                    cdf = lambda t, u=u: psi_integral(u, 0.0, np.maximum(t, 0.0)) / H(u)
                ks = stats.kstest(values, cdf)
                label = f'ks_n={n}_y={y:g}'
                report.checks[label] = bool(ks.statistic <= HARNESS_CONFIG['ks_tol'])
                report.extras['ks'].append({'n': n, 'y': y, 'statistic': float(ks.statistic),
                                            'survivors': int(values.size)})
                survival = result['survival']
                report.cells.append(judge_cell(n, y, float('inf'), 0.0, float(survival['prob'][0]),
                                               float(survival['stderr'][0]),
                                               cclt_rhs(inp, float('inf'), 'unified'), self.spec.tol))
                logger.info(f"{'✓' if report.checks[label] else '✗'} KS distance {ks.statistic:.4f} at n={n}, y={y:g}")
        return report

    def verify_upper_bound_slope(self) -> VerificationReport:
        """
        Decay of the normalised window probability along the n ladder

        Q(n) = sup_z mc / [delta (1 + V_n)(1 + V*_n)] must decay with slope <= slope_max
        in log-log scale, and Q(n) n^{3/2} must stay within bounded_ratio.
        """
        self._require_calibrated()
        if not np.isfinite(self.kappa):
            raise ConfigError("The n^{-3/2} bound experiment needs an ensemble with finite kappa")
        report = self._report('slope')
        ns, qs, dropped = [], [], []
        for n, cells in self._by_n().items():
            result = self.window_probabilities(n, cells)
            q, q_drop = 0.0, 0.0
            for cell, p, se in zip(cells, result['prob'], result['stderr']):
                inp = self.inputs(cell)
                shape = bound_shape(cell.delta, 1, harmonic_scaled(inp.V_hat, inp.y, inp.scale),
                                    harmonic_scaled(inp.V_star_hat, inp.z + cell.delta, inp.scale))
                shape_drop = cell.delta * (1.0 + harmonic_scaled(inp.V_hat, inp.y, inp.scale))
                q, q_drop = max(q, p / shape), max(q_drop, p / shape_drop)
                theory = shape * n ** -1.5
                report.cells.append(CellResult(n, inp.y, inp.z, cell.delta, float(p), float(se), theory,
                                               float(p) / theory, True))
            ns.append(n)
            qs.append(q)
            dropped.append(q_drop)
        if min(qs) <= 0:
            raise InsufficientSamples("A rung of the ladder has no window hits; increase num_traj")
        slope, intercept = fit_decay_slope(ns, qs)
        scaled = np.asarray(qs) * np.asarray(ns, dtype=float) ** 1.5
        scaled_drop = np.asarray(dropped) * np.asarray(ns, dtype=float) ** 1.5
        report.checks['slope'] = slope <= HARNESS_CONFIG['slope_max']
        report.checks['bounded'] = bool(scaled.max() / scaled.min() <= HARNESS_CONFIG['bounded_ratio'])
        report.extras.update({'ladder': ns, 'Q': qs, 'slope': slope, 'intercept': intercept,
                              'Q_n32': scaled, 'Q_n32_without_dual_factor': scaled_drop})
        logger.info(f"{'✓' if report.checks['slope'] else '✗'} decay slope {slope:.3f}")
        return report

    def verify_duality_and_norms(self) -> VerificationReport:
        """
        Pathwise duality gap and norm sandwich on retained trajectories

        For finite d = 2 laws the Poisson residual must be nonincreasing in K and
        sup |S_k - M_k| must respect 2 sup |psi|.
        """
        self._require_calibrated()
        spec = self.spec
        if not np.isfinite(self.kappa):
            raise ConfigError("The duality experiment needs an ensemble with finite kappa")
        report = self._report('duality')
        plan = SimulationPlan(law=self.centered_law, start=spec.x, n=spec.duality_n, num_traj=spec.duality_traj,
                              seed=self._seed(_DUALITY), retain_matrices=True, dual_start=spec.xp, block_size=1024)
        result = batch(plan, DualityCollector(spec.x, spec.xp, self.kappa), n_jobs=self.n_jobs)
        report.checks['duality_bound'] = result['max_gap'] <= result['gamma'] + 1e-9
        report.checks['norm_sandwich'] = result['min_lower'] >= -1e-9 and result['min_upper'] >= -1e-9
        report.extras.update({
            'max_gap': result['max_gap'], 'gamma': result['gamma'], 'min_lower_slack': result['min_lower'],
            'min_upper_slack': result['min_upper'],
            'offenders': [{'seed': plan.seed, 'index': i} for i in result['offenders']],
        })
        if result['offenders']:
            logger.error(f"{len(result['offenders'])} trajectories violate the duality or norm bounds")
        else:
            logger.info(f"✓ Duality gap max {result['max_gap']:.4f} <= {result['gamma']:.4f}")

        law = self.centered_law
        if law.is_finite and law.dim == 2 and spec.poisson_K:
            solutions = [poisson_solve(law, K, tol=ESTIMATOR_CONFIG['poisson_tol']) for K in sorted(spec.poisson_K)]
            residuals = [s.residual for s in solutions]
            report.checks['poisson_residual_decreasing'] = bool(np.all(np.diff(residuals) <= 1e-12))
            gap = martingale_gap(law, solutions[-1], spec.x, min(spec.duality_n, 1000),
                                 min(spec.duality_traj, 10_000), seed=self._seed(_MARTINGALE))
            report.checks['martingale_gap'] = gap.sup_gap <= gap.bound + 1e-9
            report.extras.update({'poisson_K': sorted(spec.poisson_K), 'poisson_residuals': residuals,
                                  'martingale_sup_gap': gap.sup_gap, 'martingale_bound': gap.bound})
        return report

    def run(self) -> VerificationReport:
        """Dispatch on the experiment spec's theorem selector"""
        self._require_calibrated()
        dispatch = {
            'thm1': self.verify_local_theorem,
            'target': self.verify_target,
            'caravenna': self.verify_caravenna,
            'large_y': self.verify_large_y,
            'cclt': self.verify_cclt,
            'slope': self.verify_upper_bound_slope,
            'duality': self.verify_duality_and_norms,
        }
        return dispatch[self.spec.theorem]()


def _runner(spec: ExperimentSpec, runner: Optional[ExperimentRunner], n_jobs: Optional[int]) -> ExperimentRunner:
    return runner if runner is not None else ExperimentRunner(spec, n_jobs).calibrate()


def verify_local_theorem(spec: ExperimentSpec, runner: Optional[ExperimentRunner] = None,
                         n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_local_theorem()


def verify_target(spec: ExperimentSpec, target: Optional[TargetFunction] = None,
                  runner: Optional[ExperimentRunner] = None, n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_target(target)


def verify_caravenna(spec: ExperimentSpec, runner: Optional[ExperimentRunner] = None,
                     n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_caravenna()


def verify_large_y(spec: ExperimentSpec, runner: Optional[ExperimentRunner] = None,
                   n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_large_y()


def verify_cclt(spec: ExperimentSpec, regime: Optional[str] = None, runner: Optional[ExperimentRunner] = None,
                n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_cclt(regime)


def verify_upper_bound_slope(spec: ExperimentSpec, runner: Optional[ExperimentRunner] = None,
                             n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_upper_bound_slope()


def verify_duality_and_norms(spec: ExperimentSpec, runner: Optional[ExperimentRunner] = None,
                             n_jobs: Optional[int] = None) -> VerificationReport:
    return _runner(spec, runner, n_jobs).verify_duality_and_norms()
