"""Simulation of the Markov walk (X_n, S_n), exit times, the dual walk and the duality gap.

Trajectories are simulated in blocks: every step draws one matrix per trajectory
of the block, applies it to the current direction and accumulates the log-norm
increment, so raw products are never formed. Block b is driven by the Philox
generator keyed by (seed, b) and the row layout inside a block is fixed, so the
outcome of trajectory i depends only on (seed, i, block size). Collectors reduce
block partials strictly in block order, which makes batch aggregates
bit-identical for any worker count.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import WALK_CONFIG
from src.cone_geometry import Direction, act_batch, log_matrix_norms
from src.ensembles import MatrixLaw
from src.exceptions import ConfigError, MissingMatrices
from src.streams import RandomStream

logger = logging.getLogger(__name__)


class ExitStatus(Enum):
    SURVIVED = 'survived'


SURVIVED = ExitStatus.SURVIVED

_NO_EXIT = -1


@dataclass
class TrajectoryOutcome:
    """Per-path record of one trajectory"""

    final_direction: Direction
    final_log_norm: float
    prefix_min: float
    n: int
    threshold: Optional[float] = None
    exit_step: Optional[Union[int, ExitStatus]] = None
    log_norm_path: Optional[np.ndarray] = None


@dataclass
class DrawRecord:
    """Identifies one trajectory's matrices; optionally carries them"""

    seed: int
    index: int
    matrices: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimulationPlan:
    """Everything needed to reproduce a batch of trajectories"""

    law: MatrixLaw
    start: Direction
    n: int
    num_traj: int
    seed: int
    retain_matrices: bool = False
    dual_start: Optional[Direction] = None
    thresholds: Tuple[float, ...] = ()
    block_size: int = WALK_CONFIG['block_size']
    sign: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.num_traj < 1:
            raise ConfigError(f"num_traj must be >= 1, got {self.num_traj}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.start.dim != self.law.dim:
            raise ConfigError(f"start has dim {self.start.dim}, law has dim {self.law.dim}")

    def blocks(self) -> List[Tuple[int, int, int]]:
        """(block index, first trajectory index, block length) in trajectory order"""
        layout = []
        for b, start in enumerate(range(0, self.num_traj, self.block_size)):
            layout.append((b, start, min(self.block_size, self.num_traj - start)))
        return layout

    def to_json(self) -> Dict[str, Any]:
        return {
            'law': self.law.to_json(),
            'start': self.start.to_json(),
            'n': self.n,
            'num_traj': self.num_traj,
            'seed': self.seed,
            'retain_matrices': self.retain_matrices,
            'dual_start': self.dual_start.to_json() if self.dual_start is not None else None,
            'thresholds': list(self.thresholds),
            'block_size': self.block_size,
            'sign': self.sign,
        }


@dataclass
class BlockOutcome:
    """Arrays for one simulated block; row r is trajectory start_index + r"""

    start_index: int
    n: int
    final_direction: np.ndarray
    final_log_norm: np.ndarray
    prefix_min: np.ndarray
    checkpoints: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    exit_steps: Dict[float, np.ndarray] = field(default_factory=dict)
    log_norm_path: Optional[np.ndarray] = None
    direction_path: Optional[np.ndarray] = None
    matrices: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.final_log_norm.shape[0]

    def survived(self, y: float) -> np.ndarray:
        """tau_{x,y} > n for every row, read off the running minimum"""
        return y + self.prefix_min >= 0

    def outcome(self, row: int) -> TrajectoryOutcome:
        path = self.log_norm_path[row].copy() if self.log_norm_path is not None else None
        return TrajectoryOutcome(
            final_direction=Direction(self.final_direction[row] / self.final_direction[row].sum()),
            final_log_norm=float(self.final_log_norm[row]),
            prefix_min=float(self.prefix_min[row]),
            n=self.n,
            log_norm_path=path,
        )


def _start_array(x, size: int, dim: int) -> np.ndarray:
    coords = x.coords if isinstance(x, Direction) else np.asarray(x, dtype=float)
    if coords.ndim == 1:
        coords = np.broadcast_to(coords, (size, dim))
    return np.array(coords, dtype=float)


def simulate_block(law: MatrixLaw, x, n: int, size: int, rng: np.random.Generator, *,
                   sign: float = 1.0, checkpoints: Sequence[int] = (), thresholds: Sequence[float] = (),
                   keep_path: bool = False, keep_directions: bool = False, retain_matrices: bool = False,
                   start_index: int = 0) -> BlockOutcome:
    """
    Simulate `size` trajectories of length n side by side

    Args:
        law: Matrix law driving the walk
        x: Start direction (shared) or array of shape (size, d)
        n: Number of steps
        size: Number of trajectories
        rng: Generator for the whole block
        sign: +1 for S_n, -1 for walks accumulating -log|.|
        checkpoints: Steps k < n at which (S_k, prefix minimum, X_k) are recorded
        thresholds: Levels y whose exit steps are tracked while simulating
        keep_path: Keep S_1..S_n for every row
        keep_directions: Keep X_0..X_n for every row
        retain_matrices: Keep the drawn matrices, shape (size, n, d, d)
        start_index: Global index of row 0

    Returns:
        BlockOutcome with the final state of every row
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dim = law.dim
    directions = _start_array(x, size, dim)
    log_norm = np.zeros(size)
    running_min = np.full(size, np.inf)
    wanted = set(int(k) for k in checkpoints if 1 <= int(k) <= n)
    recorded: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    exits = {float(y): np.full(size, _NO_EXIT, dtype=np.int64) for y in thresholds}
    path = np.empty((size, n)) if keep_path else None
    direction_path = np.empty((size, n + 1, dim)) if keep_directions else None
    drawn = np.empty((size, n, dim, dim)) if retain_matrices else None
    if direction_path is not None:
        direction_path[:, 0] = directions

    for k in range(1, n + 1):
        matrices = law.sample_batch(rng, size)
        directions, increments = act_batch(matrices, directions)
        log_norm += sign * increments
        np.minimum(running_min, log_norm, out=running_min)
        for y, steps in exits.items():
            steps[(steps == _NO_EXIT) & (y + log_norm < 0)] = k
        if path is not None:
            path[:, k - 1] = log_norm
        if direction_path is not None:
            direction_path[:, k] = directions
        if drawn is not None:
            drawn[:, k - 1] = matrices
        if k in wanted:
            recorded[k] = (log_norm.copy(), running_min.copy(), directions.copy())

    return BlockOutcome(start_index=start_index, n=n, final_direction=directions, final_log_norm=log_norm,
                        prefix_min=running_min, checkpoints=recorded, exit_steps=exits,
                        log_norm_path=path, direction_path=direction_path, matrices=drawn)


def run_forward(law: MatrixLaw, x: Direction, n: int, stream: np.random.Generator,
                y: Optional[float] = None, keep_path: bool = False) -> TrajectoryOutcome:
    """
    Run one trajectory of the walk

    Args:
        law: Matrix law
        x: Start direction
        n: Number of steps
        stream: Generator supplying the matrices
        y: Optional level whose exit time is evaluated on the fly
        keep_path: Keep S_1..S_n on the outcome

    Returns:
        TrajectoryOutcome with X_n, S_n and min_{1<=j<=n} S_j
    """
    thresholds = (y,) if y is not None else ()
    block = simulate_block(law, x, n, 1, stream, thresholds=thresholds, keep_path=keep_path)
    outcome = block.outcome(0)
    if y is not None:
        step = int(block.exit_steps[float(y)][0])
        outcome.threshold = float(y)
        outcome.exit_step = SURVIVED if step == _NO_EXIT else step
    return outcome


def exit_time(source: Union[TrajectoryOutcome, Sequence[float], np.ndarray], y: float) -> Union[int, ExitStatus]:
    """
    tau_{x,y} = first k >= 1 with y + S_k < 0, or SURVIVED

    Args:
        source: A TrajectoryOutcome, or the path S_1..S_n
        y: Finite starting level

    Returns:
        The exit step, or SURVIVED when y + min_j S_j >= 0
    """
    if not np.isfinite(y):
        raise ValueError(f"y must be finite, got {y}")
    if isinstance(source, TrajectoryOutcome):
        if y + source.prefix_min >= 0:
            return SURVIVED
        if source.threshold is not None and source.threshold == y and source.exit_step is not None:
            return source.exit_step
        if source.log_norm_path is None:
            raise MissingMatrices("Exit step needs the retained path or a threshold evaluated during the run")
        path = source.log_norm_path
    else:
        path = np.asarray(source, dtype=float)
    below = np.nonzero(y + path < 0)[0]
    return SURVIVED if below.size == 0 else int(below[0]) + 1


def _require_matrices(draw: DrawRecord, n: Optional[int]) -> np.ndarray:
    if draw.matrices is None:
        raise MissingMatrices(f"Draw (seed={draw.seed}, index={draw.index}) did not retain its matrices")
    matrices = np.asarray(draw.matrices)
    if n is not None and matrices.shape[0] < n:
        raise MissingMatrices(f"Draw retained {matrices.shape[0]} matrices, {n} requested")
    return matrices if n is None else matrices[:n]


def forward_log_norms(matrices: np.ndarray, x) -> np.ndarray:
    """
    S_0..S_n for stacks of retained matrices

    Args:
        matrices: Array of shape (m, n, d, d), g_1..g_n per row
        x: Start direction or array of shape (m, d)

    Returns:
        Array of shape (m, n + 1) with S_0 = 0
    """
    m, n, dim = matrices.shape[0], matrices.shape[1], matrices.shape[2]
    directions = _start_array(x, m, dim)
    out = np.zeros((m, n + 1))
    for k in range(n):
        directions, increments = act_batch(matrices[:, k], directions)
        out[:, k + 1] = out[:, k] + increments
    return out


def dual_log_norms(matrices: np.ndarray, xp) -> np.ndarray:
    """
    S*_0..S*_n with h_i = g_{n-i+1}^T and S*_k = -log|h_k ... h_1 x'|

    Args:
        matrices: Array of shape (m, n, d, d), g_1..g_n per row
        xp: Dual start direction or array of shape (m, d)

    Returns:
        Array of shape (m, n + 1) with S*_0 = 0
    """
    reversed_transposed = np.swapaxes(matrices[:, ::-1], -1, -2)
    return -forward_log_norms(reversed_transposed, xp)


def run_dual(draw: DrawRecord, xp: Direction, n: Optional[int] = None) -> np.ndarray:
    """S*_1..S*_n of the dual walk driven by the draw's matrices"""
    matrices = _require_matrices(draw, n)
    return dual_log_norms(matrices[None], xp)[0, 1:]


def duality_gaps(matrices: np.ndarray, x, xp) -> np.ndarray:
    """max_{0<=k<=n} |(-S_n + S_k) - S*_{n-k}| for every row of a matrix stack"""
    forward = forward_log_norms(matrices, x)
    dual = dual_log_norms(matrices, xp)
    reversed_forward = forward[:, -1:] - forward
    # reversed_forward[:, k] = S_n - S_k is compared against -S*_{n-k}
    return np.abs(-reversed_forward - dual[:, ::-1]).max(axis=1)


def duality_gap(draw: DrawRecord, x: Direction, xp: Direction, n: Optional[int] = None) -> float:
    matrices = _require_matrices(draw, n)
    return float(duality_gaps(matrices[None], x, xp)[0])


def norm_sandwich_gaps(matrices: np.ndarray, x, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Slack in log||g_n...g_{k+1}|| - 2 log kappa <= S_n - S_k <= log||g_n...g_{k+1}||

    Args:
        matrices: Array of shape (m, n, d, d)
        x: Start direction or array of shape (m, d)
        kappa: FK constant of the law

    Returns:
        Tuple (lower_slack, upper_slack), each the minimum over k per row;
        both are >= 0 when the sandwich holds
    """
    forward = forward_log_norms(matrices, x)
    m, n, dim = matrices.shape[0], matrices.shape[1], matrices.shape[2]
    product = np.broadcast_to(np.eye(dim), (m, dim, dim)).copy()
    log_scale = np.zeros(m)
    lower = np.full(m, np.inf)
    upper = np.full(m, np.inf)
    slack_kappa = 2.0 * np.log(kappa)
    for k in range(n - 1, -1, -1):
        product = product @ matrices[:, k]
        norms = np.exp(log_matrix_norms(product))
        product /= norms[:, None, None]
        log_scale += np.log(norms)
        increment = forward[:, n] - forward[:, k]
        np.minimum(lower, increment - (log_scale - slack_kappa), out=lower)
        np.minimum(upper, log_scale - increment, out=upper)
    return lower, upper


def _block_outcome(plan: SimulationPlan, block: int, start: int, size: int, collector: 'Collector') -> BlockOutcome:
    rng = RandomStream(plan.seed).generator(block)
    return simulate_block(
        plan.law, plan.start, plan.n, size, rng,
        sign=plan.sign,
        checkpoints=collector.checkpoints,
        thresholds=tuple(plan.thresholds),
        keep_path=collector.needs_path,
        keep_directions=collector.needs_directions,
        retain_matrices=plan.retain_matrices or collector.needs_matrices,
        start_index=start,
    )


def replay_draw(plan: SimulationPlan, index: int) -> DrawRecord:
    """Regenerate the matrices of trajectory `index` of a plan"""
    if not 0 <= index < plan.num_traj:
        raise ValueError(f"index {index} outside 0..{plan.num_traj - 1}")
    block, row = divmod(index, plan.block_size)
    start = block * plan.block_size
    size = min(plan.block_size, plan.num_traj - start)
    rng = RandomStream(plan.seed).generator(block)
    outcome = simulate_block(plan.law, plan.start, plan.n, size, rng, sign=plan.sign, retain_matrices=True,
                             start_index=start)
    return DrawRecord(seed=plan.seed, index=index, matrices=outcome.matrices[row].copy())


class Collector:
    """Turns block outcomes into partial aggregates and reduces them in block order"""

    checkpoints: Tuple[int, ...] = ()
    needs_path = False
    needs_directions = False
    needs_matrices = False

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        raise NotImplementedError

    def reduce(self, parts: List[Dict[str, Any]]) -> Dict[str, Any]:
        """Sum partials in order; arrays add elementwise"""
        total: Dict[str, Any] = {}
        for part in parts:
            for key, value in part.items():
                total[key] = value if key not in total else total[key] + value
        return self.finalize(total)

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        return total


def _mean_stderr(total: float, total_sq: float, count: int) -> Tuple[float, float]:
    mean = total / count
    if count < 2:
        return mean, 0.0
    variance = max(total_sq / count - mean * mean, 0.0) * count / (count - 1)
    return mean, float(np.sqrt(variance / count))


class MomentCollector(Collector):
    """First and second moments of S_n and of (S_n - n*drift)^2 / n"""

    def __init__(self, n: int, drift: float = 0.0):
        self.n = n
        self.drift = drift

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        s = outcome.final_log_norm
        centered = (s - self.n * self.drift) ** 2 / self.n
        return {
            'count': outcome.size,
            'sum': float(np.sum(s)),
            'sum_sq': float(np.sum(s * s)),
            'sum_var': float(np.sum(centered)),
            'sum_var_sq': float(np.sum(centered * centered)),
        }

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        count = total['count']
        mean, stderr = _mean_stderr(total['sum'], total['sum_sq'], count)
        var_n, var_stderr = _mean_stderr(total['sum_var'], total['sum_var_sq'], count)
        return {'count': count, 'mean': mean, 'mean_stderr': stderr, 'var_over_n': var_n,
                'var_over_n_stderr': var_stderr}


class SurvivalCollector(Collector):
    """Counts of tau_{x,y} > n for several levels y at once"""

    def __init__(self, ys: Sequence[float]):
        self.ys = np.asarray(ys, dtype=float)

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        alive = self.ys[:, None] + outcome.prefix_min[None, :] >= 0
        return {'count': outcome.size, 'survived': alive.sum(axis=1)}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        count = total['count']
        p = total['survived'] / count
        return {'count': count, 'ys': self.ys.tolist(), 'survived': total['survived'],
                'prob': p, 'stderr': np.sqrt(p * (1 - p) / count)}


class WindowCollector(Collector):
    """Counts of {y + S_n in [z, z + delta], tau_{x,y} > n} for (y, z, delta) cells"""

    def __init__(self, cells: Sequence[Tuple[float, float, float]]):
        self.cells = np.asarray(cells, dtype=float).reshape(-1, 3)

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        y, z, delta = self.cells[:, 0:1], self.cells[:, 1:2], self.cells[:, 2:3]
        level = y + outcome.final_log_norm[None, :]
        hit = (level >= z) & (level <= z + delta) & (y + outcome.prefix_min[None, :] >= 0)
        return {'count': outcome.size, 'hits': hit.sum(axis=1)}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        count = total['count']
        p = total['hits'] / count
        return {'count': count, 'hits': total['hits'], 'prob': p, 'stderr': np.sqrt(p * (1 - p) / count)}


class HarmonicCollector(Collector):
    """Sums of (y + S_k) 1{tau > k} at the final step and at one checkpoint"""

    def __init__(self, ys: Sequence[float], n: int):
        self.ys = np.asarray(ys, dtype=float)
        self.half = max(n // 2, 1)
        self.checkpoints = (self.half,) if self.half < n else ()

    def _terms(self, log_norm: np.ndarray, running_min: np.ndarray) -> np.ndarray:
        level = self.ys[:, None] + log_norm[None, :]
        return np.where(self.ys[:, None] + running_min[None, :] >= 0, level, 0.0)

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        final = self._terms(outcome.final_log_norm, outcome.prefix_min)
        if self.half in outcome.checkpoints:
            s_half, min_half, _ = outcome.checkpoints[self.half]
            half = self._terms(s_half, min_half)
        else:
            half = final
        return {
            'count': outcome.size,
            'sum': final.sum(axis=1), 'sum_sq': (final ** 2).sum(axis=1),
            'half_sum': half.sum(axis=1), 'half_sum_sq': (half ** 2).sum(axis=1),
            'cross': (final * half).sum(axis=1),
        }

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        count = total['count']
        mean = total['sum'] / count
        half_mean = total['half_sum'] / count
        denom = max(count - 1, 1)
        var = np.maximum(total['sum_sq'] / count - mean ** 2, 0.0) * count / denom
        half_var = np.maximum(total['half_sum_sq'] / count - half_mean ** 2, 0.0) * count / denom
        cov = (total['cross'] / count - mean * half_mean) * count / denom
        diff_var = np.maximum(var + half_var - 2 * cov, 0.0)
        return {'count': count, 'ys': self.ys.tolist(), 'mean': mean, 'stderr': np.sqrt(var / count),
                'half_mean': half_mean, 'half_stderr': np.sqrt(half_var / count),
                'diff_stderr': np.sqrt(diff_var / count)}


class ConditionalCollector(Collector):
    """Values (y + S_n) / scale of the surviving trajectories, in index order"""

    def __init__(self, y: float, scale: float):
        self.y = y
        self.scale = scale

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        alive = outcome.survived(self.y)
        return {'count': outcome.size, 'values': [(self.y + outcome.final_log_norm[alive]) / self.scale]}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        values = np.concatenate(total['values']) if total['values'] else np.empty(0)
        return {'count': total['count'], 'values': values}


class TrajectoryTableCollector(Collector):
    """Per-trajectory rows: index, S_n, prefix_min and survival for each threshold"""

    def __init__(self, thresholds: Sequence[float] = ()):
        self.thresholds = tuple(float(y) for y in thresholds)

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        frame = pd.DataFrame({
            'index': np.arange(outcome.start_index, outcome.start_index + outcome.size),
            'S_n': outcome.final_log_norm,
            'prefix_min': outcome.prefix_min,
        })
        for y in self.thresholds:
            frame[f'survived_y={y:g}'] = outcome.survived(y)
        return {'frames': [frame]}

    def finalize(self, total: Dict[str, Any]) -> Dict[str, Any]:
        return {'table': pd.concat(total['frames'], ignore_index=True)}


class CompositeCollector(Collector):
    """Runs several collectors over the same trajectories"""

    def __init__(self, **collectors: Collector):
        self.collectors = collectors
        self.checkpoints = tuple(sorted({k for c in collectors.values() for k in c.checkpoints}))
        self.needs_path = any(c.needs_path for c in collectors.values())
        self.needs_directions = any(c.needs_directions for c in collectors.values())
        self.needs_matrices = any(c.needs_matrices for c in collectors.values())

    def collect(self, outcome: BlockOutcome) -> Dict[str, Any]:
        return {name: c.collect(outcome) for name, c in self.collectors.items()}

    def reduce(self, parts: List[Dict[str, Any]]) -> Dict[str, Any]:
        return {name: c.reduce([p[name] for p in parts]) for name, c in self.collectors.items()}


def _run_block(plan: SimulationPlan, collector: Collector, block: int, start: int, size: int) -> Dict[str, Any]:
    return collector.collect(_block_outcome(plan, block, start, size, collector))


def batch(plan: SimulationPlan, collector: Collector, n_jobs: Optional[int] = None) -> Dict[str, Any]:
    """
    Run all trajectories of a plan and aggregate them

    Args:
        plan: Simulation plan
        collector: Collector turning block outcomes into statistics
        n_jobs: Worker count for joblib; defaults to WALK_CONFIG['n_jobs']

    Returns:
        The collector's reduced aggregate
    """
    n_jobs = WALK_CONFIG['n_jobs'] if n_jobs is None else n_jobs
    layout = plan.blocks()
    logger.info(f"Simulating {plan.num_traj} trajectories of length {plan.n} in {len(layout)} blocks")
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_run_block)(plan, collector, b, start, size) for b, start, size in layout
    )
    return collector.reduce(parts)


@dataclass
class WordEnumeration:
    """All K^n words of a finite-support law with their probabilities"""

    weights: np.ndarray
    final_log_norm: np.ndarray
    prefix_min: np.ndarray
    final_direction: np.ndarray

    def expectation(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def survival(self, y: float) -> float:
        return self.expectation((y + self.prefix_min >= 0).astype(float))

    def window(self, y: float, z: float, delta: float) -> float:
        level = y + self.final_log_norm
        hit = (level >= z) & (level <= z + delta) & (y + self.prefix_min >= 0)
        return self.expectation(hit.astype(float))


def enumerate_words(law: MatrixLaw, x: Direction, n: int) -> WordEnumeration:
    """
    Exact law of (X_n, S_n, min_j S_j) for a finite-support law

    Args:
        law: Finite-support matrix law
        x: Start direction
        n: Word length; K^n must not exceed WALK_CONFIG['max_enumeration_words']

    Returns:
        WordEnumeration over all K^n words
    """
    if not law.is_finite:
        raise ValueError("Exact enumeration needs a finite-support law")
    support, probs = law.support_array(), law.prob_array()
    k = len(support)
    words = k ** n
    if words > WALK_CONFIG['max_enumeration_words']:
        raise ValueError(f"{k}^{n} = {words} words exceeds the enumeration cap")
    index = np.arange(words)
    directions = _start_array(x, words, law.dim)
    log_norm = np.zeros(words)
    running_min = np.full(words, np.inf)
    weights = np.ones(words)
    for step in range(n):
        letters = (index // k ** step) % k
        directions, increments = act_batch(support[letters], directions)
        log_norm += increments
        np.minimum(running_min, log_norm, out=running_min)
        weights *= probs[letters]
    return WordEnumeration(weights=weights, final_log_norm=log_norm, prefix_min=running_min,
                           final_direction=directions)
