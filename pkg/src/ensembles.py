"""Matrix laws: representation, sampling, conditions A1/A2/A5 and centering"""
import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from src.cone_geometry import PositiveMatrix, fk_ratio, fk_ratios, simplex_grid, random_directions
from src.exceptions import ConfigError

logger = logging.getLogger(__name__)

GENERATORS = ('exp_uniform',)


class A1Result(Enum):
    FAILED = 'failed'


@dataclass(frozen=True)
class MatrixLaw:
    """
    Distribution mu over allowable matrices

    Either a finite support with probabilities, or a named parametric family.
    Every draw is multiplied by exp(log_scale).
    """

    dim: int
    support: Tuple[PositiveMatrix, ...] = ()
    probs: Tuple[float, ...] = ()
    generator: Optional[str] = None
    params: Dict[str, float] = field(default_factory=dict)
    log_scale: float = 0.0
    transposed: bool = False
    name: str = ''
    non_arithmetic: bool = False

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"Dimension must be at least 2, got {self.dim}")
        if not np.isfinite(self.log_scale):
            raise ConfigError(f"log_scale must be finite, got {self.log_scale}")
        if self.generator is None:
            self._check_finite_support()
        elif self.generator == 'exp_uniform':
            a, b = self.params.get('a'), self.params.get('b')
            if a is None or b is None or not a <= b:
                raise ConfigError(f"exp_uniform needs params a <= b, got {self.params}")
        else:
            raise ConfigError(f"Unknown generator '{self.generator}', expected one of {GENERATORS}")

    def _check_finite_support(self) -> None:
        if not self.support:
            raise ConfigError("A finite-support law needs at least one matrix")
        if len(self.support) != len(self.probs):
            raise ConfigError("support and probs must have the same length")
        if any(g.dim != self.dim for g in self.support):
            raise ConfigError(f"All support matrices must be {self.dim} x {self.dim}")
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError(f"Probabilities must be nonnegative and sum to 1, got {self.probs}")

    @property
    def is_finite(self) -> bool:
        return self.generator is None

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    def support_array(self) -> np.ndarray:
        """Scaled support matrices as an array of shape (K, d, d)"""
        stack = np.stack([g.entries for g in self.support])
        if self.transposed:
            stack = np.swapaxes(stack, -1, -2)
        return stack * self.scale

    def prob_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Support indices for `size` draws (finite support only)"""
        cumulative = np.cumsum(self.prob_array())
        u = rng.random(size)
        return np.minimum(np.searchsorted(cumulative, u, side='right'), len(self.support) - 1)

    def sample_batch(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """
        Draw `size` independent matrices

        Args:
            rng: Generator the draws are taken from
            size: Number of draws

        Returns:
            Array of shape (size, d, d)
        """
        if self.is_finite:
            return self.support_array()[self.sample_indices(rng, size)]
        exponents = rng.uniform(self.params['a'], self.params['b'], size=(size, self.dim, self.dim))
        draws = np.exp(exponents) * self.scale
        return np.swapaxes(draws, -1, -2) if self.transposed else draws

    def to_json(self) -> Dict[str, Any]:
        spec: Dict[str, Any] = {'dim': self.dim, 'log_scale': self.log_scale}
        if self.is_finite:
            spec['support'] = [{'matrix': g.to_json(), 'prob': p} for g, p in zip(self.support, self.probs)]
        else:
            spec['generator'] = self.generator
            spec['params'] = dict(self.params)
        if self.transposed:
            spec['transposed'] = True
        if self.name:
            spec['name'] = self.name
        spec['non_arithmetic'] = self.non_arithmetic
        return spec

    @classmethod
    def from_json(cls, spec: Dict[str, Any]) -> 'MatrixLaw':
        try:
            dim = int(spec['dim'])
            common = {
                'dim': dim,
                'log_scale': float(spec.get('log_scale', 0.0)),
                'transposed': bool(spec.get('transposed', False)),
                'name': str(spec.get('name', '')),
                'non_arithmetic': bool(spec.get('non_arithmetic', False)),
            }
            if 'support' in spec:
                support = tuple(PositiveMatrix.from_json(item['matrix']) for item in spec['support'])
                probs = tuple(float(item['prob']) for item in spec['support'])
                return cls(support=support, probs=probs, **common)
            if 'generator' in spec:
                params = {k: float(v) for k, v in spec.get('params', {}).items()}
                return cls(generator=spec['generator'], params=params, **common)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Malformed ensemble spec: {e}")
        raise ConfigError("Ensemble spec needs either 'support' or 'generator'")


@dataclass(frozen=True)
class EnsembleDiagnostics:
    """Checks of conditions A1-A5 and the estimated drift and variance"""

    lyapunov_hat: float
    lyapunov_stderr: float
    sigma2_hat: float
    sigma2_stderr: float
    kappa_sup: float
    kappa_sampled: bool
    moment_2_delta: float
    a1_horizon: Union[int, str]
    delta: float
    theorem_variant: str
    non_arithmetic_asserted: bool
    residual_drift: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        for key in ('kappa_sup', 'moment_2_delta'):
            if not np.isfinite(data[key]):
                data[key] = 'inf'
        return data


def point_mass(g, log_scale: float = 0.0, name: str = '') -> MatrixLaw:
    g = g if isinstance(g, PositiveMatrix) else PositiveMatrix(np.asarray(g, dtype=float))
    return MatrixLaw(dim=g.dim, support=(g,), probs=(1.0,), log_scale=log_scale, name=name)


def finite_law(matrices: Sequence, probs: Sequence[float], log_scale: float = 0.0, name: str = '',
               non_arithmetic: bool = False) -> MatrixLaw:
    support = tuple(m if isinstance(m, PositiveMatrix) else PositiveMatrix(np.asarray(m, dtype=float))
                    for m in matrices)
    return MatrixLaw(dim=support[0].dim, support=support, probs=tuple(float(p) for p in probs),
                     log_scale=log_scale, name=name, non_arithmetic=non_arithmetic)


def ab_ensemble() -> MatrixLaw:
    """The bundled {A, B} ensemble, probability 1/2 each, uncentered"""
    return finite_law([[[2.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 2.0]]], [0.5, 0.5],
                      name='ab', non_arithmetic=True)


def exp_uniform_ensemble(dim: int = 2, a: float = 0.0, b: float = float(np.log(2.0))) -> MatrixLaw:
    """I.i.d. entries exp(U[a, b]); satisfies the FK condition with kappa = e^(b - a)"""
    return MatrixLaw(dim=dim, generator='exp_uniform', params={'a': a, 'b': b},
                     name='exp_uniform', non_arithmetic=True)


def sample(law: MatrixLaw, stream: np.random.Generator) -> PositiveMatrix:
    """Draw one matrix from mu, scaled by exp(log_scale)"""
    return PositiveMatrix(law.sample_batch(stream, 1)[0])


def _patterns_step(patterns, support_patterns):
    grown = set()
    for p in patterns:
        left = np.frombuffer(p, dtype=bool).reshape(support_patterns[0].shape)
        for q in support_patterns:
            grown.add(((q.astype(int) @ left.astype(int)) > 0).tobytes())
    return frozenset(grown)


def verify_contraction(law: MatrixLaw, horizon: int, rng: Optional[np.random.Generator] = None,
                       paths: int = 256) -> Union[int, A1Result]:
    """
    Smallest n at which some product g_n ... g_1 is strictly positive (condition A1)

    For finite supports the search runs over zero patterns of products, which is
    exact and bounded by 2^(d^2) patterns per length. Parametric families are
    simulated along `paths` independent products.

    Args:
        law: Matrix law
        horizon: Largest product length to try
        rng: Generator for parametric families
        paths: Number of simulated products for parametric families

    Returns:
        The smallest length n, or A1Result.FAILED
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if law.is_finite:
        support_patterns = [g.entries > 0 for g in law.support]
        patterns = frozenset(p.tobytes() for p in support_patterns)
        seen = set()
        for n in range(1, horizon + 1):
            if any(np.frombuffer(p, dtype=bool).all() for p in patterns):
                return n
            if patterns in seen:
                break
            seen.add(patterns)
            patterns = _patterns_step(patterns, support_patterns)
        return A1Result.FAILED
    rng = rng if rng is not None else np.random.default_rng(0)
    products = np.broadcast_to(np.eye(law.dim), (paths, law.dim, law.dim)).copy()
    for n in range(1, horizon + 1):
        products = np.einsum('mij,mjk->mik', law.sample_batch(rng, paths), products)
        if np.any(np.all(products > 0, axis=(1, 2))):
            return n
        products /= products.sum(axis=1).max(axis=1)[:, None, None]
    return A1Result.FAILED


def _log_sizes(matrices: np.ndarray) -> np.ndarray:
    col_sums = matrices.sum(axis=-2)
    return np.log(np.maximum(col_sums.max(axis=-1), 1.0 / col_sums.min(axis=-1)))


def estimate_moment(law: MatrixLaw, delta: float, m: int = 100_000,
                    stream: Optional[np.random.Generator] = None) -> float:
    """
    Moment E[(log N(g))^(2 + delta)] of condition A2

    Args:
        law: Matrix law
        delta: Moment excess, strictly positive
        m: Monte Carlo draws for parametric families (ignored for finite support)
        stream: Generator for parametric families

    Returns:
        Exact weighted sum for finite support, Monte Carlo mean otherwise
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if law.is_finite:
        return float(law.prob_array() @ _log_sizes(law.support_array()) ** (2.0 + delta))
    stream = stream if stream is not None else np.random.default_rng(0)
    return float(np.mean(_log_sizes(law.sample_batch(stream, m)) ** (2.0 + delta)))


def kappa_sup(law: MatrixLaw, m: int = 10_000, stream: Optional[np.random.Generator] = None) -> Tuple[float, bool]:
    """
    Supremum of the Furstenberg-Kesten ratio over the law

    Returns:
        Tuple (kappa, sampled). For finite support kappa is exact and sampled is
        False. For parametric families the family bound is returned when the
        family has one, otherwise the sampled maximum; sampled is True in both
        cases since nothing was checked draw by draw.
    """
    if law.is_finite:
        return max(fk_ratio(g) for g in law.support), False
    if law.generator == 'exp_uniform':
        bound = float(np.exp(law.params['b'] - law.params['a']))
        logger.warning(f"kappa for '{law.generator}' is the family bound {bound:.6g}, not a certified sample value")
        return bound, True
    stream = stream if stream is not None else np.random.default_rng(0)
    sampled = float(fk_ratios(law.sample_batch(stream, m)).max())
    logger.warning(f"kappa estimated from {m} draws: {sampled:.6g}")
    return sampled, True


def center(law: MatrixLaw, lyapunov_hat: float) -> MatrixLaw:
    """Shift log_scale by -lyapunov_hat so the walk drifts by -lyapunov_hat per step"""
    if not np.isfinite(lyapunov_hat):
        raise ValueError(f"lyapunov_hat must be finite, got {lyapunov_hat}")
    return dataclasses.replace(law, log_scale=law.log_scale - lyapunov_hat)


def transpose_law(law: MatrixLaw) -> MatrixLaw:
    """Law of g^T, the driver of the dual walk"""
    return dataclasses.replace(law, transposed=not law.transposed)


def positivity_floor(law: MatrixLaw, c0: float, points: int = 1001, m: int = 4096,
                     stream: Optional[np.random.Generator] = None) -> float:
    """
    Empirical inf over directions of P(S_1 > c0)

    Finite supports give the exact probability at every grid direction; parametric
    families use m draws per direction. For d > 3 random directions replace the grid.
    """
    stream = stream if stream is not None else np.random.default_rng(0)
    if law.dim in (2, 3):
        directions = simplex_grid(law.dim, points)
    else:
        directions = random_directions(stream, law.dim, points)
    if law.is_finite:
        gains = np.log(np.einsum('kj,pj->pk', law.support_array().sum(axis=1), directions))
        return float(((gains > c0).astype(float) @ law.prob_array()).min())
    floor = 1.0
    for x in directions:
        draws = law.sample_batch(stream, m)
        floor = min(floor, float(np.mean(np.log(draws.sum(axis=1) @ x) > c0)))
    return floor
