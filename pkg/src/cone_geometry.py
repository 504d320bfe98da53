"""Geometry of the positive cone: projective action, cocycle, norms and the Hilbert metric.

All vector norms are L1 on the positive quadrant. Matrices are dense and small
(d <= 10), so everything here is plain numpy on d-vectors and d x d arrays.
"""
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from config import GEOMETRY_CONFIG
from src.exceptions import DimensionMismatch, NotAllowable, ZeroVector


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return values


def _column_sums(entries: np.ndarray) -> np.ndarray:
    # cumulative sum runs strictly in row-index order
    return np.cumsum(entries, axis=0)[-1]


@dataclass(frozen=True)
class PositiveMatrix:
    """Allowable d x d nonnegative matrix with cached column sums"""

    entries: np.ndarray
    col_sums: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = _frozen(self.entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise NotAllowable(f"Expected a square matrix, got shape {entries.shape}")
        if entries.shape[0] < 2:
            raise NotAllowable("Dimension must be at least 2")
        if not np.all(np.isfinite(entries)) or np.any(entries < 0):
            raise NotAllowable("Entries must be finite and nonnegative")
        positive = entries > 0
        if not positive.any(axis=1).all() or not positive.any(axis=0).all():
            raise NotAllowable("Every row and every column needs a strictly positive entry")
        object.__setattr__(self, 'entries', entries)
        object.__setattr__(self, 'col_sums', _frozen(_column_sums(entries)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PositiveMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self) -> int:
        return hash(self.entries.tobytes())

    def __matmul__(self, other: 'PositiveMatrix') -> 'PositiveMatrix':
        return PositiveMatrix(self.entries @ other.entries)

    def scaled(self, factor: float) -> 'PositiveMatrix':
        """Return factor * g for a positive scalar factor"""
        if factor <= 0:
            raise NotAllowable(f"Scale factor must be positive, got {factor}")
        return PositiveMatrix(self.entries * factor)

    def to_json(self) -> List[List[float]]:
        """Row-major nested lists"""
        return self.entries.tolist()

    @classmethod
    def from_json(cls, rows: Sequence[Sequence[float]]) -> 'PositiveMatrix':
        return cls(np.asarray(rows, dtype=float))

    @classmethod
    def identity(cls, dim: int) -> 'PositiveMatrix':
        return cls(np.eye(dim))


@dataclass(frozen=True)
class Direction:
    """Point of the simplex S_+^{d-1}: nonnegative coordinates with unit L1 norm"""

    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.ndim != 1 or coords.shape[0] < 2:
            raise ZeroVector(f"Direction needs a 1-d vector of length >= 2, got shape {coords.shape}")
        if np.any(coords < 0) or abs(coords.sum() - 1.0) > GEOMETRY_CONFIG['simplex_tol']:
            raise ZeroVector("Direction coordinates must be nonnegative and sum to 1")
        object.__setattr__(self, 'coords', coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Direction):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)

    def __hash__(self) -> int:
        return hash(self.coords.tobytes())

    def to_json(self) -> List[float]:
        return self.coords.tolist()

    @classmethod
    def from_json(cls, values: Sequence[float]) -> 'Direction':
        return normalize(np.asarray(values, dtype=float))

    @classmethod
    def basis(cls, dim: int, i: int) -> 'Direction':
        coords = np.zeros(dim)
        coords[i] = 1.0
        return cls(coords)

    @classmethod
    def barycenter(cls, dim: int) -> 'Direction':
        return cls(np.full(dim, 1.0 / dim))


def _check_dims(g: PositiveMatrix, x: Direction) -> None:
    if g.dim != x.dim:
        raise DimensionMismatch(f"Matrix of dim {g.dim} cannot act on direction of dim {x.dim}")


def normalize(v) -> Direction:
    """
    Project a nonnegative nonzero vector onto the simplex

    Args:
        v: Nonnegative d-vector

    Returns:
        v / |v| as a Direction
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ZeroVector(f"Cannot normalise vector {v.tolist()}")
    total = v.sum()
    if total <= 0:
        raise ZeroVector(f"Cannot normalise vector {v.tolist()}")
    return Direction(v / total)


def act(g: PositiveMatrix, x: Direction) -> Direction:
    """Projective action g . x = gx / |gx|"""
    _check_dims(g, x)
    return normalize(g.entries @ x.coords)


def cocycle(g: PositiveMatrix, x: Direction) -> float:
    """Log-norm increment rho(g, x) = log |gx| in nats"""
    _check_dims(g, x)
    # |gx| = sum_j colsum_j x_j for nonnegative x
    return float(np.log(g.col_sums @ x.coords))


def matrix_norm(g: PositiveMatrix) -> float:
    """Operator norm induced by L1: the largest column sum"""
    return float(g.col_sums.max())


def min_gain(g: PositiveMatrix) -> float:
    """iota(g) = inf_x |gx|, attained at a vertex: the smallest column sum"""
    return float(g.col_sums.min())


def size_N(g: PositiveMatrix) -> float:
    """N(g) = max(||g||, 1 / iota(g))"""
    return max(matrix_norm(g), 1.0 / min_gain(g))


def _min_ratio(x: np.ndarray, xp: np.ndarray) -> float:
    # 0/0 excluded, positive/0 is +inf (never the min), 0/positive is 0
    both_zero = (x == 0) & (xp == 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(xp > 0, x / np.where(xp > 0, xp, 1.0), np.inf)
    ratios = ratios[~both_zero]
    return float(ratios.min()) if ratios.size else 1.0


def hilbert_metric(x: Direction, xp: Direction) -> float:
    """
    Hilbert cross-ratio distance on the simplex

    Args:
        x: First direction
        xp: Second direction of the same dimension

    Returns:
        (1 - m(x,x')m(x',x)) / (1 + m(x,x')m(x',x)), a value in [0, 1]
    """
    if x.dim != xp.dim:
        raise DimensionMismatch(f"Directions of dims {x.dim} and {xp.dim}")
    product = _min_ratio(x.coords, xp.coords) * _min_ratio(xp.coords, x.coords)
    return (1.0 - product) / (1.0 + product)


def hilbert_projective_distance(x: Direction, xp: Direction) -> float:
    """Log cross-ratio -log(m(x,x')m(x',x)); +inf when supports differ"""
    if x.dim != xp.dim:
        raise DimensionMismatch(f"Directions of dims {x.dim} and {xp.dim}")
    product = _min_ratio(x.coords, xp.coords) * _min_ratio(xp.coords, x.coords)
    return float('inf') if product == 0 else float(-np.log(product))


def contraction_ratio(g: PositiveMatrix, x: Direction, xp: Direction) -> float:
    """d(g.x, g.x') / d(x, x'), zero when x == x'"""
    before = hilbert_metric(x, xp)
    if before == 0:
        return 0.0
    return hilbert_metric(act(g, x), act(g, xp)) / before


def fk_ratio(g: PositiveMatrix) -> float:
    """Furstenberg-Kesten ratio max entry / min entry (+inf with a zero entry)"""
    smallest = g.entries.min()
    if smallest == 0:
        return float('inf')
    return float(g.entries.max() / smallest)


def transpose(g: PositiveMatrix) -> PositiveMatrix:
    return PositiveMatrix(g.entries.T.copy())


def is_strictly_positive(g: PositiveMatrix) -> bool:
    return bool(np.all(g.entries > 0))


# Vectorised forms used by the walk engine: stacks of shape (m, d, d) and (m, d).

def act_batch(matrices: np.ndarray, directions: np.ndarray):
    """
    Apply a stack of matrices to a stack of directions

    Args:
        matrices: Array of shape (m, d, d)
        directions: Array of shape (m, d) with rows on the simplex

    Returns:
        Tuple (new_directions, log_norms) with log_norms = log |g_i x_i|
    """
    images = np.einsum('mij,mj->mi', matrices, directions)
    norms = images.sum(axis=1)
    return images / norms[:, None], np.log(norms)


def cocycle_batch(matrices: np.ndarray, directions: np.ndarray) -> np.ndarray:
    return np.log(np.einsum('mij,mj->m', matrices, directions))


def log_matrix_norms(matrices: np.ndarray) -> np.ndarray:
    """log of the largest column sum for a stack of matrices"""
    return np.log(matrices.sum(axis=-2).max(axis=-1))


def _min_ratios(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(b > 0, a / np.where(b > 0, b, 1.0), np.inf)
    ratios = np.where((a == 0) & (b == 0), np.inf, ratios)
    smallest = ratios.min(axis=-1)
    return np.where(np.isinf(smallest), 1.0, smallest)


def hilbert_metric_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise hilbert_metric for two stacks of directions of shape (m, d)"""
    product = _min_ratios(a, b) * _min_ratios(b, a)
    return (1.0 - product) / (1.0 + product)


def fk_ratios(matrices: np.ndarray) -> np.ndarray:
    smallest = matrices.min(axis=(-2, -1))
    largest = matrices.max(axis=(-2, -1))
    with np.errstate(divide='ignore'):
        return np.where(smallest > 0, largest / np.where(smallest > 0, smallest, 1.0), np.inf)


def simplex_grid(dim: int, points: int) -> np.ndarray:
    """
    Regular grid on the simplex for d = 2 or 3

    Args:
        dim: Dimension, 2 or 3
        points: Approximate number of grid points

    Returns:
        Array of shape (k, dim) with rows on the simplex
    """
    if dim == 2:
        t = np.linspace(0.0, 1.0, points)
        return np.column_stack([t, 1.0 - t])
    if dim == 3:
        steps = int(np.ceil((np.sqrt(8 * points + 1) - 3) / 2))
        rows = [(i, j, steps - i - j) for i in range(steps + 1) for j in range(steps + 1 - i)]
        return np.asarray(rows, dtype=float) / steps
    raise DimensionMismatch(f"simplex_grid supports d = 2 or 3, got {dim}")


def random_directions(rng: np.random.Generator, dim: int, size: int) -> np.ndarray:
    """Uniform (Dirichlet(1,...,1)) draws on the simplex"""
    return rng.dirichlet(np.ones(dim), size=size)
