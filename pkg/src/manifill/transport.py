"""Kantorovich-Rubinstein (W1) distances between equal-size empirical measures."""

import logging
import math
from enum import StrEnum

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from manifill.core import ManifillError

logger = logging.getLogger(__name__)

# Largest sample size for the exact assignment solver
EXACT_LIMIT = 4096


class SizeMismatchError(ManifillError):
    """Raised when the two samples differ in size or dimension."""


class TooLargeError(ManifillError):
    """Raised when a sample exceeds EXACT_LIMIT points; use w1_sliced instead."""


class GroundMetric(StrEnum):
    EUCLIDEAN = "euclidean"
    L1 = "l1"


def _as_samples(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise SizeMismatchError(f"Samples have shapes {a.shape} and {b.shape}")
    return a, b


def w1_exact(a: np.ndarray, b: np.ndarray, metric: str = GroundMetric.EUCLIDEAN) -> float:
    """Exact W1 between two equal-weight samples via the optimal assignment.

    Args:
        a: (N, d) or (N,) sample.
        b: Sample of the same shape.
        metric: Ground metric, ``euclidean`` or ``l1``.

    Returns:
        (1/N) min over permutations of the summed matched distances.

    Raises:
        SizeMismatchError: If the shapes differ.
        TooLargeError: If N exceeds EXACT_LIMIT.
    """
    a, b = _as_samples(a, b)
    n = len(a)
    if n == 0:
        return 0.0
    if n > EXACT_LIMIT:
        raise TooLargeError(f"N={n} exceeds {EXACT_LIMIT}; use w1_sliced")
    ground = GroundMetric(metric)
    cost = cdist(a, b, metric="cityblock" if ground is GroundMetric.L1 else "euclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols]) / n


def w1_1d(a: np.ndarray, b: np.ndarray) -> float:
    """W1 of two 1-D samples by sorted matching."""
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise SizeMismatchError(f"Samples have {len(a)} and {len(b)} points")
    if len(a) == 0:
        return 0.0
    return math.fsum(np.abs(np.sort(a) - np.sort(b))) / len(a)


def w1_sliced(
    a: np.ndarray, b: np.ndarray, num_projections: int, rng: np.random.Generator
) -> float:
    """Mean 1-D W1 over random unit directions; a cheap surrogate for large N."""
    a, b = _as_samples(a, b)
    if num_projections < 1:
        raise ValueError("num_projections must be positive")
    directions = rng.standard_normal((num_projections, a.shape[1]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    values = [w1_1d(a @ d, b @ d) for d in directions]
    return math.fsum(values) / num_projections


class Estimator(StrEnum):
    EXACT = "exact"
    SLICED = "sliced"


def auto_estimator(n: int) -> Estimator:
    """The estimator w1_auto uses for samples of n points."""
    return Estimator.EXACT if n <= EXACT_LIMIT else Estimator.SLICED


def sliced_shift_factor(dim: int) -> float:
    """Sliced W1 over exact W1 for a pure translation in dim dimensions.

    This is E|<theta, e>| for theta uniform on the unit sphere: 1 in 1-D, 2/pi in 2-D
    and 1/2 in 3-D.
    """
    if dim < 1:
        raise ValueError(f"Dimension must be positive, got {dim}")
    return math.exp(math.lgamma(dim / 2) - math.lgamma((dim + 1) / 2)) / math.sqrt(math.pi)


def w1_auto(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> float:
    """Exact Euclidean W1 up to EXACT_LIMIT points, sliced with 256 projections above."""
    if auto_estimator(len(a)) is Estimator.EXACT:
        return w1_exact(a, b)
    logger.debug("Sliced W1 for N=%d", len(a))
    return w1_sliced(a, b, 256, rng)
