"""k-NN radii and densities in output space; the mixture proposal density in parameter space."""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from manifill.core import ManifillError, ParamBox, unit_ball_volume
from manifill.kernel import ReflectedKernel

logger = logging.getLogger(__name__)

# Above this many images k-NN queries go through a k-d tree
BRUTE_FORCE_LIMIT = 2048

# Rows per block in the brute-force distance computation
_BRUTE_FORCE_BLOCK = 256

# Quasi-uniform nodes for the truncated-density normalizer
NORMALIZER_NODES = 100_000


class DuplicateImagesError(ManifillError):
    """Raised when a k-NN radius is zero because images coincide."""


def default_k(n_points: int, m: int) -> int:
    """ceil(N^((m+2)/(2(m+1)))), capped at N."""
    exponent = (m + 2) / (2 * (m + 1))
    return min(n_points, math.ceil(n_points**exponent))


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # shared by both k-NN backends so their results agree bit for bit
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def _radii_brute_force(images: np.ndarray, k: int) -> np.ndarray:
    radii = np.empty(len(images))
    for start in range(0, len(images), _BRUTE_FORCE_BLOCK):
        block = images[start : start + _BRUTE_FORCE_BLOCK]
        dist = _distances(block[:, None, :], images[None, :, :])
        radii[start : start + len(block)] = np.partition(dist, k - 1, axis=1)[:, k - 1]
    return radii


def _radii_tree(images: np.ndarray, k: int, workers: int) -> np.ndarray:
    tree = cKDTree(images)
    _, idx = tree.query(images, k=k, workers=workers)
    idx = np.asarray(idx).reshape(len(images), k)
    return np.max(_distances(images[:, None, :], images[idx]), axis=1)


def knn_radii(
    images: np.ndarray,
    k: int,
    workers: int = 1,
    brute_force_limit: int = BRUTE_FORCE_LIMIT,
) -> np.ndarray:
    """Distance from each image to its k-th nearest image, the image itself included.

    Args:
        images: (N, n) array of model outputs.
        k: Neighbor count, 1 <= k <= N. With k=1 every radius is 0.
        workers: Threads for the k-d tree query.
        brute_force_limit: Largest N handled by exhaustive search.

    Returns:
        N nonnegative radii; duplicated images may give 0.
    """
    images = np.atleast_2d(np.asarray(images, dtype=float))
    n_points = len(images)
    if not 1 <= k <= n_points:
        raise ValueError(f"Need 1 <= k <= N, got k={k}, N={n_points}")
    if n_points <= brute_force_limit:
        logger.debug("k-NN radii by brute force (N=%d, k=%d)", n_points, k)
        return _radii_brute_force(images, k)
    logger.debug("k-NN radii by k-d tree (N=%d, k=%d)", n_points, k)
    return _radii_tree(images, k, workers)


def knn_density(images: np.ndarray, k: int, m: int, workers: int = 1) -> np.ndarray:
    """k-NN density estimate (k/N) / (Gamma_m r^m) with m the manifold dimension.

    Raises:
        DuplicateImagesError: If any radius is zero.
    """
    radii = knn_radii(images, k, workers)
    if np.any(radii == 0):
        raise DuplicateImagesError(
            f"{int(np.sum(radii == 0))} images have a zero {k}-NN radius; "
            "deduplicate the design or raise k"
        )
    return (k / len(radii)) / (unit_ball_volume(m) * radii**m)


@dataclass(frozen=True, eq=False)
class MixtureDensity:
    """Proposal q/vol(P) + (1-q)/N sum_i reflected_kernel(x; center_i).

    ``b`` is the truncation level; ``evaluate`` always returns the
    untruncated value.
    """

    q: float
    kernel: ReflectedKernel
    centers: np.ndarray
    b: float = math.inf

    def __post_init__(self) -> None:
        if not 0 <= self.q <= 1:
            raise ValueError(f"Mixture weight must lie in [0, 1], got q={self.q}")
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.box.require(centers)
        object.__setattr__(self, "centers", centers)

    @property
    def box(self) -> ParamBox:
        return self.kernel.box

    @property
    def floor(self) -> float:
        return self.q / self.box.volume()

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.centers)

    def smoothed(self, points: np.ndarray) -> np.ndarray:
        """(1/N) sum_i reflected_kernel(x; center_i) at every row of ``points``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        neighbors = self._tree.query_ball_point(
            points, r=self.kernel.h, p=np.inf, return_sorted=True
        )
        counts = np.fromiter((len(n) for n in neighbors), dtype=np.intp, count=len(points))
        total = int(counts.sum())
        if total == 0:
            return np.zeros(len(points))
        flat = np.fromiter(itertools.chain.from_iterable(neighbors), dtype=np.intp, count=total)
        rows = np.repeat(np.arange(len(points)), counts)
        values = self.kernel.eval_reflected(points[rows], self.centers[flat])
        sums = np.bincount(rows, weights=values, minlength=len(points))
        return sums / len(self.centers)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.floor + (1.0 - self.q) * self.smoothed(points)

    def truncated(self, points: np.ndarray) -> np.ndarray:
        """Unnormalized truncated density min(b, d(x))."""
        return np.minimum(self.b, self.evaluate(points))


def mixture_eval(density: MixtureDensity, x: np.ndarray) -> np.ndarray | float:
    """Untruncated mixture density at a point (float) or at rows of an array."""
    x = np.asarray(x, dtype=float)
    values = density.evaluate(x)
    return float(values[0]) if x.ndim == 1 else values


@dataclass(frozen=True, eq=False)
class TruncatedDensity:
    """Normalized min(b, d(x)) for a mixture d; the density of truncated perturbation draws."""

    mixture: MixtureDensity

    @cached_property
    def normalizer(self) -> float:
        """Integral of min(b, d) over the box; exactly 1 when b is infinite."""
        if math.isinf(self.mixture.b):
            return 1.0
        box = self.mixture.box
        nodes = qmc.Halton(d=box.dim, scramble=False).random(NORMALIZER_NODES)
        points = box.lower + box.widths * nodes
        value = box.volume() * float(np.mean(self.mixture.truncated(points)))
        logger.debug("Truncated proposal normalizer %.6g (b=%g)", value, self.mixture.b)
        return value

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.mixture.truncated(points) / self.normalizer
