"""Compactly supported smoothing kernels with mirror reflection at the box faces."""

import itertools
import logging
from dataclasses import dataclass
from enum import StrEnum
from functools import lru_cache

import numpy as np

from manifill.core import ManifillError, ParamBox

logger = logging.getLogger(__name__)

# Knots of the tabulated inverse CDF used for sampling
INVERSE_CDF_KNOTS = 4096

# Grid resolution for the Lipschitz constant estimates
_LIPSCHITZ_GRID = 20001


class BandwidthTooLargeError(ManifillError):
    """Raised when h is not below the smallest box side (single reflection fails)."""


class KernelFamily(StrEnum):
    """One-dimensional kernel families supported on [-1, 1]."""

    BIWEIGHT = "biweight"
    TRIWEIGHT = "triweight"
    TRICUBE = "tricube"


def kappa(family: KernelFamily, u: np.ndarray) -> np.ndarray:
    """Unit-mass 1-D kernel; zero outside the open interval (-1, 1)."""
    family = KernelFamily(family)
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    if family is KernelFamily.BIWEIGHT:
        values = 15.0 / 16.0 * (1.0 - u * u) ** 2
    elif family is KernelFamily.TRIWEIGHT:
        values = 35.0 / 32.0 * (1.0 - u * u) ** 3
    else:
        values = 70.0 / 81.0 * (1.0 - np.abs(u) ** 3) ** 3
    return np.where(inside, values, 0.0)


def kappa_cdf(family: KernelFamily, u: np.ndarray) -> np.ndarray:
    """Closed-form CDF of ``kappa``."""
    family = KernelFamily(family)
    v = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    if family is KernelFamily.BIWEIGHT:
        return 0.5 + 15.0 / 16.0 * (v - 2.0 * v**3 / 3.0 + v**5 / 5.0)
    if family is KernelFamily.TRIWEIGHT:
        return 0.5 + 35.0 / 32.0 * (v - v**3 + 3.0 * v**5 / 5.0 - v**7 / 7.0)
    a = np.abs(v)
    half = a - 3.0 * a**4 / 4.0 + 3.0 * a**7 / 7.0 - a**10 / 10.0
    return 0.5 + np.sign(v) * 70.0 / 81.0 * half


@lru_cache(maxsize=None)
def _inverse_cdf_table(family: KernelFamily) -> tuple[np.ndarray, np.ndarray]:
    knots = np.linspace(-1.0, 1.0, INVERSE_CDF_KNOTS)
    probs = kappa_cdf(family, knots)
    probs[0], probs[-1] = 0.0, 1.0
    return probs, knots


def inverse_cdf(family: KernelFamily, p: np.ndarray) -> np.ndarray:
    """Tabulated inverse CDF of ``kappa``, linear between knots."""
    probs, knots = _inverse_cdf_table(family)
    return np.interp(p, probs, knots)


@dataclass(frozen=True, eq=False)
class ReflectedKernel:
    """Product kernel zeta_h with per-coordinate mirror reflection into the box.

    The reflected kernel sums zeta_h(x - y') over y and its reflections across
    each lower and upper face. It vanishes whenever ||x - y||_inf > h and has
    unit mass on the box for every center, provided h is below the smallest
    side length so that at most one reflection per face contributes.
    """

    family: KernelFamily
    h: float
    box: ParamBox

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not self.h > 0:
            raise ValueError(f"Bandwidth must be positive, got h={self.h}")
        smallest = float(np.min(self.box.widths))
        if self.h >= smallest:
            raise BandwidthTooLargeError(
                f"Bandwidth h={self.h} must be below the smallest box side {smallest}"
            )

    @property
    def dim(self) -> int:
        return self.box.dim

    def eval_base(self, u: np.ndarray) -> np.ndarray:
        """Unscaled product kernel prod_i kappa(u_i), zero outside the unit sup-ball."""
        u = np.asarray(u, dtype=float)
        return np.prod(kappa(self.family, u), axis=-1)

    def _factors(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-coordinate scaled kernel values for y, its lower and its upper reflection.

        Returns an array of shape (3, K, m).
        """
        lower, upper = self.box.lower, self.box.upper
        centers = (y, 2.0 * lower - y, 2.0 * upper - y)
        return np.stack([kappa(self.family, (x - c) / self.h) / self.h for c in centers])

    @staticmethod
    def _sum_terms(factors: np.ndarray, choices: list[list[int]]) -> np.ndarray:
        total = np.zeros(factors.shape[1])
        for combo in itertools.product(*choices):
            term = factors[combo[0], :, 0]
            for i in range(1, len(combo)):
                term = term * factors[combo[i], :, i]
            total = total + term
        return total

    def _pairs(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scalar = x.ndim == 1 and y.ndim == 1
        x2, y2 = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(y))
        return x2, y2, scalar

    def eval_reflected(self, x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
        """Reflected kernel value at x for center y (row-wise for 2-D inputs).

        Reflections are enumerated lazily: a reflection of coordinate i is only
        visited when it contributes for at least one row.
        """
        x2, y2, scalar = self._pairs(x, y)
        factors = self._factors(x2, y2)
        choices = [
            [0] + [c for c in (1, 2) if np.any(factors[c, :, i] != 0.0)]
            for i in range(self.dim)
        ]
        total = self._sum_terms(factors, choices)
        return float(total[0]) if scalar else total

    def eval_reflected_enumerated(self, x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
        """Reference evaluation visiting all 3^m reflected centers."""
        x2, y2, scalar = self._pairs(x, y)
        factors = self._factors(x2, y2)
        total = self._sum_terms(factors, [[0, 1, 2]] * self.dim)
        return float(total[0]) if scalar else total

    def fold(self, z: np.ndarray) -> np.ndarray:
        """Reflect each coordinate across the face it crossed (single fold)."""
        lower, upper = self.box.lower, self.box.upper
        z = np.where(z < lower, 2.0 * lower - z, z)
        return np.where(z > upper, 2.0 * upper - z, z)

    def sample_from_uniforms(self, centers: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        """Map uniforms in [0,1)^m to draws from the reflected kernel around ``centers``."""
        steps = inverse_cdf(self.family, uniforms)
        return self.fold(centers + self.h * steps)

    def sample_reflected(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one point in the box from the reflected kernel centered at y."""
        y = np.asarray(y, dtype=float)
        return self.sample_from_uniforms(y, rng.random(self.dim))

    def lipschitz_constants(self) -> tuple[float, float]:
        """Grid estimates of ||zeta_h||_Lip and ||grad zeta_h||_Lip.

        Bounds for the product kernel are assembled from sup-norms of the 1-D
        kernel and of its first two derivatives.
        """
        u = np.linspace(-1.0, 1.0, _LIPSCHITZ_GRID)
        du = u[1] - u[0]
        k = kappa(self.family, u)
        d1 = np.gradient(k, du)
        d2 = np.gradient(d1, du)
        k_max, d1_max, d2_max = float(k.max()), float(np.abs(d1).max()), float(np.abs(d2).max())
        m = self.dim
        lip = np.sqrt(m) * d1_max * k_max ** (m - 1) / self.h ** (m + 1)
        mixed = d1_max**2 * k_max ** (m - 2) if m >= 2 else 0.0
        grad_lip = m * max(d2_max * k_max ** (m - 1), mixed) / self.h ** (m + 2)
        return float(lip), float(grad_lip)
