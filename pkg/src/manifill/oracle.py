"""Exact samplers of the target distribution on the benchmark manifolds, via the area formula."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from manifill.config import TWO_PI
from manifill.core import ManifillError
from manifill.models import BenchmarkModel, expo_eval, expo_jacobian, torus_eval

logger = logging.getLogger(__name__)

# Safety factor applied to grid maxima
ENVELOPE_MARGIN = 1.05

# Grid resolutions for the envelope constants
TORUS_GRID = 1024
EXPO_GRID = 2048

# Grid rows per chunk when scanning for the envelope, proposals per rejection round
_GRID_CHUNK_ROWS = 128
_PROPOSAL_CHUNK = 65_536

EXPO_BOX = (0.0, 100.0)


class EnvelopeViolationError(ManifillError):
    """Raised when a proposal density value exceeds the rejection envelope."""


@dataclass(frozen=True)
class OracleSample:
    """Accepted parameters and their images."""

    params: np.ndarray
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.images)


Density2D = Callable[[np.ndarray, np.ndarray], np.ndarray]


def grid_envelope(density: Density2D, low: float, high: float, resolution: int) -> float:
    """ENVELOPE_MARGIN times the maximum of ``density`` on a grid over [low, high]^2."""
    axis = np.linspace(low, high, resolution)
    best = 0.0
    for start in range(0, resolution, _GRID_CHUNK_ROWS):
        first, second = np.meshgrid(axis[start : start + _GRID_CHUNK_ROWS], axis, indexing="ij")
        best = max(best, float(np.max(density(first, second))))
    return ENVELOPE_MARGIN * best


def rejection_sample(
    density: Density2D,
    low: float,
    high: float,
    envelope: float,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Acceptance-rejection on [low, high)^2 with a uniform proposal.

    Raises:
        EnvelopeViolationError: If a proposal has density above ``envelope``.
    """
    accepted: list[np.ndarray] = []
    have = 0
    proposals = 0
    while have < count:
        candidates = low + (high - low) * rng.random((_PROPOSAL_CHUNK, 2))
        values = density(candidates[:, 0], candidates[:, 1])
        if np.any(values > envelope):
            worst = int(np.argmax(values))
            raise EnvelopeViolationError(
                f"Density {values[worst]} at {candidates[worst].tolist()} exceeds "
                f"envelope {envelope}"
            )
        keep = rng.random(_PROPOSAL_CHUNK) * envelope < values
        accepted.append(candidates[keep])
        have += int(keep.sum())
        proposals += _PROPOSAL_CHUNK
    logger.debug("Rejection sampling: %d accepted of %d proposals", have, proposals)
    if not accepted:
        return np.empty((0, 2))
    return np.concatenate(accepted)[:count]


def torus_uniform_oracle(R: float, r: float, count: int, rng: np.random.Generator) -> OracleSample:
    """Uniform samples on the torus: psi uniform, theta with density (R + r cos theta)/(2 pi R)."""
    if not 0 < r < R:
        raise ValueError(f"Torus needs 0 < r < R, got r={r}, R={R}")
    thetas: list[np.ndarray] = []
    have = 0
    while have < count:
        theta = TWO_PI * rng.random(_PROPOSAL_CHUNK)
        keep = rng.random(_PROPOSAL_CHUNK) * (R + r) < R + r * np.cos(theta)
        thetas.append(theta[keep])
        have += int(keep.sum())
    theta = np.concatenate(thetas)[:count] if thetas else np.empty(0)
    psi = TWO_PI * rng.random(count)
    params = np.column_stack([theta, psi])
    return OracleSample(params, torus_eval(theta, psi, R, r).reshape(count, 3))


def torus_nonuniform_density(
    theta: np.ndarray, psi: np.ndarray, R: float = 1.0, r: float = 0.9
) -> np.ndarray:
    """Parameter density for the target 1/||y - (0,1,0)||^2 on the torus, unnormalized.

    It is mu(f(theta, psi)) J_2 f(theta, psi) up to the constant factor r.
    """
    ring = R + r * np.cos(theta)
    return ring / (ring**2 - 2.0 * ring * np.sin(psi) + 1.0 + r**2 * np.sin(theta) ** 2)


@lru_cache(maxsize=16)
def _torus_nonuniform_envelope(R: float, r: float) -> float:
    return grid_envelope(
        lambda t, p: torus_nonuniform_density(t, p, R, r), 0.0, TWO_PI, TORUS_GRID
    )


def torus_nonuniform_oracle(
    R: float, r: float, count: int, rng: np.random.Generator
) -> OracleSample:
    """Samples on the torus with density proportional to 1/||y - (0,1,0)||^2."""
    envelope = _torus_nonuniform_envelope(R, r)
    params = rejection_sample(
        lambda t, p: torus_nonuniform_density(t, p, R, r), 0.0, TWO_PI, envelope, count, rng
    )
    images = torus_eval(params[:, 0], params[:, 1], R, r).reshape(len(params), 3)
    return OracleSample(params, images)


@lru_cache(maxsize=16)
def _expo_envelope(t: tuple[float, ...]) -> float:
    return grid_envelope(lambda a, b: expo_jacobian(a, b, t), *EXPO_BOX, EXPO_GRID)


def expo_oracle(t: tuple[float, ...], count: int, rng: np.random.Generator) -> OracleSample:
    """Uniform samples on the exponential-sum surface; parameters have density prop. to J_2 f."""
    t = tuple(float(v) for v in t)
    if not 0 < t[0] < t[1] < t[2]:
        raise ValueError(f"Need 0 < t1 < t2 < t3, got {t}")
    envelope = _expo_envelope(t)
    params = rejection_sample(
        lambda a, b: expo_jacobian(a, b, t), *EXPO_BOX, envelope, count, rng
    )
    images = np.asarray(expo_eval(params[:, 0], params[:, 1], t)).reshape(len(params), 3)
    return OracleSample(params, images)


def parameter_uniform_pushforward(
    model: BenchmarkModel, count: int, rng: np.random.Generator, workers: int = 1
) -> OracleSample:
    """Naive design: uniform draws in the parameter box mapped through the model."""
    params = model.box.uniform(rng, count)
    spec = model.spec()
    images = spec.evaluate_batch(params, workers) if count else np.empty((0, spec.dim_out))
    return OracleSample(params, images)
