"""Perturbation: draw N fresh points from the (optionally truncated) mixture proposal."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from manifill.config import RunConfig
from manifill.core import PERTURB_STREAM, Ensemble, ManifillError, substream
from manifill.estimate import MixtureDensity, TruncatedDensity
from manifill.kernel import ReflectedKernel

logger = logging.getLogger(__name__)

# Rejections a single slot may accumulate before truncated sampling gives up
MAX_REJECTIONS = 1_000_000


class StallGuardError(ManifillError):
    """Raised when truncated sampling keeps rejecting (b is too small for the mixture)."""


@dataclass(frozen=True)
class SlotStreams:
    """Independent random streams keyed by (seed, iteration, slot)."""

    seed: int
    iteration: int

    def generator(self, slot: int) -> np.random.Generator:
        return substream(self.seed, PERTURB_STREAM, self.iteration, slot)

    def generators(self, count: int) -> list[np.random.Generator]:
        return [self.generator(slot) for slot in range(count)]


@dataclass(frozen=True)
class PerturbOutcome:
    ensemble: Ensemble
    acceptance_rate: float = 1.0
    truncation_normalizer: float = math.nan


def _candidates(
    generators: list[np.random.Generator],
    slots: np.ndarray,
    mixture: MixtureDensity,
) -> np.ndarray:
    """One mixture draw per slot, each consuming only its own stream."""
    box = mixture.box
    centers = mixture.centers
    uniform_branch = np.zeros(len(slots), dtype=bool)
    chosen = np.zeros(len(slots), dtype=np.intp)
    uniforms = np.empty((len(slots), box.dim))
    for row, slot in enumerate(slots):
        gen = generators[slot]
        uniform_branch[row] = gen.random() < mixture.q
        if not uniform_branch[row]:
            chosen[row] = gen.integers(len(centers))
        uniforms[row] = gen.random(box.dim)
    kernel_draws = mixture.kernel.sample_from_uniforms(centers[chosen], uniforms)
    uniform_draws = box.lower + box.widths * uniforms
    return np.where(uniform_branch[:, None], uniform_draws, kernel_draws)


def _mixture(resampled: Ensemble, cfg: RunConfig, bandwidth: float, b: float) -> MixtureDensity:
    weights = resampled.weights
    if np.ptp(weights) > 1e-12 * float(np.max(weights)):
        raise ValueError("Perturbation expects a resampled ensemble with uniform weights")
    kernel = ReflectedKernel(cfg.kernel, bandwidth, resampled.box)
    return MixtureDensity(cfg.q, kernel, resampled.points, b)


def perturb_plain(
    resampled: Ensemble, cfg: RunConfig, streams: SlotStreams, bandwidth: float | None = None
) -> Ensemble:
    """Draw every slot from q/vol(P) + (1-q)/N sum_i reflected_kernel(.; x_i).

    The returned ensemble has no images yet; its proposal is the mixture density.
    """
    h = cfg.h if bandwidth is None else bandwidth
    mixture = _mixture(resampled, cfg, h, math.inf)
    n = resampled.size
    points = _candidates(streams.generators(n), np.arange(n), mixture)
    return Ensemble.uniform(points, mixture, resampled.box)


def perturb_truncated(
    resampled: Ensemble,
    cfg: RunConfig,
    streams: SlotStreams,
    bandwidth: float | None = None,
    b: float | None = None,
) -> PerturbOutcome:
    """Acceptance-rejection from min(b, d) using the untruncated mixture d as proposal.

    A candidate with mixture value a is kept with probability min(a, b) / a.
    With b infinite this is exactly ``perturb_plain``.

    Raises:
        StallGuardError: If a slot is rejected more than MAX_REJECTIONS times.
    """
    h = cfg.h if bandwidth is None else bandwidth
    level = cfg.resolved_b(resampled.box) if b is None else b
    if math.isinf(level):
        return PerturbOutcome(perturb_plain(resampled, cfg, streams, h))

    mixture = _mixture(resampled, cfg, h, level)
    n = resampled.size
    generators = streams.generators(n)
    points = np.empty((n, resampled.box.dim))
    rejections = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    draws = 0
    rounds = 0
    while len(pending):
        candidates = _candidates(generators, pending, mixture)
        values = mixture.evaluate(candidates)
        accept_u = np.array([generators[slot].random() for slot in pending])
        accepted = accept_u * values < np.minimum(values, level)
        draws += len(pending)
        rounds += 1
        points[pending[accepted]] = candidates[accepted]
        rejected = pending[~accepted]
        rejections[rejected] += 1
        if len(rejected) and rejections[rejected].max() > MAX_REJECTIONS:
            raise StallGuardError(
                f"A slot was rejected {MAX_REJECTIONS} times with b={level}; raise b"
            )
        pending = rejected
    acceptance = n / draws
    logger.debug("Truncated perturbation: %d rounds, acceptance %.4f", rounds, acceptance)

    proposal = TruncatedDensity(mixture)
    ensemble = Ensemble.uniform(points, proposal, resampled.box)
    return PerturbOutcome(ensemble, acceptance, proposal.normalizer)


def perturb(
    resampled: Ensemble, cfg: RunConfig, streams: SlotStreams, bandwidth: float | None = None
) -> PerturbOutcome:
    """Perturbation step of one iteration, truncated when b is finite."""
    return perturb_truncated(resampled, cfg, streams, bandwidth)
