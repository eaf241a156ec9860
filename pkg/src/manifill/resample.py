"""Resampling weights (k-NN and Jacobian potentials) and multinomial resampling."""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from manifill.core import (
    Ensemble,
    ManifillError,
    ModelSpec,
    TargetDensity,
    jacobian_batch,
)
from manifill.estimate import DuplicateImagesError, knn_radii

logger = logging.getLogger(__name__)


class AllZeroWeightsError(ManifillError):
    """Raised when every resampling weight vanishes."""


class WeightVariant(StrEnum):
    KNN = "knn"
    JACOBIAN = "jacobian"


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Exponentiate max-shifted log weights and normalize them to sum to 1."""
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
        raise ValueError("Log weights must not be NaN or +inf")
    top = np.max(log_weights)
    if top == -np.inf:
        raise AllZeroWeightsError(
            "Every weight is zero; the target has no mass on the sampled region"
        )
    weights = np.exp(log_weights - top)
    weights /= math.fsum(weights)
    return weights / math.fsum(weights)


def effective_sample_size(weights: np.ndarray) -> float:
    """1 / sum(w_i^2)."""
    return 1.0 / math.fsum(np.asarray(weights) ** 2)


def weights_knn(
    ensemble: Ensemble, target: TargetDensity, k: int, workers: int = 1
) -> np.ndarray:
    """G_i proportional to r_k(f(x_i))^m * mu(f(x_i)).

    Raises:
        DuplicateImagesError: If a k-NN radius is zero.
        AllZeroWeightsError: If every product vanishes.
    """
    images = ensemble.require_images()
    radii = knn_radii(images, k, workers)
    if np.any(radii == 0):
        raise DuplicateImagesError(
            f"{int(np.sum(radii == 0))} images have a zero {k}-NN radius; "
            "deduplicate the design or raise k"
        )
    m = ensemble.box.dim
    return normalize_log_weights(m * np.log(radii) + _log(target.evaluate(images)))


def weights_jacobian(
    ensemble: Ensemble,
    target: TargetDensity,
    model: ModelSpec,
    finite_difference: bool = False,
) -> np.ndarray:
    """G_i proportional to mu(f(x_i)) * J_m f(x_i) / proposal_density(x_i).

    Raises:
        NonFiniteJacobianError: Propagated from the Jacobian evaluation.
        AllZeroWeightsError: If every product vanishes.
    """
    images = ensemble.require_images()
    jacobians = jacobian_batch(model, ensemble.points, ensemble.box, finite_difference)
    proposal = np.asarray(ensemble.proposal.evaluate(ensemble.points), dtype=float)
    log_weights = _log(target.evaluate(images)) + np.log(jacobians) - np.log(proposal)
    return normalize_log_weights(log_weights)


@dataclass(frozen=True, eq=False)
class WeightScheme:
    """Boltzmann-Gibbs potential used by the resampling step."""

    variant: WeightVariant
    target: TargetDensity
    k: int | None = None
    model: ModelSpec | None = None
    finite_difference: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", WeightVariant(self.variant))
        if self.variant is WeightVariant.KNN and self.k is None:
            raise ValueError("The k-NN scheme needs k")
        if self.variant is WeightVariant.JACOBIAN and self.model is None:
            raise ValueError("The Jacobian scheme needs the model")

    def compute(self, ensemble: Ensemble) -> np.ndarray:
        if self.variant is WeightVariant.KNN:
            assert self.k is not None
            return weights_knn(ensemble, self.target, self.k, self.workers)
        assert self.model is not None
        return weights_jacobian(ensemble, self.target, self.model, self.finite_difference)


def resample_multinomial(
    ensemble: Ensemble, weights: np.ndarray, rng: np.random.Generator
) -> Ensemble:
    """N iid categorical draws by inverse CDF over one sorted batch of uniforms.

    The result has uniform weights, keeps the proposal handle and reuses the
    cached images of the selected parents.
    """
    weights = np.asarray(weights, dtype=float)
    n = ensemble.size
    if weights.shape != (n,) or np.any(weights < 0):
        raise ValueError("Weights must be N nonnegative numbers")
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    uniforms = np.sort(rng.random(n))
    parents = np.minimum(np.searchsorted(cdf, uniforms, side="right"), n - 1)
    images = None if ensemble.images is None else ensemble.images[parents]
    return Ensemble.uniform(
        ensemble.points[parents], ensemble.proposal, ensemble.box, images, parents
    )
