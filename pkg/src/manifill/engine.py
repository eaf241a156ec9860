"""The iteration loop: evaluate, weight, resample, perturb; with stopping rule and diagnostics."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from manifill.config import Algorithm, RunConfig
from manifill.core import (
    DIAGNOSTIC_STREAM,
    INIT_STREAM,
    RESAMPLE_STREAM,
    Density,
    Diagnostics,
    Ensemble,
    IterationRecord,
    ModelSpec,
    ParamBox,
    TargetDensity,
    UniformDensity,
    substream,
)
from manifill.perturb import SlotStreams, perturb
from manifill.resample import (
    WeightScheme,
    WeightVariant,
    effective_sample_size,
    resample_multinomial,
)
from manifill.transport import Estimator, auto_estimator, sliced_shift_factor, w1_auto

logger = logging.getLogger(__name__)

# Points used for the mean pairwise distance that scales the stopping tolerance
SCALE_SAMPLE = 2000

# Warn when the resampled ensemble keeps fewer distinct parents than this fraction
CLUSTERING_WARNING = 0.2

# Warn when ESS drops below this fraction of N
LOW_ESS_WARNING = 0.1

ProgressCallback = Callable[[int, IterationRecord], None]


def rate_alpha(n_points: int, m: int) -> float:
    """Convergence rate alpha(N): N^-1/2 for m=1, N^-1/2 log(N+1) for m=2, N^-1/m above."""
    if n_points < 1 or m < 1:
        raise ValueError(f"Need N >= 1 and m >= 1, got N={n_points}, m={m}")
    if m == 1:
        return n_points**-0.5
    if m == 2:
        return n_points**-0.5 * math.log(n_points + 1)
    return n_points ** (-1.0 / m)


def mean_pairwise_distance(images: np.ndarray, rng: np.random.Generator) -> float:
    """Mean Euclidean distance over pairs, on a random subset above SCALE_SAMPLE points."""
    images = np.atleast_2d(images)
    if len(images) > SCALE_SAMPLE:
        images = images[rng.choice(len(images), SCALE_SAMPLE, replace=False)]
    if len(images) < 2:
        return 0.0
    return float(np.mean(pdist(images)))


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None = None


def stopping_check(history: Diagnostics, cfg: RunConfig) -> StopDecision:
    """Stop at max_iterations, or once two consecutive successive-W1 values fall below
    stop_tol times the iteration-0 scale.

    Sliced values are compared against the threshold shrunk by the sliced-to-exact ratio
    of a translation in the image dimension.
    """
    if not history.records:
        return StopDecision(False)
    last = history.records[-1]
    if last.iteration >= cfg.max_iterations:
        return StopDecision(True, "iteration_limit")
    recent = [r for r in history.records if r.iteration >= 1][-2:]
    if len(recent) == 2:
        threshold = cfg.stop_tol * history.scale
        if all(
            r.w1_successive < threshold * _estimator_factor(r, history)
            or r.w1_successive == 0.0
            for r in recent
        ):
            return StopDecision(True, "converged")
    return StopDecision(False)


def _estimator_factor(record: IterationRecord, history: Diagnostics) -> float:
    if record.w1_estimator == Estimator.SLICED:
        return sliced_shift_factor(history.image_dim)
    return 1.0


@dataclass
class RunState:
    """Mutable state of a run between iterations."""

    iteration: int
    ensemble: Ensemble
    diagnostics: Diagnostics
    f_evals: int = 0


@dataclass
class RunResult:
    ensemble: Ensemble
    diagnostics: Diagnostics
    history: list[Ensemble] = field(default_factory=list)


def _weight_scheme(
    model: ModelSpec, target: TargetDensity, box: ParamBox, cfg: RunConfig, workers: int
) -> WeightScheme:
    if cfg.algorithm is Algorithm.KNN:
        return WeightScheme(
            WeightVariant.KNN, target, k=cfg.resolved_k(box.dim), workers=workers
        )
    if not model.has_derivative and not cfg.finite_difference:
        raise ValueError(
            f"Model '{model.name}' has no derivative; use the knn algorithm "
            "or enable finite_difference"
        )
    return WeightScheme(
        WeightVariant.JACOBIAN,
        target,
        model=model,
        finite_difference=cfg.finite_difference,
        workers=workers,
    )


def _evaluate(model: ModelSpec, ensemble: Ensemble, state: RunState, workers: int) -> Ensemble:
    images = model.evaluate_batch(ensemble.points, workers)
    state.f_evals += ensemble.size
    return ensemble.with_images(images)


def run(
    model: ModelSpec,
    target: TargetDensity,
    box: ParamBox,
    cfg: RunConfig,
    init: np.ndarray | None = None,
    init_density: Density | None = None,
    progress_callback: ProgressCallback | None = None,
    workers: int = 1,
) -> RunResult:
    """Fill the image manifold of ``model`` with points distributed according to ``target``.

    Iteration 0 evaluates the initial design, weights and resamples it. Each
    further iteration perturbs the resampled ensemble, evaluates the N new
    points once, weights and resamples them. After J perturbation rounds the
    model has been evaluated exactly N (J + 1) times.

    Args:
        model: The model; its input dimension must match the box.
        target: Unnormalized target density on the image manifold.
        box: Parameter box.
        cfg: Run configuration.
        init: Optional (N, m) initial design; N iid uniform points otherwise.
        init_density: Density ``init`` was drawn from; uniform if omitted.
        progress_callback: Called with (iteration, record) after each iteration.
        workers: Threads for model evaluation and k-NN queries.

    Returns:
        The post-resampling ensemble of the final iteration, the diagnostics
        and the post-resampling ensemble of every iteration.
    """
    n = cfg.n_samples
    if model.dim_in != box.dim:
        raise ValueError(f"Model input dimension {model.dim_in} differs from box {box.dim}")
    cfg.check_box(box)
    scheme = _weight_scheme(model, target, box, cfg, workers)

    if init is None:
        points = box.uniform(substream(cfg.seed, INIT_STREAM), n)
    else:
        points = np.atleast_2d(np.asarray(init, dtype=float))
        if points.shape != (n, box.dim):
            raise ValueError(f"Initial design must have shape {(n, box.dim)}, got {points.shape}")
    density: Density = init_density if init_density is not None else UniformDensity(box)

    logger.info(
        "Starting %s run of '%s' (N=%d, q=%g, h=%g, seed=%d)",
        cfg.algorithm.value,
        model.name,
        n,
        cfg.q,
        cfg.h,
        cfg.seed,
    )
    diagnostics = Diagnostics()
    state = RunState(0, Ensemble.uniform(points, density, box), diagnostics)
    current = _evaluate(model, state.ensemble, state, workers)
    diagnostics.scale = mean_pairwise_distance(
        current.require_images(), substream(cfg.seed, DIAGNOSTIC_STREAM, 0)
    )
    diagnostics.image_dim = current.require_images().shape[1]
    weights = scheme.compute(current)
    state.ensemble = resample_multinomial(current, weights, substream(cfg.seed, RESAMPLE_STREAM, 0))
    history = [state.ensemble]
    _record(state, weights, math.nan, cfg.bandwidth(1), progress_callback)

    while True:
        state.iteration += 1
        j = state.iteration
        bandwidth = cfg.bandwidth(j)
        outcome = perturb(state.ensemble, cfg, SlotStreams(cfg.seed, j), bandwidth)
        current = _evaluate(model, outcome.ensemble, state, workers)
        weights = scheme.compute(current)
        previous = state.ensemble
        state.ensemble = resample_multinomial(
            current, weights, substream(cfg.seed, RESAMPLE_STREAM, j)
        )
        history.append(state.ensemble)
        w1 = w1_auto(
            previous.require_images(),
            state.ensemble.require_images(),
            substream(cfg.seed, DIAGNOSTIC_STREAM, j),
        )
        _record(
            state,
            weights,
            w1,
            bandwidth,
            progress_callback,
            outcome.acceptance_rate,
            outcome.truncation_normalizer,
            auto_estimator(state.ensemble.size),
        )
        decision = stopping_check(diagnostics, cfg)
        if decision.stop:
            diagnostics.stop_reason = decision.reason
            break

    logger.info(
        "Run finished after %d iterations (%s), %d model evaluations",
        state.iteration,
        diagnostics.stop_reason,
        state.f_evals,
    )
    return RunResult(state.ensemble, diagnostics, history)


def _record(
    state: RunState,
    weights: np.ndarray,
    w1: float,
    bandwidth: float,
    progress_callback: ProgressCallback | None,
    acceptance_rate: float = math.nan,
    truncation_normalizer: float = math.nan,
    w1_estimator: str = "",
) -> None:
    ensemble = state.ensemble
    n = ensemble.size
    parents = ensemble.parents if ensemble.parents is not None else np.arange(n)
    unique_fraction = len(np.unique(parents)) / n
    ess = effective_sample_size(weights)
    record = IterationRecord(
        iteration=state.iteration,
        w1_successive=w1,
        ess=ess,
        min_weight=float(np.min(weights)),
        max_weight=float(np.max(weights)),
        f_evals=state.f_evals,
        unique_fraction=unique_fraction,
        bandwidth=bandwidth,
        acceptance_rate=acceptance_rate,
        truncation_normalizer=truncation_normalizer,
        w1_estimator=w1_estimator,
    )
    state.diagnostics.append(record)
    logger.info(
        "Iteration %d: W1=%.6g ESS=%.1f unique=%.3f evals=%d",
        record.iteration,
        w1,
        ess,
        unique_fraction,
        state.f_evals,
    )
    if ess < LOW_ESS_WARNING * n:
        logger.warning(
            "Low effective sample size %.1f of %d at iteration %d", ess, n, record.iteration
        )
    if unique_fraction < CLUSTERING_WARNING:
        logger.warning(
            "Only %.1f%% distinct parents at iteration %d; the ensemble is clustering "
            "(consider a larger h)",
            100 * unique_fraction,
            record.iteration,
        )
    if progress_callback is not None:
        progress_callback(record.iteration, record)
