"""Domain types shared by every module: boxes, models, targets, ensembles, diagnostics."""

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

logger = logging.getLogger(__name__)

# Tolerance on the sum of ensemble weights
WEIGHT_SUM_TOLERANCE = 1e-12

# Stream tags for seeded substreams (seed, tag, ...)
INIT_STREAM = 1
RESAMPLE_STREAM = 2
PERTURB_STREAM = 3
DIAGNOSTIC_STREAM = 4


class ManifillError(Exception):
    """Base class for every error raised by manifill."""


class OutOfBoxError(ManifillError):
    """Raised when a point lies outside its parameter box."""


class NonFiniteJacobianError(ManifillError):
    """Raised when the m-dimensional Jacobian is zero, negative or not finite."""


class InvalidTargetError(ManifillError):
    """Raised when a target density returns a negative or non-finite value."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for the stream identified by (seed, *key).

    The same (seed, key) always yields the same stream, regardless of how many
    other streams were created before or concurrently.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True, eq=False)
class ParamBox:
    """Closed hypercube prod [lower_i, upper_i] holding all design points."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError(f"Box bounds must be vectors of equal length: {lower}, {upper}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("Box bounds must be finite")
        if np.any(lower >= upper):
            raise ValueError(f"Degenerate box: lower={lower.tolist()} upper={upper.tolist()}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of rows lying in the closed box."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def require(self, points: np.ndarray) -> None:
        """Raise OutOfBoxError unless every row lies in the closed box."""
        inside = self.contains(points)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise OutOfBoxError(f"Point {np.atleast_2d(points)[bad].tolist()} outside box")

    def uniform(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lower + self.widths * rng.random((count, self.dim))

    def to_dict(self) -> dict[str, list[float]]:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A black-box computer experiment f: P -> R^n with optional derivative information.

    ``func`` maps one point to one image. ``batch_func`` (if given) maps an
    (N, m) array to an (N, n) array and is preferred by the engine. ``jacobian``
    and ``batch_jacobian`` return the m-dimensional Jacobian directly,
    ``differential`` returns the n x m matrix Df. Models wrapping non-reentrant
    simulators set ``reentrant=False`` and are evaluated sequentially.
    """

    dim_in: int
    dim_out: int
    func: Callable[[np.ndarray], np.ndarray]
    batch_func: Callable[[np.ndarray], np.ndarray] | None = None
    differential: Callable[[np.ndarray], np.ndarray] | None = None
    jacobian: Callable[[np.ndarray], float] | None = None
    batch_jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    reentrant: bool = True
    name: str = "model"

    def __post_init__(self) -> None:
        if self.dim_in < 1 or self.dim_out < self.dim_in:
            raise ValueError(f"Need 1 <= m <= n, got m={self.dim_in}, n={self.dim_out}")

    @property
    def has_derivative(self) -> bool:
        return any(
            f is not None for f in (self.differential, self.jacobian, self.batch_jacobian)
        )

    def evaluate_batch(self, points: np.ndarray, workers: int = 1) -> np.ndarray:
        """Evaluate f on every row of ``points``, preserving order."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(points) == 0:
            return np.empty((0, self.dim_out))
        if self.batch_func is not None:
            images = np.asarray(self.batch_func(points), dtype=float)
        elif workers > 1 and self.reentrant:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                images = np.array(list(pool.map(self.func, points)), dtype=float)
        else:
            images = np.array([self.func(x) for x in points], dtype=float)
        images = images.reshape(len(points), self.dim_out)
        return images


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """Unnormalized density mu on the output space w.r.t. Hausdorff measure.

    ``func`` is vectorized: an (N, n) array of images maps to N values.
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "target"

    def evaluate(self, images: np.ndarray) -> np.ndarray:
        values = np.asarray(self.func(np.atleast_2d(images)), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            bad = int(np.flatnonzero(~np.isfinite(values) | (values < 0))[0])
            raise InvalidTargetError(
                f"Target '{self.name}' returned {values[bad]} at image {images[bad].tolist()}"
            )
        return values


class Density(Protocol):
    """Probability density on a parameter box, evaluated row-wise."""

    def evaluate(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class UniformDensity:
    """Uniform density on a box; the usual initial density p0."""

    box: ParamBox

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(points)), 1.0 / self.box.volume())


@dataclass(frozen=True, eq=False)
class Ensemble:
    """N design points with cached images, weights and the density they were drawn from."""

    points: np.ndarray
    weights: np.ndarray
    proposal: Density
    box: ParamBox
    images: np.ndarray | None = None
    parents: np.ndarray | None = None

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if points.shape[1] != self.box.dim:
            raise ValueError(f"Points have dimension {points.shape[1]}, box {self.box.dim}")
        if weights.shape != (len(points),):
            raise ValueError(f"Expected {len(points)} weights, got shape {weights.shape}")
        if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError("Ensemble weights must be nonnegative and sum to 1")
        if self.images is not None and len(self.images) != len(points):
            raise ValueError("Images and points differ in length")
        self.box.require(points)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def uniform(
        cls,
        points: np.ndarray,
        proposal: Density,
        box: ParamBox,
        images: np.ndarray | None = None,
        parents: np.ndarray | None = None,
    ) -> "Ensemble":
        n = len(points)
        return cls(points, np.full(n, 1.0 / n), proposal, box, images, parents)

    def with_images(self, images: np.ndarray) -> "Ensemble":
        return Ensemble(self.points, self.weights, self.proposal, self.box, images, self.parents)

    def require_images(self) -> np.ndarray:
        if self.images is None:
            raise ValueError("Ensemble images have not been evaluated")
        return self.images


@dataclass(frozen=True)
class IterationRecord:
    """Diagnostics for one iteration of the engine."""

    iteration: int
    w1_successive: float
    ess: float
    min_weight: float
    max_weight: float
    f_evals: int
    unique_fraction: float
    bandwidth: float
    acceptance_rate: float = math.nan
    truncation_normalizer: float = math.nan
    # "exact" or "sliced"; empty before the first W1 value
    w1_estimator: str = ""


@dataclass
class Diagnostics:
    """Per-iteration history of a run."""

    records: list[IterationRecord] = field(default_factory=list)
    scale: float = math.nan
    image_dim: int = 0
    stop_reason: str | None = None

    def append(self, record: IterationRecord) -> None:
        if self.records and record.f_evals < self.records[-1].f_evals:
            raise ValueError("Evaluation count must be nondecreasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


def unit_ball_volume(m: int) -> float:
    """Volume of the m-dimensional Euclidean unit ball, pi^(m/2) / Gamma(m/2 + 1)."""
    if m < 1:
        raise ValueError(f"Dimension must be positive, got {m}")
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def finite_difference_differential(
    func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, box: ParamBox
) -> np.ndarray:
    """Central-difference Df at x, falling back to one-sided steps at the box faces."""
    x = np.asarray(x, dtype=float)
    eps = np.finfo(float).eps
    columns = []
    for i in range(x.shape[0]):
        step = eps ** (1.0 / 3.0) * max(1.0, abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] = min(x[i] + step, box.upper[i])
        backward[i] = max(x[i] - step, box.lower[i])
        delta = forward[i] - backward[i]
        columns.append(
            (np.asarray(func(forward), dtype=float) - np.asarray(func(backward), dtype=float))
            / delta
        )
    return np.column_stack(columns)


def jacobian_from_differential(df: np.ndarray, x: np.ndarray) -> float:
    """sqrt(det(Df^T Df)), raising NonFiniteJacobianError when it is not strictly positive."""
    df = np.atleast_2d(np.asarray(df, dtype=float))
    sign, logdet = np.linalg.slogdet(df.T @ df)
    if sign <= 0 or not np.isfinite(logdet):
        raise NonFiniteJacobianError(f"det(Df^T Df) is not positive at x={np.asarray(x).tolist()}")
    return math.exp(0.5 * logdet)


def jacobian_m(
    model: ModelSpec,
    x: np.ndarray,
    box: ParamBox | None = None,
    finite_difference: bool = False,
) -> float:
    """The m-dimensional Jacobian J_m f(x) = sqrt(det(Df(x)^T Df(x))).

    Args:
        model: The model; analytic ``jacobian`` wins over ``differential``.
        x: Point in the box.
        box: Parameter box, required for the finite-difference fallback.
        finite_difference: Allow numerical differentiation when the model has
            no derivative information.

    Returns:
        The strictly positive Jacobian.

    Raises:
        NonFiniteJacobianError: If the Jacobian is zero, negative or not finite.
    """
    x = np.asarray(x, dtype=float)
    if model.jacobian is not None:
        value = float(model.jacobian(x))
        if not (np.isfinite(value) and value > 0):
            raise NonFiniteJacobianError(f"J_m f = {value} at x={x.tolist()}")
        return value
    if model.differential is not None:
        return jacobian_from_differential(model.differential(x), x)
    if not finite_difference:
        raise ValueError(
            f"Model '{model.name}' has no derivative; enable finite differences to use it"
        )
    if box is None:
        raise ValueError("Finite-difference Jacobian needs the parameter box")
    return jacobian_from_differential(finite_difference_differential(model.func, x, box), x)


def jacobian_batch(
    model: ModelSpec,
    points: np.ndarray,
    box: ParamBox | None = None,
    finite_difference: bool = False,
) -> np.ndarray:
    """Vector of J_m f over the rows of ``points``."""
    points = np.atleast_2d(points)
    if model.batch_jacobian is not None:
        values = np.asarray(model.batch_jacobian(points), dtype=float)
        bad = ~(np.isfinite(values) & (values > 0))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteJacobianError(f"J_m f = {values[i]} at x={points[i].tolist()}")
        return values
    return np.array([jacobian_m(model, x, box, finite_difference) for x in points])
