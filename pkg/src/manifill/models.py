"""Benchmark models, target densities and the factories that build them from configuration."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import root
from scipy.special import logsumexp

from manifill.config import (
    ENZYME_RATE_NAMES,
    TWO_PI,
    EnzymeConfig,
    ExponentialConfig,
    ExternalConfig,
    IdentityConfig,
    InverseSquareDistanceTargetConfig,
    ModelConfig,
    TargetConfig,
    TorusConfig,
)
from manifill.core import ManifillError, ModelSpec, ParamBox, TargetDensity
from manifill.external import ExternalModel

logger = logging.getLogger(__name__)

# Floor on |C1 - C0| / C0 in the precision ratio
PRECISION_FLOOR = 1e-9

# Dense-output samples per window in the steady-state check
WINDOW_SAMPLES = 11

# Largest move accepted when polishing a settled state onto the rhs root
POLISH_RADIUS = 1e-3


class NoSteadyStateError(ManifillError):
    """Raised when the enzyme network does not settle before the time cap."""


class BenchmarkModel(Protocol):
    @property
    def box(self) -> ParamBox: ...

    def spec(self) -> ModelSpec: ...

    def constants(self) -> dict[str, Any]: ...


def torus_eval(theta: np.ndarray, psi: np.ndarray, R: float = 1.0, r: float = 0.9) -> np.ndarray:
    """((R + r cos t) cos p, (R + r cos t) sin p, r sin t), stacked on the last axis."""
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    ring = R + r * np.cos(theta)
    return np.stack([ring * np.cos(psi), ring * np.sin(psi), r * np.sin(theta)], axis=-1)


def torus_jacobian(theta: np.ndarray, R: float = 1.0, r: float = 0.9) -> Any:
    """r (R + r cos theta); the torus Jacobian does not depend on psi."""
    return r * (R + r * np.cos(np.asarray(theta, dtype=float)))


@dataclass(frozen=True)
class TorusModel:
    R: float = 1.0
    r: float = 0.9

    def __post_init__(self) -> None:
        if not 0 < self.r < self.R:
            raise ValueError(f"Torus needs 0 < r < R, got r={self.r}, R={self.R}")

    @property
    def box(self) -> ParamBox:
        return ParamBox([0.0, 0.0], [TWO_PI, TWO_PI])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return torus_eval(points[:, 0], points[:, 1], self.R, self.r)

    def differential(self, x: np.ndarray) -> np.ndarray:
        theta, psi = float(x[0]), float(x[1])
        ring = self.R + self.r * math.cos(theta)
        return np.array(
            [
                [-self.r * math.sin(theta) * math.cos(psi), -ring * math.sin(psi)],
                [-self.r * math.sin(theta) * math.sin(psi), ring * math.cos(psi)],
                [self.r * math.cos(theta), 0.0],
            ]
        )

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return torus_jacobian(points[:, 0], self.R, self.r)

    def spec(self) -> ModelSpec:
        return ModelSpec(
            dim_in=2,
            dim_out=3,
            func=lambda x: self.evaluate(x)[0],
            batch_func=self.evaluate,
            differential=self.differential,
            batch_jacobian=self.jacobian,
            name="torus",
        )

    def constants(self) -> dict[str, Any]:
        return {"R": self.R, "r": self.r}


def expo_eval(theta: np.ndarray, psi: np.ndarray, t: tuple[float, ...] = (1.0, 2.0, 4.0)) -> Any:
    """(exp(-theta t_i) + exp(-psi t_i))_i, stacked on the last axis."""
    theta = np.asarray(theta, dtype=float)[..., None]
    psi = np.asarray(psi, dtype=float)[..., None]
    rates = np.asarray(t, dtype=float)
    return np.exp(-theta * rates) + np.exp(-psi * rates)


def _log_abs_exp_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log|e^x - e^y|, -inf where x == y."""
    with np.errstate(divide="ignore"):
        return np.maximum(x, y) + np.log(-np.expm1(-np.abs(x - y)))


def expo_jacobian(
    theta: np.ndarray, psi: np.ndarray, t: tuple[float, ...] = (1.0, 2.0, 4.0)
) -> Any:
    """sqrt(sum_{i<j} alpha_ij), the Gram determinant of Df expanded by Cauchy-Binet.

    alpha_ij = t_i^2 t_j^2 (exp(-theta t_i - psi t_j) - exp(-theta t_j - psi t_i))^2.

    Evaluated in log space so the value stays positive far from the origin;
    exactly 0 on the diagonal theta == psi.
    """
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    log_terms = []
    for i in range(len(t)):
        for j in range(i + 1, len(t)):
            x = -theta * t[i] - psi * t[j]
            y = -theta * t[j] - psi * t[i]
            log_terms.append(
                2.0 * math.log(t[i]) + 2.0 * math.log(t[j]) + 2.0 * _log_abs_exp_diff(x, y)
            )
    with np.errstate(divide="ignore"):
        log_det = logsumexp(np.stack(log_terms), axis=0)
    return np.exp(0.5 * log_det)


@dataclass(frozen=True)
class ExponentialModel:
    t: tuple[float, float, float] = (1.0, 2.0, 4.0)

    def __post_init__(self) -> None:
        if not 0 < self.t[0] < self.t[1] < self.t[2]:
            raise ValueError(f"Need 0 < t1 < t2 < t3, got {self.t}")

    @property
    def box(self) -> ParamBox:
        return ParamBox([0.0, 0.0], [100.0, 100.0])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return expo_eval(points[:, 0], points[:, 1], self.t)

    def differential(self, x: np.ndarray) -> np.ndarray:
        rates = np.asarray(self.t)
        return np.column_stack([-rates * np.exp(-x[0] * rates), -rates * np.exp(-x[1] * rates)])

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.asarray(expo_jacobian(points[:, 0], points[:, 1], self.t))

    def spec(self) -> ModelSpec:
        return ModelSpec(
            dim_in=2,
            dim_out=3,
            func=lambda x: self.evaluate(x)[0],
            batch_func=self.evaluate,
            differential=self.differential,
            batch_jacobian=self.jacobian,
            name="exponential",
        )

    def constants(self) -> dict[str, Any]:
        return {"t": list(self.t)}


@dataclass(frozen=True)
class IdentityModel:
    """f(x) = x on the unit cube; its output ensemble is its design."""

    dim: int = 2

    @property
    def box(self) -> ParamBox:
        return ParamBox([0.0] * self.dim, [1.0] * self.dim)

    def spec(self) -> ModelSpec:
        return ModelSpec(
            dim_in=self.dim,
            dim_out=self.dim,
            func=lambda x: np.asarray(x, dtype=float).copy(),
            batch_func=lambda points: np.array(points, dtype=float),
            batch_jacobian=lambda points: np.ones(len(np.atleast_2d(points))),
            name="identity",
        )

    def constants(self) -> dict[str, Any]:
        return {"dim": self.dim}


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_span: tuple[float, float],
    rtol: float = 1e-7,
    atol: float = 1e-9,
    events: Callable[[float, np.ndarray], float] | None = None,
    method: str = "RK45",
) -> Any:
    """solve_ivp with dense output and optional events; RK45 unless another method is named.

    Raises:
        NoSteadyStateError: If the integrator reports failure.
    """
    sol = solve_ivp(
        rhs,
        t_span,
        np.asarray(y0, dtype=float),
        method=method,
        rtol=rtol,
        atol=atol,
        dense_output=True,
        events=events,
    )
    if not sol.success:
        raise NoSteadyStateError(f"Integration over {t_span} failed: {sol.message}")
    return sol


@dataclass(frozen=True)
class EnzymeResponse:
    sensitivity: float
    precision: float
    c0: float
    c_max: float
    c1: float
    steady: bool


@dataclass(frozen=True)
class _Settled:
    state: np.ndarray
    steady: bool
    c_max: float


@dataclass(frozen=True)
class EnzymeModel:
    """Three-enzyme Michaelis-Menten adaptation circuit.

    The free parameters (u1, u2) set k_IA = 10^(2 u1 - 1) and k_CB = 10^(2 u2 - 1).
    The output is the (sensitivity, precision) of C's response to a step of
    the input from I0 to I1.
    """

    config: EnzymeConfig = field(default_factory=lambda: EnzymeConfig(name="enzyme"))

    @property
    def box(self) -> ParamBox:
        return self.config.default_box()

    @property
    def rates(self) -> dict[str, float]:
        return dict(zip(ENZYME_RATE_NAMES, self.config.rates, strict=True))

    @staticmethod
    def free_rates(u: np.ndarray) -> tuple[float, float]:
        """(k_IA, k_CB) for the scaled parameters u."""
        return 10.0 ** (2.0 * float(u[0]) - 1.0), 10.0 ** (2.0 * float(u[1]) - 1.0)

    def rhs(self, y: np.ndarray, k_ia: float, k_cb: float, level: float) -> np.ndarray:
        """Time derivative of (A, B, C); also accepts (3, K) stacks of states."""
        c = self.rates
        a, b, cc = y[0], y[1], y[2]
        cfg = self.config
        da = k_ia * level * (1 - a) / ((1 - a) + c["K_IA"]) - cfg.F_A * c["kp_FAA"] * a / (
            a + c["Kp_FAA"]
        )
        db = cc * k_cb * (1 - b) / ((1 - b) + c["K_CB"]) - cfg.F_B * c["kp_FBB"] * b / (
            b + c["Kp_FBB"]
        )
        dc = a * c["k_AC"] * (1 - cc) / ((1 - cc) + c["K_AC"]) - b * c["kp_BC"] * cc / (
            cc + c["Kp_BC"]
        )
        return np.array([da, db, dc])

    def _settle(self, y0: np.ndarray, k_ia: float, k_cb: float, level: float) -> _Settled:
        """Integrate window by window until C's drift stays below tol for a whole window.

        The drift is the largest difference quotient of the dense output sampled at
        WINDOW_SAMPLES evenly spaced times in the window.
        """
        cfg = self.config

        def fun(_t: float, y: np.ndarray) -> np.ndarray:
            return self.rhs(y, k_ia, k_cb, level)

        def turning(_t: float, y: np.ndarray) -> float:
            return float(self.rhs(y, k_ia, k_cb, level)[2])

        c_max = float(y0[2])
        y = np.asarray(y0, dtype=float)
        t = 0.0
        windows = 0
        while t < cfg.t_max:
            t_end = min(t + cfg.steady_window, cfg.t_max)
            sol = integrate(fun, y, (t, t_end), cfg.rtol, cfg.atol, turning, cfg.method)
            c_max = max(c_max, float(np.max(sol.y[2])))
            if sol.y_events and len(sol.y_events[0]):
                c_max = max(c_max, float(np.max(sol.y_events[0][:, 2])))
            y = sol.y[:, -1]
            grid = np.linspace(t, t_end, WINDOW_SAMPLES)
            drift = np.max(np.abs(np.diff(sol.sol(grid), axis=1))) / (grid[1] - grid[0])
            t = t_end
            windows += 1
            if drift < cfg.steady_tol:
                logger.debug("Steady after %d windows (t=%g, level=%g)", windows, t, level)
                return _Settled(self._polish(y, k_ia, k_cb, level), True, c_max)
        return _Settled(y, False, c_max)

    def _polish(self, y: np.ndarray, k_ia: float, k_cb: float, level: float) -> np.ndarray:
        """Newton-refine a settled state onto the root of the rhs; keep y if that fails."""
        result = root(lambda state: self.rhs(state, k_ia, k_cb, level), y)
        refined = np.asarray(result.x, dtype=float)
        if (
            result.success
            and np.all((refined >= 0.0) & (refined <= 1.0))
            and np.max(np.abs(refined - y)) < POLISH_RADIUS
        ):
            return refined
        return y

    def simulate(self, u: np.ndarray) -> EnzymeResponse:
        """Settle at I0, step to I1, settle again and summarize C's response.

        C_max is the largest C(t) over the I1 phase, refined at the turning points of C.

        Raises:
            NoSteadyStateError: In strict mode, when either phase misses steady state.
        """
        cfg = self.config
        k_ia, k_cb = self.free_rates(u)
        before = self._settle(np.zeros(3), k_ia, k_cb, cfg.I0)
        after = self._settle(before.state, k_ia, k_cb, cfg.I1)
        steady = before.steady and after.steady
        if not steady:
            message = f"No steady state within t={cfg.t_max} at u={np.asarray(u).tolist()}"
            if cfg.strict:
                raise NoSteadyStateError(message)
            logger.warning(message)
        c0 = float(before.state[2])
        c1 = float(after.state[2])
        c_max = max(after.c_max, c0, c1)
        relative_input = (cfg.I1 - cfg.I0) / cfg.I0
        sensitivity = abs(((c_max - c0) / c0) / relative_input)
        precision = abs(relative_input) / max(abs((c1 - c0) / c0), PRECISION_FLOOR)
        return EnzymeResponse(sensitivity, precision, c0, c_max, c1, steady)

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        response = self.simulate(u)
        return np.array([response.sensitivity, response.precision])

    def spec(self) -> ModelSpec:
        return ModelSpec(dim_in=2, dim_out=2, func=self.evaluate, name="enzyme")

    def constants(self) -> dict[str, Any]:
        cfg = self.config
        return {
            **self.rates,
            "I0": cfg.I0,
            "I1": cfg.I1,
            "F_A": cfg.F_A,
            "F_B": cfg.F_B,
            "initial_state": [0.0, 0.0, 0.0],
            "rtol": cfg.rtol,
            "atol": cfg.atol,
            "method": cfg.method,
        }


def enzyme_eval(u1: float, u2: float, model: EnzymeModel | None = None) -> np.ndarray:
    """(sensitivity, precision) of the enzyme circuit at the scaled parameters (u1, u2)."""
    return (model or EnzymeModel()).evaluate(np.array([u1, u2], dtype=float))


def uniform_target() -> TargetDensity:
    """mu = 1: uniform with respect to the Hausdorff measure of the image manifold."""
    return TargetDensity(lambda images: np.ones(len(images)), name="uniform")


def inverse_square_distance_target(point: tuple[float, ...] = (0.0, 1.0, 0.0)) -> TargetDensity:
    """mu(y) = 1 / ||y - point||^2."""
    anchor = np.asarray(point, dtype=float)

    def density(images: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / np.sum((images - anchor) ** 2, axis=1)

    return TargetDensity(density, name="inverse_square_distance")


def build_model(config: ModelConfig) -> BenchmarkModel:
    if isinstance(config, TorusConfig):
        return TorusModel(config.R, config.r)
    if isinstance(config, ExponentialConfig):
        return ExponentialModel(config.t)
    if isinstance(config, EnzymeConfig):
        return EnzymeModel(config)
    if isinstance(config, IdentityConfig):
        return IdentityModel(config.dim)
    if isinstance(config, ExternalConfig):
        return ExternalModel(
            command=tuple(config.command),
            dim_in=config.dim_in,
            dim_out=config.dim_out,
            param_box=config.default_box(),
            timeout=config.timeout,
        )
    raise ValueError(f"Unknown model config {config!r}")


def build_target(config: TargetConfig) -> TargetDensity:
    if isinstance(config, InverseSquareDistanceTargetConfig):
        return inverse_square_distance_target(config.point)
    return uniform_target()
