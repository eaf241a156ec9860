"""Tests for the benchmark models and targets."""

import logging
import math

import numpy as np
import pytest

from manifill.config import (
    EnzymeConfig,
    ExponentialConfig,
    ExternalConfig,
    IdentityConfig,
    InverseSquareDistanceTargetConfig,
    TorusConfig,
    UniformTargetConfig,
)
from manifill.core import jacobian_from_differential, substream
from manifill.external import ExternalModel
from manifill.models import (
    EnzymeModel,
    ExponentialModel,
    IdentityModel,
    NoSteadyStateError,
    TorusModel,
    build_model,
    build_target,
    enzyme_eval,
    expo_eval,
    expo_jacobian,
    integrate,
    inverse_square_distance_target,
    torus_eval,
    torus_jacobian,
)


def _enzyme(**overrides: object) -> EnzymeModel:
    values: dict[str, object] = {"name": "enzyme"}
    values.update(overrides)
    return EnzymeModel(EnzymeConfig.model_validate(values))


class TestTorus:
    """Tests for the torus model."""

    def test_points_on_surface(self, rng: np.random.Generator) -> None:
        """Images satisfy (sqrt(y1^2 + y2^2) - R)^2 + y3^2 = r^2."""
        params = rng.random((1000, 2)) * 2 * math.pi
        y = torus_eval(params[:, 0], params[:, 1], 1.0, 0.9)
        lhs = (np.hypot(y[:, 0], y[:, 1]) - 1.0) ** 2 + y[:, 2] ** 2
        assert np.allclose(lhs, 0.81, rtol=0.0, atol=1e-12)

    def test_known_values(self) -> None:
        """f(0, 0) = (R + r, 0, 0) and J(0) = r (R + r)."""
        assert torus_eval(0.0, 0.0).tolist() == pytest.approx([1.9, 0.0, 0.0])
        assert torus_jacobian(0.0) == pytest.approx(1.71)
        assert torus_jacobian(math.pi) == pytest.approx(0.09)

    def test_jacobian_matches_differential(
        self, torus: TorusModel, rng: np.random.Generator
    ) -> None:
        """The closed form equals sqrt(det(Df^T Df))."""
        for x in rng.random((20, 2)) * 2 * math.pi:
            expected = jacobian_from_differential(torus.differential(x), x)
            assert float(torus.jacobian(x)[0]) == pytest.approx(expected, rel=1e-12)

    def test_invalid_radii(self) -> None:
        """r must be below R."""
        with pytest.raises(ValueError):
            TorusModel(R=1.0, r=1.0)

    def test_spec(self, torus: TorusModel) -> None:
        """ModelSpec evaluates single points and batches alike."""
        spec = torus.spec()
        x = np.array([0.3, 1.2])
        assert np.array_equal(spec.func(x), spec.evaluate_batch(x[None])[0])
        assert spec.has_derivative
        assert torus.constants() == {"R": 1.0, "r": 0.9}


class TestExponential:
    """Tests for the exponential-sum model."""

    def test_symmetry(self, rng: np.random.Generator) -> None:
        """Swapping the parameters leaves the image unchanged."""
        theta, psi = rng.random(50) * 5, rng.random(50) * 5
        assert np.allclose(expo_eval(theta, psi), expo_eval(psi, theta), rtol=1e-15)
        assert np.allclose(expo_jacobian(theta, psi), expo_jacobian(psi, theta), rtol=1e-12)

    def test_origin(self) -> None:
        """f(0, 0) = (2, 2, 2)."""
        assert expo_eval(0.0, 0.0).tolist() == [2.0, 2.0, 2.0]

    def test_diagonal_is_singular(self) -> None:
        """J vanishes exactly on theta = psi."""
        values = expo_jacobian(np.array([0.0, 1.0, 50.0]), np.array([0.0, 1.0, 50.0]))
        assert np.all(values == 0.0)

    def test_positive_far_from_origin(self) -> None:
        """Log-space evaluation keeps J positive where exp underflows term by term."""
        value = float(expo_jacobian(40.0, 45.0))
        assert value > 0.0
        assert math.isfinite(value)

    def test_jacobian_matches_differential(self, expo: ExponentialModel) -> None:
        """The Cauchy-Binet expansion equals sqrt(det(Df^T Df))."""
        points = 3.0 * substream(12, 0).random((30, 2))
        points = points[np.abs(points[:, 0] - points[:, 1]) > 0.1]
        for x in points:
            expected = jacobian_from_differential(expo.differential(x), x)
            assert float(expo.jacobian(x)[0]) == pytest.approx(expected, rel=1e-8)

    def test_invalid_rates(self) -> None:
        """Rates must be increasing and positive."""
        with pytest.raises(ValueError):
            ExponentialModel((2.0, 1.0, 4.0))


class TestIntegrate:
    """Tests for the ODE integrator wrapper."""

    def test_exponential_decay(self) -> None:
        """y' = -y integrates to exp(-t)."""
        sol = integrate(lambda _t, y: -y, np.array([1.0]), (0.0, 5.0), rtol=1e-10, atol=1e-12)
        assert sol.y[0, -1] == pytest.approx(math.exp(-5.0), rel=1e-8)
        assert sol.sol(2.0)[0] == pytest.approx(math.exp(-2.0), rel=1e-6)

    def test_unit_decay_to_one(self) -> None:
        """y' = -y from 1 reaches exp(-1) at T = 1 with the Runge-Kutta 5(4) default."""
        sol = integrate(lambda _t, y: -y, np.array([1.0]), (0.0, 1.0), rtol=1e-12, atol=1e-14)
        assert abs(sol.y[0, -1] - math.exp(-1.0)) < 1e-9
        loose = integrate(lambda _t, y: -y, np.array([1.0]), (0.0, 1.0))
        assert abs(loose.y[0, -1] - math.exp(-1.0)) < 1e-7

    def test_failure_raises(self) -> None:
        """A solution blowing up in finite time is reported."""
        with pytest.raises(NoSteadyStateError):
            integrate(lambda _t, y: y**2, np.array([1.0]), (0.0, 2.0))


class TestEnzyme:
    """Tests for the enzyme adaptation circuit."""

    def test_free_rates(self) -> None:
        """u maps to k = 10^(2u - 1)."""
        assert EnzymeModel.free_rates(np.array([0.5, 1.0])) == pytest.approx((1.0, 10.0))
        assert EnzymeModel.free_rates(np.array([0.0, 0.0])) == pytest.approx((0.1, 0.1))

    def test_rhs_at_rest(self) -> None:
        """From the zero state only A is driven by the input."""
        model = _enzyme()
        dy = model.rhs(np.zeros(3), 1.0, 1.0, 0.5)
        assert dy[0] == pytest.approx(0.5 / (1.0 + model.rates["K_IA"]))
        assert dy[1] == 0.0
        assert dy[2] == 0.0

    def test_rhs_vectorized(self) -> None:
        """rhs accepts a (3, K) stack of states."""
        model = _enzyme()
        states = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
        stacked = model.rhs(states, 1.0, 2.0, 0.5)
        assert stacked.shape == (3, 2)
        assert np.allclose(stacked[:, 1], model.rhs(states[:, 1], 1.0, 2.0, 0.5))

    def test_response_is_finite(self) -> None:
        """Sensitivity and precision are positive and finite."""
        model = _enzyme()
        response = model.simulate(np.array([0.6, 0.5]))
        assert response.sensitivity > 0 and math.isfinite(response.sensitivity)
        assert response.precision > 0 and math.isfinite(response.precision)
        assert 0 < response.c0 < 1
        assert np.array_equal(
            model.evaluate(np.array([0.6, 0.5])),
            np.array([response.sensitivity, response.precision]),
        )

    def test_strict_mode_raises(self) -> None:
        """Missing steady state is an error in strict mode."""
        model = _enzyme(t_max=1.0, steady_window=0.5, strict=True)
        with pytest.raises(NoSteadyStateError):
            model.simulate(np.array([0.6, 0.5]))

    def test_lenient_mode_warns(self, caplog: pytest.LogCaptureFixture) -> None:
        """Outside strict mode the last state is used and a warning is logged."""
        model = _enzyme(t_max=1.0, steady_window=0.5)
        with caplog.at_level(logging.WARNING, logger="manifill.models"):
            response = model.simulate(np.array([0.6, 0.5]))
        assert not response.steady
        assert "No steady state" in caplog.text

    def test_constants(self) -> None:
        """The manifest constants list rates, inputs and integrator settings."""
        constants = _enzyme().constants()
        assert constants["K_IA"] == 0.0183
        assert constants["I0"] == 0.5
        assert constants["method"] == "LSODA"
        assert constants["initial_state"] == [0.0, 0.0, 0.0]

    def test_enzyme_eval(self) -> None:
        """The functional form matches the model."""
        model = _enzyme()
        assert np.array_equal(enzyme_eval(0.6, 0.5, model), model.evaluate(np.array([0.6, 0.5])))

    def test_spec_has_no_derivative(self) -> None:
        """The enzyme model is a black box."""
        spec = _enzyme().spec()
        assert not spec.has_derivative
        assert (spec.dim_in, spec.dim_out) == (2, 2)

    def test_default_settings_settle_at_midpoint(self) -> None:
        """The default integrator settles both phases at the middle of the box."""
        model = EnzymeModel()
        u = np.array([0.615, 0.5])
        k_ia, k_cb = model.free_rates(u)
        before = model._settle(np.zeros(3), k_ia, k_cb, model.config.I0)
        after = model._settle(before.state, k_ia, k_cb, model.config.I1)
        assert before.steady and after.steady
        assert np.max(np.abs(model.rhs(before.state, k_ia, k_cb, model.config.I0))) < 1e-8
        assert np.max(np.abs(model.rhs(after.state, k_ia, k_cb, model.config.I1))) < 1e-8

        response = model.simulate(u)
        assert response.steady
        assert response.c0 == pytest.approx(float(before.state[2]), rel=1e-3)
        assert response.c1 == pytest.approx(float(after.state[2]), rel=1e-3)
        assert response.sensitivity > 0 and math.isfinite(response.sensitivity)
        assert response.precision > 0 and math.isfinite(response.precision)

    def test_c_max_bounds_the_transient(self) -> None:
        """C_max is the largest C over the I1 phase and sets the sensitivity."""
        model = EnzymeModel()
        response = model.simulate(np.array([0.615, 0.5]))
        assert response.c_max >= max(response.c0, response.c1)
        relative_input = (model.config.I1 - model.config.I0) / model.config.I0
        expected = abs((response.c_max - response.c0) / response.c0 / relative_input)
        assert response.sensitivity == pytest.approx(expected)

    def test_stable_under_dithering(self) -> None:
        """A 1e-6 shift of the parameters moves the outputs by less than 1e-3."""
        model = EnzymeModel()
        box = model.box
        points = box.lower + (box.upper - box.lower - 1e-6) * substream(20, 0).random((20, 2))
        for u in points:
            base = model.evaluate(u)
            shifted = model.evaluate(u + 1e-6)
            assert np.all(np.isfinite(base))
            assert np.allclose(base, shifted, rtol=1e-3, atol=1e-3), u.tolist()

    def test_deterministic(self) -> None:
        """Repeated evaluation gives identical outputs."""
        model = EnzymeModel()
        u = np.array([0.5, 0.25])
        assert np.array_equal(model.evaluate(u), model.evaluate(u))

    @pytest.mark.slow
    def test_runge_kutta_reaches_steady_state(self) -> None:
        """RK45 stays usable: both phases settle inside the box."""
        model = _enzyme(method="RK45")
        for u in ([0.4, 0.3], [0.615, 0.5], [0.85, 0.9]):
            response = model.simulate(np.array(u))
            assert response.steady
            assert math.isfinite(response.sensitivity)
            assert math.isfinite(response.precision)


class TestTargets:
    """Tests for target densities."""

    def test_inverse_square_distance(self) -> None:
        """mu(y) = 1 / ||y - p||^2."""
        target = inverse_square_distance_target((0.0, 1.0, 0.0))
        values = target.evaluate(np.array([[0.0, 0.0, 0.0], [0.0, 3.0, 0.0]]))
        assert values.tolist() == pytest.approx([1.0, 0.25])

    def test_build_target(self) -> None:
        """Target sections map to target densities."""
        assert build_target(UniformTargetConfig()).name == "uniform"
        config = InverseSquareDistanceTargetConfig(name="inverse_square_distance")
        assert build_target(config).name == "inverse_square_distance"


class TestBuildModel:
    """Tests for build_model."""

    def test_each_model(self) -> None:
        """Every model section builds the matching model."""
        assert isinstance(build_model(TorusConfig(name="torus")), TorusModel)
        assert isinstance(build_model(ExponentialConfig(name="exponential")), ExponentialModel)
        assert isinstance(build_model(EnzymeConfig(name="enzyme")), EnzymeModel)
        assert build_model(IdentityConfig(name="identity", dim=3)) == IdentityModel(3)
        external = build_model(
            ExternalConfig(
                name="external",
                command=["simulator"],
                dim_in=1,
                dim_out=2,
                lower=[0.0],
                upper=[1.0],
            )
        )
        assert isinstance(external, ExternalModel)
        assert external.box.upper.tolist() == [1.0]
