"""Tests for the core domain types."""

import math

import numpy as np
import pytest

from manifill.core import (
    Diagnostics,
    Ensemble,
    InvalidTargetError,
    IterationRecord,
    ModelSpec,
    NonFiniteJacobianError,
    OutOfBoxError,
    ParamBox,
    TargetDensity,
    UniformDensity,
    jacobian_batch,
    jacobian_m,
    substream,
    unit_ball_volume,
)
from manifill.models import ExponentialModel, IdentityModel, TorusModel


def _record(iteration: int, f_evals: int) -> IterationRecord:
    return IterationRecord(
        iteration=iteration,
        w1_successive=math.nan,
        ess=1.0,
        min_weight=0.5,
        max_weight=0.5,
        f_evals=f_evals,
        unique_fraction=1.0,
        bandwidth=0.1,
    )


class TestParamBox:
    """Tests for ParamBox."""

    def test_volume_and_diameter(self) -> None:
        """Volume is the product of widths, diameter their Euclidean norm."""
        box = ParamBox([0.0, 1.0], [3.0, 5.0])
        assert box.dim == 2
        assert box.volume() == 12.0
        assert box.diameter() == 5.0

    def test_degenerate_box_rejected(self) -> None:
        """lower must be strictly below upper in every coordinate."""
        with pytest.raises(ValueError, match="Degenerate"):
            ParamBox([0.0, 1.0], [1.0, 1.0])

    def test_mismatched_bounds_rejected(self) -> None:
        """Bounds of different lengths are rejected."""
        with pytest.raises(ValueError):
            ParamBox([0.0], [1.0, 1.0])

    def test_boundary_points_are_inside(self) -> None:
        """The box is closed."""
        box = ParamBox([0.0, 0.0], [1.0, 1.0])
        mask = box.contains(np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 1.0 + 1e-12]]))
        assert mask.tolist() == [True, True, False]

    def test_require_raises_out_of_box(self) -> None:
        """require() names the offending point."""
        box = ParamBox([0.0], [1.0])
        with pytest.raises(OutOfBoxError, match="1.5"):
            box.require(np.array([[0.5], [1.5]]))

    def test_bounds_are_read_only(self) -> None:
        """Bounds cannot be mutated after construction."""
        box = ParamBox([0.0], [1.0])
        with pytest.raises(ValueError):
            box.lower[0] = -1.0

    def test_uniform_draws_inside(self, rng: np.random.Generator) -> None:
        """Uniform draws land in the box."""
        box = ParamBox([-1.0, 2.0], [1.0, 3.0])
        points = box.uniform(rng, 1000)
        assert points.shape == (1000, 2)
        assert box.contains(points).all()


class TestSubstream:
    """Tests for keyed random substreams."""

    def test_same_key_same_stream(self) -> None:
        """The same (seed, key) reproduces the same draws."""
        assert np.array_equal(substream(3, 1, 2).random(5), substream(3, 1, 2).random(5))

    def test_different_keys_differ(self) -> None:
        """Different keys give different streams."""
        assert not np.array_equal(substream(3, 1, 2).random(5), substream(3, 1, 3).random(5))
        assert not np.array_equal(substream(3, 1, 2).random(5), substream(4, 1, 2).random(5))


class TestUnitBallVolume:
    """Tests for unit_ball_volume."""

    def test_small_dimensions(self) -> None:
        """Known volumes for m = 1, 2, 3."""
        assert unit_ball_volume(1) == pytest.approx(2.0, rel=1e-15)
        assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-15)
        assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-15)

    def test_recursion(self) -> None:
        """V_m = V_{m-2} * 2 pi / m."""
        for m in range(3, 12):
            expected = unit_ball_volume(m - 2) * 2.0 * math.pi / m
            assert unit_ball_volume(m) == pytest.approx(expected, rel=1e-12)

    def test_invalid_dimension(self) -> None:
        """m must be positive."""
        with pytest.raises(ValueError):
            unit_ball_volume(0)


class TestModelSpec:
    """Tests for ModelSpec."""

    def test_dimension_check(self) -> None:
        """m may not exceed n."""
        with pytest.raises(ValueError):
            ModelSpec(dim_in=3, dim_out=2, func=lambda x: x[:2])

    def test_threaded_matches_sequential(self, rng: np.random.Generator) -> None:
        """Thread-pool evaluation preserves order and values."""
        spec = ModelSpec(dim_in=2, dim_out=3, func=lambda x: np.array([x[0], x[1], x[0] * x[1]]))
        points = rng.random((50, 2))
        assert np.array_equal(spec.evaluate_batch(points, 1), spec.evaluate_batch(points, 4))

    def test_batch_func_preferred(self) -> None:
        """batch_func is used when present."""
        calls: list[int] = []

        def batch(points: np.ndarray) -> np.ndarray:
            calls.append(len(points))
            return np.array(points)

        spec = ModelSpec(dim_in=1, dim_out=1, func=lambda x: x, batch_func=batch)
        spec.evaluate_batch(np.zeros((4, 1)))
        assert calls == [4]

    def test_empty_batch(self) -> None:
        """No points give an empty (0, n) array."""
        spec = ModelSpec(dim_in=1, dim_out=2, func=lambda x: np.array([x[0], x[0]]))
        assert spec.evaluate_batch(np.empty((0, 1))).shape == (0, 2)


class TestTargetDensity:
    """Tests for TargetDensity."""

    def test_negative_value_rejected(self) -> None:
        """A negative density value raises InvalidTargetError."""
        target = TargetDensity(lambda y: y[:, 0], name="signed")
        with pytest.raises(InvalidTargetError, match="signed"):
            target.evaluate(np.array([[1.0], [-1.0]]))

    def test_nonfinite_value_rejected(self) -> None:
        """An infinite density value raises InvalidTargetError."""
        target = TargetDensity(lambda y: 1.0 / y[:, 0])
        with pytest.raises(InvalidTargetError):
            target.evaluate(np.array([[0.0]]))


class TestEnsemble:
    """Tests for Ensemble."""

    def test_uniform_weights(self, unit_square: ParamBox) -> None:
        """Ensemble.uniform assigns 1/N to every point."""
        ens = Ensemble.uniform(np.full((4, 2), 0.5), UniformDensity(unit_square), unit_square)
        assert ens.size == 4
        assert np.all(ens.weights == 0.25)

    def test_weights_must_sum_to_one(self, unit_square: ParamBox) -> None:
        """Weights off by more than the tolerance are rejected."""
        with pytest.raises(ValueError, match="sum to 1"):
            Ensemble(
                np.full((2, 2), 0.5), np.array([0.5, 0.6]), UniformDensity(unit_square), unit_square
            )

    def test_points_must_be_in_box(self, unit_square: ParamBox) -> None:
        """Points outside the box raise OutOfBoxError."""
        with pytest.raises(OutOfBoxError):
            Ensemble.uniform(np.array([[0.5, 1.5]]), UniformDensity(unit_square), unit_square)

    def test_images_required(self, unit_square: ParamBox) -> None:
        """require_images fails before evaluation and succeeds after."""
        ens = Ensemble.uniform(np.full((2, 2), 0.5), UniformDensity(unit_square), unit_square)
        with pytest.raises(ValueError):
            ens.require_images()
        assert ens.with_images(np.ones((2, 3))).require_images().shape == (2, 3)


class TestDiagnostics:
    """Tests for Diagnostics."""

    def test_evaluation_count_monotone(self) -> None:
        """A decreasing evaluation count is rejected."""
        diagnostics = Diagnostics()
        diagnostics.append(_record(0, 10))
        diagnostics.append(_record(1, 20))
        with pytest.raises(ValueError):
            diagnostics.append(_record(2, 15))
        assert len(diagnostics) == 2


class TestJacobian:
    """Tests for jacobian_m and its finite-difference fallback."""

    def test_torus_at_origin(self, torus: TorusModel) -> None:
        """J_2 f(0, 0) = 0.9 * 1.9."""
        assert jacobian_m(torus.spec(), np.array([0.0, 0.0])) == pytest.approx(1.71, rel=1e-14)

    def test_identity(self) -> None:
        """The identity has unit Jacobian."""
        model = IdentityModel(2)
        value = jacobian_batch(model.spec(), np.array([[0.3, 0.4]]))
        assert value[0] == 1.0

    def test_torus_finite_difference(self, torus: TorusModel) -> None:
        """Analytic and finite-difference Jacobians agree on the torus."""
        box = torus.box
        points = box.lower + box.widths * substream(1, 0).random((100, 2)) * 0.98 + 0.01
        spec = torus.spec()
        fd_only = ModelSpec(dim_in=2, dim_out=3, func=spec.func)
        for x in points:
            analytic = jacobian_m(spec, x)
            numeric = jacobian_m(fd_only, x, box, finite_difference=True)
            assert numeric == pytest.approx(analytic, rel=1e-6)

    def test_exponential_finite_difference(self, expo: ExponentialModel) -> None:
        """Analytic and finite-difference Jacobians agree on the exponential model."""
        box = ParamBox([0.0, 0.0], [3.0, 3.0])
        spec = expo.spec()
        fd_only = ModelSpec(dim_in=2, dim_out=3, func=spec.func)
        points = 3.0 * substream(2, 0).random((400, 2))
        points = points[np.abs(points[:, 0] - points[:, 1]) > 0.3][:100]
        for x in points:
            analytic = float(jacobian_batch(spec, x[None])[0])
            numeric = jacobian_m(fd_only, x, box, finite_difference=True)
            assert numeric == pytest.approx(analytic, rel=1e-5)

    def test_one_sided_at_faces(self, torus: TorusModel) -> None:
        """Finite differences stay in the box at the faces."""
        spec = torus.spec()
        fd_only = ModelSpec(dim_in=2, dim_out=3, func=spec.func)
        x = np.array([0.0, 0.0])
        numeric = jacobian_m(fd_only, x, torus.box, finite_difference=True)
        assert numeric == pytest.approx(1.71, rel=1e-4)

    def test_no_derivative_without_fallback(self) -> None:
        """A model without derivative needs the fallback enabled."""
        spec = ModelSpec(dim_in=1, dim_out=1, func=lambda x: x)
        with pytest.raises(ValueError, match="finite differences"):
            jacobian_m(spec, np.array([0.5]))

    def test_rank_deficient_raises(self) -> None:
        """A singular differential raises NonFiniteJacobianError."""
        spec = ModelSpec(
            dim_in=2,
            dim_out=2,
            func=lambda x: np.array([x[0], x[0]]),
            differential=lambda x: np.array([[1.0, 0.0], [1.0, 0.0]]),
        )
        with pytest.raises(NonFiniteJacobianError):
            jacobian_m(spec, np.array([0.5, 0.5]))

    def test_zero_batch_jacobian_raises(self, expo: ExponentialModel) -> None:
        """The exponential model's diagonal has zero Jacobian."""
        with pytest.raises(NonFiniteJacobianError):
            jacobian_batch(expo.spec(), np.array([[1.0, 1.0]]))
