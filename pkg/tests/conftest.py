"""Shared fixtures for the manifill test suite."""

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from manifill.config import Algorithm, RunConfig
from manifill.core import Ensemble, ParamBox, UniformDensity
from manifill.models import ExponentialModel, IdentityModel, TorusModel


@pytest.fixture
def rng() -> np.random.Generator:
    """A fixed-seed generator."""
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_square() -> ParamBox:
    return ParamBox([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def unit_interval() -> ParamBox:
    return ParamBox([0.0], [1.0])


@pytest.fixture
def torus() -> TorusModel:
    return TorusModel(R=1.0, r=0.9)


@pytest.fixture
def expo() -> ExponentialModel:
    return ExponentialModel((1.0, 2.0, 4.0))


@pytest.fixture
def identity() -> IdentityModel:
    return IdentityModel(2)


@pytest.fixture
def make_run_config() -> Callable[..., RunConfig]:
    """Factory for RunConfig with small, fast defaults."""

    def factory(**overrides: Any) -> RunConfig:
        values: dict[str, Any] = {
            "algorithm": Algorithm.JACOBIAN,
            "N": 200,
            "q": 0.1,
            "h": 0.1,
            "max_iterations": 3,
            "stop_tol": 0.0,
            "seed": 7,
        }
        values.update(overrides)
        return RunConfig.model_validate(values)

    return factory


@pytest.fixture
def make_ensemble() -> Callable[[np.ndarray, ParamBox], Ensemble]:
    """Factory for uniformly weighted ensembles drawn from the uniform density."""

    def factory(points: np.ndarray, box: ParamBox) -> Ensemble:
        return Ensemble.uniform(np.atleast_2d(points), UniformDensity(box), box)

    return factory


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[dict[str, Any]], Path]:
    """Write an experiment document to a temporary JSON file."""

    def factory(document: dict[str, Any]) -> Path:
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return factory
