"""Command-line interface: run experiments, dump oracle samples, compare sample files."""

import argparse
import csv
import json
import logging
import sys
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TextIO

import numpy as np
import scipy
from pydantic import ValidationError

from manifill import __version__
from manifill.config import (
    ExperimentConfig,
    Settings,
    load_experiment,
    load_settings,
)
from manifill.core import Ensemble, IterationRecord, ManifillError, substream
from manifill.engine import rate_alpha, run
from manifill.kernel import ReflectedKernel
from manifill.models import (
    EnzymeModel,
    ExponentialModel,
    TorusModel,
    build_model,
    build_target,
)
from manifill.oracle import (
    OracleSample,
    expo_oracle,
    parameter_uniform_pushforward,
    torus_nonuniform_oracle,
    torus_uniform_oracle,
)
from manifill.transport import GroundMetric, w1_exact, w1_sliced

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# Stream tag for oracle and sliced-W1 draws made by the command line
CLI_STREAM = 5

DIAGNOSTIC_COLUMNS = (
    "iteration",
    "w1_successive",
    "ess",
    "min_weight",
    "max_weight",
    "f_evals",
    "unique_fraction",
    "bandwidth",
    "acceptance_rate",
    "truncation_normalizer",
    "w1_estimator",
)

ORACLES = (
    "torus_uniform",
    "torus_nonuniform",
    "expo",
    "torus_param_uniform",
    "expo_param_uniform",
    "enzyme_param_uniform",
)


class ConfigError(ValueError):
    """Raised for command-line input that cannot be used (exit code 2)."""


def fmt(value: float | int | str) -> str:
    """Full-precision decimal, independent of locale; labels pass through."""
    if isinstance(value, str):
        return value
    if isinstance(value, int | np.integer):
        return str(int(value))
    return format(float(value), ".17g")


def _writer(handle: TextIO) -> Any:
    return csv.writer(handle, lineterminator="\n")


def write_samples(path: Path, history: Iterable[Ensemble]) -> None:
    """samples.csv: one block per iteration of post-resampling points, images and weights."""
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = None
        for iteration, ensemble in enumerate(history):
            images = ensemble.require_images()
            if writer is None:
                writer = _writer(handle)
                writer.writerow(
                    ["iteration", "index"]
                    + [f"x_{i + 1}" for i in range(ensemble.points.shape[1])]
                    + [f"y_{i + 1}" for i in range(images.shape[1])]
                    + ["weight"]
                )
            for index, (x, y, w) in enumerate(
                zip(ensemble.points, images, ensemble.weights, strict=True)
            ):
                writer.writerow(
                    [iteration, index] + [fmt(v) for v in x] + [fmt(v) for v in y] + [fmt(w)]
                )


def write_oracle(path: Path, sample: OracleSample) -> None:
    """Oracle CSV: parameter columns x_* then image columns y_*; header only when empty."""
    dim_in = sample.params.shape[1] if sample.params.ndim == 2 else 0
    dim_out = sample.images.shape[1] if sample.images.ndim == 2 else 0
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _writer(handle)
        writer.writerow(
            [f"x_{i + 1}" for i in range(dim_in)] + [f"y_{i + 1}" for i in range(dim_out)]
        )
        for x, y in zip(sample.params, sample.images, strict=True):
            writer.writerow([fmt(v) for v in x] + [fmt(v) for v in y])


def read_images(path: Path) -> np.ndarray:
    """Image columns (y_*) of a samples or oracle CSV; every column if none is named y_*.

    For samples files only the last iteration is used.
    """
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
            header = rows[0].keys() if rows else []
    except OSError as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc
    if not rows:
        return np.empty((0, 0))
    if "iteration" in header:
        last = max(int(row["iteration"]) for row in rows)
        rows = [row for row in rows if int(row["iteration"]) == last]
    columns = [c for c in header if c.startswith("y_")] or list(header)
    try:
        return np.array([[float(row[c]) for c in columns] for row in rows])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path} has non-numeric values: {exc}") from exc


class DiagnosticsWriter:
    """Appends one diagnostics.csv row per finished iteration."""

    def __init__(self, handle: TextIO) -> None:
        self._writer = _writer(handle)
        self._handle = handle
        self._writer.writerow(DIAGNOSTIC_COLUMNS)

    def __call__(self, iteration: int, record: IterationRecord) -> None:
        self._writer.writerow([fmt(getattr(record, column)) for column in DIAGNOSTIC_COLUMNS])
        self._handle.flush()


def build_manifest(experiment: ExperimentConfig, stop_reason: str | None) -> dict[str, Any]:
    box = experiment.resolved_box()
    model = build_model(experiment.model)
    kernel = ReflectedKernel(experiment.run.kernel, experiment.run.h, box)
    lipschitz, gradient_lipschitz = kernel.lipschitz_constants()
    return {
        "config": experiment.resolved(),
        "seed": experiment.run.seed,
        "version": __version__,
        "libraries": {"numpy": np.__version__, "scipy": scipy.__version__},
        "model_constants": model.constants(),
        "rate_alpha": rate_alpha(experiment.run.n_samples, box.dim),
        "kernel_lipschitz": lipschitz,
        "kernel_gradient_lipschitz": gradient_lipschitz,
        "stop_reason": stop_reason,
    }


def cmd_run(config_path: Path, out: Path, seed: int | None, settings: Settings) -> int:
    """Run an experiment and write samples.csv, diagnostics.csv and manifest.json."""
    try:
        experiment = load_experiment(config_path)
        if seed is not None:
            experiment = experiment.with_seed(seed)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        print(f"Invalid configuration {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out.mkdir(parents=True, exist_ok=True)
    box = experiment.resolved_box()
    model = build_model(experiment.model)
    try:
        with (out / "diagnostics.csv").open("w", encoding="utf-8", newline="") as handle:
            result = run(
                model.spec(),
                build_target(experiment.target),
                box,
                experiment.run,
                progress_callback=DiagnosticsWriter(handle),
                workers=settings.workers,
            )
    except ManifillError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"Invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    write_samples(out / "samples.csv", result.history)
    manifest = build_manifest(experiment, result.diagnostics.stop_reason)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    logger.info("Wrote %d iterations to %s", len(result.history), out)
    return EXIT_OK


def draw_oracle(name: str, count: int, seed: int, workers: int = 1) -> OracleSample:
    rng = substream(seed, CLI_STREAM)
    if name == "torus_uniform":
        return torus_uniform_oracle(1.0, 0.9, count, rng)
    if name == "torus_nonuniform":
        return torus_nonuniform_oracle(1.0, 0.9, count, rng)
    if name == "expo":
        return expo_oracle((1.0, 2.0, 4.0), count, rng)
    if name == "torus_param_uniform":
        return parameter_uniform_pushforward(TorusModel(), count, rng, workers)
    if name == "expo_param_uniform":
        return parameter_uniform_pushforward(ExponentialModel(), count, rng, workers)
    if name == "enzyme_param_uniform":
        return parameter_uniform_pushforward(EnzymeModel(), count, rng, workers)
    raise ConfigError(f"Unknown oracle '{name}'; choose from {', '.join(ORACLES)}")


def cmd_oracle(name: str, count: int, seed: int, out: Path, settings: Settings) -> int:
    """Dump oracle samples to a CSV file."""
    if count < 0:
        print("count must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sample = draw_oracle(name, count, seed, settings.workers)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except ManifillError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out.parent.mkdir(parents=True, exist_ok=True)
    write_oracle(out, sample)
    logger.info("Wrote %d %s samples to %s", len(sample), name, out)
    return EXIT_OK


def cmd_w1(
    file_a: Path,
    file_b: Path,
    metric: str,
    projections: int | None,
    seed: int,
    stream: TextIO,
) -> int:
    """Print the W1 distance between the image columns of two CSV files."""
    try:
        a = read_images(file_a)
        b = read_images(file_b)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if a.shape != b.shape:
        print(f"Row or column counts differ: {a.shape} vs {b.shape}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if projections is not None:
            value = w1_sliced(a, b, projections, substream(seed, CLI_STREAM))
        elif len(a) == 0:
            value = 0.0
        else:
            value = w1_exact(a, b, metric)
    except ManifillError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(fmt(value), file=stream)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifill",
        description="Space-filling designs on the image manifold of a computer experiment.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run an experiment from a JSON config")
    run_parser.add_argument("--config", type=Path, required=True)
    run_parser.add_argument("--out", type=Path, required=True, help="output directory")
    run_parser.add_argument("--seed", type=int, default=None, help="overrides run.seed")

    oracle_parser = sub.add_parser("oracle", help="dump oracle samples to CSV")
    oracle_parser.add_argument("model", choices=ORACLES)
    oracle_parser.add_argument("--count", type=int, required=True)
    oracle_parser.add_argument("--seed", type=int, default=0)
    oracle_parser.add_argument("--out", type=Path, required=True, help="output CSV file")

    w1_parser = sub.add_parser("w1", help="W1 distance between two sample files")
    w1_parser.add_argument("file_a", type=Path)
    w1_parser.add_argument("file_b", type=Path)
    w1_parser.add_argument(
        "--metric", choices=[m.value for m in GroundMetric], default=GroundMetric.EUCLIDEAN.value
    )
    w1_parser.add_argument(
        "--projections", type=int, default=None, help="use sliced W1 with this many directions"
    )
    w1_parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    settings = load_settings()

    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, settings)
    if args.command == "oracle":
        return cmd_oracle(args.model, args.count, args.seed, args.out, settings)
    return cmd_w1(args.file_a, args.file_b, args.metric, args.projections, args.seed, sys.stdout)
