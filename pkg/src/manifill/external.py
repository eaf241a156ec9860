"""External models: user executables evaluated through a line-oriented stdin/stdout protocol."""

import asyncio
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from manifill.core import ManifillError, ModelSpec, ParamBox

logger = logging.getLogger(__name__)

# Default timeout for one batch (10 minutes)
DEFAULT_TIMEOUT_SECONDS = 600.0


class ExternalModelError(ManifillError):
    """Raised when an external model process fails or emits malformed output."""


def format_points(points: np.ndarray) -> bytes:
    """One line per point, m whitespace-separated decimals at full precision."""
    lines = (" ".join(format(float(v), ".17g") for v in row) for row in points)
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_images(raw_output: str, count: int, dim_out: int) -> np.ndarray:
    """Parse ``count`` lines of ``dim_out`` decimals.

    Raises:
        ExternalModelError: On missing lines, short lines or non-numeric fields.
    """
    lines = [line for line in raw_output.splitlines() if line.strip()]
    if len(lines) < count:
        raise ExternalModelError(f"Expected {count} output lines, got {len(lines)}")
    images = np.empty((count, dim_out))
    for i, line in enumerate(lines[:count]):
        fields = line.split()
        if len(fields) < dim_out:
            raise ExternalModelError(
                f"Line {i + 1} has {len(fields)} values, expected {dim_out}: {line!r}"
            )
        try:
            images[i] = [float(v) for v in fields[:dim_out]]
        except ValueError as exc:
            raise ExternalModelError(f"Line {i + 1} is not numeric: {line!r}") from exc
    if len(lines) > count:
        logger.warning("External model emitted %d extra lines", len(lines) - count)
    return images


@dataclass(frozen=True)
class ExternalModel:
    """A black-box simulator run as one process per batch of points."""

    command: tuple[str, ...]
    dim_in: int
    dim_out: int
    param_box: ParamBox
    timeout: float = DEFAULT_TIMEOUT_SECONDS

    @property
    def box(self) -> ParamBox:
        return self.param_box

    async def evaluate_async(self, points: np.ndarray) -> np.ndarray:
        """Send every point to a fresh process and read one image line per point.

        Args:
            points: (N, m) design points.

        Returns:
            (N, n) images in input order.

        Raises:
            ExternalModelError: If the process cannot start, times out, exits
                nonzero or emits malformed output.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim_in:
            raise ValueError(f"Expected points of dimension {self.dim_in}")
        logger.debug("Running %s on %d points", self.command[0], len(points))

        process = None
        try:
            process = await asyncio.create_subprocess_exec(
                *self.command,
                stdin=asyncio.subprocess.PIPE,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.PIPE,
            )
            # A timeout of 0 waits indefinitely
            actual_timeout = self.timeout if self.timeout > 0 else None
            stdout, stderr = await asyncio.wait_for(
                process.communicate(format_points(points)), timeout=actual_timeout
            )
        except TimeoutError as exc:
            if process is not None:
                process.kill()
                await process.wait()
            raise ExternalModelError(
                f"External model timed out after {self.timeout}s on {len(points)} points"
            ) from exc
        except OSError as exc:
            # TimeoutError subclasses OSError; this clause must stay last
            raise ExternalModelError(f"Failed to execute {self.command[0]}: {exc}") from exc

        stderr_str = stderr.decode(errors="replace").strip() if stderr else ""
        if process.returncode != 0:
            logger.error("External model failed (exit=%d): %s", process.returncode, stderr_str)
            raise ExternalModelError(
                f"External model exited with code {process.returncode}: {stderr_str[:500]}"
            )
        if stderr_str:
            logger.warning("External model stderr: %s", stderr_str[:500])
        return parse_images(stdout.decode("utf-8", errors="replace"), len(points), self.dim_out)

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        return asyncio.run(self.evaluate_async(points))

    def spec(self) -> ModelSpec:
        return ModelSpec(
            dim_in=self.dim_in,
            dim_out=self.dim_out,
            func=lambda x: self.evaluate_batch(np.atleast_2d(x))[0],
            batch_func=self.evaluate_batch,
            reentrant=False,
            name="external",
        )

    def constants(self) -> dict[str, Any]:
        return {"command": list(self.command), "timeout": self.timeout}
