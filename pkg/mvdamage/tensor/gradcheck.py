import logging
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from .core import Tensor, backward

logger = logging.getLogger(__name__)


class NonDeterministicFunctionError(ValueError):
    def __init__(self, first: float, second: float):
        super().__init__(
            "Function gave different results for the same point ({!r} != {!r})".format(
                first, second
            )
        )


class GradCheckReport(NamedTuple):
    passed: bool
    max_relative_error: float
    worst_index: Tuple[int, ...]
    checked: int
    tolerance: float


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)


def _evaluate(function: Callable[[Tensor], Tensor], point: Tensor) -> float:
    out = function(point)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(
    function: Callable[[Tensor], Tensor],
    point: Tensor,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare the reverse-mode gradient of ``function`` at ``point`` with
    central finite differences.

    ``point`` may be a free tensor passed to the function or a model
    Parameter the function reads internally; it is perturbed in place and
    restored. ``max_entries`` limits the check to a seeded sample of
    coordinates for large tensors.
    """
    if point.dtype != np.float64:
        raise ValueError(f"grad_check runs in 64-bit mode, got {point.dtype}")

    first = _evaluate(function, point)
    second = _evaluate(function, point)
    if first != second:
        raise NonDeterministicFunctionError(first, second)

    point.requires_grad = True
    point.zero_grad()
    backward(function(point))
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()

    indices = list(np.ndindex(*point.shape))
    if max_entries is not None and len(indices) > max_entries:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(indices), size=max_entries, replace=False)
        indices = [indices[i] for i in sorted(chosen)]

    worst = 0.0
    worst_index: Tuple[int, ...] = indices[0] if indices else ()
    for index in indices:
        original = point.data[index]
        point.data[index] = original + step
        plus = _evaluate(function, point)
        point.data[index] = original - step
        minus = _evaluate(function, point)
        point.data[index] = original

        numeric = (plus - minus) / (2 * step)
        error = float(relative_error(np.float64(analytic[index]), np.float64(numeric)))
        if error > worst:
            worst, worst_index = error, index

    report = GradCheckReport(
        passed=worst < tolerance,
        max_relative_error=worst,
        worst_index=worst_index,
        checked=len(indices),
        tolerance=tolerance,
    )
    logger.debug("grad_check %s", report)
    return report
