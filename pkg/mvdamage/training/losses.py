from typing import Optional, Sequence, Union

import numpy as np

from mvdamage.tensor import Tensor, ops

CLIP_EPSILON = 1e-7

Targets = Union[int, Sequence[int], np.ndarray]


def _as_batch(probabilities: Tensor, targets: Targets):
    if probabilities.ndim == 1:
        probabilities = ops.reshape(probabilities, (1, probabilities.shape[0]))
    targets = np.atleast_1d(np.asarray(targets))
    if probabilities.ndim != 2 or targets.shape != (probabilities.shape[0],):
        raise ValueError(
            f"probabilities {probabilities.shape} and targets {targets.shape} disagree"
        )
    k = probabilities.shape[1]
    if targets.dtype.kind not in "iu" or np.any(targets < 0) or np.any(targets >= k):
        raise ValueError(f"class index out of range 0..{k - 1}: {targets.tolist()}")

    tolerance = 1e-6 if probabilities.dtype == np.float64 else 1e-5
    sums = probabilities.data.sum(axis=1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=tolerance):
        raise ValueError(f"probabilities must sum to 1, got {sums.tolist()}")
    return probabilities, targets


def _focal(p_true: Tensor, alpha_true: np.ndarray, gamma: float) -> Tensor:
    """mean of −α·(1−p)^γ·log(p) with p clipped to [ε, 1−ε]"""
    p_true = ops.clip(p_true, CLIP_EPSILON, 1.0 - CLIP_EPSILON)
    loss = ops.log(p_true)
    if gamma:
        loss = loss * ops.power(1.0 - p_true, gamma)
    return ops.mean(loss * (-alpha_true.astype(p_true.dtype)))


def focal_loss(
    probabilities: Tensor,
    targets: Targets,
    gamma: float = 2.0,
    alpha: Optional[Sequence[float]] = None,
) -> Tensor:
    """Categorical focal loss averaged over the batch; γ=0 and α=1 is exactly
    cross-entropy"""
    probabilities, targets = _as_batch(probabilities, targets)
    k = probabilities.shape[1]
    alpha = np.ones(k) if alpha is None else np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (k,):
        raise ValueError(f"alpha needs {k} class weights, got {alpha.shape}")

    one_hot = np.eye(k, dtype=probabilities.dtype)[targets]
    p_true = ops.sum(probabilities * one_hot, axis=1)
    return _focal(p_true, alpha[targets], gamma)


def cross_entropy_loss(probabilities: Tensor, targets: Targets) -> Tensor:
    return focal_loss(probabilities, targets, gamma=0.0, alpha=None)


def binary_focal_loss(
    probabilities: Tensor,
    masks: np.ndarray,
    gamma: float = 2.0,
    alpha: Optional[Sequence[float]] = None,
) -> Tensor:
    """Per-pixel two-class focal loss for sigmoid outputs N×1×H×W against
    N×H×W binary masks; alpha is (background, building)"""
    target = np.asarray(masks, dtype=probabilities.dtype).reshape(probabilities.shape)
    if np.any((target != 0) & (target != 1)):
        raise ValueError("masks must be binary")
    alpha = np.ones(2) if alpha is None else np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (2,):
        raise ValueError(f"binary focal alpha needs 2 weights, got {alpha.shape}")

    p_true = probabilities * target + (1.0 - probabilities) * (1.0 - target)
    alpha_true = alpha[1] * target + alpha[0] * (1.0 - target)
    return _focal(p_true, alpha_true, gamma)


def inverse_frequency_alpha(counts: Sequence[int]) -> np.ndarray:
    """Per-class weights ∝ 1/frequency, normalized to mean 1"""
    counts = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    weights = counts.sum() / counts
    return weights / weights.mean()
