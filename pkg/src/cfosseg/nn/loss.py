"""Binary cross-entropy over probability maps."""
from __future__ import annotations

import numpy as np

from .layers import NumericError

CLAMP_EPS = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = CLAMP_EPS) -> float:
    """Mean of -[t*ln(p) + (1-t)*ln(1-p)] with p clamped to [eps, 1-eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    t = np.asarray(target, dtype=p.dtype)
    loss = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))
    if not np.isfinite(loss):
        raise NumericError("non-finite BCE loss")
    return loss


def bce_loss_grad(pred: np.ndarray, target: np.ndarray,
                  eps: float = CLAMP_EPS) -> tuple[float, np.ndarray]:
    """Loss plus d(loss)/d(pred), treating the clamp as pass-through.

    The pass-through convention matches common library behavior: pairing
    with a sigmoid output keeps the combined gradient bounded even when the
    sigmoid saturates.
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    t = np.asarray(target, dtype=p.dtype)
    loss = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))
    if not np.isfinite(loss):
        raise NumericError("non-finite BCE loss")
    grad = (p - t) / (p * (1.0 - p)) / p.size
    return loss, grad.astype(pred.dtype, copy=False)
