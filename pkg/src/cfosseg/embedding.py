"""Exact (all-pairs) t-SNE for 2-D diagnostic embeddings of tile codes.

Per-point bandwidths come from a bisection on precision until each
conditional distribution's perplexity matches the target. Optimization is
plain gradient descent with adaptive per-coordinate gains, early exaggeration
for the first phase, and a momentum switch when exaggeration ends. The KL
divergence against the unexaggerated joint distribution is recorded at every
iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import NumericError

EPS = np.finfo(np.float64).eps


class EmbeddingError(ValueError):
    pass


@dataclass
class Embedding2D:
    points: np.ndarray
    kl_trace: list[float]


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d2 = s[:, None] - 2.0 * (x @ x.T) + s[None, :]
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _conditional_probs(d2_row: np.ndarray, beta: float, own: int) -> np.ndarray:
    p = np.exp(-d2_row * beta)
    p[own] = 0.0
    return p


def _search_beta(d2_row: np.ndarray, own: int, perplexity: float,
                 tol: float = 1e-5, max_steps: int = 200) -> np.ndarray:
    """Bisect the precision until exp(entropy) matches the target perplexity."""
    beta, lo, hi = 1.0, -np.inf, np.inf
    p = _conditional_probs(d2_row, beta, own)
    for _ in range(max_steps):
        total = p.sum()
        if total <= 0:
            entropy = 0.0
        else:
            q = p / total
            nz = q > 0
            entropy = float(-(q[nz] * np.log(q[nz])).sum())
        if abs(np.exp(entropy) - perplexity) <= tol:
            break
        if entropy > np.log(perplexity):
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        p = _conditional_probs(d2_row, beta, own)
    total = p.sum()
    return p / total if total > 0 else p


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized, normalized pairwise affinities in the input space."""
    n = x.shape[0]
    d2 = _pairwise_sq_dists(np.asarray(x, dtype=np.float64))
    off_diag = d2[~np.eye(n, dtype=bool)]
    if off_diag.max(initial=0.0) <= 0.0:
        raise EmbeddingError("all inputs identical: pairwise similarities are undefined")
    cond = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        cond[i] = _search_beta(d2[i], i, perplexity)
    p = cond + cond.T
    p /= max(p.sum(), EPS)
    return np.maximum(p, EPS)


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(p || q(y)) under the Student-t low-dimensional kernel, and its gradient."""
    d2 = _pairwise_sq_dists(y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    z = max(w.sum(), EPS)
    q = np.maximum(w / z, EPS)
    mask = ~np.eye(p.shape[0], dtype=bool)
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    m = (p - q) * w
    grad = 4.0 * (m.sum(axis=1)[:, None] * y - m @ y)
    return kl, grad


def tsne(codes: np.ndarray, perplexity: float = 30.0, seed: int = 0,
         n_iter: int = 1000, learning_rate: float = 200.0,
         exaggeration: float = 12.0, exaggeration_iters: int = 250,
         momentum_early: float = 0.5, momentum_late: float = 0.8) -> Embedding2D:
    x = np.asarray(codes, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise EmbeddingError(f"need at least 4 points, got {n}")
    if perplexity >= n:
        raise EmbeddingError(f"perplexity {perplexity} must be below the point count {n}")
    p = joint_probabilities(x, perplexity)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace: list[float] = []
    for it in range(n_iter):
        exaggerating = it < exaggeration_iters
        if exaggerating:
            # attractive forces amplified; the trace still records the true objective
            _, grad = kl_and_grad(p * exaggeration, y)
            kl = kl_and_grad(p, y)[0]
        else:
            kl, grad = kl_and_grad(p, y)
        if not np.isfinite(kl):
            raise NumericError(f"non-finite KL divergence at iteration {it}")
        kl_trace.append(kl)
        momentum = momentum_early if exaggerating else momentum_late
        flip = np.sign(grad) != np.sign(update)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.clip(gains, 0.01, None, out=gains)
        update = momentum * update - learning_rate * (gains * grad)
        y = y + update
        y = y - y.mean(axis=0)
    return Embedding2D(points=y, kl_trace=kl_trace)
