"""Seeded minibatch Adam/BCE training loop shared by the autoencoder and U-Net."""
from __future__ import annotations

import numpy as np

from .loss import bce_loss, bce_loss_grad
from .network import Network
from .optim import AdamState, adam_init, adam_step


def fit(net: Network, inputs: np.ndarray, targets: np.ndarray, epochs: int,
        batch_size: int, seed: int = 0, lr: float = 1e-3,
        val: tuple[np.ndarray, np.ndarray] | None = None,
        state: AdamState | None = None,
        stop_below: float | None = None) -> tuple[list[float], list[float], AdamState]:
    """Train in place; returns (per-epoch train loss, per-epoch val loss, state).

    Epoch train loss is the sample-weighted mean of minibatch losses. Shuffling
    is driven by its own generator seeded once, so equal seeds give identical
    trajectories. `stop_below` ends training early once an epoch's train loss
    drops under the bound (the epoch count in the histories then reflects the
    epochs actually run).
    """
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs/targets length mismatch")
    rng = np.random.default_rng(seed)
    if state is None:
        state = adam_init(net.params(), lr=lr)
    train_hist: list[float] = []
    val_hist: list[float] = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            xb = inputs[idx]
            yb = targets[idx]
            pred = net.forward(xb, train=True)
            loss, dloss = bce_loss_grad(pred, yb.astype(pred.dtype, copy=False))
            net.backward(dloss)
            adam_step(net.params(), net.grads(), state)
            total += loss * len(idx)
        train_hist.append(total / n)
        if val is not None and len(val[0]):
            vpred = net.forward(val[0])
            val_hist.append(bce_loss(vpred, val[1].astype(vpred.dtype, copy=False)))
        if stop_below is not None and train_hist[-1] < stop_below:
            break
    return train_hist, val_hist, state
