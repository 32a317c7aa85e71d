"""Masked token-level cross entropy."""

import numpy as np

from ..errors import InputError


def masked_cross_entropy(logits: np.ndarray, targets, mask):
    """Mean negative log-likelihood over masked positions.

    Returns (loss, grad) where grad has the logits' shape and is zero on
    unmasked rows. Row t is scored against targets[t] when mask[t] is set.
    """
    logits = np.asarray(logits, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or mask.shape != (logits.shape[0],):
        raise InputError("logits rows, targets and mask lengths must agree")
    n_active = int(mask.sum())
    if n_active == 0:
        raise InputError("mask selects no positions")

    z = logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    log_probs = (z - m) - np.log(denom)
    rows = np.arange(logits.shape[0])
    nll = -log_probs[rows, targets]
    loss = float(nll[mask].sum() / n_active)

    grad = e / denom
    grad[rows, targets] -= 1.0
    grad[~mask] = 0.0
    grad /= n_active
    return loss, grad.astype(np.float32)
