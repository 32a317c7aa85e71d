"""AdamW with a linear warmup/decay schedule.

Hyperparameters follow the tuning recipe this runtime reproduces:
decoupled weight decay of zero, betas (0.9, 0.999), eps 1e-8, learning
rate ramping linearly over the first tenth of training and decaying
linearly to zero afterwards.
"""

import numpy as np


class AdamWState:
    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def clone(self) -> "AdamWState":
        out = AdamWState()
        out.step = self.step
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        return out


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0):
    """One in-place update over every named parameter with a gradient."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            update = update + weight_decay * p
        p -= np.float32(lr) * update


def linear_warmup_schedule(step: int, total: int, base_lr: float,
                           warmup_ratio: float = 0.1) -> float:
    """Learning rate at `step` of `total`: 0 -> base over the warmup span,
    then linearly back down to 0 at `total`."""
    warmup = warmup_ratio * total
    if total <= 0:
        return 0.0
    if step <= 0:
        return 0.0
    if step < warmup:
        return base_lr * step / warmup
    if step >= total:
        return 0.0
    return base_lr * (total - step) / (total - warmup)
