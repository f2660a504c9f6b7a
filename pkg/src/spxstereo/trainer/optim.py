"""Adam with bias correction and a step-decay learning-rate schedule."""
import math

import numpy as np

from ..errors import NumericError


def adam_step(params, grads, moments, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One in-place Adam update.

    ``params``/``grads`` map names to arrays; ``moments`` maps names to
    ``(m, v)`` pairs and is updated in place. All gradients are checked
    before anything is modified.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", component=name)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m, v = moments.get(name) or (np.zeros_like(g), np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        moments[name] = (m, v)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, moments


class Adam:
    def __init__(self, store, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.moments = {}
        self.t = 0

    def step(self, lr):
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.store.items()
        }
        params = {name: p.data for name, p in self.store.items()}
        adam_step(params, grads, self.moments, lr, self.beta1, self.beta2, self.eps, self.t + 1)
        self.t += 1


def lr_at(step, total, base_lr, milestones=(0.6, 0.75, 0.9), gamma=0.5):
    """Learning rate for 0-based ``step``: ``base_lr`` times ``gamma`` per milestone passed."""
    passed = sum(step >= math.ceil(m * total) for m in milestones)
    return base_lr * gamma ** passed
