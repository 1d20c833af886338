"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..tensorcore import Module, Parameter


def decays(name: str, param: Parameter) -> bool:
    """Matrices and kernels decay; biases, norm affines and scalar gains do not."""
    return param.ndim >= 2


class AdamW:
    """Decay ``w -= lr * wd * w`` first, then the bias-corrected Adam step.

    Parameters whose ``grad`` is None are skipped entirely (no decay, no
    moment update), matching the usual framework behaviour.
    """

    def __init__(self, params, lr: float = 5e-5, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, decay_filter=decays):
        if isinstance(params, Module):
            params = list(params.named_parameters())
        else:
            params = [(p if isinstance(p, tuple) else (f"param{i}", p)) for i, p in enumerate(params)]
        self.params = params
        self.lr, self.eps, self.weight_decay = float(lr), float(eps), float(weight_decay)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.decay_mask = [bool(decay_filter(n, p)) for n, p in params]
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2, lr = self.beta1, self.beta2, self.lr
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            w = p.data
            if self.decay_mask[i] and self.weight_decay:
                w *= w.dtype.type(1.0 - lr * self.weight_decay)
            m, v = self.m[i], self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v / c2) + self.eps
            w -= (lr / c1) * m / denom
