"""AdamW with decoupled weight decay on matrix-shaped parameters."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params) -> bool:
        """Apply one update from ``.grad``. Returns False (and changes nothing) when every gradient is zero."""
        grads = {name: t.grad for name, t in params.items() if t.requires_grad}
        if all(g is None or not g.any() for g in grads.values()):
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            p = params[name]
            if g is None:
                g = np.zeros(p.shape)
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
            v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            data = p.data
            if self.weight_decay and data.ndim >= 2:
                data = data * (1.0 - self.lr * self.weight_decay)
            data = data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            data.flags.writeable = False
            p.data = data
        return True

    def state_tensors(self, prefix="optim."):
        out = {}
        for name in self.m:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors, t, prefix="optim."):
        self.t = int(t)
        self.m, self.v = {}, {}
        for key, value in tensors.items():
            if key.startswith(prefix + "m."):
                self.m[key[len(prefix) + 2 :]] = np.array(value)
            elif key.startswith(prefix + "v."):
                self.v[key[len(prefix) + 2 :]] = np.array(value)
