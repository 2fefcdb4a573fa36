"""AdamW with per-parameter freezing."""

import numpy as np


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named numpy arrays.

    Arrays are updated in place. Names in ``frozen`` are never touched, not
    even by weight decay, so they stay bit-identical across steps.
    """

    def __init__(self, params, lr=1e-4, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8, frozen=()):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.frozen = set(frozen)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items() if k not in self.frozen}
        self.v = {k: np.zeros_like(v) for k, v in params.items() if k not in self.frozen}

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, m in self.m.items():
            g = grads.get(name)
            if g is None:
                continue
            p, v = self.params[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr == 0.0:
                continue
            p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        """Moment buffers keyed ``adam.m.<name>`` / ``adam.v.<name>`` for checkpointing."""
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays, t):
        for k in self.m:
            self.m[k][...] = arrays[f"adam.m.{k}"]
            self.v[k][...] = arrays[f"adam.v.{k}"]
        self.t = int(t)
