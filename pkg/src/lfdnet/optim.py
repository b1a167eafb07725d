"""Adam optimizer operating in place on named parameter arrays."""

import numpy as np


class Adam:
    """Adam with bias correction.

    m <- b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
    theta <- theta - lr * mhat / (sqrt(vhat) + eps)

    ``params`` maps names to arrays updated in place; ``step`` takes grads
    under the same names.  A zero gradient leaves its parameter bitwise
    unchanged.
    """

    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p) for k, p in self.params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                raise ValueError(f"missing gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict:
        """Optimizer state as named arrays (for checkpointing)."""
        out = {}
        for name in self.params:
            out[f"{name}.adam_m"] = self.m[name]
            out[f"{name}.adam_v"] = self.v[name]
        return out
