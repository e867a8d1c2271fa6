"""Adam with bias correction, applied in place to a ParamStore."""

import numpy as np

from . import kernels


class Adam:
    def __init__(self, store, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            kernels.adam_update(
                p.data.reshape(-1), p.grad.reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                self.lr, self.beta1, self.beta2, self.eps, bc1, bc2)

    def state_arrays(self):
        """Flatten optimizer state into named arrays for checkpointing."""
        out = {"adam.t": np.array(float(self.t))}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name].copy()
            out[f"adam.v.{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, state):
        self.t = int(state["adam.t"])
        for name in self.m:
            self.m[name][...] = state[f"adam.m.{name}"]
            self.v[name][...] = state[f"adam.v.{name}"]
