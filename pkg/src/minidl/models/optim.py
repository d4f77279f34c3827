"""Optimizers. Update math runs in float64 and is shared by single-worker
and data-parallel training, so the two paths apply bitwise-identical steps."""

import numpy as np

from ..errors import ConfigError
from ..tensor import Tensor

OPTIMIZER_NAMES = ("sgd", "adam")


class Sgd:
    def __init__(self, lr=1e-3):
        self.lr = float(lr)

    def apply(self, params, grads):
        """New parameter map: p - lr * g, computed in float64."""
        out = {}
        for name, p in params.items():
            g = np.asarray(grads[name], np.float64)
            new = p.data.astype(np.float64) - self.lr * g
            out[name] = Tensor(new.astype(p.data.dtype), p.backend_id, _owned=True)
        return out


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {}
        self._v = {}

    def apply(self, params, grads):
        self.step_count += 1
        t = self.step_count
        out = {}
        for name, p in params.items():
            g = np.asarray(grads[name], np.float64)
            m = self._m.get(name)
            if m is None:
                m = np.zeros(p.shape, np.float64)
                self._v[name] = np.zeros(p.shape, np.float64)
            v = self._v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            new = p.data.astype(np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            out[name] = Tensor(new.astype(p.data.dtype), p.backend_id, _owned=True)
        return out


def make_optimizer(name, lr):
    if name == "sgd":
        return Sgd(lr)
    if name == "adam":
        return Adam(lr)
    raise ConfigError(f"unknown optimizer {name!r}; expected one of {OPTIMIZER_NAMES}")
