"""Reference backend: simple float64 formulas, no acceleration.

This is the correctness oracle. Everything is computed in float64 and
rounded to the operand dtype once per kernel, so results are as close to
the mathematical answer as a single rounding allows. The matmul keeps an
explicit row loop on purpose; nothing here is tuned.
"""

from __future__ import annotations

import numpy as np

from .base import GELU_A, GELU_C, Backend


def _gelu64(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x * x * x)))


_EW64 = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda x: -x,
    "relu": lambda x: np.maximum(x, 0.0),
    "gelu": _gelu64,
    "exp": np.exp,
    "log": np.log,
}


class ReferenceBackend(Backend):
    name = "reference"

    def describe(self) -> str:
        return "naive float64 loops"

    @staticmethod
    def _ew64(op, args, store_dtype):
        wide = [np.asarray(a, dtype=np.float64) for a in args]
        with np.errstate(all="ignore"):
            res = _EW64[op](*wide)
        return np.asarray(res).astype(store_dtype)

    def _matmul(self, a, b, out_shape):
        dt = a.dtype
        m, k = a.shape[-2], a.shape[-1]
        n = b.shape[-1]
        batch = out_shape[:-2]
        a64 = np.broadcast_to(np.asarray(a, np.float64), batch + (m, k))
        b64 = np.broadcast_to(np.asarray(b, np.float64), batch + (k, n))
        out = np.zeros(batch + (m, n), np.float64)
        for idx in np.ndindex(batch):
            am, bm, om = a64[idx], b64[idx], out[idx]
            for i in range(m):
                if k:
                    om[i] = (am[i][:, None] * bm).sum(axis=0)
        return out.astype(dt)

    def _conv2d(self, x, w, stride, out_shape):
        dt = x.dtype
        _, ho, wo, _ = out_shape
        kh, kw = w.shape[0], w.shape[1]
        x64 = np.asarray(x, np.float64)
        w64 = np.asarray(w, np.float64)
        acc = np.zeros(out_shape, np.float64)
        for di in range(kh):
            for dj in range(kw):
                tap = x64[:, di : di + ho * stride : stride, dj : dj + wo * stride : stride, :]
                acc += np.einsum("bhwi,io->bhwo", tap, w64[di, dj])
        return acc.astype(dt)

    def _binary(self, op, a, b):
        return self._ew64(op, (a, b), a.dtype)

    def _unary(self, op, x):
        return self._ew64(op, (x,), x.dtype)

    def _reduce(self, op, x, axis):
        x64 = np.asarray(x, np.float64)
        fn = {"sum": np.sum, "mean": np.mean, "max": np.max}[op]
        return np.asarray(fn(x64, axis=axis)).astype(x.dtype)

    def _softmax(self, x, axis):
        x64 = np.asarray(x, np.float64)
        shifted = x64 - x64.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def _layernorm(self, x, gamma, beta, eps):
        x64 = np.asarray(x, np.float64)
        mu = x64.mean(axis=-1, keepdims=True)
        var = np.square(x64 - mu).mean(axis=-1, keepdims=True)
        norm = (x64 - mu) / np.sqrt(var + eps)
        out = norm * np.asarray(gamma, np.float64) + np.asarray(beta, np.float64)
        return out.astype(x.dtype)

    def _fused_eval(self, steps, inputs, out_shape, out_dtype):
        # Replays the group exactly as node-at-a-time execution would:
        # float64 math, rounded to the node dtype after every step. Fusing
        # on this backend is therefore bitwise-neutral.
        vals = []
        for step in steps:
            args = [inputs[i] if kind == "input" else vals[i] for kind, i in step.args]
            vals.append(self._ew64(step.op, args, out_dtype))
        out = np.empty(out_shape, dtype=out_dtype)
        out[...] = vals[-1]
        return out
