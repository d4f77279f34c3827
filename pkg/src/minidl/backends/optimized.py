"""Optimized backend: numba-compiled contractions plus vectorized numpy.

Matmul and conv2d run through `_numba_kernels` when numba is enabled
(float64 accumulation, float32 storage). Elementwise math, reductions,
softmax and layernorm stay on numpy ufuncs, which are already SIMD
vectorized and would not gain from a scalar jit loop.

Setting the environment variable MINIDL_DISABLE_NUMBA to a truthy value
(or constructing with use_numba=False) selects a pure-numpy path for the
contractions as well; results still accumulate in float64.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .base import GELU_A, GELU_C, Backend

ENV_DISABLE_NUMBA = "MINIDL_DISABLE_NUMBA"

# elements per fused-evaluation chunk; ~256 KiB of float32 keeps every
# intermediate of a chain resident in L2
FUSED_CHUNK = 1 << 16


def numba_disabled_by_env() -> bool:
    return os.environ.get(ENV_DISABLE_NUMBA, "").strip().lower() not in ("", "0", "false", "no")


def _gelu(x):
    x = np.asarray(x)
    c = x.dtype.type(GELU_C)
    a = x.dtype.type(GELU_A)
    half = x.dtype.type(0.5)
    one = x.dtype.type(1.0)
    return half * x * (one + np.tanh(c * (x + a * x * x * x)))


_EW = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda x: -x,
    "relu": lambda x: np.maximum(x, np.asarray(x).dtype.type(0)),
    "gelu": _gelu,
    "exp": np.exp,
    "log": np.log,
}


class OptimizedBackend(Backend):
    name = "optimized"

    def __init__(self, use_numba: bool | None = None):
        if use_numba is None:
            use_numba = not numba_disabled_by_env()
        self.use_numba = bool(use_numba)
        self._kernels = None
        if self.use_numba:
            from . import _numba_kernels

            self._kernels = _numba_kernels

    def describe(self) -> str:
        return "numba jit kernels" if self.use_numba else "vectorized numpy"

    # -- contractions ---------------------------------------------------

    def _matmul(self, a, b, out_shape):
        if self._kernels is not None and a.dtype == np.float32 and b.dtype == np.float32:
            return self._matmul_numba(a, b, out_shape)
        # numpy path: BLAS at float64 so accuracy matches the jit kernels
        with np.errstate(all="ignore"):
            out = np.matmul(np.asarray(a, np.float64), np.asarray(b, np.float64))
        return out.astype(a.dtype)

    def _matmul_numba(self, a, b, out_shape):
        k = self._kernels
        if b.ndim == 2:
            a2 = np.ascontiguousarray(a).reshape(-1, a.shape[-1])
            out = np.empty((a2.shape[0], b.shape[1]), np.float32)
            if out.size:
                k.matmul2d_f32(a2, np.ascontiguousarray(b), out)
            return out.reshape(out_shape)
        batch = out_shape[:-2]
        m, n = out_shape[-2], out_shape[-1]
        kk = a.shape[-1]
        a3 = np.ascontiguousarray(np.broadcast_to(a, batch + (m, kk))).reshape(-1, m, kk)
        b3 = np.ascontiguousarray(np.broadcast_to(b, batch + (kk, n))).reshape(-1, kk, n)
        out = np.empty((a3.shape[0], m, n), np.float32)
        if out.size:
            k.matmul3d_f32(a3, b3, out)
        return out.reshape(out_shape)

    def _conv2d(self, x, w, stride, out_shape):
        if self._kernels is not None and x.dtype == np.float32 and w.dtype == np.float32:
            out = np.empty(out_shape, np.float32)
            if out.size:
                self._kernels.conv2d_f32(
                    np.ascontiguousarray(x), np.ascontiguousarray(w), stride, out
                )
            return out
        _, ho, wo, _ = out_shape
        kh, kw = w.shape[0], w.shape[1]
        x64 = np.asarray(x, np.float64)
        w64 = np.asarray(w, np.float64)
        acc = np.zeros(out_shape, np.float64)
        for di in range(kh):
            for dj in range(kw):
                tap = x64[:, di : di + ho * stride : stride, dj : dj + wo * stride : stride, :]
                acc += np.einsum("bhwi,io->bhwo", tap, w64[di, dj])
        return acc.astype(x.dtype)

    # -- elementwise ------------------------------------------------------

    def _binary(self, op, a, b):
        with np.errstate(all="ignore"):
            return np.asarray(_EW[op](a, b))

    def _unary(self, op, x):
        with np.errstate(all="ignore"):
            return np.asarray(_EW[op](x))

    def _reduce(self, op, x, axis):
        fn = {"sum": np.sum, "mean": np.mean, "max": np.max}[op]
        return np.asarray(fn(x, axis=axis)).astype(x.dtype)

    def _softmax(self, x, axis):
        with np.errstate(all="ignore"):
            shifted = x - x.max(axis=axis, keepdims=True)
            e = np.exp(shifted)
            return e / e.sum(axis=axis, keepdims=True)

    def _layernorm(self, x, gamma, beta, eps):
        mu = x.mean(axis=-1, keepdims=True, dtype=x.dtype)
        var = np.square(x - mu).mean(axis=-1, keepdims=True, dtype=x.dtype)
        norm = (x - mu) / np.sqrt(var + x.dtype.type(eps))
        return norm * gamma + beta

    # -- fused groups -------------------------------------------------------

    def _fused_eval(self, steps, inputs, out_shape, out_dtype):
        # Cache-blocked interpretation: walk the flattened output in
        # chunks, applying every step to one chunk before moving on, so
        # intermediates stay hot instead of streaming through memory
        # once per node. Per element this applies the exact same ufunc
        # sequence as unfused execution.
        n = math.prod(out_shape)
        out = np.empty(n, dtype=out_dtype)
        flat = [x.reshape(-1) for x in inputs]
        with np.errstate(all="ignore"):
            for lo in range(0, n, FUSED_CHUNK):
                hi = min(lo + FUSED_CHUNK, n)
                vals = []
                for step in steps:
                    args = [
                        (flat[i] if flat[i].size == 1 else flat[i][lo:hi])
                        if kind == "input"
                        else vals[i]
                        for kind, i in step.args
                    ]
                    vals.append(_EW[step.op](*args))
                out[lo:hi] = vals[-1]
        return out.reshape(out_shape)
