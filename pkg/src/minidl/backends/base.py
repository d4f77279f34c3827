"""Kernel interface shared by both backends.

The public methods validate shapes and dtypes through `minidl.shapes`
(the same rules graph tracing uses), then hand plain numpy arrays to the
`_impl` hooks. Subclasses only implement arithmetic; they never repeat
contract checks.

Fused elementwise groups are described as a flat list of FusedStep
records. Each argument is a tag pair: ("input", i) refers to the i-th
external array, ("step", j) to the output of an earlier step. The last
step is the group result. All non-scalar operands share one shape, which
is what makes chunked evaluation legal.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .. import shapes
from ..errors import DtypeError, ShapeError

EW_UNARY = ("neg", "relu", "gelu", "exp", "log")
EW_BINARY = ("add", "sub", "mul", "div")

# tanh-approximate gelu constants
GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715


class FusedStep(NamedTuple):
    op: str
    args: tuple


def _dt(x) -> str:
    return str(x.dtype)


class Backend:
    name = "?"

    def describe(self) -> str:
        raise NotImplementedError

    # -- contractions ---------------------------------------------------

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        shapes.binary_dtype(_dt(a), _dt(b))
        out_shape = shapes.matmul_shape(a.shape, b.shape)
        return self._matmul(a, b, out_shape)

    def conv2d(self, x, w, stride: int = 1, padding: str = "same") -> np.ndarray:
        shapes.binary_dtype(_dt(x), _dt(w))
        out_shape = shapes.conv2d_shape(x.shape, w.shape, stride, padding)
        (pt, pb), (pl, pr) = shapes.conv2d_paddings(
            x.shape[1], x.shape[2], w.shape[0], w.shape[1], stride, padding
        )
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        return self._conv2d(x, w, stride, out_shape)

    # -- elementwise ----------------------------------------------------

    def binary(self, op: str, a, b) -> np.ndarray:
        if op not in EW_BINARY:
            raise ValueError(f"unknown binary op {op!r}")
        shapes.binary_dtype(_dt(a), _dt(b))
        shapes.broadcast_shape(a.shape, b.shape)
        return self._binary(op, a, b)

    def unary(self, op: str, x) -> np.ndarray:
        if op not in EW_UNARY:
            raise ValueError(f"unknown unary op {op!r}")
        shapes.check_float(_dt(x))
        return self._unary(op, x)

    def add(self, a, b):
        return self.binary("add", a, b)

    def sub(self, a, b):
        return self.binary("sub", a, b)

    def mul(self, a, b):
        return self.binary("mul", a, b)

    def div(self, a, b):
        return self.binary("div", a, b)

    def neg(self, x):
        return self.unary("neg", x)

    def relu(self, x):
        return self.unary("relu", x)

    def gelu(self, x):
        return self.unary("gelu", x)

    def exp(self, x):
        return self.unary("exp", x)

    def log(self, x):
        return self.unary("log", x)

    # -- reductions and normalization ------------------------------------

    def reduce(self, op: str, x, axis=None) -> np.ndarray:
        if op not in ("sum", "mean", "max"):
            raise ValueError(f"unknown reduction {op!r}")
        shapes.check_float(_dt(x))
        shapes.reduce_shape(x.shape, axis)
        if op in ("mean", "max"):
            span = x.size if axis is None else x.shape[shapes.normalize_axis(axis, x.ndim)]
            if span == 0:
                raise ShapeError(f"reduce_{op} over an empty extent is undefined")
        return self._reduce(op, x, axis)

    def reduce_sum(self, x, axis=None):
        return self.reduce("sum", x, axis)

    def reduce_mean(self, x, axis=None):
        return self.reduce("mean", x, axis)

    def reduce_max(self, x, axis=None):
        return self.reduce("max", x, axis)

    def softmax(self, x, axis: int = -1) -> np.ndarray:
        shapes.check_float(_dt(x))
        ax = shapes.softmax_check(x.shape, axis)
        return self._softmax(x, ax)

    def layernorm(self, x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
        shapes.binary_dtype(_dt(x), shapes.binary_dtype(_dt(gamma), _dt(beta)))
        shapes.layernorm_check(x.shape, gamma.shape, beta.shape)
        return self._layernorm(x, gamma, beta, eps)

    # -- data movement ----------------------------------------------------

    def gather(self, table, ids) -> np.ndarray:
        if _dt(ids) != "int32":
            raise DtypeError(f"gather ids must be int32, got {_dt(ids)}")
        shapes.gather_shape(table.shape, ids.shape)
        n = table.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ShapeError(f"gather id out of range for table of {n} rows")
        return np.ascontiguousarray(table[ids])

    def transpose(self, x, perm) -> np.ndarray:
        shapes.transpose_check(x.shape, perm)
        return np.ascontiguousarray(np.transpose(x, perm))

    def reshape(self, x, new_shape) -> np.ndarray:
        out = shapes.reshape_check(x.shape, new_shape)
        return np.ascontiguousarray(x).reshape(out)

    def slice(self, x, starts, sizes) -> np.ndarray:
        shapes.slice_check(x.shape, starts, sizes)
        sel = tuple(np.s_[st : st + sz] for st, sz in zip(starts, sizes))
        return np.ascontiguousarray(x[sel])

    def concat(self, xs: Sequence[np.ndarray], axis: int = 0) -> np.ndarray:
        dts = {_dt(x) for x in xs}
        if len(dts) > 1:
            raise DtypeError(f"concat dtype mismatch: {sorted(dts)}")
        ax = shapes.normalize_axis(axis, len(xs[0].shape)) if xs else 0
        shapes.concat_shape([x.shape for x in xs], axis)
        return np.ascontiguousarray(np.concatenate(xs, axis=ax))

    # -- fused groups ------------------------------------------------------

    def fused_eval(self, steps, inputs, out_shape, out_dtype="float32") -> np.ndarray:
        for arr in inputs:
            if arr.shape != tuple(out_shape) and arr.size != 1:
                raise ShapeError(
                    f"fused input shape {arr.shape} is neither {tuple(out_shape)} nor scalar"
                )
        return self._fused_eval(list(steps), list(inputs), tuple(out_shape), out_dtype)

    # -- hooks ------------------------------------------------------------

    def _matmul(self, a, b, out_shape):
        raise NotImplementedError

    def _conv2d(self, x_padded, w, stride, out_shape):
        raise NotImplementedError

    def _binary(self, op, a, b):
        raise NotImplementedError

    def _unary(self, op, x):
        raise NotImplementedError

    def _reduce(self, op, x, axis):
        raise NotImplementedError

    def _softmax(self, x, axis):
        raise NotImplementedError

    def _layernorm(self, x, gamma, beta, eps):
        raise NotImplementedError

    def _fused_eval(self, steps, inputs, out_shape, out_dtype):
        raise NotImplementedError
