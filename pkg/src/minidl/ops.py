"""Differentiable operations.

Each op is an OpDef bundling three views of the same operation: the
eager forward (backend kernels on numpy arrays), the shape/dtype rule
(shared with graph tracing), and the vector-Jacobian product used by
gradient tapes. `apply_op` is the single dispatch point: it lifts python
scalars, checks that operands live on one backend, routes to an active
trace when capture is running, and otherwise executes eagerly and lets
any recording tapes see the call.

Gradients follow the array dtype: float64 tensors get float64 backward
math, which is what the finite-difference checks rely on.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import shapes
from .backends import get_backend
from .errors import ConfigError, TapeError
from .tensor import Tensor

# -- dispatch hooks ------------------------------------------------------

# Tape and trace state is thread-local so data-parallel workers can each
# record their own gradients without seeing one another's ops.
_TLS = threading.local()


def tape_stack() -> list:
    """Recording gradient tapes opened on the current thread."""
    try:
        return _TLS.tapes
    except AttributeError:
        _TLS.tapes = []
        return _TLS.tapes


def active_trace():
    """The graph capture running on this thread, or None.

    The tracer object must provide record(opdef, inputs, attrs) -> symbolic
    tensor and is_symbolic(x).
    """
    return getattr(_TLS, "trace", None)


def set_active_trace(tracer) -> None:
    _TLS.trace = tracer


@dataclass(frozen=True)
class OpDef:
    name: str
    forward: Callable  # (backend, arrays, attrs) -> np.ndarray
    infer: Callable  # (shapes, dtypes, attrs) -> (shape, dtype)
    vjp: Optional[Callable]  # (backend, g, arrays, out, attrs) -> [grad|None]
    fusible: bool = False


OP_DEFS: dict[str, OpDef] = {}


def _register(op: OpDef) -> OpDef:
    OP_DEFS[op.name] = op
    return op


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the pre-broadcast operand shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return np.ascontiguousarray(g)


def _expand(g: np.ndarray, axis, shape: tuple) -> np.ndarray:
    """Broadcast a reduced gradient back over the reduced axis."""
    if axis is None:
        return np.broadcast_to(g, shape).astype(g.dtype, copy=True)
    ax = shapes.normalize_axis(axis, len(shape))
    return np.broadcast_to(np.expand_dims(g, ax), shape).astype(g.dtype, copy=True)


# -- elementwise ---------------------------------------------------------


def _ew_infer(op_name, in_shapes, in_dtypes, attrs):
    if len(in_shapes) == 1:
        return in_shapes[0], shapes.check_float(in_dtypes[0])
    return (
        shapes.broadcast_shape(in_shapes[0], in_shapes[1]),
        shapes.binary_dtype(in_dtypes[0], in_dtypes[1]),
    )


def _vjp_add(backend, g, xs, out, attrs):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]


def _vjp_sub(backend, g, xs, out, attrs):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)]


def _vjp_mul(backend, g, xs, out, attrs):
    a, b = xs
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _vjp_div(backend, g, xs, out, attrs):
    a, b = xs
    with np.errstate(all="ignore"):
        ga = g / b
        gb = -g * out / b
    return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


def _vjp_neg(backend, g, xs, out, attrs):
    return [-g]


def _vjp_relu(backend, g, xs, out, attrs):
    return [g * (xs[0] > 0)]


def _vjp_gelu(backend, g, xs, out, attrs):
    x = xs[0]
    c = x.dtype.type(0.7978845608028654)
    a = x.dtype.type(0.044715)
    t = np.tanh(c * (x + a * x * x * x))
    du = c * (1 + 3 * a * x * x)
    d = 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * du
    return [g * d.astype(x.dtype)]


def _vjp_exp(backend, g, xs, out, attrs):
    return [g * out]


def _vjp_log(backend, g, xs, out, attrs):
    with np.errstate(all="ignore"):
        return [g / xs[0]]


def _make_ew(name, vjp_fn, arity):
    if arity == 1:
        fwd = lambda backend, xs, attrs: backend.unary(name, xs[0])
    else:
        fwd = lambda backend, xs, attrs: backend.binary(name, xs[0], xs[1])
    return _register(
        OpDef(
            name,
            fwd,
            lambda s, d, a, _n=name: _ew_infer(_n, s, d, a),
            vjp_fn,
            fusible=True,
        )
    )


_make_ew("add", _vjp_add, 2)
_make_ew("sub", _vjp_sub, 2)
_make_ew("mul", _vjp_mul, 2)
_make_ew("div", _vjp_div, 2)
_make_ew("neg", _vjp_neg, 1)
_make_ew("relu", _vjp_relu, 1)
_make_ew("gelu", _vjp_gelu, 1)
_make_ew("exp", _vjp_exp, 1)
_make_ew("log", _vjp_log, 1)


# -- contractions ----------------------------------------------------------


def _swap_last(x):
    return np.ascontiguousarray(np.swapaxes(x, -1, -2))


def _vjp_matmul(backend, g, xs, out, attrs):
    a, b = xs
    ga = backend.matmul(g, _swap_last(b))
    gb = backend.matmul(_swap_last(a), g)
    return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


_register(
    OpDef(
        "matmul",
        lambda backend, xs, attrs: backend.matmul(xs[0], xs[1]),
        lambda s, d, a: (shapes.matmul_shape(s[0], s[1]), shapes.binary_dtype(d[0], d[1])),
        _vjp_matmul,
    )
)


def _vjp_conv2d(backend, g, xs, out, attrs):
    x, w = xs
    stride, padding = attrs["stride"], attrs["padding"]
    if stride != 1:
        raise TapeError("conv2d gradient is only defined for stride 1")
    kh, kw = w.shape[0], w.shape[1]
    (pt, pb), (pl, pr) = shapes.conv2d_paddings(x.shape[1], x.shape[2], kh, kw, 1, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ho, wo = g.shape[1], g.shape[2]
    dw = np.zeros(w.shape, dtype=np.promote_types(x.dtype, np.float64))
    dxp = np.zeros(xp.shape, dtype=dw.dtype)
    for di in range(kh):
        for dj in range(kw):
            tap = xp[:, di : di + ho, dj : dj + wo, :]
            dw[di, dj] = np.einsum("bhwi,bhwo->io", tap, g)
            dxp[:, di : di + ho, dj : dj + wo, :] += np.einsum("bhwo,io->bhwi", g, w[di, dj])
    h, ww = x.shape[1], x.shape[2]
    dx = dxp[:, pt : pt + h, pl : pl + ww, :]
    return [dx.astype(x.dtype), dw.astype(w.dtype)]


_register(
    OpDef(
        "conv2d",
        lambda backend, xs, attrs: backend.conv2d(xs[0], xs[1], attrs["stride"], attrs["padding"]),
        lambda s, d, a: (
            shapes.conv2d_shape(s[0], s[1], a["stride"], a["padding"]),
            shapes.binary_dtype(d[0], d[1]),
        ),
        _vjp_conv2d,
    )
)


# -- reductions and normalization -------------------------------------------


def _vjp_reduce_sum(backend, g, xs, out, attrs):
    return [_expand(g, attrs["axis"], xs[0].shape)]


def _vjp_reduce_mean(backend, g, xs, out, attrs):
    x = xs[0]
    axis = attrs["axis"]
    span = x.size if axis is None else x.shape[shapes.normalize_axis(axis, x.ndim)]
    return [_expand(g, axis, x.shape) / x.dtype.type(span)]


def _vjp_reduce_max(backend, g, xs, out, attrs):
    x = xs[0]
    axis = attrs["axis"]
    full = _expand(np.asarray(out), axis, x.shape)
    mask = (x == full).astype(x.dtype)
    if axis is None:
        count = mask.sum()
    else:
        ax = shapes.normalize_axis(axis, x.ndim)
        count = mask.sum(axis=ax, keepdims=True)
    # ties share the gradient equally
    return [_expand(g, axis, x.shape) * mask / count]


def _make_reduce(kind, vjp_fn):
    return _register(
        OpDef(
            f"reduce_{kind}",
            lambda backend, xs, attrs, _k=kind: backend.reduce(_k, xs[0], attrs["axis"]),
            lambda s, d, a: (shapes.reduce_shape(s[0], a["axis"]), shapes.check_float(d[0])),
            vjp_fn,
        )
    )


_make_reduce("sum", _vjp_reduce_sum)
_make_reduce("mean", _vjp_reduce_mean)
_make_reduce("max", _vjp_reduce_max)


def _vjp_softmax(backend, g, xs, out, attrs):
    ax = shapes.normalize_axis(attrs["axis"], out.ndim)
    inner = (out * g).sum(axis=ax, keepdims=True)
    return [(out * (g - inner)).astype(out.dtype)]


def _softmax_infer(s, d, a):
    shapes.softmax_check(s[0], a["axis"])
    return s[0], shapes.check_float(d[0])


_register(
    OpDef(
        "softmax",
        lambda backend, xs, attrs: backend.softmax(xs[0], attrs["axis"]),
        _softmax_infer,
        _vjp_softmax,
    )
)


def _vjp_layernorm(backend, g, xs, out, attrs):
    x, gamma, beta = xs
    eps = attrs["eps"]
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    lead = tuple(range(x.ndim - 1))
    dgamma = (g * xhat).sum(axis=lead)
    dbeta = g.sum(axis=lead)
    gg = g * gamma
    dx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
    return [dx.astype(x.dtype), dgamma.astype(gamma.dtype), dbeta.astype(beta.dtype)]


def _ln_infer(s, d, a):
    shapes.layernorm_check(s[0], s[1], s[2])
    return s[0], shapes.binary_dtype(d[0], shapes.binary_dtype(d[1], d[2]))


_register(
    OpDef(
        "layernorm",
        lambda backend, xs, attrs: backend.layernorm(xs[0], xs[1], xs[2], attrs["eps"]),
        _ln_infer,
        _vjp_layernorm,
    )
)


# -- data movement -----------------------------------------------------------


def _vjp_gather(backend, g, xs, out, attrs):
    table, ids = xs
    dt = np.zeros(table.shape, dtype=g.dtype)
    np.add.at(dt, ids, g)
    return [dt, None]


def _gather_infer(s, d, a):
    out = shapes.gather_shape(s[0], s[1])
    if d[1] != "int32":
        from .errors import DtypeError

        raise DtypeError(f"gather ids must be int32, got {d[1]}")
    return out, d[0]


_register(
    OpDef(
        "gather",
        lambda backend, xs, attrs: backend.gather(xs[0], xs[1]),
        _gather_infer,
        _vjp_gather,
    )
)


def _vjp_transpose(backend, g, xs, out, attrs):
    perm = attrs["perm"]
    inv = np.argsort(perm)
    return [np.ascontiguousarray(np.transpose(g, inv))]


_register(
    OpDef(
        "transpose",
        lambda backend, xs, attrs: backend.transpose(xs[0], attrs["perm"]),
        lambda s, d, a: (shapes.transpose_check(s[0], a["perm"]), d[0]),
        _vjp_transpose,
    )
)


_register(
    OpDef(
        "reshape",
        lambda backend, xs, attrs: backend.reshape(xs[0], attrs["shape"]),
        lambda s, d, a: (shapes.reshape_check(s[0], a["shape"]), d[0]),
        lambda backend, g, xs, out, attrs: [np.ascontiguousarray(g.reshape(xs[0].shape))],
    )
)


def _vjp_slice(backend, g, xs, out, attrs):
    x = xs[0]
    dx = np.zeros(x.shape, dtype=g.dtype)
    sel = tuple(np.s_[st : st + sz] for st, sz in zip(attrs["starts"], attrs["sizes"]))
    dx[sel] = g
    return [dx]


_register(
    OpDef(
        "slice",
        lambda backend, xs, attrs: backend.slice(xs[0], attrs["starts"], attrs["sizes"]),
        lambda s, d, a: (shapes.slice_check(s[0], a["starts"], a["sizes"]), d[0]),
        _vjp_slice,
    )
)


def _vjp_concat(backend, g, xs, out, attrs):
    ax = shapes.normalize_axis(attrs["axis"], out.ndim)
    grads, off = [], 0
    for x in xs:
        sel = [np.s_[:]] * out.ndim
        sel[ax] = np.s_[off : off + x.shape[ax]]
        grads.append(np.ascontiguousarray(g[tuple(sel)]))
        off += x.shape[ax]
    return grads


def _concat_infer(s, d, a):
    out = shapes.concat_shape(list(s), a["axis"])
    first = d[0]
    for dt in d[1:]:
        if dt != first:
            from .errors import DtypeError

            raise DtypeError(f"concat dtype mismatch: {first} vs {dt}")
    return out, first


_register(
    OpDef(
        "concat",
        lambda backend, xs, attrs: backend.concat(list(xs), attrs["axis"]),
        _concat_infer,
        _vjp_concat,
    )
)

_register(
    OpDef(
        "stop_gradient",
        lambda backend, xs, attrs: np.asarray(xs[0]),
        lambda s, d, a: (s[0], d[0]),
        None,
    )
)


# -- dispatch ------------------------------------------------------------------


def _lift(value, dtype: str, backend_id: str):
    if isinstance(value, Tensor):
        return value
    trace = active_trace()
    if trace is not None and trace.is_symbolic(value):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        from .tensor import np_dtype

        return Tensor(np.array(value, dtype=np_dtype(dtype)), backend_id, _owned=True)
    raise TypeError(f"expected a tensor or scalar, got {type(value).__name__}")


def apply_op(name: str, inputs: Sequence, attrs: dict | None = None):
    opdef = OP_DEFS[name]
    attrs = dict(attrs or {})

    trace = active_trace()
    if trace is not None and any(trace.is_symbolic(x) for x in inputs):
        anchor = next(x for x in inputs if isinstance(x, Tensor) or trace.is_symbolic(x))
        lifted = [_lift(x, anchor.dtype, "reference") for x in inputs]
        return trace.record(opdef, lifted, attrs)

    anchor = next((x for x in inputs if isinstance(x, Tensor)), None)
    if anchor is None:
        raise TypeError(f"{name} needs at least one tensor input")
    lifted = [_lift(x, anchor.dtype, anchor.backend_id) for x in inputs]
    backend_ids = {t.backend_id for t in lifted}
    if len(backend_ids) > 1:
        raise ConfigError(f"operands live on different backends: {sorted(backend_ids)}")
    backend = get_backend(anchor.backend_id)

    arrays = tuple(t.data for t in lifted)
    out_arr = opdef.forward(backend, arrays, attrs)
    out = Tensor(out_arr, anchor.backend_id, _owned=True)

    tapes = tape_stack()
    if tapes and opdef.vjp is not None:
        in_ids = tuple(t.tid for t in lifted)
        for tape in tapes:
            tape._maybe_record(opdef, in_ids, arrays, out, attrs, backend)
    return out


# -- public wrappers -------------------------------------------------------------


def add(a, b):
    return apply_op("add", (a, b))


def sub(a, b):
    return apply_op("sub", (a, b))


def mul(a, b):
    return apply_op("mul", (a, b))


def div(a, b):
    return apply_op("div", (a, b))


def neg(x):
    return apply_op("neg", (x,))


def relu(x):
    return apply_op("relu", (x,))


def gelu(x):
    return apply_op("gelu", (x,))


def exp(x):
    return apply_op("exp", (x,))


def log(x):
    return apply_op("log", (x,))


def matmul(a, b):
    return apply_op("matmul", (a, b))


def conv2d(x, w, stride: int = 1, padding: str = "same"):
    return apply_op("conv2d", (x, w), {"stride": int(stride), "padding": padding})


def reduce_sum(x, axis=None):
    return apply_op("reduce_sum", (x,), {"axis": axis})


def reduce_mean(x, axis=None):
    return apply_op("reduce_mean", (x,), {"axis": axis})


def reduce_max(x, axis=None):
    return apply_op("reduce_max", (x,), {"axis": axis})


def softmax(x, axis: int = -1):
    return apply_op("softmax", (x,), {"axis": axis})


def layernorm(x, gamma, beta, eps: float = 1e-5):
    return apply_op("layernorm", (x, gamma, beta), {"eps": float(eps)})


def gather(table, ids):
    return apply_op("gather", (table, ids))


def transpose(x, perm):
    return apply_op("transpose", (x,), {"perm": tuple(int(p) for p in perm)})


def reshape(x, shape):
    return apply_op("reshape", (x,), {"shape": tuple(int(s) for s in shape)})


def slice_(x, starts, sizes):
    return apply_op(
        "slice",
        (x,),
        {"starts": tuple(int(s) for s in starts), "sizes": tuple(int(s) for s in sizes)},
    )


def concat(xs, axis: int = 0):
    return apply_op("concat", tuple(xs), {"axis": int(axis)})


def stop_gradient(x):
    return apply_op("stop_gradient", (x,))
