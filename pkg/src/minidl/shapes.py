"""Shape and dtype rules shared by eager kernels and graph tracing.

Every function here is pure: it takes shape tuples (and dtype names where
relevant), returns the result shape, and raises ShapeError/AxisError/
DtypeError on contract violations. Backends call these before touching
data; the tracer calls the same functions on symbolic tensors, so eager
and captured execution cannot disagree about shapes.
"""

from __future__ import annotations

import math

from .errors import AxisError, DtypeError, ShapeError

FLOAT_DTYPES = ("float32", "float64")


def check_float(dtype: str, what: str = "operand") -> str:
    if dtype not in FLOAT_DTYPES:
        raise DtypeError(f"{what} must be float32 or float64, got {dtype}")
    return dtype


def binary_dtype(a: str, b: str) -> str:
    check_float(a)
    check_float(b)
    if a != b:
        raise DtypeError(f"mixed dtypes in binary op: {a} vs {b}")
    return a


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        import numpy as np

        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise ShapeError(f"cannot broadcast {a} with {b}") from None


def normalize_axis(axis: int, ndim: int) -> int:
    if not isinstance(axis, int):
        raise AxisError(f"axis must be an int, got {type(axis).__name__}")
    if not -ndim <= axis < ndim:
        raise AxisError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim if ndim else 0


def matmul_shape(a: tuple, b: tuple) -> tuple:
    if len(a) < 2 or len(b) < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a} and {b}")
    if a[-1] != b[-2]:
        raise ShapeError(f"matmul contraction mismatch: {a} @ {b}")
    batch = broadcast_shape(a[:-2], b[:-2])
    return batch + (a[-2], b[-1])


def conv2d_paddings(in_h: int, in_w: int, kh: int, kw: int, stride: int, padding: str):
    """Return ((top, bottom), (left, right)) zero padding amounts."""
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding != "same":
        raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")
    # 'same' keeps ceil(extent / stride); standard asymmetric split,
    # extra pixel on the bottom/right.
    out_h = -(-in_h // stride)
    out_w = -(-in_w // stride)
    pad_h = max(0, (out_h - 1) * stride + kh - in_h)
    pad_w = max(0, (out_w - 1) * stride + kw - in_w)
    return (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)


def conv2d_shape(x: tuple, w: tuple, stride: int, padding: str) -> tuple:
    if len(x) != 4:
        raise ShapeError(f"conv2d input must be [batch, h, w, cin], got {x}")
    if len(w) != 4:
        raise ShapeError(f"conv2d filter must be [kh, kw, cin, cout], got {w}")
    if x[3] != w[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x[3]} vs filter {w[2]}")
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"stride must be a positive int, got {stride!r}")
    (pt, pb), (pl, pr) = conv2d_paddings(x[1], x[2], w[0], w[1], stride, padding)
    h = x[1] + pt + pb
    ww = x[2] + pl + pr
    if h < w[0] or ww < w[1]:
        raise ShapeError(f"filter {w[:2]} larger than padded input {(h, ww)}")
    out_h = (h - w[0]) // stride + 1
    out_w = (ww - w[1]) // stride + 1
    return (x[0], out_h, out_w, w[3])


def reduce_shape(shape: tuple, axis) -> tuple:
    if axis is None:
        return ()
    ax = normalize_axis(axis, len(shape))
    if not shape:
        raise AxisError("cannot reduce a scalar along an axis")
    return shape[:ax] + shape[ax + 1 :]


def softmax_check(shape: tuple, axis: int) -> int:
    ax = normalize_axis(axis, len(shape))
    if not shape:
        raise ShapeError("softmax input must have rank >= 1")
    if shape[ax] == 0:
        raise ShapeError("softmax along an empty axis is undefined")
    return ax


def layernorm_check(x: tuple, gamma: tuple, beta: tuple) -> None:
    if not x:
        raise ShapeError("layernorm input must have rank >= 1")
    feat = (x[-1],)
    if gamma != feat or beta != feat:
        raise ShapeError(
            f"layernorm scale/offset must have shape {feat}, got {gamma} and {beta}"
        )


def gather_shape(table: tuple, ids: tuple) -> tuple:
    if not table:
        raise ShapeError("gather table must have rank >= 1")
    return tuple(ids) + tuple(table[1:])


def transpose_check(shape: tuple, perm) -> tuple:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(len(shape))):
        raise ShapeError(f"perm {perm} is not a permutation of rank {len(shape)}")
    return tuple(shape[p] for p in perm)


def reshape_check(shape: tuple, new_shape) -> tuple:
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 0 for d in new_shape):
        raise ShapeError(f"reshape target {new_shape} has a negative extent")
    if math.prod(shape) != math.prod(new_shape):
        raise ShapeError(f"cannot reshape {shape} ({math.prod(shape)} elements) to {new_shape}")
    return new_shape


def slice_check(shape: tuple, starts, sizes) -> tuple:
    starts = tuple(int(s) for s in starts)
    sizes = tuple(int(s) for s in sizes)
    if len(starts) != len(shape) or len(sizes) != len(shape):
        raise ShapeError(f"slice starts/sizes must match rank {len(shape)}")
    for ext, st, sz in zip(shape, starts, sizes):
        if st < 0 or sz < 0 or st + sz > ext:
            raise ShapeError(f"slice [{st}:{st + sz}] out of bounds for extent {ext}")
    return sizes


def concat_shape(shapes: list, axis: int) -> tuple:
    if not shapes:
        raise ShapeError("concat needs at least one input")
    ax = normalize_axis(axis, len(shapes[0]))
    first = shapes[0]
    total = 0
    for s in shapes:
        if len(s) != len(first):
            raise ShapeError(f"concat rank mismatch: {first} vs {s}")
        for d in range(len(first)):
            if d != ax and s[d] != first[d]:
                raise ShapeError(f"concat extent mismatch on axis {d}: {first} vs {s}")
        total += s[ax]
    return first[:ax] + (total,) + first[ax + 1 :]
