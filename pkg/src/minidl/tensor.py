"""Dense immutable tensor type, the value passed between all kernels."""

import itertools

import numpy as np

from .errors import DtypeError, ShapeError

DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int32": np.int32,
    "uint8": np.uint8,
}

_NP_TO_NAME = {np.dtype(v): k for k, v in DTYPES.items()}

_next_id = itertools.count(1)


def np_dtype(name):
    try:
        return DTYPES[name]
    except KeyError:
        raise DtypeError(f"unsupported dtype {name!r}; expected one of {sorted(DTYPES)}")


def dtype_name(np_dt):
    try:
        return _NP_TO_NAME[np.dtype(np_dt)]
    except KeyError:
        raise DtypeError(f"unsupported numpy dtype {np_dt}")


class Tensor:
    """Row-major n-dimensional array with a fixed dtype.

    Tensors are immutable after construction: every operation returns a new
    tensor, so values can be shared freely across threads. `tid` is a
    process-unique identity used by gradient tapes.
    """

    __slots__ = ("_data", "backend_id", "tid")

    def __init__(self, data, backend_id="reference", *, _owned=False):
        arr = np.asarray(data)
        dtype_name(arr.dtype)  # reject unsupported dtypes early
        if not _owned:
            # private copy: freezing must never alter the caller's array
            arr = arr.copy(order="C")
        elif arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        self._data = arr
        self.backend_id = backend_id
        self.tid = next(_next_id)

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def dtype(self):
        return dtype_name(self._data.dtype)

    @property
    def data(self):
        """Read-only numpy view of the underlying buffer."""
        return self._data

    def to_numpy(self):
        """Writable copy of the tensor contents."""
        return self._data.copy()

    def item(self):
        if self._data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return self._data.reshape(()).item()

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}, backend={self.backend_id!r})"


def tensor_create(shape, dtype, values, backend_id="reference"):
    """Build a tensor from a flat list of values in row-major order."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative extent in shape {list(shape)}")
    n = 1
    for s in shape:
        n *= s
    values = list(values)
    if len(values) != n:
        raise ShapeError(f"shape {list(shape)} holds {n} elements, got {len(values)} values")
    arr = np.array(values, dtype=np_dtype(dtype)).reshape(shape)
    return Tensor(arr, backend_id, _owned=True)


def from_numpy(arr, backend_id="reference"):
    return Tensor(np.asarray(arr), backend_id)


def zeros(shape, dtype="float32", backend_id="reference"):
    return Tensor(np.zeros(shape, dtype=np_dtype(dtype)), backend_id, _owned=True)


def ones(shape, dtype="float32", backend_id="reference"):
    return Tensor(np.ones(shape, dtype=np_dtype(dtype)), backend_id, _owned=True)


def full(shape, value, dtype="float32", backend_id="reference"):
    return Tensor(np.full(shape, value, dtype=np_dtype(dtype)), backend_id, _owned=True)
