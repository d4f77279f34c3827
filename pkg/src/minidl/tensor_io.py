"""Single-tensor binary files.

Layout (little-endian): magic "FMLT", u32 version=1, u8 dtype code,
u8 rank, u64 extents[rank], then the row-major payload. Dtype codes:
0=float32, 1=float64, 2=int32, 3=uint8.
"""

import struct

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"FMLT"
VERSION = 1

DTYPE_CODES = {"float32": 0, "float64": 1, "int32": 2, "uint8": 3}
_CODE_TO_NP = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("u1"),
}
_NAME_BY_CODE = {v: k for k, v in DTYPE_CODES.items()}


def tensor_file_bytes(arr):
    """Serialize one tensor (or array) to the weight-file byte layout."""
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    code = None
    for name, c in DTYPE_CODES.items():
        if arr.dtype == np.dtype(name):
            code = c
    if code is None:
        raise DataError(f"unsupported tensor dtype {arr.dtype}")
    if arr.ndim > 255:
        raise DataError(f"rank {arr.ndim} does not fit the header")
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_CODE_TO_NP[code], copy=False).tobytes()
    return header + payload


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_file_bytes(arr))


def _parse_header(data, path):
    if len(data) < 10 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a tensor file (bad magic)")
    version, code, rank = struct.unpack_from("<IBB", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if code not in _CODE_TO_NP:
        raise DataError(f"{path}: unknown dtype code {code}")
    end = 10 + 8 * rank
    if len(data) < end:
        raise DataError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", data, 10)
    return tuple(int(s) for s in shape), code, end


def read_tensor_header(path):
    """(shape, dtype name) from the header alone; payload is not read."""
    with open(path, "rb") as f:
        data = f.read(10 + 8 * 255)
    shape, code, _ = _parse_header(data, path)
    return shape, _NAME_BY_CODE[code]


def read_tensor(path):
    """Load one tensor file as a numpy array."""
    with open(path, "rb") as f:
        data = f.read()
    shape, code, offset = _parse_header(data, path)
    dt = _CODE_TO_NP[code]
    count = 1
    for s in shape:
        count *= s
    if len(data) - offset != count * dt.itemsize:
        raise DataError(
            f"{path}: payload holds {len(data) - offset} bytes, "
            f"expected {count * dt.itemsize}"
        )
    arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
    return arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
