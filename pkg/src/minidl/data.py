"""Pull-based streaming datasets.

A Dataset is a linear chain of stages rooted at a source. Iteration is
lazy and single-consumer; elements are numpy arrays or (named) tuples /
dicts of them. Every seeded stage builds a fresh Rng per iteration, so
re-iterating a pipeline replays the identical sequence.

prefetch is the only stage with background work: one producer thread
and a bounded queue. Errors raised upstream are delivered to the
consumer at the position where they occurred.
"""

from __future__ import annotations

import queue
import threading
from collections import namedtuple
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .rng import Rng
from .tensor import Tensor


def _leaf_spec(x):
    a = np.asarray(x)
    return (tuple(a.shape), str(a.dtype))


def element_spec_of(elem):
    """Describe an element's structure with (shape, dtype) leaves."""
    if isinstance(elem, tuple) and hasattr(elem, "_fields"):
        return {f: element_spec_of(v) for f, v in zip(elem._fields, elem)}
    if isinstance(elem, dict):
        return {k: element_spec_of(v) for k, v in elem.items()}
    if isinstance(elem, (tuple, list)):
        return tuple(element_spec_of(v) for v in elem)
    return _leaf_spec(elem)


def _stack(elems):
    """Stack a list of same-structure elements along a new axis 0."""
    first = elems[0]
    if isinstance(first, tuple) and hasattr(first, "_fields"):
        return type(first)(*(_stack([e[i] for e in elems]) for i in range(len(first))))
    if isinstance(first, dict):
        return {k: _stack([e[k] for e in elems]) for k in first}
    if isinstance(first, (tuple, list)):
        return tuple(_stack([e[i] for e in elems]) for i in range(len(first)))
    arrs = [np.asarray(e) for e in elems]
    shape, dtype = arrs[0].shape, arrs[0].dtype
    for a in arrs[1:]:
        if a.shape != shape or a.dtype != dtype:
            raise ShapeError(
                f"cannot batch ragged elements: {a.shape} {a.dtype} vs {shape} {dtype}"
            )
    return np.stack(arrs)


class Dataset:
    """One stage of a pipeline; subclasses implement _iterate()."""

    def __iter__(self):
        return self._iterate()

    def _iterate(self):
        raise NotImplementedError

    @property
    def element_spec(self):
        """Per-field (shape, dtype) description, or None after an
        arbitrary map whose output structure is not statically known."""
        return None

    # fluent stage constructors

    def map(self, fn) -> "Dataset":
        return _Map(self, fn)

    def shuffle(self, buffer: int, seed: int) -> "Dataset":
        return _Shuffle(self, buffer, seed)

    def batch(self, n: int, drop_remainder: bool = False) -> "Dataset":
        return _Batch(self, n, drop_remainder)

    def cache(self) -> "Dataset":
        return _Cache(self)

    def prefetch(self, depth: int) -> "Dataset":
        return _Prefetch(self, depth)


class _Slices(Dataset):
    def __init__(self, fields):
        if isinstance(fields, dict):
            arrays = {}
            for name, v in fields.items():
                a = v.data if isinstance(v, Tensor) else np.asarray(v)
                if a.ndim == 0:
                    raise ShapeError(f"field {name!r} has no axis 0 to slice")
                arrays[name] = a
            extents = {n: a.shape[0] for n, a in arrays.items()}
            if len(set(extents.values())) > 1:
                raise ShapeError(f"axis-0 extents differ across fields: {extents}")
            self._n = next(iter(extents.values())) if extents else 0
            self._tuple = namedtuple("Element", list(arrays))
            self._arrays = arrays
        else:
            a = fields.data if isinstance(fields, Tensor) else np.asarray(fields)
            if a.ndim == 0:
                raise ShapeError("cannot slice a scalar along axis 0")
            self._n = a.shape[0]
            self._tuple = None
            self._arrays = a

    def _iterate(self):
        if self._tuple is None:
            for i in range(self._n):
                yield self._arrays[i]
        else:
            for i in range(self._n):
                yield self._tuple(*(a[i] for a in self._arrays.values()))

    @property
    def element_spec(self):
        if self._tuple is None:
            shape, dtype = self._arrays.shape[1:], str(self._arrays.dtype)
            return (tuple(shape), dtype)
        return {n: (tuple(a.shape[1:]), str(a.dtype)) for n, a in self._arrays.items()}


class _Map(Dataset):
    def __init__(self, parent, fn):
        self._parent = parent
        self._fn = fn

    def _iterate(self):
        fn = self._fn
        for elem in self._parent:
            yield fn(elem)


class _Shuffle(Dataset):
    def __init__(self, parent, buffer, seed):
        if buffer < 1:
            raise ConfigError(f"shuffle buffer must be >= 1, got {buffer}")
        self._parent = parent
        self._buffer = int(buffer)
        self._seed = int(seed)

    def _iterate(self):
        # Windowed reservoir: emit a uniformly drawn slot, refill it from
        # upstream while elements remain, then backfill from the end.
        # With buffer >= stream length this is exactly Rng.shuffle.
        rng = Rng(self._seed)
        src = iter(self._parent)
        buf = []
        for elem in src:
            buf.append(elem)
            if len(buf) >= self._buffer:
                break
        done = object()
        while buf:
            j = rng.next_uint(len(buf))
            out = buf[j]
            nxt = next(src, done)
            if nxt is done:
                buf[j] = buf[-1]
                buf.pop()
            else:
                buf[j] = nxt
            yield out

    @property
    def element_spec(self):
        return self._parent.element_spec


class _Batch(Dataset):
    def __init__(self, parent, n, drop_remainder):
        if n < 1:
            raise ConfigError(f"batch size must be >= 1, got {n}")
        self._parent = parent
        self._n = int(n)
        self._drop = bool(drop_remainder)

    def _iterate(self):
        pending = []
        for elem in self._parent:
            pending.append(elem)
            if len(pending) == self._n:
                yield _stack(pending)
                pending = []
        if pending and not self._drop:
            yield _stack(pending)

    @property
    def element_spec(self):
        up = self._parent.element_spec
        if up is None:
            return None
        lead = self._n if self._drop else None

        def add_axis(spec):
            if isinstance(spec, dict):
                return {k: add_axis(v) for k, v in spec.items()}
            if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[1], str):
                return ((lead,) + spec[0], spec[1])
            return tuple(add_axis(v) for v in spec)

        return add_axis(up)


class _Cache(Dataset):
    def __init__(self, parent):
        self._parent = parent
        self._items: list = []
        self._filled = False

    def _iterate(self):
        if self._filled:
            yield from self._items
            return
        items = []
        for elem in self._parent:
            items.append(elem)
            yield elem
        # only a completed pass becomes the cache; an abandoned iterator
        # must not freeze a truncated copy
        self._items = items
        self._filled = True

    @property
    def element_spec(self):
        return self._parent.element_spec


class _Prefetch(Dataset):
    def __init__(self, parent, depth):
        if depth < 1:
            raise ConfigError(f"prefetch depth must be >= 1, got {depth}")
        self._parent = parent
        self._depth = int(depth)

    def _iterate(self):
        q: queue.Queue = queue.Queue(maxsize=self._depth)
        stop = threading.Event()

        def produce():
            try:
                for elem in self._parent:
                    while not stop.is_set():
                        try:
                            q.put(("elem", elem), timeout=0.1)
                            break
                        except queue.Full:
                            continue
                    if stop.is_set():
                        return
                q.put(("end", None))
            except BaseException as e:  # delivered positionally to the consumer
                if not stop.is_set():
                    q.put(("error", e))

        worker = threading.Thread(target=produce, name="minidl-prefetch", daemon=True)
        worker.start()
        try:
            while True:
                kind, payload = q.get()
                if kind == "elem":
                    yield payload
                elif kind == "end":
                    return
                else:
                    raise payload
        finally:
            stop.set()
            while True:  # unblock a producer waiting on a full queue
                try:
                    q.get_nowait()
                except queue.Empty:
                    break
            worker.join(timeout=5.0)

    @property
    def element_spec(self):
        return self._parent.element_spec


# -- module-level constructors (the documented operation signatures) -------


def from_slices(fields) -> Dataset:
    """Dataset of axis-0 slices; `fields` is an array or a dict of them."""
    return _Slices(fields)


def batch(ds: Dataset, n: int, drop_remainder: bool = False) -> Dataset:
    return ds.batch(n, drop_remainder)


def shuffle(ds: Dataset, buffer: int, seed: int) -> Dataset:
    return ds.shuffle(buffer, seed)


def prefetch(ds: Dataset, depth: int) -> Dataset:
    return ds.prefetch(depth)


def cache(ds: Dataset) -> Dataset:
    return ds.cache()


def map_elements(ds: Dataset, fn) -> Dataset:
    return ds.map(fn)


# -- source adapters ---------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6, maxval 255) file into uint8 [h, w, 3]."""
    raw = Path(path).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        return raw[start:pos]

    if token() != b"P6":
        raise DataError(f"{path}: not a P6 PPM file")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    pixels = raw[pos : pos + need]
    if len(pixels) != need:
        raise DataError(f"{path}: expected {need} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    """Write uint8 [h, w, 3] as binary PPM (P6)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ShapeError(f"PPM writer needs uint8 [h, w, 3], got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


PpmExample = namedtuple("PpmExample", ["image", "name"])


class _PpmDir(Dataset):
    def __init__(self, root):
        self._root = Path(root)
        if not self._root.is_dir():
            raise DataError(f"{root}: not a directory")
        self._names = sorted(p.name for p in self._root.glob("*.ppm"))

    def _iterate(self):
        for name in self._names:
            yield PpmExample(read_ppm(self._root / name), name)


class _TextLines(Dataset):
    def __init__(self, path):
        self._path = Path(path)
        if not self._path.is_file():
            raise DataError(f"{path}: no such file")

    def _iterate(self):
        with open(self._path, encoding="utf-8") as f:
            for line in f:
                yield line.rstrip("\n")


def from_ppm_dir(root) -> Dataset:
    """Dataset over *.ppm files in a directory, sorted by file name.
    Elements are PpmExample(image: uint8 [h, w, 3], name: str)."""
    return _PpmDir(root)


def from_text_lines(path) -> Dataset:
    """Dataset of newline-stripped lines from a UTF-8 text file."""
    return _TextLines(path)
