"""Tape-based reverse-mode differentiation.

A GradTape records every differentiable op whose inputs depend on a
watched tensor while the `with` block is open. `backward(target,
sources)` then walks the recorded entries once, newest to oldest,
accumulating vector-Jacobian products. Tensors are immutable and carry
unique ids, so the record order is already a topological order.

Rules enforced here:
  - the target must be a scalar the tape saw being computed,
  - a tape is consumed by backward and cannot be reused,
  - watched tensors the target never touched get zero gradients.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import ops
from .errors import ShapeError, TapeError
from .tensor import Tensor


class _Entry(NamedTuple):
    opdef: object
    in_ids: tuple
    inputs: tuple  # numpy arrays
    output: np.ndarray
    attrs: dict
    backend: object
    out_id: int


class GradTape:
    def __init__(self):
        self._entries: list[_Entry] = []
        self._live: set[int] = set()
        self._watched: dict[int, Tensor] = {}
        self._used = False
        self._open = False

    def __enter__(self):
        ops.tape_stack().append(self)
        self._open = True
        return self

    def __exit__(self, exc_type, exc, tb):
        ops.tape_stack().remove(self)
        self._open = False
        return False

    def watch(self, tensor: Tensor) -> None:
        if not isinstance(tensor, Tensor):
            raise TapeError(f"can only watch tensors, got {type(tensor).__name__}")
        self._watched[tensor.tid] = tensor
        self._live.add(tensor.tid)

    def _maybe_record(self, opdef, in_ids, arrays, out: Tensor, attrs, backend) -> None:
        if not self._open:
            return
        if not any(i in self._live for i in in_ids):
            return
        self._live.add(out.tid)
        self._entries.append(_Entry(opdef, in_ids, arrays, out.data, attrs, backend, out.tid))

    def backward(self, target: Tensor, sources: Sequence[Tensor]) -> list[Tensor]:
        if self._used:
            raise TapeError("this tape was already consumed by backward")
        self._used = True
        if target.size != 1:
            raise ShapeError(f"backward target must be a scalar, got shape {list(target.shape)}")
        if target.tid not in self._live:
            raise TapeError("target was not computed from watched tensors under this tape")

        grads: dict[int, np.ndarray] = {
            target.tid: np.ones(target.shape, dtype=target.data.dtype)
        }
        for entry in reversed(self._entries):
            g = grads.get(entry.out_id)
            if g is None:
                continue
            parts = entry.opdef.vjp(entry.backend, g, entry.inputs, entry.output, entry.attrs)
            for tid, part in zip(entry.in_ids, parts):
                if part is None or tid not in self._live:
                    continue
                prev = grads.get(tid)
                grads[tid] = part if prev is None else prev + part

        out = []
        for src in sources:
            if src.tid not in self._watched:
                raise TapeError("every gradient source must have been watched")
            g = grads.get(src.tid)
            if g is None:
                g = np.zeros(src.shape, dtype=src.data.dtype)
            g = np.ascontiguousarray(g, dtype=src.data.dtype)
            out.append(Tensor(g, src.backend_id, _owned=True))
        return out
