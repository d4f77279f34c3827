"""Graph capture, optimization, and execution.

`capture` runs a python function once over placeholder tensors and
records every primitive op into a static-shape IR. `optimize` applies
constant folding, dead-code elimination, and elementwise fusion, in that
order. `execute` interprets the IR on either backend and enforces the
capture-time shapes exactly.

Node kinds are the primitive op names plus three structural kinds:
"input" (placeholder), "const" (captured concrete tensor, payload kept
out of the attribute map), and "fused" (an elementwise chain; its
attribute map stores the step program for Backend.fused_eval).

Constant folding evaluates on the reference backend. Folding and DCE
therefore change nothing, bit for bit, when the graph is later executed
on the reference backend; fusion is bitwise-neutral by the fused_eval
contract, so the whole pipeline is too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ops, shapes
from .backends import FusedStep, get_backend
from .errors import CaptureError, ShapeError
from .tensor import DTYPES, Tensor, np_dtype

STRUCTURAL = ("input", "const", "fused")


@dataclass(frozen=True)
class Node:
    nid: int
    op: str
    attrs: dict
    inputs: tuple
    shape: tuple
    dtype: str
    value: np.ndarray | None = None  # const payload only


@dataclass
class GraphIR:
    nodes: list
    inputs: tuple
    outputs: tuple
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {n.nid: n for n in self.nodes}

    def node(self, nid: int) -> Node:
        return self._index[nid]

    @property
    def shape_table(self) -> dict:
        return {n.nid: n.shape for n in self.nodes}

    def num_nodes(self) -> int:
        return len(self.nodes)

    def dump(self) -> str:
        lines = []
        for n in self.nodes:
            kind = n.op
            if n.op == "fused":
                kind = "fused[" + ",".join(s.op for s in n.attrs["steps"]) + "]"
            shape = "x".join(str(d) for d in n.shape) if n.shape else "scalar"
            srcs = ", ".join(str(i) for i in n.inputs)
            lines.append(f"{n.nid}: {kind}({shape}) <- {srcs}")
        return "\n".join(lines)


class SymbolicTensor:
    """Placeholder standing in for a runtime tensor during capture."""

    __slots__ = ("nid", "_shape", "_dtype")

    def __init__(self, nid: int, shape: tuple, dtype: str):
        self.nid = nid
        self._shape = tuple(shape)
        self._dtype = dtype

    @property
    def shape(self):
        return self._shape

    @property
    def ndim(self):
        return len(self._shape)

    @property
    def size(self):
        return math.prod(self._shape)

    @property
    def dtype(self):
        return self._dtype

    def _no_value(self, what):
        raise CaptureError(
            f"cannot {what} a symbolic tensor during capture; only primitive "
            "tensor ops are traceable"
        )

    @property
    def data(self):
        self._no_value("read")

    def to_numpy(self):
        self._no_value("read")

    def item(self):
        self._no_value("read")

    def __bool__(self):
        self._no_value("branch on")

    def __float__(self):
        self._no_value("convert")

    def __int__(self):
        self._no_value("convert")

    def __iter__(self):
        self._no_value("iterate over")

    def __array__(self, *a, **k):
        self._no_value("read")

    def __repr__(self):
        return f"SymbolicTensor(shape={list(self._shape)}, dtype={self._dtype})"


class _Tracer:
    def __init__(self):
        self.nodes: list[Node] = []
        self._next = 0
        self._const_ids: dict[int, int] = {}

    def is_symbolic(self, x) -> bool:
        return isinstance(x, SymbolicTensor)

    def _add(self, op, attrs, inputs, shape, dtype, value=None) -> int:
        nid = self._next
        self._next += 1
        self.nodes.append(Node(nid, op, attrs, tuple(inputs), tuple(shape), dtype, value))
        return nid

    def placeholder(self, shape, dtype) -> SymbolicTensor:
        nid = self._add("input", {}, (), shape, dtype)
        return SymbolicTensor(nid, shape, dtype)

    def _const(self, t: Tensor) -> int:
        nid = self._const_ids.get(t.tid)
        if nid is None:
            nid = self._add("const", {}, (), t.shape, t.dtype, value=t.data)
            self._const_ids[t.tid] = nid
        return nid

    def record(self, opdef, lifted, attrs) -> SymbolicTensor:
        in_ids, in_shapes, in_dtypes = [], [], []
        for x in lifted:
            if isinstance(x, SymbolicTensor):
                in_ids.append(x.nid)
                in_shapes.append(x.shape)
                in_dtypes.append(x.dtype)
            else:
                in_ids.append(self._const(x))
                in_shapes.append(x.shape)
                in_dtypes.append(x.dtype)
        out_shape, out_dtype = opdef.infer(in_shapes, in_dtypes, attrs)
        nid = self._add(opdef.name, attrs, in_ids, out_shape, out_dtype)
        return SymbolicTensor(nid, out_shape, out_dtype)


def _check_spec(spec) -> tuple:
    shape, dtype = spec
    shape = tuple(shape)
    if dtype not in DTYPES:
        raise CaptureError(f"unsupported placeholder dtype {dtype!r}")
    for d in shape:
        if not isinstance(d, int) or d < 0:
            raise CaptureError(f"placeholder shape {shape} is not fully static")
    return shape, dtype


def capture(program, input_specs: Sequence) -> GraphIR:
    """Trace `program` over placeholders and return its IR."""
    if ops.active_trace() is not None:
        raise CaptureError("capture cannot be nested inside another capture")
    tracer = _Tracer()
    placeholders = [tracer.placeholder(*_check_spec(s)) for s in input_specs]
    ops.set_active_trace(tracer)
    try:
        result = program(*placeholders)
    finally:
        ops.set_active_trace(None)

    flat = list(result) if isinstance(result, (tuple, list)) else [result]
    if not flat:
        raise CaptureError("program returned no outputs")
    out_ids = []
    for r in flat:
        if isinstance(r, SymbolicTensor):
            out_ids.append(r.nid)
        elif isinstance(r, Tensor):
            out_ids.append(tracer._const(r))
        else:
            raise CaptureError(f"program returned a non-tensor of type {type(r).__name__}")
    graph = GraphIR(tracer.nodes, tuple(p.nid for p in placeholders), tuple(out_ids))
    return infer_shapes(graph)


def _infer_node(n: Node, table: dict) -> tuple:
    """Return (shape, dtype) for one node given its inputs' entries."""
    if n.op == "input" or n.op == "const":
        return n.shape, n.dtype
    in_shapes = [table[i][0] for i in n.inputs]
    in_dtypes = [table[i][1] for i in n.inputs]
    if n.op == "fused":
        out = None
        for s in in_shapes:
            if math.prod(s) != 1:
                if out is not None and s != out:
                    raise ShapeError(f"fused inputs disagree: {out} vs {s}")
                out = s
        return (out if out is not None else n.shape), (in_dtypes[0] if in_dtypes else n.dtype)
    return ops.OP_DEFS[n.op].infer(in_shapes, in_dtypes, n.attrs)


def infer_shapes(g: GraphIR) -> GraphIR:
    """Recompute the shape table; raises ShapeError naming the bad node."""
    table: dict[int, tuple] = {}
    nodes = []
    for n in g.nodes:
        try:
            shape, dtype = _infer_node(n, table)
        except ShapeError as e:
            raise ShapeError(f"node {n.nid} ({n.op}): {e}") from None
        table[n.nid] = (shape, dtype)
        nodes.append(replace(n, shape=tuple(shape), dtype=dtype))
    return GraphIR(nodes, g.inputs, g.outputs)


# -- optimization passes ---------------------------------------------------


def _fold_constants(g: GraphIR) -> GraphIR:
    backend = get_backend("reference")
    nodes = []
    index = {}
    for n in g.nodes:
        if n.op not in STRUCTURAL and all(index[i].op == "const" for i in n.inputs):
            arrays = tuple(index[i].value for i in n.inputs)
            value = ops.OP_DEFS[n.op].forward(backend, arrays, n.attrs)
            n = Node(n.nid, "const", {}, (), n.shape, n.dtype, np.ascontiguousarray(value))
        index[n.nid] = n
        nodes.append(n)
    return GraphIR(nodes, g.inputs, g.outputs)


def _dce(g: GraphIR) -> GraphIR:
    live = set(g.outputs) | set(g.inputs)
    for n in reversed(g.nodes):
        if n.nid in live:
            live.update(n.inputs)
    return GraphIR([n for n in g.nodes if n.nid in live], g.inputs, g.outputs)


def _fusible(n: Node) -> bool:
    return n.op in ops.OP_DEFS and ops.OP_DEFS[n.op].fusible


def _chunk_safe(shape: tuple, group_shape: tuple) -> bool:
    return shape == group_shape or math.prod(shape) == 1


def _fuse_elementwise(g: GraphIR) -> GraphIR:
    consumers: dict[int, int] = {}
    for n in g.nodes:
        for i in n.inputs:
            consumers[i] = consumers.get(i, 0) + 1
    for o in g.outputs:
        consumers[o] = consumers.get(o, 0) + 1

    order = {n.nid: k for k, n in enumerate(g.nodes)}
    taken: set[int] = set()
    groups: list[list[Node]] = []
    for seed in g.nodes:
        if seed.nid in taken or not _fusible(seed):
            continue
        shape = seed.shape
        if not all(_chunk_safe(g.node(i).shape, shape) for i in seed.inputs):
            continue
        chain = [seed]
        while True:
            sink = chain[-1]
            if consumers.get(sink.nid, 0) != 1:
                break
            nxt = next((n for n in g.nodes[order[sink.nid] + 1 :] if sink.nid in n.inputs), None)
            if (
                nxt is None
                or not _fusible(nxt)
                or nxt.shape != shape
                or nxt.nid in taken
                or not all(
                    i == sink.nid or _chunk_safe(g.node(i).shape, shape) for i in nxt.inputs
                )
            ):
                break
            chain.append(nxt)
        if len(chain) > 1:
            taken.update(n.nid for n in chain)
            groups.append(chain)

    if not groups:
        return g

    replaced: dict[int, Node] = {}
    dropped: set[int] = set()
    for chain in groups:
        member_step = {n.nid: k for k, n in enumerate(chain)}
        ext_ids: list[int] = []
        steps = []
        for n in chain:
            args = []
            for i in n.inputs:
                if i in member_step:
                    args.append(("step", member_step[i]))
                else:
                    if i not in ext_ids:
                        ext_ids.append(i)
                    args.append(("input", ext_ids.index(i)))
            steps.append(FusedStep(n.op, tuple(args)))
        sink = chain[-1]
        replaced[sink.nid] = Node(
            sink.nid, "fused", {"steps": tuple(steps)}, tuple(ext_ids), sink.shape, sink.dtype
        )
        dropped.update(n.nid for n in chain[:-1])

    nodes = [replaced.get(n.nid, n) for n in g.nodes if n.nid not in dropped]
    return GraphIR(nodes, g.inputs, g.outputs)


def optimize(g: GraphIR) -> GraphIR:
    """Constant folding, then DCE, then elementwise fusion."""
    return _fuse_elementwise(_dce(_fold_constants(g)))


# -- execution ----------------------------------------------------------------


def execute(g: GraphIR, inputs: Sequence[Tensor], backend):
    """Run the IR; inputs must match placeholder specs exactly."""
    if isinstance(backend, str):
        backend = get_backend(backend)
    if len(inputs) != len(g.inputs):
        raise ShapeError(f"graph takes {len(g.inputs)} inputs, got {len(inputs)}")
    vals: dict[int, np.ndarray] = {}
    for nid, t in zip(g.inputs, inputs):
        spec = g.node(nid)
        if tuple(t.shape) != spec.shape or t.dtype != spec.dtype:
            raise ShapeError(
                f"input {nid} expects shape {list(spec.shape)} {spec.dtype}, "
                f"got {list(t.shape)} {t.dtype}"
            )
        vals[nid] = t.data

    for n in g.nodes:
        if n.op == "input":
            continue
        if n.op == "const":
            vals[n.nid] = n.value
        elif n.op == "fused":
            ext = [vals[i] for i in n.inputs]
            vals[n.nid] = backend.fused_eval(n.attrs["steps"], ext, n.shape, np_dtype(n.dtype))
        else:
            arrays = tuple(vals[i] for i in n.inputs)
            vals[n.nid] = ops.OP_DEFS[n.op].forward(backend, arrays, n.attrs)

    outs = [Tensor(vals[o], backend.name) for o in g.outputs]
    return outs[0] if len(outs) == 1 else tuple(outs)
