"""Capture, shape inference, optimization passes, and graph execution."""

import numpy as np
import pytest

from minidl import GradTape, capture, execute, ops, optimize
from minidl.errors import CaptureError, ShapeError, TapeError
from minidl.graph import GraphIR, Node, infer_shapes
from minidl.tensor import from_numpy

RNG = np.random.default_rng(77)


def randn32(*shape):
    return RNG.normal(size=shape).astype(np.float32)


def compute_ops(g):
    return [n for n in g.nodes if n.op not in ("input", "const")]


# -- capture ----------------------------------------------------------------


def test_identity_program_is_one_placeholder():
    g = capture(lambda x: x, [((3,), "float32")])
    assert g.num_nodes() == 1
    assert g.nodes[0].op == "input"
    assert compute_ops(g) == []
    assert g.outputs == g.inputs
    x = from_numpy(randn32(3))
    assert np.array_equal(execute(g, [x], "reference").to_numpy(), x.to_numpy())


def test_dense_relu_structure():
    w = from_numpy(randn32(4, 8))
    b = from_numpy(randn32(8))
    g = capture(lambda x: ops.relu(ops.add(ops.matmul(x, w), b)), [((2, 4), "float32")])
    assert [n.op for n in g.nodes] == ["input", "const", "matmul", "const", "add", "relu"]
    assert g.node(g.outputs[0]).op == "relu"
    assert g.shape_table == {0: (2, 4), 1: (4, 8), 2: (2, 8), 3: (8,), 4: (2, 8), 5: (2, 8)}


def test_capture_matches_eager_bitwise():
    w = from_numpy(randn32(6, 6))
    b = from_numpy(randn32(6))

    def program(x):
        h = ops.relu(ops.add(ops.matmul(x, w), b))
        return ops.softmax(ops.matmul(h, w), -1)

    x = from_numpy(randn32(3, 6))
    eager = program(x).to_numpy()
    g = capture(program, [((3, 6), "float32")])
    assert np.array_equal(execute(g, [x], "reference").to_numpy(), eager)


def test_repeated_constant_is_deduplicated():
    w = from_numpy(randn32(3, 3))
    g = capture(lambda x: ops.add(ops.matmul(x, w), w), [((3, 3), "float32")])
    assert sum(1 for n in g.nodes if n.op == "const") == 1


def test_multi_output_program():
    g = capture(lambda x: (ops.relu(x), ops.neg(x)), [((4,), "float32")])
    assert len(g.outputs) == 2
    x = from_numpy(np.array([-1.0, 2.0, -3.0, 4.0], np.float32))
    a, b = execute(g, [x], "reference")
    assert a.to_numpy().tolist() == [0.0, 2.0, 0.0, 4.0]
    assert b.to_numpy().tolist() == [1.0, -2.0, 3.0, -4.0]


def test_gather_capture_with_int_placeholder():
    table = from_numpy(randn32(10, 4))
    g = capture(lambda ids: ops.gather(table, ids), [((2, 3), "int32")])
    assert g.node(g.outputs[0]).shape == (2, 3, 4)
    ids = from_numpy(np.array([[0, 1, 2], [9, 8, 7]], np.int32))
    out = execute(g, [ids], "reference")
    assert np.array_equal(out.to_numpy(), table.to_numpy()[ids.to_numpy()])


def test_capture_rejects_data_dependent_control_flow():
    with pytest.raises(CaptureError):
        capture(lambda x: x if x else ops.neg(x), [((2,), "float32")])


def test_capture_rejects_value_reads():
    with pytest.raises(CaptureError):
        capture(lambda x: from_numpy(ops.add(x, x).to_numpy()), [((2,), "float32")])
    with pytest.raises(CaptureError):
        capture(lambda x: ops.concat(list(x), 0), [((2,), "float32")])


def test_capture_rejects_bad_results():
    with pytest.raises(CaptureError):
        capture(lambda x: 5, [((2,), "float32")])
    with pytest.raises(CaptureError):
        capture(lambda x: [], [((2,), "float32")])


def test_capture_rejects_bad_placeholders():
    with pytest.raises(CaptureError):
        capture(lambda x: x, [((3,), "int64")])
    with pytest.raises(CaptureError):
        capture(lambda x: x, [((None, 3), "float32")])


def test_capture_cannot_nest():
    def outer(x):
        capture(lambda y: y, [((2,), "float32")])
        return x

    with pytest.raises(CaptureError):
        capture(outer, [((2,), "float32")])


def test_shape_error_during_capture():
    w = from_numpy(randn32(5, 2))
    with pytest.raises(ShapeError):
        capture(lambda x: ops.matmul(x, w), [((2, 4), "float32")])


# -- shape inference ----------------------------------------------------------


def test_infer_shapes_names_offending_node():
    nodes = [
        Node(0, "input", {}, (), (2, 3), "float32"),
        Node(1, "input", {}, (), (4, 5), "float32"),
        Node(2, "matmul", {}, (0, 1), (), "float32"),
    ]
    g = GraphIR(nodes, (0, 1), (2,))
    with pytest.raises(ShapeError, match="node 2 \\(matmul\\)"):
        infer_shapes(g)


def test_infer_shapes_fills_table():
    nodes = [
        Node(0, "input", {}, (), (4, 3), "float32"),
        Node(1, "input", {}, (), (3, 5), "float32"),
        Node(2, "matmul", {}, (0, 1), (), "float32"),
        Node(3, "input", {}, (), (5,), "float32"),
        Node(4, "add", {}, (2, 3), (), "float32"),
    ]
    g = infer_shapes(GraphIR(nodes, (0, 1, 3), (4,)))
    assert g.node(2).shape == (4, 5)
    assert g.node(4).shape == (4, 5)  # broadcast over rows


# -- optimization -------------------------------------------------------------


def test_constant_fold_collapses_const_arithmetic():
    two = np.array(2.0, np.float32)
    three = np.array(3.0, np.float32)
    nodes = [
        Node(0, "const", {}, (), (), "float32", two),
        Node(1, "const", {}, (), (), "float32", three),
        Node(2, "add", {}, (0, 1), (), "float32"),
        Node(3, "input", {}, (), (4,), "float32"),
        Node(4, "mul", {}, (2, 3), (4,), "float32"),
    ]
    g = infer_shapes(GraphIR(nodes, (3,), (4,)))
    opt = optimize(g)
    folded = opt.node(2)
    assert folded.op == "const"
    assert folded.value.item() == 5.0
    # the raw 2 and 3 are dead once the sum is materialized
    assert {n.nid for n in opt.nodes} == {2, 3, 4}
    x = from_numpy(randn32(4))
    assert np.allclose(execute(opt, [x], "reference").to_numpy(), 5 * x.to_numpy())


def test_dce_drops_unused_compute():
    def program(x):
        ops.add(ops.mul(x, x), 1.0)  # dead: never returned
        return ops.neg(x)

    g = capture(program, [((3,), "float32")])
    opt = optimize(g)
    assert {n.op for n in opt.nodes} == {"input", "neg"}
    assert opt.num_nodes() < g.num_nodes()


def test_dce_keeps_unused_placeholder():
    g = optimize(capture(lambda x, z: ops.mul(x, x), [((2,), "float32"), ((5,), "float32")]))
    assert sum(1 for n in g.nodes if n.op == "input") == 2
    with pytest.raises(ShapeError):
        execute(g, [from_numpy(randn32(2))], "reference")


def test_fusion_collapses_elementwise_chain():
    def program(x, y):
        return ops.relu(ops.mul(ops.add(x, y), y))

    g = capture(program, [((8,), "float32"), ((8,), "float32")])
    assert len(compute_ops(g)) == 3
    opt = optimize(g)
    fused = compute_ops(opt)
    assert len(fused) == 1
    assert fused[0].op == "fused"
    assert [s.op for s in fused[0].attrs["steps"]] == ["add", "mul", "relu"]

    x, y = from_numpy(randn32(8)), from_numpy(randn32(8))
    want = execute(g, [x, y], "reference").to_numpy()
    for backend in ("reference", "optimized"):
        got = execute(opt, [x, y], backend).to_numpy()
        assert np.array_equal(got, want) if backend == "reference" else np.allclose(
            got, want, atol=1e-6
        )


def test_fusion_stops_at_fanout():
    def program(x):
        h = ops.add(x, 1.0)
        return ops.mul(ops.relu(h), h)  # h has two consumers

    g = optimize(capture(program, [((4,), "float32")]))
    kinds = [n.op for n in g.nodes]
    assert "add" in kinds  # two consumers: must stay a standalone node


def test_fusion_skips_shape_changes():
    def program(x):
        return ops.relu(ops.reduce_sum(ops.mul(x, x), axis=1))

    g = optimize(capture(program, [((3, 4), "float32")]))
    # reduce_sum is not elementwise, so mul and relu sit on opposite sides
    # of it and neither pair forms a chain
    kinds = [n.op for n in g.nodes]
    assert "reduce_sum" in kinds
    assert "fused" not in kinds


def test_optimize_is_monotone_and_idempotent():
    w = from_numpy(randn32(4, 4))

    def program(x):
        h = ops.gelu(ops.add(ops.matmul(x, w), 0.5))
        ops.exp(h)  # dead
        return ops.softmax(ops.mul(h, h), -1)

    g = capture(program, [((2, 4), "float32")])
    once = optimize(g)
    assert once.num_nodes() <= g.num_nodes()
    twice = optimize(once)
    assert twice.dump() == once.dump()

    x = from_numpy(randn32(2, 4))
    assert np.array_equal(
        execute(once, [x], "reference").to_numpy(),
        execute(g, [x], "reference").to_numpy(),
    )


# -- execution ----------------------------------------------------------------


def test_execute_enforces_static_specs():
    g = capture(lambda x: ops.neg(x), [((2, 3), "float32")])
    with pytest.raises(ShapeError):
        execute(g, [from_numpy(randn32(3, 2))], "reference")
    with pytest.raises(ShapeError):
        execute(g, [from_numpy(randn32(2, 3).astype(np.float64))], "reference")
    with pytest.raises(ShapeError):
        execute(g, [], "reference")


def test_execute_accepts_backend_object_or_name():
    from minidl import get_backend

    g = capture(lambda x: ops.neg(x), [((2,), "float32")])
    x = from_numpy(randn32(2))
    a = execute(g, [x], "optimized").to_numpy()
    b = execute(g, [x], get_backend("optimized")).to_numpy()
    assert np.array_equal(a, b)


def test_graph_execution_is_invisible_to_tapes():
    g = capture(lambda x: ops.mul(x, x), [((3,), "float32")])
    x = from_numpy(randn32(3))
    with GradTape() as t:
        t.watch(x)
        y = execute(g, [x], "reference")
        with pytest.raises(TapeError):
            t.backward(ops.reduce_sum(y), [x])


# -- debug dump ---------------------------------------------------------------


def test_dump_format():
    w = from_numpy(randn32(4, 8))
    g = capture(lambda x: ops.relu(ops.matmul(x, w)), [((2, 4), "float32")])
    lines = g.dump().splitlines()
    assert lines[0] == "0: input(2x4) <- "
    assert lines[1] == "1: const(4x8) <- "
    assert lines[2] == "2: matmul(2x8) <- 0, 1"
    assert lines[3] == "3: relu(2x8) <- 2"


def test_dump_scalar_and_fused_names():
    g = optimize(
        capture(lambda x, y: ops.relu(ops.add(x, y)), [((4,), "float32"), ((4,), "float32")])
    )
    text = g.dump()
    assert "fused[add,relu](4) <- 0, 1" in text
    g2 = capture(lambda x: ops.reduce_sum(x), [((3,), "float32")])
    assert "reduce_sum(scalar)" in g2.dump()
