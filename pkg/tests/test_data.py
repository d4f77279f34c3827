"""Streaming dataset stages: slicing, batching, shuffling, caching,
prefetching, and the two file source adapters."""

import numpy as np
import pytest

from minidl import Rng
from minidl.data import (
    Dataset,
    PpmExample,
    batch,
    cache,
    element_spec_of,
    from_ppm_dir,
    from_slices,
    from_text_lines,
    map_elements,
    prefetch,
    read_ppm,
    shuffle,
    write_ppm,
)
from minidl.errors import ConfigError, DataError, ShapeError
from minidl.tensor import from_numpy


def ints(n):
    return from_slices(np.arange(n, dtype=np.int32))


# -- from_slices -------------------------------------------------------------


def test_slices_over_array():
    assert [int(x) for x in ints(5)] == [0, 1, 2, 3, 4]
    rows = list(from_slices(np.arange(6).reshape(3, 2)))
    assert [r.tolist() for r in rows] == [[0, 1], [2, 3], [4, 5]]


def test_slices_over_dict_yields_named_tuples():
    ds = from_slices({"x": np.arange(3), "y": np.array([9, 8, 7])})
    elems = list(ds)
    assert [e.x for e in elems] == [0, 1, 2]
    assert [e.y for e in elems] == [9, 8, 7]
    assert elems[0]._fields == ("x", "y")


def test_slices_accepts_tensors():
    t = from_numpy(np.arange(4, dtype=np.float32).reshape(2, 2))
    assert len(list(from_slices(t))) == 2


def test_slices_rejects_bad_fields():
    with pytest.raises(ShapeError):
        from_slices(np.float32(1.0))
    with pytest.raises(ShapeError):
        from_slices({"x": np.arange(3), "y": np.arange(4)})
    with pytest.raises(ShapeError):
        from_slices({"x": np.float32(2.0)})


def test_element_spec():
    assert ints(4).element_spec == ((), "int32")
    ds = from_slices({"img": np.zeros((5, 8, 8), np.float32), "label": np.zeros(5, np.int32)})
    assert ds.element_spec == {"img": ((8, 8), "float32"), "label": ((), "int32")}
    assert element_spec_of(next(iter(ds))) == ds.element_spec
    assert ds.map(lambda e: e).element_spec is None  # arbitrary fn: unknown


# -- batch --------------------------------------------------------------------


def test_batch_sizes_and_remainder():
    sizes = [b.shape[0] for b in batch(ints(5), 2)]
    assert sizes == [2, 2, 1]
    sizes = [b.shape[0] for b in batch(ints(5), 2, drop_remainder=True)]
    assert sizes == [2, 2]
    assert [b.tolist() for b in batch(ints(4), 2)] == [[0, 1], [2, 3]]


def test_batch_stacks_structures():
    ds = batch(from_slices({"x": np.arange(4), "y": np.arange(4) * 10}), 2)
    first = next(iter(ds))
    assert first.x.tolist() == [0, 1]
    assert first.y.tolist() == [0, 10]


def test_batch_spec_leading_axis():
    assert batch(ints(7), 3).element_spec == ((None,), "int32")
    assert batch(ints(7), 3, drop_remainder=True).element_spec == ((3,), "int32")


def test_batch_rejects_ragged_and_bad_size():
    ragged = map_elements(ints(4), lambda i: np.zeros(int(i) + 1))
    with pytest.raises(ShapeError):
        list(batch(ragged, 2))
    with pytest.raises(ConfigError):
        batch(ints(4), 0)


def test_batch_conserves_elements_in_order():
    got = np.concatenate([b for b in batch(ints(23), 4)])
    assert got.tolist() == list(range(23))


# -- shuffle --------------------------------------------------------------------


def test_shuffle_buffer_one_is_identity():
    assert [int(x) for x in shuffle(ints(10), 1, seed=3)] == list(range(10))


def test_shuffle_full_buffer_matches_rng_shuffle():
    for seed in (0, 7, 123):
        got = [int(x) for x in shuffle(ints(12), 64, seed=seed)]
        want = list(range(12))
        Rng(seed).shuffle(want)
        assert got == want


def test_shuffle_is_a_permutation_and_replays():
    ds = shuffle(ints(50), 8, seed=11)
    a = [int(x) for x in ds]
    b = [int(x) for x in ds]
    assert a == b  # fresh rng per pass
    assert sorted(a) == list(range(50))
    assert a != list(range(50))


def test_shuffle_window_locality():
    # with buffer b, the element at output position i was among the first
    # i + b upstream elements
    buf = 3
    out = [int(x) for x in shuffle(ints(30), buf, seed=5)]
    for i, v in enumerate(out):
        assert v < i + buf


def test_shuffle_seeds_differ():
    a = [int(x) for x in shuffle(ints(40), 40, seed=0)]
    b = [int(x) for x in shuffle(ints(40), 40, seed=1)]
    assert a != b


def test_shuffle_rejects_bad_buffer():
    with pytest.raises(ConfigError):
        shuffle(ints(4), 0, seed=0)


# -- cache ----------------------------------------------------------------------


def test_cache_stops_upstream_work():
    calls = []
    ds = cache(map_elements(ints(6), lambda e: calls.append(1) or e))
    assert len(list(ds)) == 6 and len(calls) == 6
    assert len(list(ds)) == 6 and len(calls) == 6  # second pass served from cache


def test_abandoned_pass_does_not_poison_cache():
    calls = []
    ds = cache(map_elements(ints(5), lambda e: calls.append(1) or e))
    it = iter(ds)
    next(it), next(it)
    del it  # incomplete: must not become the cached copy
    assert [int(x) for x in ds] == list(range(5))
    assert [int(x) for x in ds] == list(range(5))
    assert len(calls) == 2 + 5


# -- prefetch ---------------------------------------------------------------------


@pytest.mark.parametrize("depth", list(range(1, 9)))
def test_prefetch_is_transparent(depth):
    want = [int(x) for x in ints(20)]
    assert [int(x) for x in prefetch(ints(20), depth)] == want


def test_prefetch_empty_source():
    assert list(prefetch(ints(0), 4)) == []


def test_prefetch_delivers_upstream_error_positionally():
    def boom(e):
        if int(e) == 3:
            raise DataError("bad record")
        return e

    seen = []
    with pytest.raises(DataError):
        for x in prefetch(map_elements(ints(10), boom), 2):
            seen.append(int(x))
    assert seen == [0, 1, 2]


def test_prefetch_abandoned_iterator_shuts_down():
    it = iter(prefetch(ints(10_000), 2))
    assert int(next(it)) == 0
    it.close()  # must unblock the producer promptly


def test_prefetch_rejects_bad_depth():
    with pytest.raises(ConfigError):
        prefetch(ints(3), 0)


# -- composition ---------------------------------------------------------------


def test_pipeline_replays_identically():
    def build():
        ds = from_slices({"x": np.arange(40, dtype=np.float32)})
        ds = shuffle(ds, 16, seed=9)
        ds = map_elements(ds, lambda e: e.x * 2)
        return prefetch(batch(ds, 8), 3)

    a = [b.tolist() for b in build()]
    b = [b.tolist() for b in build()]
    assert a == b
    assert sorted(v for bt in a for v in bt) == sorted(2.0 * i for i in range(40))


def test_spec_passes_through_order_preserving_stages():
    ds = prefetch(cache(shuffle(ints(6), 4, seed=0)), 2)
    assert ds.element_spec == ((), "int32")


# -- ppm ------------------------------------------------------------------------


def test_ppm_round_trip(tmp_path):
    img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    p = tmp_path / "a.ppm"
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)


def test_ppm_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.ppm"
    body = bytes(range(2 * 1 * 3))
    p.write_bytes(b"P6\n# a comment\n2 1\n# another\n255\n" + body)
    img = read_ppm(p)
    assert img.shape == (1, 2, 3)
    assert img.reshape(-1).tolist() == list(body)


@pytest.mark.parametrize(
    "raw",
    [
        b"P5\n2 2\n255\n" + bytes(12),         # wrong magic
        b"P6\n2 2\n65535\n" + bytes(24),       # unsupported maxval
        b"P6\n2 2\n255\n" + bytes(5),          # truncated pixels
        b"P6\nx 2\n255\n" + bytes(12),         # non-numeric extent
        b"P6\n2",                              # truncated header
    ],
)
def test_ppm_reader_rejects_malformed(tmp_path, raw):
    p = tmp_path / "bad.ppm"
    p.write_bytes(raw)
    with pytest.raises(DataError):
        read_ppm(p)


def test_ppm_writer_rejects_bad_arrays(tmp_path):
    with pytest.raises(ShapeError):
        write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), np.uint8))
    with pytest.raises(ShapeError):
        write_ppm(tmp_path / "x.ppm", np.zeros((4, 4, 3), np.float32))


def test_ppm_dir_sorted_named_elements(tmp_path):
    for name, v in [("b.ppm", 2), ("a.ppm", 1), ("c.ppm", 3)]:
        write_ppm(tmp_path / name, np.full((1, 1, 3), v, np.uint8))
    (tmp_path / "notes.txt").write_text("ignored")
    elems = list(from_ppm_dir(tmp_path))
    assert [e.name for e in elems] == ["a.ppm", "b.ppm", "c.ppm"]
    assert isinstance(elems[0], PpmExample)
    assert [int(e.image[0, 0, 0]) for e in elems] == [1, 2, 3]


def test_ppm_dir_missing_root():
    with pytest.raises(DataError):
        from_ppm_dir("/no/such/dir")


# -- text lines -------------------------------------------------------------------


def test_text_lines(tmp_path):
    p = tmp_path / "lines.txt"
    p.write_text("alpha\nbr avo\n\ncafé ☃\n", encoding="utf-8")
    assert list(from_text_lines(p)) == ["alpha", "br avo", "", "café ☃"]


def test_text_lines_missing_file():
    with pytest.raises(DataError):
        from_text_lines("/no/such/file.txt")


def test_dataset_base_is_abstract():
    with pytest.raises(NotImplementedError):
        list(Dataset())
