"""Data-parallel training equivalence and gradient averaging."""

import numpy as np
import pytest

from minidl import (
    Backbone,
    BackboneConfig,
    DistributionConfig,
    TrainConfig,
    attach_head,
    data_parallel_fit,
    fit,
    gradient_allreduce_mean,
)
from minidl.errors import ConfigError, DataError, ShapeError
from minidl.tensor import from_numpy
from minidl.text import BpeModel

CFG = BackboneConfig.transformer_lm(
    vocab_size=260, num_layers=1, num_heads=2, model_dim=16, ff_dim=32, max_len=8
)
BYTE_TOK = BpeModel(())


def fresh_model(seed=3):
    return attach_head(
        Backbone.build(CFG, seed=seed), "text_classification", num_classes=2,
        tokenizer=BYTE_TOK,
    )


def dataset(n=16):
    texts = ["aaaa", "abab", "zzzz", "zyzy"]
    return [(texts[i % 4], (i % 4) // 2) for i in range(n)]


# -- config ---------------------------------------------------------------------


def test_distribution_config():
    d = DistributionConfig(num_workers=2, global_batch=8)
    assert d.per_worker_batch == 4
    with pytest.raises(ConfigError):
        DistributionConfig(num_workers=0)
    with pytest.raises(ConfigError):
        DistributionConfig(global_batch=0)
    with pytest.raises(ConfigError):
        DistributionConfig(num_workers=3, global_batch=8)


# -- allreduce ------------------------------------------------------------------


def test_allreduce_mean_values():
    a = {"w": np.array([1.0, 3.0], np.float32), "b": np.array([2.0], np.float32)}
    b = {"w": np.array([3.0, 5.0], np.float32), "b": np.array([4.0], np.float32)}
    out = gradient_allreduce_mean([a, b])
    assert out["w"].tolist() == [2.0, 4.0]
    assert out["b"].tolist() == [3.0]
    assert out["w"].dtype == np.float32


def test_allreduce_accepts_tensors_and_single_worker():
    g = {"w": from_numpy(np.array([1.5, 2.5], np.float32))}
    out = gradient_allreduce_mean([g])
    assert out["w"].tolist() == [1.5, 2.5]


def test_allreduce_rejects_mismatches():
    a = {"w": np.zeros(2, np.float32)}
    with pytest.raises(ConfigError):
        gradient_allreduce_mean([])
    with pytest.raises(ShapeError):
        gradient_allreduce_mean([a, {"v": np.zeros(2, np.float32)}])
    with pytest.raises(ShapeError):
        gradient_allreduce_mean([a, {"w": np.zeros(3, np.float32)}])


def test_allreduce_is_float64_inside():
    # 1e8 + 1 is not representable in float32; the f64 accumulator keeps it
    big = {"w": np.array([1e8], np.float32)}
    tiny = {"w": np.array([4.0], np.float32)}
    out = gradient_allreduce_mean([big, tiny])
    assert out["w"][0] == np.float32((1e8 + 4.0) / 2)


# -- fit equivalence --------------------------------------------------------------


def test_one_worker_matches_plain_fit_bitwise():
    ds = dataset()
    cfg = TrainConfig(epochs=2, lr=0.01, batch_size=4)
    plain = fresh_model()
    dist = fresh_model()
    r1 = fit(plain, ds, cfg)
    r2 = data_parallel_fit(dist, ds, cfg, DistributionConfig(1, 4))
    assert r1.losses == r2.losses
    for name, p in plain.trainable_params().items():
        assert np.array_equal(p.data, dist.trainable_params()[name].data)


def test_worker_count_does_not_change_losses():
    ds = dataset()
    cfg = TrainConfig(epochs=3, lr=0.01)
    runs = {}
    for k in (1, 2, 4):
        m = fresh_model()
        runs[k] = data_parallel_fit(m, ds, cfg, DistributionConfig(k, 8)).losses
    assert len(runs[1]) == 6
    for k in (2, 4):
        assert np.allclose(runs[k], runs[1], rtol=0, atol=1e-6)


def test_short_final_batch_must_shard_evenly():
    ds = dataset(10)  # one batch of 8, then a remainder of 2
    ok = data_parallel_fit(fresh_model(), ds, TrainConfig(), DistributionConfig(2, 8))
    assert ok.num_steps == 2
    with pytest.raises(ConfigError):
        data_parallel_fit(fresh_model(), ds, TrainConfig(), DistributionConfig(4, 8))


def test_empty_dataset_and_worker_error_propagation():
    with pytest.raises(DataError):
        data_parallel_fit(fresh_model(), [], TrainConfig(), DistributionConfig(2, 8))
    bad = dataset(4) + [("x", 7)] * 4  # invalid labels land on worker 1's shard
    with pytest.raises(DataError):
        data_parallel_fit(fresh_model(), bad, TrainConfig(), DistributionConfig(2, 8))
