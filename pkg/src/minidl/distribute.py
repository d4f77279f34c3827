"""Data-parallel training: a distribution config separate from model and
training code. Each step forks worker threads over contiguous shards of the
global batch, averages gradients in worker order, and applies one update."""

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError, TrainingDiverged
from .models.optim import make_optimizer
from .models.tasks import TrainConfig, TrainingReport


@dataclass(frozen=True)
class DistributionConfig:
    num_workers: int = 1
    global_batch: int = 8

    def __post_init__(self):
        if self.num_workers < 1:
            raise ConfigError(f"num_workers must be >= 1, got {self.num_workers}")
        if self.global_batch < 1:
            raise ConfigError(f"global_batch must be >= 1, got {self.global_batch}")
        if self.global_batch % self.num_workers:
            raise ConfigError(
                f"global_batch {self.global_batch} is not divisible by "
                f"{self.num_workers} workers"
            )

    @property
    def per_worker_batch(self):
        return self.global_batch // self.num_workers


def gradient_allreduce_mean(worker_grads):
    """Elementwise mean of named gradient maps, summed in worker order.

    Accumulation is float64 and strictly sequential over ascending worker
    index, so the result is deterministic for a fixed worker count.
    """
    if not worker_grads:
        raise ConfigError("need gradients from at least one worker")
    maps = [
        {n: np.asarray(g.data if hasattr(g, "data") else g) for n, g in grads.items()}
        for grads in worker_grads
    ]
    names = list(maps[0])
    for w, m in enumerate(maps[1:], start=1):
        if set(m) != set(names):
            raise ShapeError(f"worker {w} gradient names differ from worker 0")
        for n in names:
            if m[n].shape != maps[0][n].shape:
                raise ShapeError(
                    f"worker {w} gradient {n!r} has shape {list(m[n].shape)}, "
                    f"expected {list(maps[0][n].shape)}"
                )
    out = {}
    for n in names:
        acc = np.zeros(maps[0][n].shape, np.float64)
        for m in maps:  # fixed order: ascending worker index
            acc += m[n]
        out[n] = (acc / len(maps)).astype(maps[0][n].dtype)
    return out


def _worker_grads(t, shards, k):
    """Per-shard (loss, grads), computed on threads when k > 1."""
    if k == 1:
        return [t._grad_step(shards[0])]
    results = [None] * k
    errors = [None] * k

    def run(i):
        try:
            results[i] = t._grad_step(shards[i])
        except BaseException as e:  # re-raised on the caller thread
            errors[i] = e

    threads = [threading.Thread(target=run, args=(i,)) for i in range(k)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for e in errors:
        if e is not None:
            raise e
    return results


def data_parallel_fit(t, ds, config=None, dist=None):
    """Like fit, but each global batch is split across num_workers replicas.

    Every realized batch must divide evenly among the workers. With one
    worker this reduces to plain fit, bitwise: the same gradient step and
    the same float64 update path run on the unsplit batch.
    """
    config = config or TrainConfig()
    dist = dist or DistributionConfig()
    k = dist.num_workers
    optimizer = make_optimizer(config.optimizer, config.lr)
    report = TrainingReport()

    def step(batch):
        index = report.num_steps
        if len(batch) % k:
            raise ConfigError(f"batch of {len(batch)} is not divisible by {k} workers")
        per = len(batch) // k
        shards = [batch[i * per : (i + 1) * per] for i in range(k)]
        results = _worker_grads(t, shards, k)
        losses = [loss for loss, _ in results]
        loss = float(np.mean(np.asarray(losses, np.float64)))
        if not math.isfinite(loss):
            raise TrainingDiverged(index)
        grads = gradient_allreduce_mean([g for _, g in results])
        t.set_parameters(optimizer.apply(t.trainable_params(), grads))
        report.losses.append(loss)

    for _ in range(config.epochs):
        batch = []
        for elem in ds:
            batch.append(elem)
            if len(batch) == dist.global_batch:
                step(batch)
                batch = []
        if batch:
            step(batch)
    if report.num_steps == 0:
        raise DataError("fit requires a non-empty dataset")
    return report
