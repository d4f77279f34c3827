"""Benchmark harness: times fit and predict steps across backends and
execution modes, then renders the results as a markdown table (backends as
rows, one train/predict column pair per model) or as CSV."""

import csv
import io
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .backends import BACKEND_NAMES
from .distribute import DistributionConfig, data_parallel_fit
from .errors import BenchError, ConfigError, MinidlError, UsageError
from .models.backbones import Backbone, backbone_forward
from .models.tasks import TaskModel, TrainConfig, fit, predict
from .rng import Rng
from .tensor import Tensor

PHASES = ("train", "predict")
MODES = ("eager", "graph")
DEFAULT_WARMUP = 3

_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class BenchSpec:
    """One measurement: a model, a phase, and the knobs under study."""

    model: object
    model_name: str
    phase: str
    batch: int = 8
    steps: int = 10
    warmup: int = DEFAULT_WARMUP
    backend: str = "optimized"
    mode: str = "eager"
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.backend not in BACKEND_NAMES:
            raise ConfigError(f"backend must be one of {BACKEND_NAMES}, got {self.backend!r}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class BenchRow:
    spec: BenchSpec
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float


def _random_text(rng, n_chars):
    chars = []
    for i in range(n_chars):
        chars.append(" " if i % 6 == 5 else _ALPHABET[rng.next_uint(26)])
    return "".join(chars)


def _materialize(spec):
    """Pre-build one raw batch per step (warmup included), seeded.

    Depends only on the seed, the model's input schema, and the batch size,
    so specs compared across backends/modes/workers see identical data.
    """
    model, rng = spec.model, Rng(spec.seed)
    n = spec.warmup + spec.steps
    cfg = model.config if isinstance(model, Backbone) else model.backbone.config

    if isinstance(model, Backbone):
        if cfg.kind == "transformer_lm":
            def id_batch():
                flat = [rng.next_uint(cfg.vocab_size) for _ in range(spec.batch * cfg.max_len)]
                return np.asarray(flat, dtype=np.int32).reshape(spec.batch, cfg.max_len)

            return [id_batch() for _ in range(n)]
        return [
            rng.uniform(0.0, 1.0, (spec.batch,) + tuple(cfg.input_shape), "float32")
            for _ in range(n)
        ]

    def text():
        # oversample so packing fills the full context window
        return _random_text(rng, 2 * cfg.max_len)

    if model.task == "text_generation":
        sample = text
    elif model.task == "text_classification":
        sample = lambda: (text(), rng.next_uint(model.num_classes))
    else:
        h, w, c = cfg.input_shape
        sample = lambda: (
            rng.uniform(0.0, 1.0, (h, w, c), "float32"),
            rng.next_uint(model.num_classes),
        )

    batches = [[sample() for _ in range(spec.batch)] for _ in range(n)]
    if spec.phase == "predict" and model.task != "text_generation":
        # predict consumes raw inputs; drop the labels but keep the draws
        # so train and predict specs share one data stream
        batches = [[x for x, _ in b] for b in batches]
    return batches


def _step_runner(spec):
    model = spec.model
    if isinstance(model, Backbone):
        if spec.phase == "train":
            raise UsageError("a bare backbone has no training objective; attach a task head")
        return lambda batch: backbone_forward(
            model, Tensor(batch, model.backend_id, _owned=True), mode=spec.mode
        )

    if not isinstance(model, TaskModel):
        raise UsageError(f"cannot benchmark a {type(model).__name__}")
    if spec.phase == "predict":
        if spec.workers != 1:
            raise UsageError("workers only applies to the train phase")
        return lambda batch: predict(model, batch, mode=spec.mode)

    if spec.mode != "eager":
        raise UsageError("train runs on the gradient tape; use mode=eager")
    tcfg = TrainConfig(epochs=1, batch_size=spec.batch)
    if spec.workers == 1:
        return lambda batch: fit(model, batch, tcfg)
    dist = DistributionConfig(num_workers=spec.workers, global_batch=spec.batch)
    return lambda batch: data_parallel_fit(model, batch, tcfg, dist)


def run_benchmark(spec):
    """Warm up, then time `spec.steps` iterations with a monotonic clock."""
    model = spec.model
    got = getattr(model, "backend_id", None)
    if got != spec.backend:
        raise UsageError(f"model runs on backend {got!r} but the spec says {spec.backend!r}")
    run = _step_runner(spec)
    batches = _materialize(spec)

    times = []
    for i, batch in enumerate(batches):
        try:
            t0 = time.perf_counter()
            run(batch)
            elapsed = time.perf_counter() - t0
        except MemoryError:
            raise BenchError(spec.phase, i, "out of memory")
        except MinidlError as e:
            raise BenchError(spec.phase, i, str(e))
        if i >= spec.warmup:
            times.append(elapsed * 1e3)
    arr = np.asarray(times, dtype=np.float64)
    return BenchRow(
        spec=spec,
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        min_ms=float(arr.min()),
        max_ms=float(arr.max()),
    )


def host_description():
    return (
        f"{platform.node() or 'localhost'} ({platform.machine()}, "
        f"{os.cpu_count()} cores, Python {platform.python_version()})"
    )


CSV_FIELDS = (
    "model", "phase", "batch", "steps", "warmup", "backend", "mode",
    "workers", "mean_ms", "std_ms", "min_ms", "max_ms",
)


def _emit_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        s = r.spec
        w.writerow(
            [s.model_name, s.phase, s.batch, s.steps, s.warmup, s.backend, s.mode,
             s.workers]
            + [repr(v) for v in (r.mean_ms, r.std_ms, r.min_ms, r.max_ms)]
        )
    return buf.getvalue()


def _emit_markdown(rows, host):
    models, backends = [], []
    cells, batch_of = {}, {}
    for r in rows:
        s = r.spec
        if s.model_name not in models:
            models.append(s.model_name)
        if s.backend not in backends:
            backends.append(s.backend)
        col = (s.model_name, s.phase)
        key = col + (s.backend,)
        if key in cells:
            raise UsageError(f"duplicate measurement for {key}")
        cells[key] = r
        if batch_of.setdefault(col, s.batch) != s.batch:
            raise UsageError(
                f"rows for {s.model_name}/{s.phase} mix batch sizes "
                f"{batch_of[col]} and {s.batch}; compared specs must share one"
            )

    columns = [(m, ph) for m in models for ph in PHASES]

    def line(cells_):
        return "| " + " | ".join(cells_) + " |"

    header = [""]
    for m in models:
        header += [m, ""]
    out = [line(header)]
    out.append(line(["---"] + ["---:"] * (2 * len(models))))
    out.append(line([""] + [ph for _ in models for ph in PHASES]))
    out.append(
        line(["Batch Size"] + [str(batch_of[c]) if c in batch_of else "NA" for c in columns])
    )
    best = {c: min((cells[c + (b,)].mean_ms for b in backends if c + (b,) in cells), default=None)
            for c in columns}
    for b in backends:
        vals = []
        for c in columns:
            r = cells.get(c + (b,))
            if r is None:
                vals.append("NA")
            elif r.mean_ms == best[c]:
                vals.append(f"**{r.mean_ms:.2f}**")
            else:
                vals.append(f"{r.mean_ms:.2f}")
        out.append(line([b] + vals))
    out.append(
        line(["best"] + [f"{best[c]:.2f}" if best[c] is not None else "NA" for c in columns])
    )
    out.append("")
    out.append(f"Average time in ms/step. Measured on {host}; "
               "absolute numbers are machine-specific.")
    return "\n".join(out) + "\n"


def emit_table(rows, format="markdown", host=None):
    """Render BenchRows; markdown mirrors the fit/predict grid, CSV is flat."""
    rows = list(rows)
    if not rows:
        raise UsageError("emit_table needs at least one row")
    if format == "csv":
        return _emit_csv(rows)
    if format == "markdown":
        return _emit_markdown(rows, host or host_description())
    raise UsageError(f"format must be 'markdown' or 'csv', got {format!r}")
