"""Command line entry points: `minidl bench run` and `minidl fixtures regen`.

Exit codes: 0 success, 2 unusable arguments, 3 runtime failure (a benchmark
step raised, or output could not be written).
"""

import itertools
import sys
from pathlib import Path

import click

from .bench import BenchSpec, emit_table, run_benchmark
from .errors import BenchError, FixtureError, MinidlError, UsageError
from .fixtures import regenerate_fixtures
from .models.backbones import Backbone, BackboneConfig
from .models.tasks import attach_head
from .presets import PresetStore, from_preset, list_presets
from .text import BpeModel


@click.group()
def main():
    """Mini deep-learning toolkit utilities."""


@main.group()
def bench():
    """Benchmarking commands."""


@main.group()
def fixtures():
    """Golden fixture commands."""


def _usage(msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(2)


def _failure(msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(3)


def _int_field(cfg, key, default):
    try:
        return int(cfg.get(key, default))
    except ValueError:
        raise UsageError(f"config key {key!r} must be an integer, got {cfg[key]!r}")


def _int_list(cfg, key, default):
    raw = cfg.get(key, default)
    try:
        return [int(p) for p in raw.split(",")]
    except ValueError:
        raise UsageError(f"config key {key!r} must be comma-separated integers, got {raw!r}")


def _synthetic_tokenizer(vocab_size):
    """Byte-level tokenizer of a requested size; extra merges pair raw bytes
    that never occur in generated ASCII benchmark text, so they are inert."""
    extra = vocab_size - 260
    if extra < 0:
        raise UsageError(f"text benches need vocab_size >= 260, got {vocab_size}")
    if extra > 256 * 256:
        raise UsageError(f"vocab_size {vocab_size} exceeds the synthetic merge space")
    pairs = itertools.islice(
        ((bytes([i]), bytes([j])) for i in range(256) for j in range(256)), extra
    )
    return BpeModel(tuple(pairs))


_DEFAULT_TASK = {"transformer_lm": "text_generation", "convnet": "image_classification"}


def _parse_config_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}")
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _model_from_config(path, backend):
    cfg = _parse_config_file(path)
    kind = cfg.get("kind")
    if kind not in _DEFAULT_TASK:
        raise UsageError(f"config must set kind to one of {sorted(_DEFAULT_TASK)}, got {kind!r}")
    seed = _int_field(cfg, "seed", 0)
    if kind == "transformer_lm":
        bcfg = BackboneConfig.transformer_lm(
            vocab_size=_int_field(cfg, "vocab_size", 260),
            num_layers=_int_field(cfg, "num_layers", 2),
            num_heads=_int_field(cfg, "num_heads", 2),
            model_dim=_int_field(cfg, "model_dim", 64),
            ff_dim=_int_field(cfg, "ff_dim", 128),
            max_len=_int_field(cfg, "max_len", 32),
        )
    else:
        bcfg = BackboneConfig.convnet(
            channels=_int_list(cfg, "channels", "4,8"),
            input_shape=tuple(_int_list(cfg, "input_shape", "16,16,1")),
        )
    backbone = Backbone.build(bcfg, seed=seed, backend_id=backend)
    task = cfg.get("task", _DEFAULT_TASK[kind])
    if task == "backbone":
        return backbone
    tokenizer = None
    if task.startswith("text"):
        tokenizer = _synthetic_tokenizer(bcfg.vocab_size)
    num_classes = None
    if task.endswith("classification"):
        num_classes = _int_field(cfg, "num_classes", 10)
    return attach_head(backbone, task, num_classes=num_classes, tokenizer=tokenizer)


def _model_from_preset(ref, store_root, backend):
    store = PresetStore(store_root)
    name, _, version = ref.partition("/")
    if not version:
        known = sorted(
            (tuple(int(p) for p in v.split(".")), v)
            for n, v, _ in list_presets(store)
            if n == name
        )
        if not known:
            raise UsageError(f"no versions of preset {name!r} under {store.root}")
        version = known[-1][1]
    return from_preset(name, version, store, backend_id=backend), name


@bench.command("run")
@click.option("--preset", "preset_ref", default=None, metavar="NAME[/VERSION]",
              help="Benchmark a stored preset (latest version if omitted).")
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="Benchmark a model described by a key=value config file.")
@click.option("--store", "store_root", default="presets", show_default=True,
              help="Preset store directory.")
@click.option("--phase", type=click.Choice(["train", "predict"]), default="train",
              show_default=True)
@click.option("--batch", type=int, default=8, show_default=True)
@click.option("--steps", type=int, default=10, show_default=True)
@click.option("--warmup", type=int, default=3, show_default=True)
@click.option("--backend", type=click.Choice(["reference", "optimized"]),
              default="optimized", show_default=True)
@click.option("--mode", type=click.Choice(["eager", "graph"]), default="eager",
              show_default=True)
@click.option("--workers", type=int, default=None,
              help="Data-parallel workers for train [default: config file value or 1].")
@click.option("--out", "out_path", default=None, metavar="FILE.md|FILE.csv",
              help="Also write the table to a file; the extension picks the format.")
def bench_run(preset_ref, config_path, store_root, phase, batch, steps, warmup,
              backend, mode, workers, out_path):
    """Time fit or predict steps and print a ms/step table."""
    out_format = None
    if out_path is not None:
        suffix = Path(out_path).suffix.lower()
        out_format = {".md": "markdown", ".markdown": "markdown", ".csv": "csv"}.get(suffix)
        if out_format is None:
            _usage(f"--out must end in .md or .csv, got {out_path!r}")
    try:
        if (preset_ref is None) == (config_path is None):
            raise UsageError("exactly one of --preset or --config is required")
        if preset_ref is not None:
            model, label = _model_from_preset(preset_ref, store_root, backend)
        else:
            model, label = _model_from_config(config_path, backend), Path(config_path).stem
        if workers is None:
            cfg = _parse_config_file(config_path) if config_path else {}
            workers = _int_field(cfg, "workers", 1)
        spec = BenchSpec(model=model, model_name=label, phase=phase, batch=batch,
                         steps=steps, warmup=warmup, backend=backend, mode=mode,
                         workers=workers)
        row = run_benchmark(spec)
    except BenchError as e:
        _failure(e)
    except MinidlError as e:
        _usage(e)

    click.echo(emit_table([row], "markdown"), nl=False)
    if out_format is not None:
        try:
            Path(out_path).write_text(emit_table([row], out_format), encoding="utf-8")
        except OSError as e:
            _failure(f"cannot write {out_path}: {e}")


@fixtures.command("regen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--root", default="fixtures", show_default=True,
              help="Directory to (re)write the fixture tree into.")
def fixtures_regen(seed, root):
    """Deterministically regenerate the golden fixture tree."""
    try:
        paths = regenerate_fixtures(seed, root)
    except FixtureError as e:
        _failure(e)
    except MinidlError as e:
        _usage(e)
    click.echo(f"wrote {len(paths)} files under {root}")


if __name__ == "__main__":
    main()
