"""Golden fixture generation.

Everything under the fixture root is a pure function of the seed. The
generator builds the whole tree twice in memory and refuses to write
anything if the two passes differ, so committed fixtures stay trustworthy
drift detectors.
"""

import hashlib
import shutil
import tempfile
from pathlib import Path

from .bench import BenchRow, BenchSpec, emit_table
from .errors import FixtureError
from .models.backbones import Backbone, BackboneConfig
from .models.tasks import attach_head
from .presets import PresetStore, save_preset
from .rng import Rng
from .tensor_io import tensor_file_bytes
from .text import (
    SPECIAL_TOKENS,
    Vocabulary,
    percent_encode,
    save_merges,
    save_vocab,
    tokenize_bpe,
    tokenize_wordpiece,
    train_bpe,
)

BPE_CORPUS = (
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "she sells sea shells by the sea shore",
    "the rain in spain stays mainly in the plain",
    "a stitch in time saves nine",
    "all that glitters is not gold",
    "the early bird catches the worm",
    "better late than never but never late is better",
)

BPE_SAMPLE_TEXTS = (
    "hello world",
    "the quick brown fox",
    "unaffable",
    "zebras quizzed the vexed judge",
    "héllo ☃",
    "aaaa bbbb aaaa",
)

WORDPIECE_PIECES = (
    "un", "##aff", "##able", "##know", "##n", "the", "snow", "##man",
    "a", "##bb", "b",
)

WORDPIECE_SAMPLE_TEXTS = (
    "unaffable",
    "the snowman",
    "unknowable",
    "abracadabra",
    "a bb b abb",
)

_PRESET_NAME, _PRESET_VERSION = "tiny_lm", "1.0.0"


def _text(lines):
    return ("\n".join(lines) + "\n").encode("utf-8")


def _tokenizer_files(files):
    tok = train_bpe(BPE_CORPUS, 300)
    with tempfile.TemporaryDirectory() as td:
        save_merges(Path(td) / "m.txt", tok)
        save_vocab(Path(td) / "v.txt", tok.vocab)
        files["tokenizer/merges.txt"] = (Path(td) / "m.txt").read_bytes()
        files["tokenizer/vocab.txt"] = (Path(td) / "v.txt").read_bytes()
    files["tokenizer/corpus.txt"] = _text(BPE_CORPUS)
    files["tokenizer/bpe_vectors.tsv"] = _text(
        f"{percent_encode(t.encode('utf-8'))}\t{','.join(map(str, tokenize_bpe(tok, t)))}"
        for t in BPE_SAMPLE_TEXTS
    )

    wp = Vocabulary(SPECIAL_TOKENS + WORDPIECE_PIECES)
    with tempfile.TemporaryDirectory() as td:
        save_vocab(Path(td) / "wp.txt", wp)
        files["tokenizer/wordpiece_vocab.txt"] = (Path(td) / "wp.txt").read_bytes()
    files["tokenizer/wordpiece_vectors.tsv"] = _text(
        f"{percent_encode(t.encode('utf-8'))}\t{','.join(map(str, tokenize_wordpiece(wp, t)))}"
        for t in WORDPIECE_SAMPLE_TEXTS
    )
    return tok


def _rng_files(files, seed):
    lines = []
    for s in (seed, seed + 1):
        r = Rng(s)
        lines.append(f"seed={s} u64 " + " ".join(str(r.next_u64()) for _ in range(8)))
        r = Rng(s)
        lines.append(f"seed={s} float " + " ".join(repr(r.next_float()) for _ in range(4)))
        r = Rng(s).fork("stream")
        lines.append(f"seed={s} fork(stream) u64 " + " ".join(str(r.next_u64()) for _ in range(4)))
        lines.append(f"seed={s} shuffle10 " + ",".join(map(str, Rng(s).shuffle(list(range(10))))))
    files["rng/draws.txt"] = _text(lines)


def _tensor_files(files, seed):
    arr = Rng(seed).uniform(-1.0, 1.0, (3, 4, 5), "float32")
    data = tensor_file_bytes(arr)
    files["tensors/uniform_3x4x5.fmlt"] = data
    files["tensors/uniform_3x4x5.sha256"] = (
        hashlib.sha256(data).hexdigest() + "\n"
    ).encode()


def _preset_files(files, seed, tok):
    config = BackboneConfig.transformer_lm(
        vocab_size=len(tok), num_layers=1, num_heads=2,
        model_dim=16, ff_dim=32, max_len=12,
    )
    model = attach_head(Backbone.build(config, seed=seed), "text_generation", tokenizer=tok)
    with tempfile.TemporaryDirectory() as td:
        save_preset(model, _PRESET_NAME, _PRESET_VERSION, PresetStore(td))
        base = Path(td)
        for p in sorted(base.rglob("*")):
            if p.is_file():
                files[f"presets/{p.relative_to(base).as_posix()}"] = p.read_bytes()


def _bench_files(files):
    def row(model, phase, batch, backend, mean, std, lo, hi):
        spec = BenchSpec(model=None, model_name=model, phase=phase, batch=batch,
                         steps=4, warmup=1, backend=backend)
        return BenchRow(spec, mean, std, lo, hi)

    rows = [
        row("tiny_lm", "train", 8, "reference", 48.5, 1.5, 46.0, 50.0),
        row("tiny_lm", "train", 8, "optimized", 6.25, 0.25, 6.0, 6.5),
        row("tiny_lm", "predict", 32, "reference", 30.0, 1.0, 29.0, 31.5),
        row("tiny_lm", "predict", 32, "optimized", 4.5, 0.5, 4.0, 5.25),
        row("tiny_img", "train", 4, "reference", 95.0, 2.0, 92.0, 97.0),
        row("tiny_img", "train", 4, "optimized", 11.0, 0.5, 10.5, 12.0),
    ]
    files["bench/table.md"] = emit_table(rows, "markdown", host="pinned fixture host").encode()
    files["bench/table.csv"] = emit_table(rows, "csv").encode()


def build_fixture_tree(seed):
    """relpath -> bytes for the whole tree; pure in the seed."""
    files = {}
    tok = _tokenizer_files(files)
    _rng_files(files, seed)
    _tensor_files(files, seed)
    _preset_files(files, seed, tok)
    _bench_files(files)
    return files


def regenerate_fixtures(seed, root="fixtures"):
    """Replace the fixture tree under `root`; returns sorted relative paths."""
    first = build_fixture_tree(seed)
    second = build_fixture_tree(seed)
    if first != second:
        bad = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
        raise FixtureError(f"two generation passes disagree on {bad[:5]}")
    root = Path(root)
    if root.exists():
        shutil.rmtree(root)
    for rel in sorted(first):
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(first[rel])
    return sorted(first)
