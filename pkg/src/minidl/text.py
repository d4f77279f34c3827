"""Tokenizers and static sequence packing.

Two tokenizer families share one Vocabulary type:

  * byte-level BPE: 256 base symbols plus learned merges, so any byte
    string tokenizes and detokenizes exactly (no UNK in that path);
  * WordPiece: whitespace pre-split, greedy longest match with a "##"
    continuation prefix, whole word falls back to UNK.

Id layout is fixed: PAD=0, UNK=1, BOS=2, EOS=3; BPE assigns bytes 0..255
to ids 4..259 and merge k to id 260+k. PAD=0 lets masks be derived from
ids and embedding row 0 act as the pad row.

Vocabulary and merges files are UTF-8 text, one entry per line, with
tokens percent-encoded (every byte outside printable ASCII, plus "%" and
space, becomes %XX) so byte-valued tokens survive a line-oriented format.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .tensor import Tensor

PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "[PAD]", "[UNK]", "[BOS]", "[EOS]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

_WORDPIECE_MAX_CHARS = 100
_CONTINUATION = "##"


def percent_encode(data: bytes) -> str:
    out = []
    for b in data:
        if 33 <= b <= 126 and b != 0x25:
            out.append(chr(b))
        else:
            out.append(f"%{b:02X}")
    return "".join(out)


def percent_decode(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        c = text[i]
        if c == "%":
            if i + 3 > len(text):
                raise DataError(f"truncated %XX escape in {text!r}")
            try:
                out.append(int(text[i + 1 : i + 3], 16))
            except ValueError:
                raise DataError(f"bad %XX escape in {text!r}") from None
            i += 3
        else:
            out.append(ord(c))
            i += 1
    return bytes(out)


class Vocabulary:
    """Dense token/id bijection with the four specials at ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:4] != SPECIAL_TOKENS:
            raise DataError(
                f"vocabulary must start with {list(SPECIAL_TOKENS)}, got {list(tokens[:4])}"
            )
        ids: dict[str, int] = {}
        for i, t in enumerate(tokens):
            if t in ids:
                raise DataError(f"duplicate token {t!r} at ids {ids[t]} and {i}")
            ids[t] = i
        self.tokens = tokens
        self._ids = ids

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, tid: int) -> str:
        return self.tokens[tid]

    pad_id, unk_id, bos_id, eos_id = PAD_ID, UNK_ID, BOS_ID, EOS_ID


def save_vocab(path, vocab: Vocabulary) -> None:
    lines = [percent_encode(t.encode("utf-8")) for t in vocab.tokens]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary([percent_decode(ln).decode("utf-8") for ln in lines])


# -- byte-level BPE ------------------------------------------------------


@dataclass(frozen=True)
class BpeModel:
    merges: tuple  # ((left, right) byte pairs, rank = index)
    ranks: dict = field(default_factory=dict, repr=False)
    id_to_bytes: tuple = field(default=(), repr=False)

    def __post_init__(self):
        ranks = {pair: k for k, pair in enumerate(self.merges)}
        if len(ranks) != len(self.merges):
            raise DataError("merge list contains duplicate pairs")
        pieces = [bytes([b]) for b in range(256)]
        known = set(pieces)
        for left, right in self.merges:
            if left not in known or right not in known:
                raise DataError(f"merge ({left!r}, {right!r}) uses unknown parts")
            merged = left + right
            pieces.append(merged)
            known.add(merged)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "id_to_bytes", tuple(pieces))

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(
            list(SPECIAL_TOKENS) + [percent_encode(p) for p in self.id_to_bytes]
        )

    def __len__(self):
        return 4 + len(self.id_to_bytes)


def _merge_once(seq: list, pair: tuple) -> list:
    out = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(seq[i] + seq[i + 1])
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_bpe(corpus: Iterable[str], vocab_size: int) -> BpeModel:
    """Learn merges by most-frequent adjacent pair, smallest pair first
    on ties, stopping when the budget is spent or no pair repeats."""
    corpus = list(corpus)
    if not corpus:
        raise DataError("cannot train BPE on an empty corpus")
    if vocab_size < 4 + 256:
        raise ConfigError(f"vocab_size must be >= {4 + 256} (bytes + specials), got {vocab_size}")
    budget = vocab_size - 4 - 256
    seqs = [[bytes([b]) for b in text.encode("utf-8")] for text in corpus]
    known = {bytes([b]) for b in range(256)}
    merges: list[tuple] = []
    while len(merges) < budget:
        counts: Counter = Counter()
        for seq in seqs:
            for i in range(len(seq) - 1):
                counts[(seq[i], seq[i + 1])] += 1
        # a merge whose product already names a token would break the
        # token/id bijection, so such pairs are never candidates
        candidates = {p: c for p, c in counts.items() if p[0] + p[1] not in known}
        if not candidates:
            break
        top = max(candidates.values())
        if top < 2:
            break
        best = min(p for p, c in candidates.items() if c == top)
        merges.append(best)
        known.add(best[0] + best[1])
        seqs = [_merge_once(seq, best) if len(seq) > 1 else seq for seq in seqs]
    return BpeModel(tuple(merges))


def tokenize_bpe(model: BpeModel, text) -> list:
    """Apply merges lowest rank first over the byte sequence."""
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    seq = [bytes([b]) for b in raw]
    ranks = model.ranks
    while len(seq) > 1:
        best_rank, best_pair = None, None
        for i in range(len(seq) - 1):
            r = ranks.get((seq[i], seq[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_pair = r, (seq[i], seq[i + 1])
        if best_pair is None:
            break
        seq = _merge_once(seq, best_pair)
    piece_id = {p: 4 + i for i, p in enumerate(model.id_to_bytes)}
    return [piece_id[p] for p in seq]


def decode_bytes(model: BpeModel, ids: Iterable[int]) -> bytes:
    """Exact inverse of tokenize_bpe; special ids contribute nothing."""
    out = bytearray()
    for tid in ids:
        tid = int(tid)
        if tid < 4:
            continue
        if tid - 4 >= len(model.id_to_bytes):
            raise DataError(f"id {tid} outside vocabulary of {len(model)} tokens")
        out.extend(model.id_to_bytes[tid - 4])
    return bytes(out)


def detokenize_bpe(model: BpeModel, ids: Iterable[int]) -> str:
    return decode_bytes(model, ids).decode("utf-8", errors="replace")


def save_merges(path, model: BpeModel) -> None:
    lines = [f"{percent_encode(l)} {percent_encode(r)}" for l, r in model.merges]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_merges(path) -> BpeModel:
    merges = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise DataError(f"{path}:{ln}: expected 'left right', got {line!r}")
        merges.append((percent_decode(parts[0]), percent_decode(parts[1])))
    return BpeModel(tuple(merges))


# -- WordPiece ---------------------------------------------------------------


def tokenize_wordpiece(vocab: Vocabulary, text: str) -> list:
    """Whitespace pre-split, then greedy longest match per word with the
    "##" continuation prefix; any failure maps the whole word to UNK."""
    out = []
    for word in text.split():
        if len(word) > _WORDPIECE_MAX_CHARS:
            out.append(UNK_ID)
            continue
        ids = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = _CONTINUATION + piece
                if piece in vocab:
                    found = vocab.id_of(piece)
                    break
                end -= 1
            if found is None:
                ids = [UNK_ID]
                break
            ids.append(found)
            start = end
        out.extend(ids)
    return out


# -- static packing ------------------------------------------------------------


@dataclass(frozen=True)
class PackedBatch:
    token_ids: Tensor  # [batch, length] int32
    padding_mask: Tensor  # [batch, length] int32 of {0, 1}


def pack(ids: Sequence[int], max_len: int, add_bos: bool, add_eos: bool):
    """One row of static packing: optional BOS/EOS, right truncation that
    always keeps the specials, PAD out to exactly max_len."""
    specials = int(add_bos) + int(add_eos)
    if max_len < specials:
        raise ConfigError(f"max_len {max_len} cannot hold {specials} special tokens")
    body = [int(i) for i in ids][: max_len - specials]
    row = ([BOS_ID] if add_bos else []) + body + ([EOS_ID] if add_eos else [])
    n = len(row)
    row = row + [PAD_ID] * (max_len - n)
    mask = [1] * n + [0] * (max_len - n)
    return np.asarray(row, np.int32), np.asarray(mask, np.int32)


def pack_batch(
    sequences: Iterable[Sequence[int]],
    max_len: int,
    add_bos: bool = True,
    add_eos: bool = True,
    backend_id: str = "reference",
) -> PackedBatch:
    rows, masks = [], []
    for ids in sequences:
        r, m = pack(ids, max_len, add_bos, add_eos)
        rows.append(r)
        masks.append(m)
    toks = np.stack(rows) if rows else np.zeros((0, max_len), np.int32)
    msk = np.stack(masks) if masks else np.zeros((0, max_len), np.int32)
    return PackedBatch(
        Tensor(toks, backend_id, _owned=True), Tensor(msk, backend_id, _owned=True)
    )
