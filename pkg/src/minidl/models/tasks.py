"""Task models: raw text or images at the public boundary, preprocessing
attached, heads on top of a backbone, and zero-configuration fine-tuning."""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import ops, vision
from ..autodiff import GradTape
from ..data import read_ppm
from ..errors import ConfigError, DataError, TrainingDiverged
from ..rng import Rng
from ..tensor import Tensor
from ..text import BOS_ID, EOS_ID, PAD_ID, detokenize_bpe, pack_batch, tokenize_bpe
from ..vision import ImageSample
from .backbones import KvCache, attention_bias, transformer_step
from .optim import make_optimizer

TASK_KINDS = ("text_generation", "text_classification", "image_classification")

# Per-channel scaling applied to float images before the convnet: maps
# [0, 1] pixels to roughly [-1, 1].
IMAGE_MEAN = 0.5
IMAGE_STD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Every field has a default, so `fit(model, ds)` works as-is."""

    epochs: int = 1
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    batch_size: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


@dataclass
class TrainingReport:
    """One loss per optimizer step."""

    losses: list = field(default_factory=list)

    @property
    def num_steps(self):
        return len(self.losses)

    def to_csv(self):
        # repr() so the floats survive a parse round trip
        rows = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(self.losses)]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class Classification:
    class_ids: np.ndarray  # [B] int64
    probs: np.ndarray  # [B, num_classes] float32, rows sum to 1


def _softmax_xent(logits, onehot, weights, backend_id):
    """Weighted cross-entropy built from primitive ops.

    The row max is routed through stop_gradient: it only re-centers the
    logits for a stable exp, so it must not contribute a gradient.
    """
    n = logits.shape[0]
    m = ops.stop_gradient(ops.reduce_max(logits, axis=-1))
    z = ops.sub(logits, ops.reshape(m, (n, 1)))
    lse = ops.log(ops.reduce_sum(ops.exp(z), axis=-1))
    true_z = ops.reduce_sum(ops.mul(z, Tensor(onehot, backend_id, _owned=True)), axis=-1)
    per_row = ops.sub(lse, true_z)
    return ops.reduce_sum(ops.mul(per_row, Tensor(weights, backend_id, _owned=True)))


class TaskModel:
    """A backbone plus head parameters plus the task's raw-input preprocessor."""

    def __init__(self, task, backbone, head_params, tokenizer=None, num_classes=None):
        if task not in TASK_KINDS:
            raise ConfigError(f"unknown task {task!r}; expected one of {TASK_KINDS}")
        self.task = task
        self.backbone = backbone
        self.head_params = dict(head_params)
        self.tokenizer = tokenizer
        self.num_classes = num_classes
        self._graphs = {}

    @property
    def backend_id(self):
        return self.backbone.backend_id

    @property
    def lm_head_weight(self):
        """The generation head's weight matrix: the embedding table itself."""
        return self.backbone.params["embed/tokens"]

    def trainable_params(self):
        params = dict(self.backbone.params)
        params.update(self.head_params)
        return params

    def set_parameters(self, updates):
        backbone = {n: t for n, t in updates.items() if n in self.backbone.params}
        head = {n: t for n, t in updates.items() if n in self.head_params}
        unknown = set(updates) - set(backbone) - set(head)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)}")
        self.backbone.set_parameters(backbone)
        self.head_params.update(head)
        self._graphs.clear()

    # -- preprocessing -----------------------------------------------------

    def _pack_texts(self, texts, error_cls=ConfigError):
        for t in texts:
            if not isinstance(t, str):
                raise error_cls(f"text task expects strings, got {type(t).__name__}")
        seqs = [tokenize_bpe(self.tokenizer, str(t)) for t in texts]
        packed = pack_batch(
            seqs, self.backbone.config.max_len, add_bos=True, add_eos=True,
            backend_id=self.backend_id,
        )
        return packed.token_ids.data, packed.padding_mask.data

    def _prep_images(self, inputs, error_cls=ConfigError):
        h, w, c = self.backbone.config.input_shape
        rows = []
        for x in inputs:
            if isinstance(x, (str, os.PathLike)):
                sample = ImageSample(read_ppm(x))
            elif isinstance(x, ImageSample):
                sample = x
            elif isinstance(x, np.ndarray):
                sample = ImageSample(x)
            else:
                raise error_cls(f"image task expects images or PPM paths, got {type(x).__name__}")
            if sample.image.shape[2] == 3 and c == 1:
                sample = vision.grayscale(sample)
            elif sample.image.shape[2] != c:
                raise error_cls(f"expected {c}-channel images, got {sample.image.shape[2]}")
            if (sample.height, sample.width) != (h, w):
                sample = vision.resize_bilinear(sample, h, w)
            sample = vision.normalize(vision.to_float(sample), IMAGE_MEAN, IMAGE_STD)
            rows.append(sample.image)
        return np.stack(rows).astype(np.float32)

    # -- logits ------------------------------------------------------------

    def _text_inputs(self, ids, mask):
        bias = attention_bias(mask)
        last = mask.astype(np.int64).sum(axis=1) - 1  # BOS guarantees >= 0
        pool = np.zeros((ids.shape[0], 1, ids.shape[1]), np.float32)
        pool[np.arange(ids.shape[0]), 0, last] = 1.0
        return bias, pool

    def _class_logits_program(self, b):
        """Eager/graph-shared program from packed arrays to [B, C] logits."""
        config = self.backbone.config
        if self.task == "text_classification":
            l, d = config.max_len, config.feature_dim

            def program(ids, bias, pool):
                from .backbones import _transformer_features

                feats = _transformer_features(self.backbone.params, config, ids, bias, b, l)
                pooled = ops.reshape(ops.matmul(pool, feats), (b, d))
                return ops.add(ops.matmul(pooled, self.head_params["head/w"]), self.head_params["head/b"])

            specs = [((b, l), "int32"), ((b, 1, l, l), "float32"), ((b, 1, l), "float32")]
            return program, specs

        h, w, c = config.input_shape

        def program(images):
            from .backbones import _convnet_features

            feats = _convnet_features(self.backbone.params, config, images, b)
            return ops.add(ops.matmul(feats, self.head_params["head/w"]), self.head_params["head/b"])

        return program, [((b, h, w, c), "float32")]

    def _class_logits(self, arrays, mode):
        b = arrays[0].shape[0]
        tensors = [Tensor(a, self.backend_id, _owned=True) for a in arrays]
        program, specs = self._class_logits_program(b)
        if mode == "eager":
            return program(*tensors)
        from ..graph import capture, execute, optimize

        key = ("logits", b)
        g = self._graphs.get(key)
        if g is None:
            g = optimize(capture(program, specs))
            self._graphs[key] = g
        return execute(g, tensors, self.backend_id)

    def _lm_logits(self, ids, mask):
        """[B, L, V] next-token logits through the weight-tied head."""
        from .backbones import _transformer_features

        b, l = ids.shape
        bias = Tensor(attention_bias(mask), self.backend_id, _owned=True)
        ids_t = Tensor(ids, self.backend_id, _owned=True)
        feats = _transformer_features(self.backbone.params, self.backbone.config, ids_t, bias, b, l)
        return ops.matmul(feats, ops.transpose(self.lm_head_weight, (1, 0)))

    # -- loss --------------------------------------------------------------

    def _batch_loss(self, batch):
        if self.task == "text_generation":
            texts = _generation_texts(batch)
            ids, mask = self._pack_texts(texts, error_cls=DataError)
            logits = self._lm_logits(ids, mask)
            b, l, v = logits.shape
            flat = ops.reshape(ops.slice_(logits, (0, 0, 0), (b, l - 1, v)), (b * (l - 1), v))
            targets = ids[:, 1:].reshape(-1)
            tmask = mask[:, 1:].astype(np.float64)
            counts = np.maximum(tmask.sum(axis=1), 1.0)
            weights = (tmask / counts[:, None] / b).astype(np.float32).reshape(-1)
            onehot = np.zeros(flat.shape, np.float32)
            onehot[np.arange(targets.size), targets] = 1.0
            return _softmax_xent(flat, onehot, weights, self.backend_id)

        inputs, labels = _labelled_pairs(batch, self.num_classes)
        if self.task == "text_classification":
            ids, mask = self._pack_texts(inputs, error_cls=DataError)
            bias, pool = self._text_inputs(ids, mask)
            logits = self._class_logits([ids, bias, pool], "eager")
        else:
            images = self._prep_images(inputs, error_cls=DataError)
            logits = self._class_logits([images], "eager")
        b = labels.size
        onehot = np.zeros((b, self.num_classes), np.float32)
        onehot[np.arange(b), labels] = 1.0
        weights = np.full(b, 1.0 / b, np.float32)
        return _softmax_xent(logits, onehot, weights, self.backend_id)

    def _grad_step(self, batch):
        """Loss and per-parameter gradients for one raw batch."""
        params = self.trainable_params()
        names = list(params)
        with GradTape() as tape:
            for p in params.values():
                tape.watch(p)
            loss = self._batch_loss(batch)
        grads = tape.backward(loss, [params[n] for n in names])
        return float(loss.item()), {n: g.data for n, g in zip(names, grads)}

    # -- public entry points -------------------------------------------------

    def fit(self, ds, config=None):
        return fit(self, ds, config)

    def predict(self, inputs, mode="eager", max_new=16):
        return predict(self, inputs, mode=mode, max_new=max_new)

    def generate(self, prompt, max_new, strategy="greedy", k=1, seed=0, use_cache=True):
        return generate(self, prompt, max_new, strategy=strategy, k=k, seed=seed, use_cache=use_cache)

    def __repr__(self):
        return f"TaskModel(task={self.task!r}, backbone={self.backbone.config.kind!r})"


def attach_head(backbone, task, num_classes=None, tokenizer=None):
    """Pair a backbone with a task head and the task's preprocessor."""
    if task not in TASK_KINDS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASK_KINDS}")
    kind = backbone.config.kind
    if task in ("text_generation", "text_classification"):
        if kind != "transformer_lm":
            raise ConfigError(f"{task} requires a transformer_lm backbone, got {kind}")
        if tokenizer is None:
            raise ConfigError(f"{task} needs a tokenizer")
        if len(tokenizer) != backbone.config.vocab_size:
            raise ConfigError(
                f"tokenizer has {len(tokenizer)} tokens but the backbone expects "
                f"{backbone.config.vocab_size}"
            )
    else:
        if kind != "convnet":
            raise ConfigError(f"{task} requires a convnet backbone, got {kind}")
        if tokenizer is not None:
            raise ConfigError("image tasks take no tokenizer")

    if task == "text_generation":
        if num_classes is not None:
            raise ConfigError("text_generation derives its output size from the vocabulary")
        head = {}  # the LM head is the embedding table, weight-tied
    else:
        if num_classes is None or num_classes < 2:
            raise ConfigError(f"classification needs num_classes >= 2, got {num_classes}")
        d = backbone.config.feature_dim
        # zero init: an untrained classifier predicts the uniform distribution
        head = {
            "head/w": Tensor(np.zeros((d, num_classes), np.float32), backbone.backend_id, _owned=True),
            "head/b": Tensor(np.zeros(num_classes, np.float32), backbone.backend_id, _owned=True),
        }
    return TaskModel(task, backbone, head, tokenizer=tokenizer, num_classes=num_classes)


def _generation_texts(batch):
    texts = []
    for e in batch:
        if isinstance(e, (tuple, list)) and len(e) == 1:
            e = e[0]
        if not isinstance(e, str):
            raise DataError(f"text generation expects string elements, got {type(e).__name__}")
        texts.append(str(e))
    return texts


def _labelled_pairs(batch, num_classes):
    inputs, labels = [], []
    for e in batch:
        if not (isinstance(e, (tuple, list)) and len(e) == 2):
            raise DataError("classification expects (input, label) pairs")
        x, y = e
        try:
            y = int(y)
        except (TypeError, ValueError):
            raise DataError(f"label {y!r} is not an integer")
        if not 0 <= y < num_classes:
            raise DataError(f"label {y} outside [0, {num_classes})")
        inputs.append(x)
        labels.append(y)
    return inputs, np.asarray(labels, np.int64)


def fit(t, ds, config=None):
    """Train in place; returns the per-step loss report.

    The dataset yields raw elements: (text, label) / (image, label) pairs
    for classification, plain strings for generation. Batches are formed
    in dataset order; a short final batch still trains.
    """
    config = config or TrainConfig()
    optimizer = make_optimizer(config.optimizer, config.lr)
    report = TrainingReport()

    def step(batch):
        index = report.num_steps
        loss, grads = t._grad_step(batch)
        if not math.isfinite(loss):
            raise TrainingDiverged(index)
        t.set_parameters(optimizer.apply(t.trainable_params(), grads))
        report.losses.append(loss)

    for _ in range(config.epochs):
        batch = []
        for elem in ds:
            batch.append(elem)
            if len(batch) == config.batch_size:
                step(batch)
                batch = []
        if batch:
            step(batch)
    if report.num_steps == 0:
        raise DataError("fit requires a non-empty dataset")
    return report


def predict(t, inputs, mode="eager", max_new=16):
    """Batch predictions from raw inputs, in input order."""
    if mode not in ("eager", "graph"):
        raise ConfigError(f"mode must be 'eager' or 'graph', got {mode!r}")
    if isinstance(inputs, (str, bytes, ImageSample, np.ndarray)):
        raise ConfigError("predict takes a batch (a sequence of inputs)")
    inputs = list(inputs)
    if not inputs:
        raise DataError("predict needs at least one input")

    if t.task == "text_generation":
        for p in inputs:
            if not isinstance(p, str):
                raise ConfigError(f"text task expects strings, got {type(p).__name__}")
        return [generate(t, p, max_new=max_new) for p in inputs]

    if t.task == "text_classification":
        ids, mask = t._pack_texts(inputs)
        bias, pool = t._text_inputs(ids, mask)
        logits = t._class_logits([ids, bias, pool], mode)
    else:
        images = t._prep_images(inputs)
        logits = t._class_logits([images], mode)
    probs = ops.softmax(logits, -1)
    return Classification(
        class_ids=np.argmax(logits.data, axis=1).astype(np.int64),
        probs=probs.data.copy(),
    )


def _select_token(logits, strategy, k, rng):
    if strategy == "greedy":
        return int(np.argmax(logits))
    kk = min(int(k), logits.size)
    order = np.argsort(-logits, kind="stable")[:kk]  # ties resolve to the lower id
    z = logits[order].astype(np.float64)
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    pick = int(np.searchsorted(np.cumsum(p), rng.next_float(), side="right"))
    return int(order[min(pick, kk - 1)])


def generate(t, prompt, max_new, strategy="greedy", k=1, seed=0, use_cache=True):
    """Autoregressive continuation of a prompt; stops at EOS or max_new."""
    if t.task != "text_generation":
        raise ConfigError(f"generate requires a text_generation model, got {t.task}")
    if not isinstance(prompt, str):
        raise ConfigError(f"prompt must be a string, got {type(prompt).__name__}")
    if max_new < 0:
        raise ConfigError(f"max_new must be >= 0, got {max_new}")
    if strategy not in ("greedy", "top_k"):
        raise ConfigError(f"strategy must be 'greedy' or 'top_k', got {strategy!r}")
    if strategy == "top_k" and k < 1:
        raise ConfigError(f"top_k needs k >= 1, got {k}")

    config = t.backbone.config
    prompt_ids = [BOS_ID] + tokenize_bpe(t.tokenizer, prompt)
    if len(prompt_ids) + max_new > config.max_len:
        raise ConfigError(
            f"prompt of {len(prompt_ids)} tokens plus {max_new} new tokens "
            f"exceeds max_len {config.max_len}"
        )
    if max_new == 0:
        return ""

    rng = Rng(seed)
    row = list(prompt_ids)

    if use_cache:
        cache = KvCache(config, 1, t.backend_id)
        for tok in row:
            logits = _lm_step_logits(t, cache, tok)
    else:
        logits = _lm_row_logits(t, row)

    out_ids = []
    for _ in range(max_new):
        next_id = _select_token(logits, strategy, k, rng)
        if next_id == EOS_ID:
            break
        out_ids.append(next_id)
        row.append(next_id)
        if len(out_ids) < max_new:
            if use_cache:
                logits = _lm_step_logits(t, cache, next_id)
            else:
                logits = _lm_row_logits(t, row)
    return detokenize_bpe(t.tokenizer, out_ids)


def _lm_step_logits(t, cache, token_id):
    feats = transformer_step(t.backbone, np.array([token_id], np.int32), cache)
    logits = ops.matmul(feats, ops.transpose(t.lm_head_weight, (1, 0)))
    return logits.data.reshape(-1)


def _lm_row_logits(t, row):
    """Logits for the last position of `row` via a full padded forward."""
    l = t.backbone.config.max_len
    ids = np.full((1, l), PAD_ID, np.int32)
    mask = np.zeros((1, l), np.int32)
    ids[0, : len(row)] = row
    mask[0, : len(row)] = 1
    logits = t._lm_logits(ids, mask)
    return logits.data[0, len(row) - 1].copy()
