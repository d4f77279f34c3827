"""Backbone architectures: a small causal-transformer LM and a small convnet.

Both backbones are built entirely from the differentiable primitive ops, so
the same forward definition serves eager execution, gradient tapes, and
graph capture. Parameter shapes are a pure function of the config; values
are seeded through the deterministic Rng, one fork per parameter name.
"""

import math

import numpy as np

from .. import ops
from ..errors import ConfigError, DtypeError, ShapeError
from ..graph import capture, execute, optimize
from ..rng import Rng
from ..tensor import Tensor

BACKBONE_KINDS = ("transformer_lm", "convnet")

# Additive attention bias for disallowed positions. Large enough that the
# softmax weight underflows to exactly 0.0 in both float32 and float64,
# which is what makes padded and cached attention agree bitwise.
MASK_BIAS = -1e9


class BackboneConfig:
    """Architecture hyperparameters; everything about a backbone derives from this."""

    def __init__(
        self,
        kind,
        vocab_size=0,
        num_layers=0,
        num_heads=0,
        model_dim=0,
        ff_dim=0,
        max_len=0,
        channels=(),
        input_shape=(),
    ):
        self.kind = kind
        self.vocab_size = int(vocab_size)
        self.num_layers = int(num_layers)
        self.num_heads = int(num_heads)
        self.model_dim = int(model_dim)
        self.ff_dim = int(ff_dim)
        self.max_len = int(max_len)
        self.channels = tuple(int(c) for c in channels)
        self.input_shape = tuple(int(s) for s in input_shape)
        self._validate()

    @classmethod
    def transformer_lm(cls, vocab_size, num_layers, num_heads, model_dim, ff_dim, max_len):
        return cls(
            "transformer_lm",
            vocab_size=vocab_size,
            num_layers=num_layers,
            num_heads=num_heads,
            model_dim=model_dim,
            ff_dim=ff_dim,
            max_len=max_len,
        )

    @classmethod
    def convnet(cls, channels, input_shape):
        return cls("convnet", channels=channels, input_shape=input_shape)

    def _validate(self):
        if self.kind == "transformer_lm":
            dims = (
                self.vocab_size,
                self.num_layers,
                self.num_heads,
                self.model_dim,
                self.ff_dim,
                self.max_len,
            )
            if any(d < 1 for d in dims):
                raise ConfigError(f"transformer dims must all be >= 1, got {dims}")
            if self.model_dim % self.num_heads:
                raise ConfigError(
                    f"model_dim {self.model_dim} is not divisible by {self.num_heads} heads"
                )
        elif self.kind == "convnet":
            if not self.channels or any(c < 1 for c in self.channels):
                raise ConfigError(f"channels per stage must all be >= 1, got {self.channels}")
            if len(self.input_shape) != 3:
                raise ConfigError(f"input_shape must be (h, w, c), got {self.input_shape}")
            h, w, c = self.input_shape
            if c not in (1, 3):
                raise ConfigError(f"input channels must be 1 or 3, got {c}")
            down = 2 ** len(self.channels)
            if h < down or w < down or h % down or w % down:
                raise ConfigError(
                    f"input {h}x{w} must be divisible by {down} (one 2x2 pool per stage)"
                )
        else:
            raise ConfigError(f"unknown backbone kind {self.kind!r}")

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads

    @property
    def feature_dim(self):
        """Width of the feature vector the backbone hands to task heads."""
        if self.kind == "transformer_lm":
            return self.model_dim
        return self.channels[-1]

    def to_dict(self):
        if self.kind == "transformer_lm":
            return {
                "kind": self.kind,
                "vocab_size": self.vocab_size,
                "num_layers": self.num_layers,
                "num_heads": self.num_heads,
                "model_dim": self.model_dim,
                "ff_dim": self.ff_dim,
                "max_len": self.max_len,
            }
        return {
            "kind": self.kind,
            "channels": list(self.channels),
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None)
        try:
            return cls(kind, **d)
        except TypeError as e:
            raise ConfigError(f"bad backbone config: {e}")

    def __eq__(self, other):
        return isinstance(other, BackboneConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "kind")
        return f"BackboneConfig({self.kind!r}, {args})"


def param_specs(config):
    """Ordered (name, shape, init) triples; a pure function of the config."""
    specs = []
    if config.kind == "transformer_lm":
        v, d, f, l = config.vocab_size, config.model_dim, config.ff_dim, config.max_len
        specs.append(("embed/tokens", (v, d), "xavier"))
        specs.append(("embed/positions", (l, d), "xavier"))
        for i in range(config.num_layers):
            p = f"block{i}"
            specs += [
                (f"{p}/ln1/gamma", (d,), "ones"),
                (f"{p}/ln1/beta", (d,), "zeros"),
                (f"{p}/attn/wq", (d, d), "xavier"),
                (f"{p}/attn/bq", (d,), "zeros"),
                (f"{p}/attn/wk", (d, d), "xavier"),
                (f"{p}/attn/bk", (d,), "zeros"),
                (f"{p}/attn/wv", (d, d), "xavier"),
                (f"{p}/attn/bv", (d,), "zeros"),
                (f"{p}/attn/wo", (d, d), "xavier"),
                (f"{p}/attn/bo", (d,), "zeros"),
                (f"{p}/ln2/gamma", (d,), "ones"),
                (f"{p}/ln2/beta", (d,), "zeros"),
                (f"{p}/ffn/w1", (d, f), "xavier"),
                (f"{p}/ffn/b1", (f,), "zeros"),
                (f"{p}/ffn/w2", (f, d), "xavier"),
                (f"{p}/ffn/b2", (d,), "zeros"),
            ]
        specs.append(("final_ln/gamma", (d,), "ones"))
        specs.append(("final_ln/beta", (d,), "zeros"))
    else:
        cin = config.input_shape[2]
        for i, cout in enumerate(config.channels):
            specs.append((f"stage{i}/conv/w", (3, 3, cin, cout), "xavier"))
            specs.append((f"stage{i}/conv/b", (cout,), "zeros"))
            cin = cout
    return specs


def init_param(name, shape, kind, rng):
    """Xavier-uniform matrices, zeros biases, ones for layernorm scales."""
    if kind == "zeros":
        return np.zeros(shape, np.float32)
    if kind == "ones":
        return np.ones(shape, np.float32)
    if len(shape) == 4:  # conv kernel [kh, kw, cin, cout]
        fan_in = shape[0] * shape[1] * shape[2]
        fan_out = shape[0] * shape[1] * shape[3]
    else:
        fan_in, fan_out = shape[0], shape[1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.fork(name).uniform(-limit, limit, shape, np.float32)


def attention_bias(mask):
    """[B, L] validity mask -> [B, 1, L, L] additive attention bias.

    Position i may attend to j when j <= i and position j holds a real
    token. Position 0 stays visible even when padded so a fully padded
    row still has a defined attention target.
    """
    mask = np.asarray(mask)
    b, l = mask.shape
    valid = mask.astype(bool).copy()
    valid[:, 0] = True
    causal = np.tril(np.ones((l, l), bool))
    allowed = causal[None, :, :] & valid[:, None, :]
    bias = np.where(allowed, np.float32(0.0), np.float32(MASK_BIAS))
    return bias[:, None, :, :].astype(np.float32)


def _split_heads(x, b, l, h, dh):
    # [B, L, D] -> [B, H, L, dh]
    return ops.transpose(ops.reshape(x, (b, l, h, dh)), (0, 2, 1, 3))


def _merge_heads(x, b, l, d):
    # [B, H, L, dh] -> [B, L, D]
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, l, d))


def _attention(q, k, v, bias, scale):
    att = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
    att = ops.add(ops.mul(att, scale), bias)
    return ops.matmul(ops.softmax(att, -1), v)


def _transformer_features(params, config, ids, bias, b, l):
    """Pre-layernorm transformer stack; returns [B, L, D] features."""
    d, h, dh = config.model_dim, config.num_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    pos = params["embed/positions"]
    if l != config.max_len:
        pos = ops.slice_(pos, (0, 0), (l, d))
    x = ops.add(ops.gather(params["embed/tokens"], ids), pos)
    for i in range(config.num_layers):
        p = f"block{i}"
        hn = ops.layernorm(x, params[f"{p}/ln1/gamma"], params[f"{p}/ln1/beta"])
        q = ops.add(ops.matmul(hn, params[f"{p}/attn/wq"]), params[f"{p}/attn/bq"])
        k = ops.add(ops.matmul(hn, params[f"{p}/attn/wk"]), params[f"{p}/attn/bk"])
        v = ops.add(ops.matmul(hn, params[f"{p}/attn/wv"]), params[f"{p}/attn/bv"])
        o = _attention(
            _split_heads(q, b, l, h, dh),
            _split_heads(k, b, l, h, dh),
            _split_heads(v, b, l, h, dh),
            bias,
            scale,
        )
        o = ops.add(ops.matmul(_merge_heads(o, b, l, d), params[f"{p}/attn/wo"]), params[f"{p}/attn/bo"])
        x = ops.add(x, o)
        hn = ops.layernorm(x, params[f"{p}/ln2/gamma"], params[f"{p}/ln2/beta"])
        f = ops.gelu(ops.add(ops.matmul(hn, params[f"{p}/ffn/w1"]), params[f"{p}/ffn/b1"]))
        f = ops.add(ops.matmul(f, params[f"{p}/ffn/w2"]), params[f"{p}/ffn/b2"])
        x = ops.add(x, f)
    return ops.layernorm(x, params["final_ln/gamma"], params["final_ln/beta"])


def _avg_pool_2x2(x, b, h, w, c):
    # 2x2 average pool as reshape + mean, so the gradient needs no strided conv
    x = ops.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    x = ops.reduce_mean(x, axis=4)
    return ops.reduce_mean(x, axis=2)


def _convnet_features(params, config, images, b):
    """Conv/relu/pool stages then global average pool; returns [B, channels[-1]]."""
    h, w, _ = config.input_shape
    x = images
    for i, c in enumerate(config.channels):
        x = ops.conv2d(x, params[f"stage{i}/conv/w"], stride=1, padding="same")
        x = ops.relu(ops.add(x, params[f"stage{i}/conv/b"]))
        x = _avg_pool_2x2(x, b, h, w, c)
        h, w = h // 2, w // 2
    x = ops.reshape(x, (b, h * w, config.channels[-1]))
    return ops.reduce_mean(x, axis=1)


class Backbone:
    """A config plus its named parameter tensors."""

    def __init__(self, config, params, backend_id="reference"):
        self.config = config
        self.params = dict(params)
        self.backend_id = backend_id
        self._graphs = {}
        expected = {name: shape for name, shape, _ in param_specs(config)}
        got = {name: tuple(t.shape) for name, t in self.params.items()}
        if got != expected:
            raise ConfigError("parameter names/shapes do not match the config")

    @classmethod
    def build(cls, config, seed=0, backend_id="reference"):
        """Fresh backbone with seed-deterministic initialization."""
        rng = Rng(seed)
        params = {
            name: Tensor(init_param(name, shape, kind, rng), backend_id, _owned=True)
            for name, shape, kind in param_specs(config)
        }
        return cls(config, params, backend_id)

    def num_params(self):
        return sum(t.size for t in self.params.values())

    def set_parameters(self, updates):
        """Replace parameters by name; invalidates any captured graphs."""
        for name, t in updates.items():
            if name not in self.params:
                raise ConfigError(f"unknown parameter {name!r}")
            if tuple(t.shape) != tuple(self.params[name].shape):
                raise ShapeError(
                    f"parameter {name!r} has shape {list(self.params[name].shape)}, "
                    f"got {list(t.shape)}"
                )
            self.params[name] = t
        self._graphs.clear()

    # -- forward ----------------------------------------------------------

    def _check_transformer_inputs(self, ids, mask):
        if ids.dtype != "int32":
            raise DtypeError(f"token ids must be int32, got {ids.dtype}")
        if ids.ndim != 2:
            raise ShapeError(f"token ids must be [batch, length], got {list(ids.shape)}")
        b, l = ids.shape
        if l > self.config.max_len:
            raise ShapeError(f"sequence length {l} exceeds max_len {self.config.max_len}")
        if mask is None:
            mask_arr = np.ones((b, l), np.int32)
        else:
            mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
            if mask_arr.shape != (b, l):
                raise ShapeError(
                    f"mask shape {list(mask_arr.shape)} does not match ids {[b, l]}"
                )
        return b, l, mask_arr

    def forward(self, inputs, mask=None, mode="eager", backend=None):
        """Features for a batch: [B, L, D] (transformer) or [B, D'] (convnet)."""
        if mode not in ("eager", "graph"):
            raise ConfigError(f"mode must be 'eager' or 'graph', got {mode!r}")
        backend = backend or self.backend_id
        # the working dtype follows the parameters, so float64 copies of a
        # model stay float64 end to end (finite-difference checks rely on it)
        pdt = next(iter(self.params.values())).dtype
        if self.config.kind == "transformer_lm":
            b, l, mask_arr = self._check_transformer_inputs(inputs, mask)
            bias = Tensor(
                attention_bias(mask_arr).astype(pdt, copy=False),
                inputs.backend_id,
                _owned=True,
            )
            if mode == "eager":
                return _transformer_features(self.params, self.config, inputs, bias, b, l)
            g = self._graphs.get(("features", b, l))
            if g is None:
                g = optimize(
                    capture(
                        lambda i, m: _transformer_features(self.params, self.config, i, m, b, l),
                        [((b, l), "int32"), ((b, 1, l, l), pdt)],
                    )
                )
                self._graphs[("features", b, l)] = g
            return execute(g, [inputs, bias], backend)

        h, w, c = self.config.input_shape
        if inputs.dtype != pdt:
            raise DtypeError(f"convnet input must be {pdt}, got {inputs.dtype}")
        if inputs.ndim != 4 or inputs.shape[1:] != (h, w, c):
            raise ShapeError(
                f"convnet input must be [batch, {h}, {w}, {c}], got {list(inputs.shape)}"
            )
        b = inputs.shape[0]
        if mode == "eager":
            return _convnet_features(self.params, self.config, inputs, b)
        g = self._graphs.get(("features", b))
        if g is None:
            g = optimize(
                capture(
                    lambda x: _convnet_features(self.params, self.config, x, b),
                    [((b, h, w, c), pdt)],
                )
            )
            self._graphs[("features", b)] = g
        return execute(g, [inputs], backend)


def backbone_forward(b, inputs, mask=None, backend=None, mode="eager"):
    return b.forward(inputs, mask=mask, mode=mode, backend=backend)


# -- cached decoding -----------------------------------------------------------


class KvCache:
    """Static per-layer key/value buffers [B, H, L, dh] with a fill cursor
    per sequence; positions at or past the cursor are masked in attention."""

    def __init__(self, config, batch, backend_id="reference"):
        if config.kind != "transformer_lm":
            raise ConfigError("kv cache applies to transformer backbones only")
        shape = (batch, config.num_heads, config.max_len, config.head_dim)
        self.config = config
        self.batch = batch
        self.backend_id = backend_id
        self.keys = [np.zeros(shape, np.float32) for _ in range(config.num_layers)]
        self.values = [np.zeros(shape, np.float32) for _ in range(config.num_layers)]
        self.cursors = np.zeros(batch, np.int64)

    def write(self, layer, k_step, v_step):
        """Store one new position per sequence at each sequence's cursor."""
        if np.any(self.cursors >= self.config.max_len):
            raise ShapeError("kv cache is full")
        for i in range(self.batch):
            self.keys[layer][i, :, self.cursors[i], :] = k_step[i, :, 0, :]
            self.values[layer][i, :, self.cursors[i], :] = v_step[i, :, 0, :]

    def advance(self):
        self.cursors += 1

    def step_bias(self):
        """[B, 1, 1, L] bias letting the current position see 0..cursor."""
        l = self.config.max_len
        allowed = np.arange(l)[None, :] <= self.cursors[:, None]
        bias = np.where(allowed, np.float32(0.0), np.float32(MASK_BIAS))
        return bias.reshape(self.batch, 1, 1, l).astype(np.float32)


def transformer_step(backbone, token_ids, cache):
    """Advance the cached decoder by one position; returns [B, 1, D] features.

    Numerically matches row `cursor` of the full-sequence forward: masked
    attention weights underflow to exact zeros in both paths, and every
    kernel computes rows independently.
    """
    config, params = backbone.config, backbone.params
    if np.any(cache.cursors >= config.max_len):
        raise ShapeError("kv cache is full")
    b = cache.batch
    d, h, dh = config.model_dim, config.num_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    bid = backbone.backend_id

    ids = Tensor(np.asarray(token_ids, np.int32).reshape(b, 1), bid, _owned=True)
    pos_ids = Tensor(cache.cursors.astype(np.int32).reshape(b, 1), bid, _owned=True)
    bias = Tensor(cache.step_bias(), bid, _owned=True)
    x = ops.add(
        ops.gather(params["embed/tokens"], ids),
        ops.gather(params["embed/positions"], pos_ids),
    )
    for i in range(config.num_layers):
        p = f"block{i}"
        hn = ops.layernorm(x, params[f"{p}/ln1/gamma"], params[f"{p}/ln1/beta"])
        q = ops.add(ops.matmul(hn, params[f"{p}/attn/wq"]), params[f"{p}/attn/bq"])
        k = ops.add(ops.matmul(hn, params[f"{p}/attn/wk"]), params[f"{p}/attn/bk"])
        v = ops.add(ops.matmul(hn, params[f"{p}/attn/wv"]), params[f"{p}/attn/bv"])
        cache.write(i, _split_heads(k, b, 1, h, dh).data, _split_heads(v, b, 1, h, dh).data)
        o = _attention(
            _split_heads(q, b, 1, h, dh),
            Tensor(cache.keys[i], bid),
            Tensor(cache.values[i], bid),
            bias,
            scale,
        )
        o = ops.add(ops.matmul(_merge_heads(o, b, 1, d), params[f"{p}/attn/wo"]), params[f"{p}/attn/bo"])
        x = ops.add(x, o)
        hn = ops.layernorm(x, params[f"{p}/ln2/gamma"], params[f"{p}/ln2/beta"])
        f = ops.gelu(ops.add(ops.matmul(hn, params[f"{p}/ffn/w1"]), params[f"{p}/ffn/b1"]))
        f = ops.add(ops.matmul(f, params[f"{p}/ffn/w2"]), params[f"{p}/ffn/b2"])
        x = ops.add(x, f)
    x = ops.layernorm(x, params["final_ln/gamma"], params["final_ln/beta"])
    cache.advance()
    return x
