"""Layered mini deep-learning toolkit.

Three tiers share one kernel contract:

  * tensors + ops: immutable Tensors, a small primitive op set, gradient
    tapes, and two interchangeable backends (naive reference, compiled
    optimized) selected per call or per model;
  * graph tools: capture eager programs into a small IR, fold/fuse/prune
    it, and execute against any backend;
  * models: backbones, task models with built-in preprocessing, training
    loops (single-process and data-parallel), presets, and a benchmark
    harness.
"""

from . import ops
from .autodiff import GradTape
from .backends import BACKEND_NAMES, get_backend
from .bench import BenchRow, BenchSpec, emit_table, run_benchmark
from .data import (
    Dataset,
    batch,
    cache,
    from_ppm_dir,
    from_slices,
    from_text_lines,
    map_elements,
    prefetch,
    read_ppm,
    shuffle,
    write_ppm,
)
from .distribute import DistributionConfig, data_parallel_fit, gradient_allreduce_mean
from .errors import MinidlError
from .graph import GraphIR, capture, execute, optimize
from .models import (
    Backbone,
    BackboneConfig,
    Classification,
    KvCache,
    TaskModel,
    TrainConfig,
    attach_head,
    backbone_forward,
    fit,
    generate,
    predict,
)
from .presets import PresetStore, from_preset, list_presets, save_preset
from .rng import Rng
from .tensor import DTYPES, Tensor, ones, tensor_create, zeros
from .tensor_io import read_tensor, read_tensor_header, write_tensor
from .text import (
    BpeModel,
    Vocabulary,
    detokenize_bpe,
    pack,
    pack_batch,
    tokenize_bpe,
    tokenize_wordpiece,
    train_bpe,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAMES",
    "Backbone",
    "BackboneConfig",
    "BenchRow",
    "BenchSpec",
    "BpeModel",
    "Classification",
    "DTYPES",
    "Dataset",
    "DistributionConfig",
    "GradTape",
    "GraphIR",
    "KvCache",
    "MinidlError",
    "PresetStore",
    "Rng",
    "TaskModel",
    "Tensor",
    "TrainConfig",
    "Vocabulary",
    "attach_head",
    "backbone_forward",
    "batch",
    "cache",
    "capture",
    "data_parallel_fit",
    "detokenize_bpe",
    "emit_table",
    "execute",
    "fit",
    "from_ppm_dir",
    "from_preset",
    "from_slices",
    "from_text_lines",
    "generate",
    "get_backend",
    "gradient_allreduce_mean",
    "list_presets",
    "map_elements",
    "ones",
    "ops",
    "optimize",
    "pack",
    "pack_batch",
    "predict",
    "prefetch",
    "read_ppm",
    "read_tensor",
    "read_tensor_header",
    "run_benchmark",
    "save_preset",
    "shuffle",
    "tensor_create",
    "tokenize_bpe",
    "tokenize_wordpiece",
    "train_bpe",
    "write_ppm",
    "write_tensor",
    "zeros",
    "__version__",
]
