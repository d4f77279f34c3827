"""Preset packaging: save a model into a local store directory, list what is
there, and load it back offline with integrity checks on every asset."""

import hashlib
import json
import os
import re
import shutil
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AlreadyExists,
    ConfigError,
    CorruptPreset,
    DataError,
    IntegrityError,
    IoError,
    PresetNotFound,
)
from .models.backbones import Backbone, BackboneConfig, param_specs
from .models.tasks import TaskModel, attach_head
from .tensor import Tensor
from .tensor_io import read_tensor, read_tensor_header, tensor_file_bytes
from .text import load_merges, load_vocab, save_merges, save_vocab

NAME_RE = re.compile(r"^[a-z0-9_]+$")
SEMVER_RE = re.compile(r"^\d+\.\d+\.\d+$")

# manifest "task" value for a preset holding a bare backbone
BACKBONE_TASK = "backbone"

_WEIGHT_PREFIX = "assets/weights/"
_WEIGHT_SUFFIX = ".fmlt"
_VOCAB_PATH = "assets/vocab.txt"
_MERGES_PATH = "assets/merges.txt"


@dataclass(frozen=True)
class PresetStore:
    """A directory of presets: `<root>/<name>/<version>/{manifest.json, assets/}`."""

    root: Path

    def __init__(self, root):
        object.__setattr__(self, "root", Path(root))

    def preset_dir(self, name, version):
        return self.root / name / version


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _weight_path(param_name):
    return f"{_WEIGHT_PREFIX}{param_name}{_WEIGHT_SUFFIX}"


def _param_name(asset_path):
    return asset_path[len(_WEIGHT_PREFIX) : -len(_WEIGHT_SUFFIX)]


def save_preset(model, name, version, store):
    """Write a model into the store; returns the manifest as a dict.

    One weight file per parameter plus tokenizer assets, each digested over
    the bytes actually written. The preset directory is built under a
    temporary name and renamed into place, so concurrent readers never see
    a partial preset.
    """
    if not NAME_RE.match(name or ""):
        raise ConfigError(f"preset name must match [a-z0-9_]+, got {name!r}")
    if not SEMVER_RE.match(version or ""):
        raise ConfigError(f"version must be MAJOR.MINOR.PATCH, got {version!r}")

    if isinstance(model, TaskModel):
        task, backbone, params, tokenizer = (
            model.task,
            model.backbone,
            model.trainable_params(),
            model.tokenizer,
        )
    elif isinstance(model, Backbone):
        task, backbone, params, tokenizer = BACKBONE_TASK, model, dict(model.params), None
    else:
        raise ConfigError(f"cannot save a {type(model).__name__} as a preset")

    final_dir = store.preset_dir(name, version)
    if final_dir.exists():
        raise AlreadyExists(f"preset {name}/{version} already exists")
    tmp_dir = store.root / name / f".{version}.tmp-{os.getpid()}"
    try:
        (tmp_dir / "assets" / "weights").mkdir(parents=True)
        assets = []

        def add_asset(rel_path, role):
            full = tmp_dir / rel_path
            assets.append(
                {
                    "path": rel_path,
                    "role": role,
                    "sha256": _sha256(full),
                    "bytes": full.stat().st_size,
                }
            )

        for pname, tensor in params.items():
            rel = _weight_path(pname)
            full = tmp_dir / rel
            full.parent.mkdir(parents=True, exist_ok=True)
            full.write_bytes(tensor_file_bytes(tensor))
            add_asset(rel, "weights")
        if tokenizer is not None:
            save_vocab(tmp_dir / _VOCAB_PATH, tokenizer.vocab)
            add_asset(_VOCAB_PATH, "vocab")
            save_merges(tmp_dir / _MERGES_PATH, tokenizer)
            add_asset(_MERGES_PATH, "merges")

        manifest = {
            "name": name,
            "version": version,
            "task": task,
            "backbone": backbone.config.to_dict(),
            "assets": assets,
        }
        (tmp_dir / "manifest.json").write_text(_canonical_json(manifest), encoding="utf-8")
        final_dir.parent.mkdir(parents=True, exist_ok=True)
        os.rename(tmp_dir, final_dir)
        return manifest
    except OSError as e:
        raise IoError(f"could not write preset {name}/{version}: {e}")
    finally:
        if tmp_dir.exists():
            shutil.rmtree(tmp_dir, ignore_errors=True)


def _load_manifest(preset_dir):
    path = preset_dir / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CorruptPreset(f"{preset_dir}: unreadable manifest: {e}")
    except ValueError as e:
        raise CorruptPreset(f"{preset_dir}: manifest is not valid JSON: {e}")
    for field in ("name", "version", "task", "backbone", "assets"):
        if field not in manifest:
            raise CorruptPreset(f"{preset_dir}: manifest is missing {field!r}")
    return manifest


def _verify_asset(preset_dir, asset):
    full = preset_dir / asset["path"]
    if not full.is_file():
        raise CorruptPreset(f"missing asset {asset['path']}")
    if full.stat().st_size != asset["bytes"]:
        raise IntegrityError(f"asset {asset['path']} has the wrong size")
    if _sha256(full) != asset["sha256"]:
        raise IntegrityError(f"asset {asset['path']} failed its digest check")


def from_preset(name, version, store, load_weights=True, backend_id="reference", seed=0):
    """Rebuild a Backbone or TaskModel from the store.

    load_weights=True verifies every asset digest, then restores parameters
    bitwise. load_weights=False keeps the stored architecture and tokenizer
    but draws fresh seeded initial parameters.
    """
    preset_dir = store.preset_dir(name, version)
    if not preset_dir.is_dir():
        raise PresetNotFound(f"no preset {name}/{version} under {store.root}")
    manifest = _load_manifest(preset_dir)
    try:
        config = BackboneConfig.from_dict(manifest["backbone"])
    except ConfigError as e:
        raise CorruptPreset(f"{name}/{version}: {e}")
    task = manifest["task"]

    by_role = {}
    for asset in manifest["assets"]:
        by_role.setdefault(asset["role"], []).append(asset)
    weight_assets = {_param_name(a["path"]): a for a in by_role.get("weights", [])}

    tokenizer = None
    if by_role.get("merges"):
        merges_asset = by_role["merges"][0]
        _verify_asset(preset_dir, merges_asset)
        try:
            tokenizer = load_merges(preset_dir / merges_asset["path"])
        except DataError as e:
            raise CorruptPreset(f"{name}/{version}: bad merges asset: {e}")
        for vocab_asset in by_role.get("vocab", []):
            _verify_asset(preset_dir, vocab_asset)
            try:
                stored = load_vocab(preset_dir / vocab_asset["path"])
            except DataError as e:
                raise CorruptPreset(f"{name}/{version}: bad vocab asset: {e}")
            if stored.tokens != tokenizer.vocab.tokens:
                raise CorruptPreset(f"{name}/{version}: vocab does not match merges")

    if load_weights:
        for asset in by_role.get("weights", []):
            _verify_asset(preset_dir, asset)
        backbone = Backbone.build(config, seed=seed, backend_id=backend_id)
        loaded = {}
        for pname, _, _ in param_specs(config):
            loaded[pname] = _load_weight(preset_dir, weight_assets, pname, name, version, backend_id)
        expected = {n: tuple(s) for n, s, _ in param_specs(config)}
        for pname, tensor in loaded.items():
            # all trainable parameters are float32 by construction
            if tuple(tensor.shape) != expected[pname] or tensor.dtype != "float32":
                raise CorruptPreset(
                    f"{name}/{version}: weight {pname!r} is {tensor.dtype}"
                    f"{list(tensor.shape)}, config implies float32{list(expected[pname])}"
                )
        backbone.set_parameters(loaded)
    else:
        backbone = Backbone.build(config, seed=seed, backend_id=backend_id)

    if task == BACKBONE_TASK:
        return backbone

    num_classes = None
    if task != "text_generation":
        head_asset = weight_assets.get("head/w")
        if head_asset is None:
            raise CorruptPreset(f"{name}/{version}: classification preset lacks head weights")
        try:
            head_shape, _ = read_tensor_header(preset_dir / head_asset["path"])
        except (OSError, DataError) as e:
            raise CorruptPreset(f"{name}/{version}: bad head weight file: {e}")
        if len(head_shape) != 2 or head_shape[0] != config.feature_dim:
            raise CorruptPreset(
                f"{name}/{version}: head shape {list(head_shape)} does not fit "
                f"feature dim {config.feature_dim}"
            )
        num_classes = head_shape[1]

    model = attach_head(backbone, task, num_classes=num_classes, tokenizer=tokenizer)
    if load_weights and model.head_params:
        head = {}
        for pname, init in model.head_params.items():
            t = _load_weight(preset_dir, weight_assets, pname, name, version, backend_id)
            if tuple(t.shape) != tuple(init.shape) or t.dtype != init.dtype:
                raise CorruptPreset(
                    f"{name}/{version}: weight {pname!r} is {t.dtype}{list(t.shape)}, "
                    f"expected {init.dtype}{list(init.shape)}"
                )
            head[pname] = t
        model.set_parameters(head)
    return model


def _load_weight(preset_dir, weight_assets, pname, name, version, backend_id):
    asset = weight_assets.get(pname)
    if asset is None:
        raise CorruptPreset(f"{name}/{version}: missing weight file for {pname!r}")
    try:
        arr = read_tensor(preset_dir / asset["path"])
    except (OSError, DataError) as e:
        raise CorruptPreset(f"{name}/{version}: {e}")
    return Tensor(arr, backend_id, _owned=True)


def list_presets(store):
    """Sorted (name, version, task) triples; skips and warns on bad manifests."""
    root = Path(store.root)
    if not root.exists():
        return []
    out = []
    try:
        names = sorted(p for p in os.listdir(root))
    except OSError as e:
        raise IoError(f"cannot read preset store {root}: {e}")
    for name in names:
        name_dir = root / name
        if not name_dir.is_dir():
            continue
        try:
            versions = sorted(os.listdir(name_dir))
        except OSError as e:
            raise IoError(f"cannot read preset store {name_dir}: {e}")
        for version in versions:
            pdir = name_dir / version
            if not pdir.is_dir() or version.startswith("."):
                continue
            try:
                manifest = _load_manifest(pdir)
            except CorruptPreset as e:
                warnings.warn(f"skipping unreadable preset {name}/{version}: {e}")
                continue
            out.append((name, version, manifest["task"]))
    return out
