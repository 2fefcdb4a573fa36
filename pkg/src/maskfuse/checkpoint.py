"""Unified checkpoint file.

Layout::

    b"MFCKPT01"                      8-byte magic
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON
    blobs                            little-endian float32, row-major, manifest order

The manifest lists every tensor as ``{"name", "shape", "dtype", "section"}``.
Sections are ``conditioning``, ``adapter`` (cross-attention projections),
``model`` (everything else in the denoiser) and ``optimizer`` (AdamW moments).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .diffusion.model import Denoiser, ModelConfig
from .diffusion.training import TrainConfig, TrainState, config_from_dict, config_to_dict
from .errors import CheckpointError
from .optim import AdamW

MAGIC = b"MFCKPT01"
_BLOB_DTYPE = np.dtype("<f4")


def write_checkpoint(path, tensors, manifest_extra):
    """Low-level writer: ``tensors`` is a list of (name, section, array)."""
    entries = []
    for name, section, arr in tensors:
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "section": section})
    manifest = dict(manifest_extra, format=1, tensors=entries)
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=_BLOB_DTYPE).tobytes())
    tmp.replace(path)


def read_checkpoint(path):
    """Low-level reader: returns ``(manifest, {name: float32 array})``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (length,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from None
    pos = 16 + length
    arrays = {}
    for entry in manifest.get("tensors", []):
        if entry.get("dtype") != "float32":
            raise CheckpointError(f"{path}: unsupported dtype {entry.get('dtype')!r} for {entry['name']}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: blob for {entry['name']} is truncated")
        arrays[entry["name"]] = np.frombuffer(data[pos:pos + nbytes], dtype=_BLOB_DTYPE).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes after the last blob")
    return manifest, arrays


def save_training_state(path, state: TrainState, config: TrainConfig, schedule_config=None):
    model = state.model
    sections = model.sections()
    tensors = [(name, sections[name], arr) for name, arr in model.params.items()]
    tensors += [(name, "optimizer", arr) for name, arr in state.optimizer.state().items()]
    extra = {
        "step": state.step,
        "optimizer_t": state.optimizer.t,
        "frozen": sorted(model.frozen),
        "schedule": schedule_config or {"T": config.T, "kind": "linear-beta", "beta_start": 1e-4, "beta_end": 0.02},
        "train_config": config_to_dict(config),
    }
    write_checkpoint(path, tensors, extra)


def load_model(path, dtype=np.float32, expect: ModelConfig = None):
    """Rebuild a :class:`Denoiser` from a checkpoint; returns ``(model, manifest, arrays)``."""
    manifest, arrays = read_checkpoint(path)
    try:
        config = config_from_dict(manifest["train_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: manifest lacks a usable train_config ({exc})") from None
    if expect is not None and expect != config.model:
        raise CheckpointError(f"{path}: checkpoint model config differs from the requested one")
    model = Denoiser(config.model, seed=0, dtype=dtype)
    for name, arr in model.params.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[name].shape != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, model expects {arr.shape}")
        arr[...] = arrays[name]
    model.frozen = set(manifest.get("frozen", model.frozen))
    return model, manifest, arrays


def load_training_state(path, config: TrainConfig = None) -> TrainState:
    """Restore model, optimizer moments and step count for resuming."""
    expect = config.model if config is not None else None
    dtype = np.dtype(config.dtype) if config is not None else np.float32
    model, manifest, arrays = load_model(path, dtype=dtype, expect=expect)
    saved = config_from_dict(manifest["train_config"])
    cfg = config or saved
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay, frozen=model.frozen)
    try:
        opt.load_state(arrays, manifest.get("optimizer_t", manifest["step"]))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing optimizer state {exc}") from None
    return TrainState(model, opt, step=int(manifest["step"]))
