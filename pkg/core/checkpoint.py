"""Checkpoint files (WFTC).

Layout, all integers little-endian u32:

    b"WFTC" | version | meta_len | meta (UTF-8 JSON)
    | n_params | n_params tensor records
    | has_optimizer | [step | n_moments | n_moments tensor records]

A tensor record is ``name_len | name | rank | dims... | float32 data``. The
metadata carries the effective config, its digest, the realised beta and the
step. Optimizer moments are stored as ``adam.exp_avg.<param>`` and
``adam.exp_avg_sq.<param>``. Every RNG stream is keyed by (seed, step), so
moments plus step are enough to resume.
"""

import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"WFTC"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")
EXP_AVG = "adam.exp_avg."
EXP_AVG_SQ = "adam.exp_avg_sq."


@dataclass
class Checkpoint:
    metadata: dict
    params: Dict[str, np.ndarray]
    step: int = 0
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    checkpoint_id: str = ""

    @property
    def has_optimizer(self):
        return bool(self.moments)

    @property
    def config_digest(self):
        return self.metadata.get("config_digest")


def _write_tensor(handle, name, array):
    encoded = name.encode("utf-8")
    array = np.ascontiguousarray(array, dtype="<f4")
    handle.write(_U32.pack(len(encoded)))
    handle.write(encoded)
    handle.write(_U32.pack(array.ndim))
    for dim in array.shape:
        handle.write(_U32.pack(dim))
    handle.write(array.tobytes())


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def tensor(self):
        name = self.take(self.u32()).decode("utf-8")
        shape = tuple(self.u32() for _ in range(self.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data.astype(np.float32)


def save_checkpoint(path, model, optimizer=None, step=0, metadata=None):
    """Write ``model`` (and optionally Adam moments) to ``path`` atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = dict(metadata or {}, step=step)
    buffer = io.BytesIO()
    buffer.write(CHECKPOINT_MAGIC)
    buffer.write(_U32.pack(CHECKPOINT_VERSION))
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buffer.write(_U32.pack(len(meta)))
    buffer.write(meta)

    params = list(model.named_parameters())
    buffer.write(_U32.pack(len(params)))
    for name, parameter in params:
        _write_tensor(buffer, name, parameter.detach().cpu().numpy())

    moments = _optimizer_moments(model, optimizer) if optimizer is not None else {}
    buffer.write(_U32.pack(1 if moments else 0))
    if moments:
        buffer.write(_U32.pack(step))
        buffer.write(_U32.pack(len(moments)))
        for name, array in moments.items():
            _write_tensor(buffer, name, array)

    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)
    logger.info("saved checkpoint %s (step %d)", path, step)
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    blob = path.read_bytes()
    reader = _Reader(blob, path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a WFTC checkpoint")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        metadata = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc

    params = dict(reader.tensor() for _ in range(reader.u32()))
    step, moments = int(metadata.get("step", 0)), {}
    if reader.u32():
        step = reader.u32()
        moments = dict(reader.tensor() for _ in range(reader.u32()))
    if reader.offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.offset} trailing bytes")
    return Checkpoint(metadata, params, step, moments, checkpoint_id(blob))


def checkpoint_id(blob):
    return hashlib.sha256(blob).hexdigest()[:16]


def load_parameters(model, checkpoint, strict=True):
    """Copy checkpoint parameters into ``model``."""
    own = dict(model.named_parameters())
    missing = sorted(set(own) - set(checkpoint.params))
    unexpected = sorted(set(checkpoint.params) - set(own))
    if strict and (missing or unexpected):
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {unexpected}")
    with torch.no_grad():
        for name, parameter in own.items():
            if name not in checkpoint.params:
                continue
            array = checkpoint.params[name]
            if tuple(array.shape) != tuple(parameter.shape):
                raise CheckpointError(f"{name}: checkpoint shape {array.shape} != model {tuple(parameter.shape)}")
            parameter.copy_(torch.from_numpy(array))
    return model


def restore_optimizer(model, optimizer, checkpoint):
    """Rebuild Adam state from the stored moments and step."""
    if not checkpoint.has_optimizer:
        raise CheckpointError("checkpoint carries no optimizer state")
    for name, parameter in model.named_parameters():
        try:
            exp_avg = checkpoint.moments[EXP_AVG + name]
            exp_avg_sq = checkpoint.moments[EXP_AVG_SQ + name]
        except KeyError as exc:
            raise CheckpointError(f"missing optimizer moment {exc}") from exc
        optimizer.state[parameter] = {
            "step": torch.tensor(float(checkpoint.step)),
            "exp_avg": torch.from_numpy(exp_avg.copy()).to(parameter.dtype),
            "exp_avg_sq": torch.from_numpy(exp_avg_sq.copy()).to(parameter.dtype),
        }
    return optimizer


def _optimizer_moments(model, optimizer):
    moments = {}
    for name, parameter in model.named_parameters():
        state = optimizer.state.get(parameter)
        if not state:
            continue
        moments[EXP_AVG + name] = state["exp_avg"].detach().cpu().numpy()
        moments[EXP_AVG_SQ + name] = state["exp_avg_sq"].detach().cpu().numpy()
    return moments
