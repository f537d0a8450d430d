"""Versioned checkpoint container.

Byte layout (all integers little-endian)::

    8 bytes   magic  b"DWCKPT\\0\\1"
    u32       format version (1)
    u32       length N of the config JSON
    N bytes   config JSON (UTF-8, sorted keys); includes "config_hash"
    u32       tensor count
    per tensor:
      u16     name length K
      K bytes name (UTF-8)
      u8      ndim
      u64 x ndim   shape
      8 x prod(shape) bytes   float64 little-endian, C order

``config_hash`` is the SHA-256 hex digest of the canonical JSON of the model
configuration, so a consumer can reject a checkpoint built for another model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DWCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(model_config: dict) -> str:
    canon = json.dumps(model_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def encode(tensors: dict[str, np.ndarray], config: dict) -> bytes:
    config = dict(config)
    if "model" in config:
        config["config_hash"] = config_hash(config["model"])
    meta = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in tensors:
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        version, n_meta = struct.unpack_from("<II", blob, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        config = json.loads(blob[pos : pos + n_meta].decode("utf-8"))
        pos += n_meta
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (k,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + k].decode("utf-8")
            pos += k
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * n > len(blob):
                raise CheckpointError("checkpoint truncated")
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
            pos += 8 * n
    except struct.error:
        raise CheckpointError("checkpoint truncated") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after the last tensor")
    if "model" in config and config.get("config_hash") != config_hash(config["model"]):
        raise CheckpointError("config hash does not match the embedded model config")
    return tensors, config


def save(path, tensors: dict[str, np.ndarray], config: dict) -> None:
    Path(path).write_bytes(encode(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes())


def save_trainer(path, trainer, dataset=None) -> None:
    # out_dir is left out so a run's bytes do not depend on where it was written
    train = {k: v for k, v in trainer.cfg.to_dict().items() if k != "out_dir"}
    config = {"model": trainer.model_cfg.to_dict(), "train": train, "step": trainer.step}
    if dataset is not None:
        config["normalization"] = dataset.manifest["normalization"]
        config["signal"] = dataset.manifest["signal"]
    save(path, trainer.state_tensors(), config)


def split_state(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in tensors.items() if k.startswith(p)}
