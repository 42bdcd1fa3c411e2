"""Versioned binary checkpoints for the recommender.

Layout (all integers little-endian)::

    b"NNKD" | u32 version | u64 header length | UTF-8 JSON header
    | float64 tensor data, in manifest order | 8-byte BLAKE2b checksum

The header holds the model configuration, a tensor manifest (name, shape,
byte offset relative to the data section) and free-form metadata.  The
checksum covers every byte before it.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import AdakdeError
from .network import BandwidthRecommender, RecommenderConfig

MAGIC = b"NNKD"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_CHECKSUM_BYTES = 8


class CheckpointError(AdakdeError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_BYTES).digest()


def save_checkpoint(model: BandwidthRecommender, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    manifest, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": model.config.to_dict(), "tensors": manifest, "data_bytes": offset, "metadata": metadata or {}},
        sort_keys=True,
    ).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    path.write_bytes(body + _digest(body))
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Validate a checkpoint file and return its header and raw arrays."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a recommender checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    intact = len(raw) >= start + _CHECKSUM_BYTES and _digest(raw[:-_CHECKSUM_BYTES]) == raw[-_CHECKSUM_BYTES:]
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
        data_bytes = int(header["data_bytes"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if len(raw) < start + hlen:
            raise CheckpointTruncatedError(f"{path}: header truncated") from exc
        raise CheckpointChecksumError(f"{path}: header unreadable ({exc})") from exc
    data_start = start + hlen
    expected = data_start + data_bytes + _CHECKSUM_BYTES
    if len(raw) < expected:
        raise CheckpointTruncatedError(f"{path}: {len(raw)} bytes, expected {expected}")
    if not intact:
        raise CheckpointChecksumError(f"{path}: checksum mismatch")
    if len(raw) != expected:
        raise CheckpointFormatError(f"{path}: {len(raw) - expected} unexpected trailing bytes")
    arrays = {}
    for entry in header["tensors"]:
        lo = data_start + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=entry["nbytes"] // 8, offset=lo)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def load_checkpoint(path) -> BandwidthRecommender:
    header, arrays = read_checkpoint(path)
    cfg = dict(header["config"])
    cfg["diag_clip"] = tuple(cfg["diag_clip"])
    model = BandwidthRecommender(RecommenderConfig(**cfg))
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    model.checkpoint_metadata = header.get("metadata", {})
    return model
