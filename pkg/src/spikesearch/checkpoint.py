"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
float64 little-endian tensor payload, 32-byte SHA-256 of everything before
the digest.  Loading verifies magic, version, and digest before touching any
state, so a truncated or corrupted file never yields partial state.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SSNCKPT1"
VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class CheckpointData:
    kind: str
    config_text: str
    seed: int
    epoch: int
    iteration: int
    tensors: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _pack_arrays(groups: list[dict[str, np.ndarray]]):
    index = []
    chunks = []
    offset = 0
    for group_id, group in enumerate(groups):
        for name, arr in group.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = arr.astype("<f8").tobytes()
            index.append({"group": group_id, "name": name,
                          "shape": list(arr.shape), "offset": offset,
                          "count": int(arr.size)})
            chunks.append(raw)
            offset += len(raw)
    return index, b"".join(chunks)


def save_checkpoint(path: str, data: CheckpointData) -> None:
    index, payload = _pack_arrays([data.tensors, data.buffers])
    header = {
        "version": VERSION,
        "kind": data.kind,
        "config_text": data.config_text,
        "seed": data.seed,
        "epoch": data.epoch,
        "iteration": data.iteration,
        "extra": data.extra,
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path: str) -> CheckpointData:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: integrity check failed (truncated or corrupt)")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    header_end = 16 + header_len
    if header_end + 32 > len(blob):
        raise CheckpointError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(blob[16:header_end].decode())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header.get('version')} is not "
            f"supported (expected {VERSION})")
    payload = blob[header_end:-32]
    groups: list[dict[str, np.ndarray]] = [{}, {}]
    for entry in header["arrays"]:
        start = entry["offset"]
        end = start + entry["count"] * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']!r} exceeds payload")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"])
        groups[entry["group"]][entry["name"]] = arr.astype(np.float64)
    return CheckpointData(kind=header["kind"], config_text=header["config_text"],
                          seed=header["seed"], epoch=header["epoch"],
                          iteration=header["iteration"], tensors=groups[0],
                          buffers=groups[1], extra=header["extra"])
