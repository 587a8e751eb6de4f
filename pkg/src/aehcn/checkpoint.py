"""Self-describing binary checkpoint container shared by all models.

Byte layout (documented here and in the README):

    bytes 0..7    magic ``b"DLGCKPT1"``
    bytes 8..11   header length ``n`` as little-endian uint32
    bytes 12..    UTF-8 JSON header of ``n`` bytes with keys
                  ``format_version`` (int, currently 1), ``kind`` (str),
                  ``meta`` (object), ``vocab_hash`` (str) and ``params``
                  (list of ``{"name": str, "shape": [int, ...]}``)
    remainder     the parameter tensors, concatenated in header order as
                  row-major little-endian float64
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DLGCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for corrupted, truncated or incompatible checkpoint files."""


def save_checkpoint(path, kind: str, meta: dict, vocab_hash: str, named_params) -> None:
    """Write named float64 arrays plus metadata to `path`."""
    entries = []
    blobs = []
    for name, array in named_params:
        array = np.ascontiguousarray(array, dtype=np.float64)
        entries.append({"name": name, "shape": list(array.shape)})
        blobs.append(array.astype("<f8").tobytes())
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "vocab_hash": vocab_hash,
        "params": entries,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[str, dict, str, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (kind, meta, vocab_hash, name -> array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    body_start = len(MAGIC) + 4
    if len(raw) < body_start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[body_start:body_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupted header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{header.get('format_version')!r}")
    offset = body_start + header_len
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(
            raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["kind"], header["meta"], header["vocab_hash"], params
