"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"FORKNET1"
    header_len   uint32
    header       header_len bytes of UTF-8 JSON, keys sorted, no whitespace:
                 {"config": {...}, "meta": {...},
                  "tensors": [[name, [dim, ...]], ...]}
    payload      for each tensor in header order: prod(dims) float64 values,
                 little-endian, C order

The writer is a pure function of its inputs, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FORKNET1"


class CheckpointError(ValueError):
    pass


def dumps(config: dict, tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    header = {
        "config": config,
        "meta": meta or {},
        "tensors": [[name, list(np.shape(arr))] for name, arr in tensors.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray], dict]:
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise CheckpointError("not a forknet checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    offset = 12 + hlen
    tensors: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * n
        if end > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {name!r}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after payload")
    return header["config"], tensors, header["meta"]


def save(path, config: dict, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(config, tensors, meta))
    tmp.replace(path)


def load(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    return loads(blob)
