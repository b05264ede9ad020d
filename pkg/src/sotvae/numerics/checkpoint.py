"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SOTVAE-CKPT-1\\n"
    b"config-hash <64 hex chars>\\n"
    uint64   header length H
    H bytes  UTF-8 JSON header: {"entries": [{"name", "shape", "offset"}...], "meta": {...}}
    payload  concatenated float64 ('<f8') buffers, entry offsets counted in bytes

Entries are written in sorted name order and the JSON is key-sorted, so equal
contents always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"SOTVAE-CKPT-1\n"


def save_checkpoint(path, tensors: dict[str, np.ndarray], config_hash: str, meta: dict | None = None):
    names = sorted(tensors)
    entries, offset, blobs = [], 0, []
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"config-hash {config_hash}\n".encode("ascii"))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str, dict]:
    """Return ``(tensors, config_hash, meta)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ParseError(f"{path}: missing checkpoint magic {MAGIC!r}")
    pos = len(MAGIC)
    nl = raw.index(b"\n", pos)
    line = raw[pos:nl].decode("ascii")
    if not line.startswith("config-hash "):
        raise ParseError(f"{path}: malformed config-hash line")
    config_hash = line.split(" ", 1)[1]
    pos = nl + 1
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    tensors = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        buf = raw[start:start + 8 * count]
        if len(buf) != 8 * count:
            raise ParseError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return tensors, config_hash, header["meta"]
