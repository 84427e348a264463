"""Versioned named-array container.

One binary layout backs both PolishNet checkpoints and serialized pose
adapter weights, so alternate implementations can reload either:

* magic ``PPNC1``
* little-endian u32 header length
* UTF-8 JSON header ``{"format_version": 1, "kind": ..., "config": {...},
  "arrays": [{"name", "shape", "dtype"}, ...]}``
* the arrays' raw bytes, little-endian f32, concatenated in header order.

The header JSON is emitted with sorted keys and no whitespace, so a
given (kind, config, arrays) triple always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"PPNC1"
FORMAT_VERSION = 1
_DTYPE = "<f4"


def save_container(path: str | Path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": _DTYPE})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "config": config, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_container(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a {MAGIC.decode()} container")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format_version {header.get('format_version')}")
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise ParseError(f"{path}: array {entry['name']} truncated")
        arr = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        offset += nbytes
    return header["kind"], header["config"], arrays
