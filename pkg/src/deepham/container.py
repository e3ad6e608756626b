"""Self-describing binary container shared by dataset and checkpoint files.

Layout::

    bytes 0..7    magic b"DEEPHAM\\x00"
    bytes 8..15   header length L, unsigned 64-bit little-endian
    next L bytes  UTF-8 JSON header (sorted keys, no whitespace)
    remainder     float64 little-endian payload, arrays back to back

The header carries ``kind``, ``version`` and an ``arrays`` list of
``{"name", "shape", "offset", "count"}`` entries (offset/count in elements
relative to the payload start) plus arbitrary metadata.  Identical inputs
always serialize to identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DEEPHAM\x00"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes(order="C"))
        offset += a.size
    header = dict(meta)
    header.update({"kind": kind, "version": FORMAT_VERSION, "arrays": entries})
    raw = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(chunks)


def loads(blob: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ContainerError("not a deepham container (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob) or (len(blob) - 16 - hlen) % 8:
        raise ContainerError("truncated or misaligned container")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"expected a {kind!r} file, found {header.get('kind')!r}")
    payload = np.frombuffer(blob, dtype="<f8", offset=16 + hlen)
    arrays = {}
    for e in header["arrays"]:
        chunk = payload[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ContainerError(f"truncated payload for array {e['name']!r}")
        arrays[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return header, arrays


def write(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.write_bytes(dumps(kind, meta, arrays))
    return path


def read(path, kind: str | None = None):
    return loads(Path(path).read_bytes(), kind)
