"""Single-file container used for datasets, features, model weights and reports.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"MOSEL01\\n"
    offset 8   8 bytes   uint64 header length H
    offset 16  H bytes   UTF-8 JSON header (sorted keys, compact separators)
    offset 16+H          payload: raw arrays back to back, C order,
                         each starting on an 8-byte boundary relative to
                         the payload start

The header is ``{"kind": str, "meta": {...}, "arrays": [entry, ...]}`` where
each entry is ``{"name", "dtype", "shape", "offset", "nbytes"}``. Supported
dtypes are ``<f8``, ``<c16`` (interleaved real/imag ``<f8`` pairs), ``<i8``
and ``|u1``. Reading back what was written is bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MOSEL01\n"
_DTYPES = {"<f8", "<c16", "<i8", "|u1"}


class ContainerError(ValueError):
    pass


def dumps_header(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")


def write_container(path, kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|<" else arr.dtype
        arr = np.ascontiguousarray(arr, dtype=dt)
        if arr.dtype.str not in _DTYPES:
            raise ContainerError(f"array {name!r} has unsupported dtype {arr.dtype.str}")
        blob = arr.tobytes()
        pad = (-len(blob)) % 8
        entries.append({
            "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
            "offset": offset, "nbytes": len(blob),
        })
        blobs.append(blob + b"\0" * pad)
        offset += len(blob) + pad
    header = dumps_header({"kind": kind, "meta": meta, "arrays": entries})
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, arrays)``; ``kind`` (if given) must match the stored kind."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a mosel container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} file, found {header['kind']!r}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ContainerError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays
