"""NRAF tensor container.

Layout::

    b"NRAF" | version (u8 = 1) | header length (u32 LE) | UTF-8 JSON header | payload

The header is ``{"tensors": [{name, dtype, shape, byte_offset}], "meta": {...}}``
with offsets relative to the start of the payload. Tensors are stored raw,
little-endian and row-major.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

MAGIC = b"NRAF"
VERSION = 1
_PREFIX = len(MAGIC) + 1 + 4
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise InvalidInputError(f"unsupported dtype {arr.dtype}; only float32/float64 are stored")


def write_container(path, tensors, meta=None) -> None:
    """Write named float tensors and a JSON ``meta`` object to ``path``.

    ``tensors`` is a mapping or a sequence of ``(name, array)`` pairs.
    """
    items = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise InvalidInputError(f"duplicate tensor names: {dup}")

    index, chunks, offset = [], [], 0
    for name, value in items:
        arr = np.asarray(value)
        if hasattr(value, "detach"):
            arr = value.detach().cpu().numpy()
        tag = _dtype_tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        index.append({"name": str(name), "dtype": tag, "shape": list(arr.shape), "byte_offset": offset})
        chunks.append(data)
        offset += len(data)

    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_container(path):
    """Read a container; returns ``(tensors: dict[str, ndarray], meta: dict)``."""
    blob = Path(path).read_bytes()
    return parse_container(blob)


def parse_container(blob: bytes):
    if len(blob) < _PREFIX:
        raise FormatError(
            "file shorter than fixed prefix", position=0, expected=_PREFIX, actual=len(blob)
        )
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", position=0, expected="NRAF", actual=blob[:4].hex())
    version = blob[4]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", position=4, expected=VERSION, actual=version)
    (hlen,) = struct.unpack("<I", blob[5:9])
    if _PREFIX + hlen > len(blob):
        raise FormatError(
            "header runs past end of file",
            position=_PREFIX,
            expected=_PREFIX + hlen,
            actual=len(blob),
        )
    try:
        header = json.loads(blob[_PREFIX : _PREFIX + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", position=_PREFIX) from exc
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise FormatError("header must be an object with a 'tensors' list", position=_PREFIX)

    payload = memoryview(blob)[_PREFIX + hlen :]
    spans, out = [], {}
    for i, entry in enumerate(header["tensors"]):
        try:
            name = entry["name"]
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            start = int(entry["byte_offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed index entry {i}: {exc}", position=_PREFIX) from exc
        if any(s < 0 for s in shape) or start < 0:
            raise FormatError(f"negative shape or offset in entry {name!r}", position=_PREFIX)
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", position=_PREFIX)
        nbytes = math.prod(shape) * dtype.itemsize
        end = start + nbytes
        if end > len(payload):
            raise FormatError(
                f"tensor {name!r} truncated",
                position=_PREFIX + hlen + start,
                expected=_PREFIX + hlen + end,
                actual=len(blob),
            )
        spans.append((start, end, name))
        out[name] = np.frombuffer(payload[start:end], dtype=dtype).reshape(shape).copy()

    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0 and e1 > s1 and e0 > s0:
            raise FormatError(
                f"tensors {n0!r} and {n1!r} overlap",
                position=_PREFIX + hlen + s1,
                expected=e0,
                actual=s1,
            )
    meta = header.get("meta", {})
    return out, meta
