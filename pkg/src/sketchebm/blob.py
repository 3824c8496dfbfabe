"""Versioned binary container used by every on-disk artifact.

Layout (all integers little-endian)::

    magic       8 bytes, identifies the artifact kind
    version     uint32
    header_len  uint32
    header      UTF-8 JSON, ``header_len`` bytes
    payload     concatenated float64 little-endian arrays

The header carries ``"byteorder": "little"`` and an ``"arrays"`` list of
``[name, shape]`` pairs giving the payload order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatVersionError, InputError

_PREFIX = struct.Struct("<8sII")
_DTYPE = np.dtype("<f8")


def write_blob(path, magic: bytes, version: int, header: dict, arrays: dict) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    header = dict(header)
    header["byteorder"] = "little"
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, version, len(head)))
        fh.write(head)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())


def read_blob(path, magic: bytes, supported_versions) -> tuple[int, dict, dict]:
    """Return ``(version, header, arrays)``; arrays are float64 numpy arrays."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise InputError(f"{path}: truncated file")
    got_magic, version, head_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatVersionError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version not in supported_versions:
        raise FormatVersionError(
            f"{path}: format version {version} not supported (supported: {sorted(supported_versions)})"
        )
    offset = _PREFIX.size
    header = json.loads(data[offset:offset + head_len].decode("utf-8"))
    if header.get("byteorder") != "little":
        raise FormatVersionError(f"{path}: unsupported byte order {header.get('byteorder')!r}")
    offset += head_len
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(data):
            raise InputError(f"{path}: payload truncated at array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=_DTYPE, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise InputError(f"{path}: {len(data) - offset} trailing bytes")
    return version, header, arrays
