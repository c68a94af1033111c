"""Self-describing binary container shared by datasets, operator caches and weights.

Layout::

    magic      8 bytes   b"DDMZ" + 4-byte kind tag (e.g. b"SIGS", b"OPER", b"WGHT")
    version    uint32 LE
    hlen       uint32 LE  length of the JSON header in bytes
    header     hlen bytes UTF-8 JSON (user keys + "arrays" table + "sha256")
    payload    concatenated little-endian float64 / int64 arrays, C order

The ``arrays`` table lists ``[name, dtype, shape]`` in payload order, so a reader
never needs out-of-band knowledge of the shapes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_PREFIX = b"DDMZ"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class ContainerError(ValueError):
    """Raised for any malformed, truncated or incompatible container file."""


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def payload_hash(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, arr in arrays.items():
        code = _dtype_code(arr)
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return h.hexdigest()


def write_container(path, kind: bytes, header: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write ``arrays`` with a JSON ``header``; returns the payload hash."""
    if len(kind) != 4:
        raise ValueError("kind tag must be 4 bytes")
    table = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        table.append([name, code, list(arr.shape)])
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    digest = payload_hash({k: np.asarray(v) for k, v in arrays.items()})
    full = dict(header)
    full["arrays"] = table
    full["sha256"] = digest
    hbytes = json.dumps(full, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX + kind)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    return digest


def read_container(path, kind: bytes, verify: bool = True) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: file too short for a header")
    if raw[:4] != _PREFIX:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4:8] != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {raw[4:8]!r}")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(raw) < 16 + hlen:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupted header") from exc
    offset = 16 + hlen
    arrays = {}
    for name, code, shape in header.get("arrays", []):
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset + nbytes > len(raw):
            raise TruncatedFileError(f"{path}: payload for {name!r} truncated")
        arrays[name] = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ContainerError(f"{path}: {len(raw) - offset} trailing bytes")
    if verify and payload_hash(arrays) != header.get("sha256"):
        raise ContainerError(f"{path}: payload hash mismatch")
    return header, arrays
