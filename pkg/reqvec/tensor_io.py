"""
Binary artifact container shared by encoder weights and embedding matrices.

Layout:
    b"RQV1" | uint32 LE manifest length | UTF-8 JSON manifest | float32 LE payload

The manifest (sorted keys) lists every tensor as {name, shape, offset, count}
with offsets counted in float32 elements from the start of the payload, plus
free-form ``config`` and ``meta`` objects.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import FormatError, IoError

log = logging.getLogger("reqvec.tensor_io")

MAGIC = b"RQV1"
_HEADER = struct.Struct("<4sI")
_DTYPE = np.dtype("<f4")


def pack_tensors(
    tensors: Mapping[str, np.ndarray],
    config: Optional[Dict[str, Any]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Tuple[bytes, bytes]:
    """Return (header + manifest, payload). Tensor order is preserved."""
    directory = []
    chunks = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype=_DTYPE)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"tensor {name!r} holds non-finite values")
        directory.append(
            {"name": name, "shape": list(data.shape), "offset": offset, "count": int(data.size)}
        )
        chunks.append(data.tobytes(order="C"))
        offset += int(data.size)

    manifest = {"config": config or {}, "meta": meta or {}, "tensors": directory}
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _HEADER.pack(MAGIC, len(manifest_bytes)) + manifest_bytes
    return head, b"".join(chunks)


def write_tensors(
    path: Union[str, Path],
    tensors: Mapping[str, np.ndarray],
    config: Optional[Dict[str, Any]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> None:
    path = Path(path)
    head, payload = pack_tensors(tensors, config, meta)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(head + payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    log.debug("Wrote %d tensors (%d bytes) to %s", len(tensors), len(head) + len(payload), path)


def unpack_tensors(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any], bytes]:
    """Parse a container; returns (tensors, manifest, raw payload bytes)."""
    if len(blob) < _HEADER.size:
        raise FormatError("file too short for header")
    magic, manifest_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    start = _HEADER.size + manifest_len
    if len(blob) < start:
        raise FormatError("manifest truncated")
    try:
        manifest = json.loads(blob[_HEADER.size : start].decode("utf-8"))
        directory = manifest["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad manifest: {exc}") from exc

    payload = blob[start:]
    if len(payload) % _DTYPE.itemsize:
        raise FormatError("payload is not a whole number of float32 values")
    values = np.frombuffer(payload, dtype=_DTYPE)
    expected = sum(int(entry["count"]) for entry in directory)
    if values.size != expected:
        raise FormatError(f"payload holds {values.size} values, manifest lists {expected}")

    tensors: Dict[str, np.ndarray] = {}
    for entry in directory:
        shape = tuple(int(d) for d in entry["shape"])
        count = int(entry["count"])
        offset = int(entry["offset"])
        if int(np.prod(shape, dtype=np.int64)) != count or offset + count > values.size:
            raise FormatError(f"tensor {entry['name']!r} has an inconsistent directory entry")
        tensors[entry["name"]] = values[offset : offset + count].reshape(shape).copy()
    return tensors, manifest, payload


def read_tensors(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any], bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return unpack_tensors(blob)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
