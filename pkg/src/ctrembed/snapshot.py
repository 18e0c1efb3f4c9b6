"""Versioned binary model snapshots.

Layout (all integers unsigned 64-bit little-endian)::

    magic        8 bytes   b"CTRSNAP\\0"
    version      u64       FORMAT_VERSION
    echo_len     u64
    n_arrays     u64
    echo         echo_len bytes, UTF-8 JSON (run config echo, sorted keys)
    n_arrays x:
        name_len u64, name bytes (UTF-8)
        dtype    u64       0 = float32, 1 = float64 (little-endian IEEE 754)
        ndim     u64, then ndim x u64 shape
        data     prod(shape) * itemsize bytes, C order
    sha256       32 bytes over everything above

Tables are stored in the model's storage dtype (float32 by default).
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CTRSNAP\x00"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class SnapshotError(ValueError):
    pass


class ChecksumError(SnapshotError):
    pass


class VersionError(SnapshotError):
    pass


def _u64(x):
    return struct.pack("<Q", x)


def encode_snapshot(arrays: dict, echo: dict) -> bytes:
    echo_bytes = json.dumps(echo, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _u64(FORMAT_VERSION), _u64(len(echo_bytes)), _u64(len(arrays)), echo_bytes]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES[arr.dtype]
        nb = name.encode("utf-8")
        parts += [_u64(len(nb)), nb, _u64(code), _u64(arr.ndim)]
        parts += [_u64(s) for s in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_snapshot(blob: bytes):
    """Return ``(echo_dict, {name: array})``; raises on bad magic, version or checksum."""
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    version = struct.unpack_from("<Q", blob, 8)[0]
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported snapshot version {version} (expected {FORMAT_VERSION})")
    if len(blob) < 32 + 32:
        raise ChecksumError("snapshot truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("snapshot checksum mismatch (truncated or corrupted)")
    echo_len, n_arrays = struct.unpack_from("<QQ", body, 16)
    off = 32
    echo = json.loads(body[off:off + echo_len].decode("utf-8"))
    off += echo_len
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<Q", body, off)
        off += 8
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<QQ", body, off)
        off += 16
        shape = struct.unpack_from(f"<{ndim}Q", body, off)
        off += 8 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(body, dtype=dt, count=count, offset=off).reshape(shape).copy()
        off += count * dt.itemsize
    return echo, arrays


def save_snapshot(model, path, echo: dict):
    blob = encode_snapshot(model.arrays(), echo)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return path


def load_snapshot(path):
    """Rebuild a CTRModel from a snapshot; returns ``(model, echo)``."""
    from .models import CTRModel, ModelSpec

    echo, arrays = decode_snapshot(Path(path).read_bytes())
    spec = ModelSpec.from_dict(echo["model"])
    dtype = arrays["linear.weights"].dtype
    model = CTRModel(spec, seed=0, dtype=dtype.newbyteorder("="))
    target = model.arrays()
    if set(target) != set(arrays):
        raise SnapshotError("snapshot arrays do not match the echoed model spec")
    for name, arr in arrays.items():
        if target[name].shape != arr.shape:
            raise SnapshotError(f"{name}: shape {arr.shape} != {target[name].shape}")
        target[name][...] = arr
    return model, echo
