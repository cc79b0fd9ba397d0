"""Binary container for named float64 arrays plus a JSON metadata header.

Layout, all integers little-endian:

    magic "TSRP" | u16 version | u32 metadata length | metadata JSON (UTF-8)
    u32 array count
    per array: u16 name length | name UTF-8 | u8 dtype code | u8 ndim | u32 dims...
    raw array data, C-order float64 little-endian, in manifest order

The same container stores trainable parameters (trainer checkpoints) and
full frozen backbone weights (external loading).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TSRP"
VERSION = 1
_DTYPE_F64 = 0


def save_arrays(path, metadata: dict, arrays: dict[str, np.ndarray]):
    """Write metadata and named arrays; array order is preserved."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    prepared = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        prepared[name] = arr
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
    for arr in prepared.values():
        buf.write(arr.tobytes(order="C"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back into (metadata, {name: float64 array})."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        try:
            metadata = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"metadata is not valid JSON: {exc}") from None
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        manifest: list[tuple[str, tuple[int, ...]]] = []
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"name length of array {i}"))
            name = _read_exact(fh, name_len, f"name of array {i}").decode("utf-8")
            dtype_code, ndim = struct.unpack("<BB", _read_exact(fh, 2, f"dtype/ndim of {name}"))
            if dtype_code != _DTYPE_F64:
                raise FormatError(f"array {name}: unsupported dtype code {dtype_code}")
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"dim of {name}"))[0]
                for _ in range(ndim)
            )
            manifest.append((name, shape))
        arrays: dict[str, np.ndarray] = {}
        for name, shape in manifest:
            n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, 8 * n_items, f"data of {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after final array")
    return metadata, arrays
