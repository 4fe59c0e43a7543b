"""Single-file binary checkpoint container.

Layout (all integers little-endian):

     4 bytes   magic "RD2V"
    u32       format version (currently 1)
    u32       digest length, then that many bytes: hex SHA-256 of the
              canonical config JSON
    u64       blob count
    per blob: u32 name length, name bytes (UTF-8),
              u32 rows, u32 cols, rows*cols float64 little-endian

Every stored array is 2-D: vectors are saved as one row, scalars as 1x1, and
3-D conv weights as (out_channels, in_channels*kernel); shapes are restored
from the config on load.  Blobs are written in sorted name order, so a
checkpoint's bytes are a pure function of its contents.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RD2V"
FORMAT_VERSION = 1


def _as_2d(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim == 2:
        return arr
    return arr.reshape(arr.shape[0], -1)


def save_blobs(path, blobs: dict[str, np.ndarray], config_digest: str) -> None:
    digest_bytes = config_digest.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(digest_bytes)))
        fh.write(digest_bytes)
        fh.write(struct.pack("<Q", len(blobs)))
        for name in sorted(blobs):
            flat = _as_2d(blobs[name])
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<II", flat.shape[0], flat.shape[1]))
            fh.write(flat.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return data


def load_blobs(path, expected_digest: str | None = None) -> tuple[dict[str, np.ndarray], str]:
    """Returns (name -> 2-D array, stored config digest)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"bad magic: {path} is not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (digest_len,) = struct.unpack("<I", _read_exact(fh, 4, "digest length"))
        digest = _read_exact(fh, digest_len, "digest").decode("utf-8")
        if expected_digest is not None and digest != expected_digest:
            raise FormatError(
                "checkpoint config digest does not match the supplied config; "
                f"stored {digest[:12]}..., expected {expected_digest[:12]}...")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "blob count"))
        blobs: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, "shape"))
            data = _read_exact(fh, rows * cols * 8, f"data for {name}")
            blobs[name] = np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()
    return blobs, digest
