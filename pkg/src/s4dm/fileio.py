"""F32R rasters, manifests, and PGM previews."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["read_f32r", "write_f32r", "read_manifest", "write_pgm"]

_MAGIC = b"F32R"


def write_f32r(path, image) -> None:
    """Write ``magic | u32 width | u32 height | float32 LE payload`` (row-major)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"F32R holds 2-D rasters, got shape {img.shape}")
    with np.errstate(over="ignore"):
        payload = img.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise FormatError("raster contains non-finite values (after rounding to float32)")
    h, w = img.shape
    Path(path).write_bytes(_MAGIC + struct.pack("<II", w, h) + payload.tobytes())


def read_f32r(path) -> np.ndarray:
    """Read an F32R raster as a float64 array."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not an F32R raster")
    w, h = struct.unpack("<II", data[4:12])
    if len(data) - 12 != 4 * w * h:
        raise FormatError(f"{path}: payload holds {len(data) - 12} bytes, header declares {w}x{h}")
    img = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(img)):
        raise FormatError(f"{path}: non-finite values")
    return img


def read_manifest(path) -> list[Path]:
    """Raster paths listed one per line; ``#`` lines and blanks are skipped.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else base / p)
    return out


def write_pgm(path, image) -> None:
    """16-bit binary PGM scaled so the maximum maps to 65535."""
    img = np.asarray(image, dtype=np.float64)
    peak = img.max()
    scaled = np.zeros_like(img) if peak <= 0 else np.clip(img / peak, 0.0, 1.0) * 65535.0
    h, w = img.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + np.rint(scaled).astype(">u2").tobytes())
