"""Moment estimators, the equivalent number of looks (ENL), and MSE / PSNR."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

__all__ = ["EnlReport", "sample_skew_kurt", "enl", "mse_psnr", "format_flag"]


def format_flag(value: float) -> str:
    """Decimal text for a float; the infinity flag renders as ``inf``."""
    return "inf" if math.isinf(value) else f"{value:.17g}"


def sample_skew_kurt(samples) -> tuple[float, float]:
    """Biased moment estimators ``m3 / m2**1.5`` and ``m4 / m2**2 - 3``."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 4:
        raise ParameterError("need at least 4 samples")
    d = x - x.mean()
    d2 = d * d
    m2 = d2.mean()
    if not m2 > 0:
        raise NumericError("zero sample variance")
    m3 = (d2 * d).mean()
    m4 = (d2 * d2).mean()
    return float(m3 / m2 ** 1.5), float(m4 / m2 ** 2 - 3.0)


@dataclass
class EnlReport:
    """ENL over the lowest-variance patches of an image.

    ``per_roi_enl`` holds ``math.inf`` as the flag for a patch with zero
    standard deviation; flagged patches are left out of ``mean_enl`` (which
    is itself ``inf`` when every ROI is flagged).
    """

    patch_size: int
    rois: list[tuple[int, int, int]]
    per_roi_enl: list[float]
    mean_enl: float
    warnings: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"roi {r} {c} {s} {format_flag(v)}" for (r, c, s), v in zip(self.rois, self.per_roi_enl)]
        lines.append(f"mean_enl {format_flag(self.mean_enl)}")
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        lines = [f"patch_size = {self.patch_size}", f"n_rois = {len(self.rois)}"]
        for i, ((r, c, s), v) in enumerate(zip(self.rois, self.per_roi_enl)):
            lines += [f"roi{i}_row = {r}", f"roi{i}_col = {c}", f"roi{i}_size = {s}",
                      f"roi{i}_enl = {format_flag(v)}"]
        lines.append(f"mean_enl = {format_flag(self.mean_enl)}")
        return "\n".join(lines) + "\n"


def enl(image, patch_size: int = 32, n_rois: int = 4) -> EnlReport:
    """Mean ENL ``(mu / sigma)**2`` over the ``n_rois`` most homogeneous patches.

    The image is cut into non-overlapping ``patch_size`` squares on a grid
    anchored at the top-left corner (remainder rows and columns are
    dropped).  Patches are ranked by variance, ties going to the lower
    row-major index.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {img.shape}")
    if patch_size < 2:
        raise ParameterError("patch_size must be >= 2")
    if n_rois < 1:
        raise ParameterError("n_rois must be >= 1")
    h, w = img.shape
    ny, nx = h // patch_size, w // patch_size
    if ny == 0 or nx == 0:
        raise ParameterError(f"image {h}x{w} is smaller than patch size {patch_size}")
    if n_rois > ny * nx:
        raise ParameterError(f"{n_rois} ROIs requested but only {ny * nx} patches fit")

    tiles = img[:ny * patch_size, :nx * patch_size].reshape(ny, patch_size, nx, patch_size)
    tiles = tiles.transpose(0, 2, 1, 3).reshape(ny * nx, patch_size * patch_size)
    mu = tiles.mean(axis=1)
    var = ((tiles - mu[:, None]) ** 2).mean(axis=1)
    order = np.argsort(var, kind="stable")[:n_rois]

    rois, values, warnings = [], [], []
    for idx in order:
        r, c = divmod(int(idx), nx)
        rois.append((r * patch_size, c * patch_size, patch_size))
        if var[idx] > 0:
            values.append(float(mu[idx] ** 2 / var[idx]))
        else:
            values.append(math.inf)
            warnings.append(f"zero standard deviation in ROI at ({r * patch_size}, {c * patch_size}); excluded")
    finite = [v for v in values if math.isfinite(v)]
    mean_enl = float(np.mean(finite)) if finite else math.inf
    return EnlReport(patch_size, rois, values, mean_enl, warnings)


def mse_psnr(a, b, peak: float) -> tuple[float, float]:
    """Mean squared error and PSNR in dB; PSNR is ``inf`` when the MSE is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ParameterError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)
    return mse, psnr
