"""Multiplicative Gamma speckle: simulation, log-Gamma moments, synthetic scenes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError
from .gridmath import RandomStream
from .special import polygamma

__all__ = [
    "SpeckleConfig",
    "LogGammaMoments",
    "SyntheticTarget",
    "apply_speckle",
    "speckle_field",
    "log_gamma_moments",
    "make_synthetic_targets",
]

MIN_LOOKS = 0.5


def _check_looks(looks: float) -> None:
    if not looks >= MIN_LOOKS or not math.isfinite(looks):
        raise ParameterError(f"looks must be a finite number >= {MIN_LOOKS}, got {looks}")


@dataclass(frozen=True)
class SpeckleConfig:
    looks: float
    seed: int = 0

    def __post_init__(self):
        _check_looks(self.looks)
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


@dataclass(frozen=True)
class LogGammaMoments:
    """Moments of ``log(nu)`` for ``nu ~ Gamma(L, 1/L)``."""

    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float


def speckle_field(shape: tuple[int, int], looks: float, seed: int) -> np.ndarray:
    """Unit-mean Gamma(L, 1/L) field.

    Row ``i`` is drawn from its own stream derived from ``seed``, so the
    field does not depend on how rows are scheduled across workers.
    """
    _check_looks(looks)
    h, w = shape
    root = RandomStream(seed)
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        out[i] = root.derive(i).gamma(looks, 1.0 / looks, w)
    return out


def apply_speckle(clean: np.ndarray, cfg: SpeckleConfig) -> np.ndarray:
    """Return ``clean * nu`` with independent ``nu ~ Gamma(L, 1/L)`` per pixel.

    The Gamma model is applied to the amplitude values as given.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 2:
        raise DomainError(f"expected a 2-D raster, got shape {clean.shape}")
    if not np.all(clean > 0):
        raise DomainError("non-positive amplitude in clean raster")
    return clean * speckle_field(clean.shape, cfg.looks, cfg.seed)


def log_gamma_moments(looks: float) -> LogGammaMoments:
    """Analytic moments of ``log(nu)``, ``nu ~ Gamma(L, 1/L)``.

    The cumulants of ``log(nu)`` are the polygamma values at ``L`` (the mean
    shifted by ``-log L``), so skewness and excess kurtosis are ratios of
    polygamma functions.
    """
    _check_looks(looks)
    k1 = polygamma(0, looks) - math.log(looks)
    k2 = polygamma(1, looks)
    k3 = polygamma(2, looks)
    k4 = polygamma(3, looks)
    return LogGammaMoments(mean=k1, variance=k2, skewness=k3 / k2 ** 1.5, excess_kurtosis=k4 / k2 ** 2)


@dataclass(frozen=True)
class SyntheticTarget:
    """Clean amplitude scene plus the bounding box ``(row, col, height, width)``
    of its largest constant region (``None`` when there is none)."""

    image: np.ndarray
    largest_region: tuple[int, int, int, int] | None


def _levels(rng: np.random.Generator, n: int, lo: float = 20.0, hi: float = 200.0) -> np.ndarray:
    # log-uniform levels, floored at 1.0
    return np.maximum(np.exp(rng.uniform(math.log(lo), math.log(hi), n)), 1.0)


def make_synthetic_targets(kind: str, size: int, seed: int = 0, cell: int | None = None) -> SyntheticTarget:
    """Strictly positive synthetic amplitude scenes.

    ``piecewise-constant``
        Square cells of side ``cell`` (default 32, or ``size // 2`` for
        images smaller than 64) each holding a constant log-uniform level
        in [20, 200]; cells are aligned to the image origin so that a
        32-pixel ENL patch grid sees homogeneous patches.
    ``gradient``
        Horizontal ramp, strictly increasing along every row.
    ``checkerboard``
        Two alternating levels on 8-pixel squares.
    """
    if size < 32:
        raise ParameterError("size must be >= 32")
    rng = RandomStream(seed).generator
    if kind == "piecewise-constant":
        cell = cell or (32 if size >= 64 else size // 2)
        n = -(-size // cell)
        levels = _levels(rng, n * n).reshape(n, n)
        img = np.kron(levels, np.ones((cell, cell)))[:size, :size]
        # cells are equal-sized; clipped edge cells are never larger than the first
        return SyntheticTarget(img, (0, 0, min(cell, size), min(cell, size)))
    if kind == "gradient":
        lo, hi = np.sort(_levels(rng, 2))
        if hi - lo < 1.0:
            hi = lo + 1.0
        ramp = np.linspace(lo, hi, size)
        offsets = rng.uniform(0.0, 0.1 * lo, size)[:, None]
        return SyntheticTarget(ramp[None, :] + offsets, None)
    if kind == "checkerboard":
        a, b = _levels(rng, 2)
        sq = 8
        ii, jj = np.indices((size, size)) // sq
        img = np.where((ii + jj) % 2 == 0, a, b)
        return SyntheticTarget(img, (0, 0, sq, sq))
    raise ParameterError(f"unknown target kind {kind!r}")
