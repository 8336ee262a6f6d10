"""One-pass despeckling with optional overlap-discard tiling."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .network import ArchSpec, forward
from .transform import TransformSpec, from_z_domain, to_z_domain

__all__ = ["TileScheme", "Tile", "tile_plan", "despeckle", "denoise_z"]

Box = tuple[int, int, int, int]  # row0, col0, row1, col1 (exclusive ends)


@dataclass(frozen=True)
class TileScheme:
    tile: int
    halo: int

    def __post_init__(self):
        if self.tile < 1:
            raise ParameterError("tile must be >= 1")
        if self.halo < 0:
            raise ParameterError("halo must be >= 0")

    @classmethod
    def for_arch(cls, arch: ArchSpec, tile: int) -> "TileScheme":
        return cls(tile, arch.receptive_radius)


@dataclass(frozen=True)
class Tile:
    core: Box    # in image coordinates
    padded: Box  # in coordinates of the image reflect-padded by ``halo`` on every side


def tile_plan(h: int, w: int, scheme: TileScheme) -> list[Tile]:
    """Row-major tiles whose cores partition the ``h x w`` image.

    Each padded box is its core grown by ``halo`` on every side, expressed in
    the frame of the reflect-padded image, so it never leaves that image.
    """
    if h < 1 or w < 1:
        raise ShapeError("image must be non-empty")
    t, hl = scheme.tile, scheme.halo
    tiles = []
    for r0 in range(0, h, t):
        for c0 in range(0, w, t):
            r1, c1 = min(r0 + t, h), min(c0 + t, w)
            tiles.append(Tile((r0, c0, r1, c1), (r0, c0, r1 + 2 * hl, c1 + 2 * hl)))
    return tiles


def _check_arch(params, arch: ArchSpec) -> None:
    if params["in.weight"].shape[0] != arch.channels:
        raise ShapeError("parameters do not match the architecture")


def denoise_z(z: np.ndarray, params, arch: ArchSpec, sigma: float,
              scheme: TileScheme | None = None, threads: int = 1) -> np.ndarray:
    """Network estimate for a single z-domain image, conditioned on ``sigma``.

    The image is reflect-padded by the receptive radius before the network
    sees it; with tiling only the core of every padded tile is kept.
    """
    _check_arch(params, arch)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {z.shape}")
    halo = arch.receptive_radius if scheme is None else scheme.halo
    if scheme is not None and halo < arch.receptive_radius:
        raise ParameterError(f"halo {halo} is below the receptive radius {arch.receptive_radius}")
    if min(z.shape) <= halo:
        raise ShapeError(f"image {z.shape} must exceed the halo {halo} in both dimensions")
    zp = np.pad(z, halo, mode="reflect")

    def run(block: np.ndarray) -> np.ndarray:
        return forward(params, block[None, None], sigma)[0, 0]

    if scheme is None:
        out = run(zp)[halo:-halo, halo:-halo]
    else:
        plan = tile_plan(*z.shape, scheme)
        out = np.empty_like(z)

        def do(tile: Tile) -> None:
            r0, c0, r1, c1 = tile.padded
            res = run(zp[r0:r1, c0:c1])
            cr0, cc0, cr1, cc1 = tile.core
            out[cr0:cr1, cc0:cc1] = res[halo:halo + cr1 - cr0, halo:halo + cc1 - cc0]

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(do, plan))
        else:
            for tile in plan:
                do(tile)
    if not np.all(np.isfinite(out)):
        raise NumericError("network produced non-finite output")
    return out


def despeckle(x, params, arch: ArchSpec, spec: TransformSpec, scheme: TileScheme | None = None,
              threads: int = 1) -> np.ndarray:
    """Despeckled amplitude: to the z-domain, one conditional pass at ``sigma_data``, and back.

    ``scheme=None`` processes the whole image at once.
    """
    z = to_z_domain(x, spec)
    z_hat = denoise_z(z, params, arch, spec.sigma_data, scheme, threads)
    return from_z_domain(z_hat, spec)
