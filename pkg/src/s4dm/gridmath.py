"""Numeric substrate: seedable random streams and 2-D convolution with exact gradients.

Convolutions run on a *padded flat* layout: every image of the batch is
zero-padded by the kernel radius, the padded images are stacked and
flattened to ``(rows, channels)`` (channels last), and a margin of
``radius_y * padded_width + radius_x`` zero rows is added at both ends.
In that layout each kernel tap is a contiguous row shift, so a convolution
is a sum of plain matrix products with no im2col copy.  The network keeps
its activations in this layout between layers; :func:`conv2d` and
:func:`conv2d_backward` wrap it behind the usual NCHW interface.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "RandomStream",
    "PaddedLayout",
    "sample_normal",
    "sample_gamma",
    "conv2d",
    "conv2d_backward",
    "conv_flat",
    "conv_flat_backward",
]


class RandomStream:
    """Deterministic random source addressed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator.  Child streams derived with
    :meth:`derive` are independent of the parent and of each other, so
    parallel workers can each own one without sharing state.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = _path + (int(stream_id),)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, path={self._path})"

    def derive(self, stream_id: int) -> "RandomStream":
        """Return an independent child stream."""
        return RandomStream(self.seed, stream_id, _path=self._path)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        """Integers on [low, high)."""
        return self._gen.integers(low, high, size=size)

    def gamma(self, shape: float, scale: float, size) -> np.ndarray:
        if not shape > 0 or not scale > 0:
            raise ParameterError(f"gamma needs shape > 0 and scale > 0, got {shape}, {scale}")
        # Marsaglia-Tsang squeeze; shape < 1 is boosted via Gamma(shape + 1) * U**(1/shape).
        return self._gen.gamma(shape, scale, size)


def sample_normal(stream: RandomStream, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError("n must be >= 1")
    return stream.normal(n)


def sample_gamma(stream: RandomStream, shape: float, scale: float, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError("n must be >= 1")
    return stream.gamma(shape, scale, n)


@dataclass(frozen=True)
class PaddedLayout:
    """Geometry of the padded flat layout for a batch of ``n`` images of ``h x w``."""

    n: int
    h: int
    w: int
    ry: int = 1
    rx: int = 1
    dtype: type = np.float64

    @property
    def hp(self) -> int:
        return self.h + 2 * self.ry

    @property
    def wp(self) -> int:
        return self.w + 2 * self.rx

    @property
    def core(self) -> int:
        """Number of rows of the padded grid proper."""
        return self.n * self.hp * self.wp

    @property
    def margin(self) -> int:
        return self.ry * self.wp + self.rx

    @property
    def rows(self) -> int:
        return self.core + 2 * self.margin

    def offsets(self, kh: int, kw: int) -> list[tuple[int, int, int]]:
        """``(a, b, row_shift)`` for every tap of a ``kh x kw`` kernel."""
        ry, rx = kh // 2, kw // 2
        if ry > self.ry or rx > self.rx:
            raise ShapeError(f"kernel {kh}x{kw} exceeds layout padding ({self.ry}, {self.rx})")
        return [(a, b, (a - ry) * self.wp + (b - rx)) for a in range(kh) for b in range(kw)]

    @cached_property
    def mask(self) -> np.ndarray:
        """``(core, 1)`` array, 1.0 at real pixels and 0.0 at padding."""
        m = np.zeros((self.n, self.hp, self.wp), dtype=self.dtype)
        m[:, self.ry:self.ry + self.h, self.rx:self.rx + self.w] = 1.0
        return m.reshape(-1, 1)

    def empty(self, channels: int) -> np.ndarray:
        return np.zeros((self.rows, channels), dtype=self.dtype)

    def grid_view(self, buf: np.ndarray) -> np.ndarray:
        """View of ``buf`` as ``(n, hp, wp, channels)``."""
        return buf[self.margin:self.margin + self.core].reshape(self.n, self.hp, self.wp, -1)

    def pack(self, x: np.ndarray, out: np.ndarray | None = None, channel: int = 0) -> np.ndarray:
        """Copy an NCHW array into a layout buffer starting at ``channel``."""
        n, c, h, w = x.shape
        if (n, h, w) != (self.n, self.h, self.w):
            raise ShapeError(f"array {x.shape} does not fit layout {self}")
        if out is None:
            out = self.empty(c)
        g = self.grid_view(out)
        g[:, self.ry:self.ry + h, self.rx:self.rx + w, channel:channel + c] = x.transpose(0, 2, 3, 1)
        return out

    def unpack(self, buf: np.ndarray) -> np.ndarray:
        """Extract the NCHW interior of a layout buffer."""
        g = self.grid_view(buf)[:, self.ry:self.ry + self.h, self.rx:self.rx + self.w, :]
        return np.ascontiguousarray(g.transpose(0, 3, 1, 2))


def _check_kernel(kernel: np.ndarray, in_channels: int) -> None:
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (out, in, kh, kw), got shape {kernel.shape}")
    _, ci, kh, kw = kernel.shape
    if ci != in_channels:
        raise ShapeError(f"kernel expects {ci} input channels, input has {in_channels}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel sides must be odd, got {kh}x{kw}")


_GATHER_MAX_OUT = 4


def _taps(kernel: np.ndarray, dtype) -> np.ndarray:
    # (kh, kw, in, out), contiguous so every tap is a BLAS-ready matrix
    return np.ascontiguousarray(kernel.transpose(2, 3, 1, 0), dtype=dtype)


def conv_flat(buf: np.ndarray, layout: PaddedLayout, kernel: np.ndarray,
              bias: np.ndarray | None = None) -> np.ndarray:
    """Same-size zero-padded convolution of a layout buffer.

    Returns a new layout buffer whose padding and margins are zero, so it can
    feed the next convolution directly.
    """
    _check_kernel(kernel, buf.shape[1])
    out_ch, _, kh, kw = kernel.shape
    m, core = layout.margin, layout.core
    taps = _taps(kernel, layout.dtype)
    out = layout.empty(out_ch)
    acc = out[m:m + core]
    tmp = np.empty_like(acc)
    for a, b, s in layout.offsets(kh, kw):
        np.matmul(buf[m + s:m + s + core], taps[a, b], out=tmp)
        acc += tmp
    if bias is not None:
        acc += bias.astype(layout.dtype, copy=False)
    acc *= layout.mask
    return out


def conv_flat_backward(grad_out: np.ndarray, buf: np.ndarray, layout: PaddedLayout,
                       kernel: np.ndarray, need_input_grad: bool = True):
    """Gradients of :func:`conv_flat`.

    ``grad_out`` is a layout buffer (or its ``core`` rows) holding the
    gradient with respect to the convolution output.  Returns
    ``(grad_buf, grad_kernel, grad_bias)``; ``grad_buf`` is a layout buffer
    with padding rows zeroed, or ``None`` when ``need_input_grad`` is false.
    """
    _check_kernel(kernel, buf.shape[1])
    out_ch, _, kh, kw = kernel.shape
    m, core = layout.margin, layout.core
    if grad_out.shape[0] == layout.rows:
        grad_out = grad_out[m:m + core]
    if grad_out.shape != (core, out_ch):
        raise ShapeError(f"gradient shape {grad_out.shape} does not match forward output ({core}, {out_ch})")
    g = grad_out * layout.mask
    taps = _taps(kernel, layout.dtype)
    grad_kernel = np.empty(kernel.shape, dtype=layout.dtype)
    offsets = layout.offsets(kh, kw)
    for a, b, s in offsets:
        grad_kernel[:, :, a, b] = g.T @ buf[m + s:m + s + core]
    grad_bias = g.sum(axis=0)
    grad_buf = None
    if need_input_grad and out_ch <= _GATHER_MAX_OUT:
        # few output channels: gather the shifted gradients, then one matrix product
        shifted = layout.empty(len(offsets) * out_ch)
        for k, (_, _, s) in enumerate(offsets):
            shifted[m + s:m + s + core, k * out_ch:(k + 1) * out_ch] = g
        grad_buf = shifted @ taps.transpose(0, 1, 3, 2).reshape(-1, taps.shape[2])
    elif need_input_grad:
        grad_buf = layout.empty(buf.shape[1])
        tmp = np.empty((core, buf.shape[1]), dtype=layout.dtype)
        for a, b, s in offsets:
            np.matmul(g, taps[a, b].T, out=tmp)
            grad_buf[m + s:m + s + core] += tmp
    if grad_buf is not None:
        grad_buf[:m] = 0.0
        grad_buf[m + core:] = 0.0
        grad_buf[m:m + core] *= layout.mask
    return grad_buf, grad_kernel, grad_bias


def _layout_for(x: np.ndarray, kernel: np.ndarray) -> PaddedLayout:
    if x.ndim != 4:
        raise ShapeError(f"input must be (batch, channels, height, width), got shape {x.shape}")
    _check_kernel(kernel, x.shape[1])
    n, _, h, w = x.shape
    return PaddedLayout(n, h, w, kernel.shape[2] // 2, kernel.shape[3] // 2)


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1, zero-padded, same-size 2-D convolution (cross-correlation).

    Parameters
    ----------
    x : ndarray, shape (batch, in_ch, height, width)
    kernel : ndarray, shape (out_ch, in_ch, kh, kw), kh and kw odd
    bias : ndarray, shape (out_ch,), optional

    Returns
    -------
    ndarray, shape (batch, out_ch, height, width)
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    layout = _layout_for(x, kernel)
    if bias is not None and np.shape(bias) != (kernel.shape[0],):
        raise ShapeError(f"bias must have shape ({kernel.shape[0]},)")
    return layout.unpack(conv_flat(layout.pack(x), layout, kernel, bias))


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv2d`.

    ``x`` and ``kernel`` are the inputs of the paired forward call.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    layout = _layout_for(x, kernel)
    expected = (x.shape[0], kernel.shape[0], x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {expected}")
    g = layout.pack(np.asarray(grad_out, dtype=np.float64))
    gbuf, gk, gb = conv_flat_backward(g, layout.pack(x), layout, kernel)
    return layout.unpack(gbuf), gk, gb
