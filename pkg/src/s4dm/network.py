"""Noise-conditional residual CNN that estimates the clean z-domain image.

Architecture (3x3 kernels, zero padding, ReLU)::

    [z_t, log(sigma_t)] -> conv_in -> ReLU -> D x (conv -> ReLU) -> conv_out -> + z_t

The noise level enters only through the constant ``log(sigma_t)`` input
channel.  ``conv_out`` starts at zero, so an untrained network is exactly
the identity map.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, ParameterError, ShapeError
from .gridmath import PaddedLayout, RandomStream, conv_flat, conv_flat_backward

__all__ = [
    "ArchSpec",
    "init_params",
    "forward",
    "forward_train",
    "backward",
    "param_shapes",
    "save_checkpoint",
    "load_checkpoint",
]

KERNEL = 3


@dataclass(frozen=True)
class ArchSpec:
    channels: int = 32
    depth: int = 4

    def __post_init__(self):
        if self.channels < 1 or self.depth < 1:
            raise ParameterError("channels and depth must be >= 1")

    @property
    def receptive_radius(self) -> int:
        """Pixels of context on each side that influence one output pixel."""
        return self.depth + 2


def param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    c = arch.channels
    shapes = {"in.weight": (c, 2, KERNEL, KERNEL), "in.bias": (c,)}
    for k in range(arch.depth):
        shapes[f"hidden.{k}.weight"] = (c, c, KERNEL, KERNEL)
        shapes[f"hidden.{k}.bias"] = (c,)
    shapes["out.weight"] = (1, c, KERNEL, KERNEL)
    shapes["out.bias"] = (1,)
    return shapes


def _layers(arch: ArchSpec) -> list[str]:
    return ["in"] + [f"hidden.{k}" for k in range(arch.depth)] + ["out"]


def init_params(arch: ArchSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases, zero output conv."""
    stream = RandomStream(seed)
    params = {}
    for i, (name, shape) in enumerate(param_shapes(arch).items()):
        if name.endswith(".bias") or name.startswith("out."):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = stream.derive(i).normal(shape) * np.sqrt(2.0 / fan_in)
    return params


def _arch_of(params: dict[str, np.ndarray]) -> ArchSpec:
    try:
        c = params["in.weight"].shape[0]
    except KeyError:
        raise ShapeError("parameter set has no 'in.weight'") from None
    depth = sum(1 for k in params if k.startswith("hidden.") and k.endswith(".weight"))
    arch = ArchSpec(c, depth)
    for name, shape in param_shapes(arch).items():
        if name not in params or params[name].shape != shape:
            raise ShapeError(f"parameter {name!r} missing or not of shape {shape}")
    return arch


@dataclass
class ForwardCache:
    layout: PaddedLayout
    inputs: list[np.ndarray]  # layer inputs, layout buffers
    pre: list[np.ndarray]     # pre-activation core rows of hidden layers

    @property
    def batch_shape(self) -> tuple[int, int, int, int]:
        return (self.layout.n, 1, self.layout.h, self.layout.w)


def _check_inputs(z_t, sigma_t):
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 4 or z_t.shape[1] != 1:
        raise ShapeError(f"z_t must be (batch, 1, height, width), got {z_t.shape}")
    sigma = np.broadcast_to(np.asarray(sigma_t, dtype=np.float64), (z_t.shape[0],))
    if not np.all(sigma > 0):
        raise ParameterError("sigma_t must be positive")
    return z_t, sigma


def forward_train(params, z_t, sigma_t, dtype=np.float64) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass keeping what :func:`backward` needs.

    ``dtype`` sets the precision of the convolutions; the returned estimate
    is float64 either way.
    """
    arch = _arch_of(params)
    z_t, sigma = _check_inputs(z_t, sigma_t)
    n, _, h, w = z_t.shape
    layout = PaddedLayout(n, h, w, dtype=np.dtype(dtype).type)
    x = layout.pack(z_t, layout.empty(2))
    x[layout.margin:layout.margin + layout.core, 1] = np.repeat(np.log(sigma), layout.hp * layout.wp)
    x[layout.margin:layout.margin + layout.core, 1:2] *= layout.mask

    inputs, pre = [], []
    a = x
    m, core = layout.margin, layout.core
    for name in _layers(arch):
        inputs.append(a)
        out = conv_flat(a, layout, params[f"{name}.weight"], params[f"{name}.bias"])
        if not np.all(np.isfinite(out[m:m + core])):
            raise NumericError(f"non-finite activation in layer {name!r}")
        if name != "out":
            pre.append(out[m:m + core].copy())
            np.maximum(out, 0.0, out=out)
        a = out
    z_hat = z_t + layout.unpack(a)
    return z_hat, ForwardCache(layout, inputs, pre)


def forward(params, z_t, sigma_t, dtype=np.float64) -> np.ndarray:
    """Denoised estimate ``z_t + residual(z_t, log sigma_t)``, same shape as ``z_t``."""
    return forward_train(params, z_t, sigma_t, dtype)[0]


def backward(params, cache: ForwardCache, grad_z_hat) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every parameter tensor.

    ``grad_z_hat`` is the loss gradient with respect to the output of the
    :func:`forward_train` call that produced ``cache``.
    """
    arch = _arch_of(params)
    grad_z_hat = np.asarray(grad_z_hat, dtype=np.float64)
    if grad_z_hat.shape != cache.batch_shape:
        raise ShapeError(f"gradient shape {grad_z_hat.shape} does not match forward output {cache.batch_shape}")
    layers = _layers(arch)
    if len(cache.inputs) != len(layers):
        raise ShapeError("forward cache does not match the parameter set")
    layout = cache.layout
    m, core = layout.margin, layout.core

    grads = {}
    g = layout.pack(grad_z_hat)
    for i in range(len(layers) - 1, -1, -1):
        name = layers[i]
        if name != "out":
            g[m:m + core] *= cache.pre[i] > 0
        g, gw, gb = conv_flat_backward(g, cache.inputs[i], layout, params[f"{name}.weight"],
                                       need_input_grad=i > 0)
        grads[f"{name}.weight"] = gw.astype(np.float64)
        grads[f"{name}.bias"] = gb.astype(np.float64)
    return {k: grads[k] for k in param_shapes(arch)}


# Checkpoint layout (little-endian):
#   b"S4DM" | u16 version | u32 channels | u32 depth | u32 n_records
#   per record: u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f64 data[prod(dims)]
# Records named "meta.*" are rank-0 scalars describing the training transform.
_MAGIC = b"S4DM"
_VERSION = 1


def save_checkpoint(params, arch: ArchSpec, path, meta: dict[str, float] | None = None) -> None:
    if _arch_of(params) != arch:
        raise ShapeError("parameters do not match the architecture")
    records = [(k, np.asarray(v, dtype="<f8")) for k, v in params.items()]
    records += [(f"meta.{k}", np.asarray(float(v), dtype="<f8")) for k, v in (meta or {}).items()]
    parts = [_MAGIC, struct.pack("<HIII", _VERSION, arch.channels, arch.depth, len(records))]
    for name, arr in records:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, with_meta: bool = False):
    """Read a checkpoint; returns ``(params, arch)`` or ``(params, arch, meta)``."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != _MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, channels, depth, n_records = r.unpack("<HIII")
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        arch = ArchSpec(channels, depth)
    except ParameterError as e:
        raise FormatError(str(e)) from None
    params, meta = {}, {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<I")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8") from None
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        if name.startswith("meta."):
            meta[name[5:]] = float(arr)
        else:
            params[name] = arr
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after the last tensor record")
    expected = param_shapes(arch)
    if set(params) != set(expected):
        raise FormatError(f"tensor names {sorted(params)} do not match the architecture")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise FormatError(f"tensor {name!r} has shape {params[name].shape}, expected {shape}")
    params = {k: params[k] for k in expected}
    return (params, arch, meta) if with_meta else (params, arch)
