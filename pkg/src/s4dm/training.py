"""Self-supervised training on further-corrupted z-domain data.

Each step draws a noise level ``sigma_t > sigma_data`` per batch element,
adds ``sqrt(sigma_t**2 - sigma_data**2)`` Gaussian noise to the data, and
fits the network output ``z_hat`` through the blend

    delta * z_hat + (1 - delta) * z_t  ~  z_data,
    delta = (sigma_t**2 - sigma_data**2) / (sigma_t**2 - sigma_target**2),

which makes ``z_hat`` an estimate of the clean signal although only noisy
data is ever seen.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np

from .errors import FormatError, NumericError, ParameterError, ShapeError
from .gridmath import RandomStream
from .kvfile import format_keyvalue, parse_keyvalue
from .network import ArchSpec, backward, forward_train, init_params

__all__ = [
    "TrainConfig",
    "TrainState",
    "corrupt",
    "delta",
    "delta_var",
    "blend",
    "loss",
    "loss_grad",
    "sample_sigma_t",
    "adam_update",
    "train_step",
    "assemble_batch",
    "init_state",
    "train",
]

log = logging.getLogger(__name__)

WEIGHT_MODES = ("unit", "inv-delta-sq")
COMPUTE_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    sigma_data: float = 1.0
    sigma_target: float = 0.0
    sigma_max_ratio: float = 3.0
    u_min: float = 0.01
    weight_mode: str = "inv-delta-sq"
    delta_min: float = 0.05
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 2000
    batch: int = 8
    patch: int = 64
    seed: int = 0
    channels: int = 32
    depth: int = 4
    log_every: int = 50
    compute_dtype: str = "float32"

    def __post_init__(self):
        if not self.sigma_max_ratio > 1:
            raise ParameterError("sigma_max_ratio must be > 1")
        if not 0 < self.u_min < 1:
            raise ParameterError("u_min must lie in (0, 1)")
        if not 0 < self.delta_min < 1:
            raise ParameterError("delta_min must lie in (0, 1)")
        if self.weight_mode not in WEIGHT_MODES:
            raise ParameterError(f"weight_mode must be one of {WEIGHT_MODES}")
        if not self.sigma_data > self.sigma_target >= 0:
            raise ParameterError("need sigma_data > sigma_target >= 0")
        if self.compute_dtype not in COMPUTE_DTYPES:
            raise ParameterError(f"compute_dtype must be one of {sorted(COMPUTE_DTYPES)}")
        if min(self.iterations, self.batch, self.patch, self.log_every) < 1:
            raise ParameterError("iterations, batch, patch and log_every must be >= 1")

    @property
    def sigma_max(self) -> float:
        return self.sigma_max_ratio * self.sigma_data

    @property
    def arch(self) -> ArchSpec:
        return ArchSpec(self.channels, self.depth)

    def to_text(self) -> str:
        return format_keyvalue({f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse a ``key = value`` config; missing keys keep their defaults."""
        kv = parse_keyvalue(text)
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            if key not in types:
                raise FormatError(f"unknown config key {key!r}")
            t = types[key]
            try:
                kwargs[key] = int(raw) if t == "int" else float(raw) if t == "float" else raw
            except ValueError:
                raise FormatError(f"config key {key!r}: cannot parse {raw!r} as {t}") from None
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    running_loss: float = math.nan
    history: list[float] = field(default_factory=list)


def init_state(arch: ArchSpec, seed: int) -> TrainState:
    params = init_params(arch, seed)
    return TrainState(
        params=params,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def _per_element(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).reshape(n, 1, 1, 1)


def corrupt(z_data: np.ndarray, sigma_data: float, sigma_t, stream: RandomStream) -> np.ndarray:
    """``z_data + sqrt(sigma_t**2 - sigma_data**2) * xi`` with standard normal ``xi``.

    ``sigma_t`` is a scalar or one value per batch element.
    """
    z_data = np.asarray(z_data, dtype=np.float64)
    sigma_t = np.asarray(sigma_t, dtype=np.float64)
    if np.any(sigma_t < sigma_data):
        raise ParameterError("sigma_t must be >= sigma_data")
    scale = np.sqrt(sigma_t ** 2 - sigma_data ** 2)
    if z_data.ndim == 4:
        scale = _per_element(scale, z_data.shape[0])
    return z_data + scale * stream.normal(z_data.shape)


def delta_var(var_t, var_data: float, var_target: float = 0.0):
    """Blend coefficient from variances, ``(var_t - var_data) / (var_t - var_target)``.

    Exact for exactly representable variances, e.g. ``var_t = 2 * var_data`` gives 0.5.
    """
    vt = np.asarray(var_t, dtype=np.float64)
    if not var_data >= var_target >= 0 or np.any(vt <= var_target) or np.any(vt < var_data):
        raise ParameterError("need sigma_t >= sigma_data >= sigma_target >= 0 and sigma_t > sigma_target")
    out = (vt - var_data) / (vt - var_target)
    return float(out) if out.ndim == 0 else out


def delta(sigma_t, sigma_data: float, sigma_target: float = 0.0):
    """Blend coefficient ``(sigma_t**2 - sigma_data**2) / (sigma_t**2 - sigma_target**2)``."""
    st = np.asarray(sigma_t, dtype=np.float64)
    return delta_var(st ** 2, sigma_data ** 2, sigma_target ** 2)


def blend(z_hat, z_t, d):
    """``d * z_hat + (1 - d) * z_t`` with ``d`` scalar or per batch element."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if np.ndim(d) > 0 and z_hat.ndim == 4:
        d = _per_element(d, z_hat.shape[0])
    return d * z_hat + (1.0 - d) * np.asarray(z_t, dtype=np.float64)


def _check_same(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch {shape} vs {np.shape(a)}")


def loss(z_hat, z_t, z_data, d, weight=1.0) -> float:
    """Weighted blend loss ``weight * mean((d * z_hat + (1 - d) * z_t - z_data)**2)``.

    With per-element ``d`` and ``weight`` (batch inputs) the per-element
    pixel means are weighted and averaged over the batch.
    """
    _check_same(z_hat, z_t, z_data)
    r = blend(z_hat, z_t, d) - z_data
    w = np.asarray(weight, dtype=np.float64)
    if np.any(w <= 0):
        raise ParameterError("weight must be positive")
    if w.ndim == 0:
        return float(w * np.mean(r * r))
    per = np.mean((r * r).reshape(r.shape[0], -1), axis=1)
    return float(np.mean(w * per))


def loss_grad(z_hat, z_t, z_data, d, weight) -> np.ndarray:
    """Gradient of the batch form of :func:`loss` with respect to ``z_hat``."""
    r = blend(z_hat, z_t, d) - z_data
    n = r.shape[0]
    coeff = 2.0 * _per_element(weight, n) * _per_element(d, n) / r[0].size / n
    return coeff * r


def sample_sigma_t(cfg: TrainConfig, stream: RandomStream, n: int) -> np.ndarray:
    """Noise levels uniform in variance: ``sigma_t**2 = sd**2 + u (smax**2 - sd**2)``, ``u ~ U(u_min, 1]``."""
    u = 1.0 - (1.0 - cfg.u_min) * stream.uniform(n)
    sd2 = cfg.sigma_data ** 2
    return np.sqrt(sd2 + u * (cfg.sigma_max ** 2 - sd2))


def _weights(cfg: TrainConfig, d: np.ndarray) -> np.ndarray:
    if cfg.weight_mode == "unit":
        return np.ones_like(d)
    return 1.0 / np.maximum(d, cfg.delta_min) ** 2


def adam_update(state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    """One in-place Adam step (bias-corrected)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        state.params[k] -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def train_step(state: TrainState, batch: np.ndarray, cfg: TrainConfig, stream: RandomStream):
    """One optimizer step on a ``(batch, 1, p, p)`` array of z-domain patches.

    Returns ``(state, loss, sigma_t, delta)``; ``state`` is updated in place.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 1:
        raise ShapeError(f"batch must be (n, 1, h, w), got {batch.shape}")
    n = batch.shape[0]
    sigma_t = sample_sigma_t(cfg, stream.derive(0), n)
    z_t = corrupt(batch, cfg.sigma_data, sigma_t, stream.derive(1))
    d = delta(sigma_t, cfg.sigma_data, cfg.sigma_target)
    w = _weights(cfg, d)

    z_hat, cache = forward_train(state.params, z_t, sigma_t, COMPUTE_DTYPES[cfg.compute_dtype])
    value = loss(z_hat, z_t, batch, d, w)
    if not math.isfinite(value):
        norms = {k: float(np.linalg.norm(p)) for k, p in state.params.items()}
        raise NumericError(f"non-finite loss at step {state.step}: sigma_t={sigma_t.tolist()}, "
                           f"delta={d.tolist()}, parameter norms={norms}")
    grads = backward(state.params, cache, loss_grad(z_hat, z_t, batch, d, w))
    adam_update(state, grads, cfg)
    state.history.append(value)
    state.running_loss = value if math.isnan(state.running_loss) else 0.98 * state.running_loss + 0.02 * value
    return state, value, sigma_t, d


def assemble_batch(images: Sequence[np.ndarray], patch: int, batch: int, stream: RandomStream) -> np.ndarray:
    """Uniformly random ``patch x patch`` crops from uniformly chosen images.

    Images smaller than ``patch`` are skipped with a warning.
    """
    usable = []
    for i, img in enumerate(images):
        if img.shape[0] < patch or img.shape[1] < patch:
            log.warning("image %d (%dx%d) is smaller than the %d-pixel patch; skipped", i, *img.shape, patch)
        else:
            usable.append(img)
    if not usable:
        raise ParameterError("no image is large enough to crop a patch from" if images else "empty manifest")
    out = np.empty((batch, 1, patch, patch), dtype=np.float64)
    picks = stream.integers(0, len(usable), batch)
    for b, k in enumerate(picks):
        img = usable[k]
        r = stream.integers(0, img.shape[0] - patch + 1)
        c = stream.integers(0, img.shape[1] - patch + 1)
        out[b, 0] = img[r:r + patch, c:c + patch]
    return out


def train(images: Sequence[np.ndarray], cfg: TrainConfig, state: TrainState | None = None,
          log_file: TextIO | None = None, callback: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run ``cfg.iterations`` steps on z-domain images.

    Every ``cfg.log_every`` steps a line ``step loss sigma_t_mean delta_mean``
    (averages over the steps since the previous line) goes to ``log_file``.
    """
    if not len(images):
        raise ParameterError("empty manifest")
    if state is None:
        state = init_state(cfg.arch, cfg.seed)
    root = RandomStream(cfg.seed, 1)
    acc = []
    for i in range(cfg.iterations):
        step_stream = root.derive(state.step)
        batch = assemble_batch(images, cfg.patch, cfg.batch, step_stream.derive(0))
        _, value, sigma_t, d = train_step(state, batch, cfg, step_stream.derive(1))
        acc.append((value, float(sigma_t.mean()), float(d.mean())))
        if len(acc) == cfg.log_every or i == cfg.iterations - 1:
            lv, ls, ld = np.mean(acc, axis=0)
            if log_file is not None:
                log_file.write(f"{state.step} {lv:.9g} {ls:.9g} {ld:.9g}\n")
                log_file.flush()
            log.info("step %d loss %.5g", state.step, lv)
            acc = []
        if callback is not None:
            callback(state)
    return state
