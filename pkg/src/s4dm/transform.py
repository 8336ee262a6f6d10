"""Log + Log-Yeo-Johnson Gaussianization of log-Gamma speckle.

Amplitude ``x`` maps to the z-domain as ``z = T(log x) - noise_mean`` where
``T`` is the Yeo-Johnson power transform with the fitted exponent.  The
exponent is chosen so that the transformed log-Gamma noise has the smallest
``skewness**2 + excess_kurtosis**2``; ``noise_mean`` and ``sigma_data`` are
the mean and standard deviation of the transformed noise at the anchor level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DomainError, FitError, FormatError, NumericError, ParameterError, RangeError
from .gridmath import RandomStream
from .kvfile import format_keyvalue, parse_keyvalue
from .metrics import sample_skew_kurt

__all__ = [
    "TransformSpec",
    "MomentObjective",
    "lyj_forward",
    "lyj_inverse",
    "residual_objective",
    "fit_lambda",
    "to_z_domain",
    "from_z_domain",
    "clean_z",
    "MIN_MC_SAMPLES",
]

MIN_MC_SAMPLES = 100_000
# |lambda| (resp. |2 - lambda|) below this uses the log branch
_LAMBDA_EPS = 1e-12


def _finite_array(u, what: str) -> np.ndarray:
    a = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise DomainError(f"non-finite {what}")
    return a


def _ret(out: np.ndarray):
    return float(out) if out.ndim == 0 else out


def lyj_forward(u, lam: float):
    """Yeo-Johnson transform of ``u`` with exponent ``lam``.

    ``((u + 1)**lam - 1) / lam`` for ``u >= 0`` and
    ``-((1 - u)**(2 - lam) - 1) / (2 - lam)`` for ``u < 0``, with the log
    limits at ``lam = 0`` and ``lam = 2``.
    """
    u = _finite_array(u, "input")
    if not math.isfinite(lam):
        raise DomainError("non-finite lambda")
    out = np.empty_like(u)
    pos = u >= 0
    up, un = u[pos], u[~pos]
    if abs(lam) < _LAMBDA_EPS:
        out[pos] = np.log1p(up)
    else:
        out[pos] = np.expm1(lam * np.log1p(up)) / lam
    mu = 2.0 - lam
    if abs(mu) < _LAMBDA_EPS:
        out[~pos] = -np.log1p(-un)
    else:
        out[~pos] = -np.expm1(mu * np.log1p(-un)) / mu
    return _ret(out)


def lyj_inverse(z, lam: float):
    """Inverse of :func:`lyj_forward`.

    Raises :class:`RangeError` when ``z`` lies outside the image of the
    transform: ``lam * z + 1 <= 0`` on the ``z >= 0`` branch (possible only
    for ``lam < 0``) or ``1 - (2 - lam) * z <= 0`` on the ``z < 0`` branch
    (possible only for ``lam > 2``).
    """
    z = _finite_array(z, "input")
    if not math.isfinite(lam):
        raise DomainError("non-finite lambda")
    out = np.empty_like(z)
    pos = z >= 0
    zp, zn = z[pos], z[~pos]
    if abs(lam) < _LAMBDA_EPS:
        out[pos] = np.expm1(zp)
    else:
        base = lam * zp + 1.0
        if np.any(base <= 0):
            raise RangeError(f"z >= 0 branch needs lambda*z + 1 > 0 (lambda={lam}, max z={zp.max()})")
        with np.errstate(over="ignore"):
            out[pos] = np.expm1(np.log1p(lam * zp) / lam)
    mu = 2.0 - lam
    if abs(mu) < _LAMBDA_EPS:
        out[~pos] = -np.expm1(-zn)
    else:
        base = 1.0 - mu * zn
        if np.any(base <= 0):
            raise RangeError(f"z < 0 branch needs 1 - (2 - lambda)*z > 0 (lambda={lam}, min z={zn.min()})")
        out[~pos] = -np.expm1(np.log1p(-mu * zn) / mu)
    if not np.all(np.isfinite(out)):
        raise RangeError(f"inverse overflows for lambda={lam}")
    return _ret(out)


@dataclass(frozen=True)
class MomentObjective:
    skewness: float
    excess_kurtosis: float

    @property
    def value(self) -> float:
        return self.skewness ** 2 + self.excess_kurtosis ** 2


def _log_speckle(looks: float, stream: RandomStream, n: int) -> np.ndarray:
    if n < MIN_MC_SAMPLES:
        raise ParameterError(f"need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n}")
    if not looks >= 0.5:
        raise ParameterError("looks must be >= 0.5")
    return np.log(stream.gamma(looks, 1.0 / looks, n))


def _objective(log_nu: np.ndarray, lam: float, anchor_mu: float) -> MomentObjective:
    t = lyj_forward(anchor_mu + log_nu, lam)
    skew, kurt = sample_skew_kurt(t)  # centering inside the estimator
    return MomentObjective(skew, kurt)


def residual_objective(lam: float, looks: float, anchor_mu: float, stream: RandomStream,
                       n: int) -> MomentObjective:
    """Skewness and excess kurtosis of ``T(anchor_mu + log nu)`` for ``n`` fresh draws."""
    return _objective(_log_speckle(looks, stream, n), lam, anchor_mu)


@dataclass(frozen=True)
class TransformSpec:
    """Frozen bridge between amplitude and the z-domain."""

    lambda_dagger: float
    noise_mean: float
    sigma_data: float
    looks: float
    mc_samples: int
    anchor_mu: float

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise ParameterError("sigma_data must be positive")
        if not math.isfinite(self.lambda_dagger):
            raise ParameterError("lambda_dagger must be finite")

    def to_text(self) -> str:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return format_keyvalue(values)

    @classmethod
    def from_text(cls, text: str) -> "TransformSpec":
        kv = parse_keyvalue(text)
        try:
            return cls(
                lambda_dagger=float(kv["lambda_dagger"]),
                noise_mean=float(kv["noise_mean"]),
                sigma_data=float(kv["sigma_data"]),
                looks=float(kv["looks"]),
                mc_samples=int(kv["mc_samples"]),
                anchor_mu=float(kv["anchor_mu"]),
            )
        except KeyError as e:
            raise FormatError(f"transform spec is missing key {e.args[0]!r}") from None
        except ValueError as e:
            raise FormatError(f"bad transform spec value: {e}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TransformSpec":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _golden_min(f, a: float, b: float, iters: int) -> tuple[float, float]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def fit_lambda(looks: float, anchor_mu: float, stream: RandomStream, n: int = 1_000_000,
               grid: tuple[float, float, float] = (-2.0, 4.0, 0.05), refine: int = 30,
               return_objective: bool = False):
    """Fit the Yeo-Johnson exponent to log-Gamma speckle at one anchor level.

    One sample of ``n`` speckle draws is reused for every candidate
    exponent, which makes the objective a deterministic function of
    ``lambda``.  The coarse ``grid = (start, stop, step)`` minimum is refined
    by ``refine`` golden-section iterations on the neighbouring grid cells.
    """
    start, stop, step = grid
    if not 0 < step <= 0.1:
        raise ParameterError("grid step must be in (0, 0.1]")
    if stop <= start:
        raise ParameterError("grid stop must exceed start")
    log_nu = _log_speckle(looks, stream, n)

    def value(lam: float) -> float:
        try:
            v = _objective(log_nu, lam, anchor_mu).value
        except (NumericError, DomainError):
            return math.inf
        return v if math.isfinite(v) else math.inf

    lams = start + step * np.arange(int(round((stop - start) / step)) + 1)
    vals = np.array([value(float(l)) for l in lams])
    if not np.any(np.isfinite(vals)):
        raise FitError(f"objective is non-finite on the whole grid [{start}, {stop}]")
    i = int(np.argmin(vals))
    best_lam, best_val = float(lams[i]), float(vals[i])
    if refine > 0:
        lo = float(lams[max(i - 1, 0)])
        hi = float(lams[min(i + 1, len(lams) - 1)])
        lam_r, val_r = _golden_min(value, lo, hi, refine)
        if val_r < best_val:
            best_lam, best_val = lam_r, val_r

    t = lyj_forward(anchor_mu + log_nu, best_lam)
    t_mean = float(t.mean())
    sigma = float(np.sqrt(np.mean((t - t_mean) ** 2)))
    spec = TransformSpec(
        lambda_dagger=best_lam,
        noise_mean=t_mean - lyj_forward(anchor_mu, best_lam),
        sigma_data=sigma,
        looks=float(looks),
        mc_samples=int(n),
        anchor_mu=float(anchor_mu),
    )
    if return_objective:
        return spec, _objective(log_nu, best_lam, anchor_mu)
    return spec


def _positive(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(x > 0):
        raise DomainError("non-positive amplitude")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite amplitude")
    return x


def to_z_domain(x, spec: TransformSpec):
    """``T(log x) - noise_mean``: speckle becomes approximately N(0, sigma_data**2)."""
    return lyj_forward(np.log(_positive(x)), spec.lambda_dagger) - spec.noise_mean


def clean_z(x_clean, spec: TransformSpec):
    """z-domain value of a noise-free amplitude, ``T(log x)``.

    At the anchor level ``to_z_domain`` of speckled data scatters around it
    with zero mean.
    """
    return lyj_forward(np.log(_positive(x_clean)), spec.lambda_dagger)


def from_z_domain(z, spec: TransformSpec):
    """Inverse of :func:`to_z_domain`: ``exp(T^-1(z + noise_mean))``."""
    return np.exp(lyj_inverse(np.asarray(z, dtype=np.float64) + spec.noise_mean, spec.lambda_dagger))
