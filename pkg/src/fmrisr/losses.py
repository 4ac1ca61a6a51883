"""Compound L1 + SSIM loss with its analytic gradient, and evaluation metrics.

All computations run in float64.  Inputs may be :class:`VoxelGrid` objects or
plain 3D arrays.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .filters import gaussian_filter, gaussian_filter_adjoint


@dataclass
class LossConfig:
    alpha: float = 0.2
    ssim_window_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    dynamic_range: float = 1.0

    def validate(self) -> "LossConfig":
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.ssim_window_sigma <= 0 or self.dynamic_range <= 0:
            raise ConfigError("SSIM window sigma and dynamic range must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}).validate()


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _ssim_terms(a: np.ndarray, b: np.ndarray, cfg: LossConfig):
    sig = (cfg.ssim_window_sigma,) * a.ndim
    axes = tuple(range(a.ndim))
    blur = lambda v: gaussian_filter(v, sig, axes)  # noqa: E731
    c1 = (cfg.ssim_k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.dynamic_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num1 = 2 * mu_a * mu_b + c1
    num2 = 2 * cov + c2
    den1 = mu_a**2 + mu_b**2 + c1
    den2 = var_a + var_b + c2
    smap = num1 * num2 / (den1 * den2)
    return smap, (mu_a, mu_b, num1, num2, den1, den2)


def ssim3d(a, b, cfg: LossConfig | None = None) -> float:
    """Mean local SSIM under a Gaussian window (sigma 1.5 voxels, radius 5)."""
    a, b = _pair(a, b)
    smap, _ = _ssim_terms(a, b, cfg or LossConfig())
    return float(smap.mean())


def ssim3d_grad(a, b, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """SSIM and its gradient with respect to ``a``.

    The local map depends on ``a`` through the windowed moments
    ``m = G a``, ``q = G a^2`` and ``p = G(a b)``; the partials of the map with
    respect to those are pulled back through the (self-adjoint up to padding)
    window operator ``G``.
    """
    cfg = cfg or LossConfig()
    a, b = _pair(a, b)
    smap, (mu_a, mu_b, num1, num2, den1, den2) = _ssim_terms(a, b, cfg)
    if np.array_equal(a, b):
        # stationary point; the general formula leaves rounding residue here
        return float(smap.mean()), np.zeros_like(a)
    den = den1 * den2
    d_mu = (2 * mu_b * num2 - 2 * mu_b * num1) / den + smap * (2 * mu_a / den2 - 2 * mu_a / den1)
    d_q = -smap / den2
    d_p = 2 * num1 / den
    sig = (cfg.ssim_window_sigma,) * a.ndim
    axes = tuple(range(a.ndim))
    back = lambda g: gaussian_filter_adjoint(g, sig, axes)  # noqa: E731
    n = a.size
    grad = (back(d_mu) + 2 * a * back(d_q) + b * back(d_p)) / n
    return float(smap.mean()), grad


def compound_terms(pred, target, cfg: LossConfig | None = None):
    """``(loss, l1, ssim, grad)`` for ``mean|pred - target| + alpha (1 - SSIM(pred, target))``."""
    cfg = (cfg or LossConfig()).validate()
    p, t = _pair(pred, target)
    diff = p - t
    l1 = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if cfg.alpha > 0:
        ssim, ssim_grad = ssim3d_grad(p, t, cfg)
        grad = grad - cfg.alpha * ssim_grad
    else:
        ssim = ssim3d(p, t, cfg)
    loss = l1 + cfg.alpha * (1.0 - ssim)
    return loss, l1, ssim, grad


def compound_loss(pred, target, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    loss, _, _, grad = compound_terms(pred, target, cfg)
    return loss, grad


def psnr(pred, target, L: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    p, t = _pair(pred, target)
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(L * L / mse)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise DegenerateInputError(f"need at least 3 samples, got {x.size}")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("correlation undefined for a constant sequence")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))
