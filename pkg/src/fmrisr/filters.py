"""Separable Gaussian filtering with half-sample symmetric (reflect) padding.

The adjoint is provided so closed-form gradients can be pulled back through the
filter (the SSIM loss needs it).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError


@lru_cache(maxsize=64)
def _kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    w /= w.sum()
    w.flags.writeable = False
    return w


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian with radius ``ceil(3 sigma)``, normalized to sum 1."""
    if sigma < 0 or not math.isfinite(sigma):
        raise InvalidArgumentError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    return _kernel(float(sigma))


@lru_cache(maxsize=64)
def _reflect_index(n: int, radius: int) -> np.ndarray:
    # d c b a | a b c d | d c b a, repeated as needed when radius > n
    idx = np.pad(np.arange(n), radius, mode="symmetric")
    idx.flags.writeable = False
    return idx


def correlate_axis(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    n = data.shape[axis]
    radius = len(kernel) // 2
    if radius == 0:
        return data * kernel[0]
    padded = np.moveaxis(np.take(data, _reflect_index(n, radius), axis=axis), axis, 0)
    out = kernel[0] * padded[0:n]
    for k in range(1, len(kernel)):
        out = out + kernel[k] * padded[k : k + n]
    return np.moveaxis(out, 0, axis)


def correlate_axis_adjoint(grad: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    n = grad.shape[axis]
    radius = len(kernel) // 2
    if radius == 0:
        return grad * kernel[0]
    g = np.moveaxis(grad, axis, 0)
    padded = np.zeros((n + 2 * radius,) + g.shape[1:])
    for k in range(len(kernel)):
        padded[k : k + n] += kernel[k] * g
    out = np.zeros_like(g, dtype=np.float64)
    np.add.at(out, _reflect_index(n, radius), padded)
    return np.moveaxis(out, 0, axis)


def gaussian_filter(data: np.ndarray, sigmas, axes=(0, 1, 2)) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64)
    for axis, sigma in zip(axes, sigmas):
        if sigma > 0:
            out = correlate_axis(out, gaussian_kernel1d(sigma), axis)
    return out


def gaussian_filter_adjoint(grad: np.ndarray, sigmas, axes=(0, 1, 2)) -> np.ndarray:
    out = np.asarray(grad, dtype=np.float64)
    for axis, sigma in reversed(list(zip(axes, sigmas))):
        if sigma > 0:
            out = correlate_axis_adjoint(out, gaussian_kernel1d(sigma), axis)
    return out
