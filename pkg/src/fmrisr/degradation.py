"""Domain-randomized synthesis of low-resolution / high-resolution training pairs.

Two stages act on a normalized high-resolution frame:

* augmentation: random affine + smooth non-linear warp + gamma contrast.  Its
  output is the training *target*.
* degradation: antialias blur, resampling to a random coarser voxel size,
  Gaussian noise on the coarse grid, and trilinear interpolation back onto the
  original grid.  Its output is the network *input*.

Every random quantity lives in a :class:`DegradationRecipe`, which serializes
to JSON so a pair can be replayed exactly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, InvalidArgumentError
from .filters import gaussian_filter
from .volume import VoxelGrid, interp_axis, resample, resample_to, sample_trilinear

FWHM_TO_SIGMA = 0.42466
WARP_GRID = 4


@dataclass(frozen=True)
class Phi1Params:
    """Augmentation parameters (geometry + contrast)."""

    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    translation_vox: tuple[float, float, float] = (0.0, 0.0, 0.0)
    warp_control: np.ndarray = field(default_factory=lambda: np.zeros((WARP_GRID,) * 3 + (3,)))
    gamma: float = 1.0

    def is_identity(self) -> bool:
        return (
            not any(self.rotation_deg)
            and all(s == 1.0 for s in self.scale)
            and not any(self.translation_vox)
            and not np.any(self.warp_control)
            and self.gamma == 1.0
        )

    def to_dict(self) -> dict:
        return {
            "rotation_deg": list(self.rotation_deg),
            "scale": list(self.scale),
            "translation_vox": list(self.translation_vox),
            "warp_control": np.asarray(self.warp_control).tolist(),
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Phi1Params":
        return cls(
            rotation_deg=tuple(float(v) for v in d["rotation_deg"]),
            scale=tuple(float(v) for v in d["scale"]),
            translation_vox=tuple(float(v) for v in d["translation_vox"]),
            warp_control=np.asarray(d["warp_control"], dtype=np.float64),
            gamma=float(d["gamma"]),
        )


@dataclass(frozen=True)
class Phi2Params:
    """Degradation parameters: coarse voxel size and noise level (fraction of [0, 1])."""

    target_voxel_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if len(self.target_voxel_mm) != 3 or min(self.target_voxel_mm) <= 0:
            raise InvalidArgumentError(f"bad target voxel size {self.target_voxel_mm}")
        if self.noise_sigma < 0:
            raise InvalidArgumentError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "target_voxel_mm", tuple(float(v) for v in self.target_voxel_mm))

    def to_dict(self) -> dict:
        return {"target_voxel_mm": list(self.target_voxel_mm), "noise_sigma": self.noise_sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "Phi2Params":
        return cls(tuple(d["target_voxel_mm"]), float(d["noise_sigma"]))


@dataclass(frozen=True)
class DegradationRecipe:
    phi1: Phi1Params
    phi2: Phi2Params
    seed: int

    def to_json(self) -> str:
        return json.dumps({"phi1": self.phi1.to_dict(), "phi2": self.phi2.to_dict(), "seed": self.seed})

    @classmethod
    def from_json(cls, text: str) -> "DegradationRecipe":
        d = json.loads(text)
        return cls(Phi1Params.from_dict(d["phi1"]), Phi2Params.from_dict(d["phi2"]), int(d["seed"]))

    @classmethod
    def identity(cls, voxel_mm=(1.0, 1.0, 1.0)) -> "DegradationRecipe":
        return cls(Phi1Params(), Phi2Params(tuple(voxel_mm), 0.0), 0)


def _check_range(name: str, rng_: tuple[float, float]) -> tuple[float, float]:
    lo, hi = (float(v) for v in rng_)
    if lo > hi:
        raise ConfigError(f"{name}: range lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


@dataclass
class DegradationConfig:
    """Sampling ranges for both stages.  Intervals are ``(lo, hi)`` and may be degenerate."""

    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    scale: tuple[float, float] = (0.9, 1.1)
    translation_vox: tuple[float, float] = (-5.0, 5.0)
    warp_sigma_mm: float = 2.0
    warp_cap_mm: float = 6.0
    gamma: tuple[float, float] = (0.8, 1.25)
    target_voxel_mm: tuple[float, float] = (1.0, 3.5)
    noise_sigma: tuple[float, float] = (0.0, 0.05)

    def validate(self) -> "DegradationConfig":
        for name in ("rotation_deg", "scale", "translation_vox", "gamma", "target_voxel_mm", "noise_sigma"):
            _check_range(name, getattr(self, name))
        if self.warp_sigma_mm < 0 or self.warp_cap_mm < 0:
            raise ConfigError("warp sigma and cap must be >= 0")
        lo, hi = self.scale
        if lo <= 0 or hi >= 2:
            raise ConfigError(f"scale range must lie in (0, 2), got {self.scale}")
        lo, hi = self.gamma
        if lo <= 0.5 or hi >= 2:
            raise ConfigError(f"gamma range must lie in (0.5, 2), got {self.gamma}")
        lo, hi = self.target_voxel_mm
        if lo < 1.0 or hi > 3.5:
            raise ConfigError(f"target voxel range must lie in [1, 3.5] mm, got {self.target_voxel_mm}")
        lo, hi = self.noise_sigma
        if lo < 0 or hi > 0.1:
            raise ConfigError(f"noise sigma range must lie in [0, 0.1], got {self.noise_sigma}")
        return self

    @classmethod
    def identity(cls) -> "DegradationConfig":
        """Ranges that collapse every sampled recipe to the identity."""
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), 0.0, 0.0, (1.0, 1.0), (1.0, 1.0), (0.0, 0.0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DegradationConfig":
        known = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()


def _uniform(rng: np.random.Generator, bounds, size=None):
    lo, hi = bounds
    return rng.uniform(lo, hi, size) if hi > lo else np.full(size, lo) if size else lo


def sample_phi1_params(rng: np.random.Generator, config: DegradationConfig | None = None) -> Phi1Params:
    config = (config or DegradationConfig()).validate()
    rotation = _uniform(rng, config.rotation_deg, 3)
    scale = _uniform(rng, config.scale, 3)
    translation = _uniform(rng, config.translation_vox, 3)
    warp = rng.normal(0.0, 1.0, (WARP_GRID,) * 3 + (3,)) * config.warp_sigma_mm
    warp = np.clip(warp, -config.warp_cap_mm, config.warp_cap_mm)
    gamma = float(_uniform(rng, config.gamma))
    return Phi1Params(
        tuple(float(v) for v in rotation),
        tuple(float(v) for v in scale),
        tuple(float(v) for v in translation),
        warp,
        gamma,
    )


def sample_phi2_params(rng: np.random.Generator, config: DegradationConfig | None = None) -> Phi2Params:
    config = (config or DegradationConfig()).validate()
    target = _uniform(rng, config.target_voxel_mm, 3)
    noise = float(_uniform(rng, config.noise_sigma))
    return Phi2Params(tuple(float(v) for v in target), noise)


def sample_recipe(rng: np.random.Generator, config: DegradationConfig | None = None) -> DegradationRecipe:
    config = (config or DegradationConfig()).validate()
    phi1 = sample_phi1_params(rng, config)
    phi2 = sample_phi2_params(rng, config)
    seed = int(rng.integers(0, 2**63 - 1))
    return DegradationRecipe(phi1, phi2, seed)


def _warp_field(control: np.ndarray, dims) -> np.ndarray:
    """Trilinear upsampling of the control displacements to every voxel, shape dims + (3,)."""
    out = control
    for axis, n in enumerate(dims):
        coords = np.zeros(n) if n == 1 else np.arange(n) * (WARP_GRID - 1) / (n - 1)
        out = interp_axis(out, coords, axis)
    return out


def apply_phi1(grid: VoxelGrid, params: Phi1Params) -> VoxelGrid:
    """Backward-warp through affine and smooth displacement, then apply gamma contrast.

    For output voxel ``p`` the source coordinate is
    ``c + R S (p - c) + t + w(p) / voxel_size`` with ``c`` the grid centre.
    """
    if params.is_identity():
        return grid.with_data(grid.data.copy())
    scale = np.asarray(params.scale, dtype=np.float64)
    lin = Rotation.from_euler("xyz", params.rotation_deg, degrees=True).as_matrix() @ np.diag(scale)
    if abs(np.linalg.det(lin)) < 1e-9 or not np.all(np.isfinite(lin)):
        raise InvalidArgumentError(f"non-invertible affine (scale={params.scale})")
    if not params.gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {params.gamma}")
    dims = grid.dims
    centre = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    idx = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij"), axis=-1)
    src = (idx - centre) @ lin.T + centre + np.asarray(params.translation_vox)
    control = np.asarray(params.warp_control, dtype=np.float64)
    if np.any(control):
        src = src + _warp_field(control, dims) / np.asarray(grid.voxel_size_mm)
    out = sample_trilinear(grid.data.astype(np.float64, copy=False), src)
    if params.gamma != 1.0:
        out = np.maximum(out, 0.0) ** params.gamma
    return grid.with_data(out)


def gaussian_blur3d(grid: VoxelGrid, sigma_vox) -> VoxelGrid:
    """Separable Gaussian blur (radius ceil(3 sigma), reflect padding); sigma 0 passes an axis through."""
    sigma = np.broadcast_to(np.asarray(sigma_vox, dtype=np.float64), (3,))
    if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
        raise InvalidArgumentError(f"blur sigma must be finite and >= 0, got {tuple(sigma)}")
    if not np.any(sigma):
        return grid.with_data(grid.data.copy())
    return grid.with_data(gaussian_filter(grid.data, sigma))


def antialias_sigma(source_mm, target_mm) -> np.ndarray:
    ratio = np.asarray(target_mm, dtype=np.float64) / np.asarray(source_mm, dtype=np.float64)
    return FWHM_TO_SIGMA * np.maximum(ratio - 1.0, 0.0)


def apply_phi2(grid: VoxelGrid, params: Phi2Params, rng: np.random.Generator, clamp: bool = True) -> VoxelGrid:
    """Blur, resample to the coarse grid, add noise there, interpolate back to the input grid."""
    blurred = gaussian_blur3d(grid, antialias_sigma(grid.voxel_size_mm, params.target_voxel_mm))
    coarse = resample(blurred, params.target_voxel_mm)
    if params.noise_sigma > 0:
        coarse = coarse.with_data(coarse.data + rng.normal(0.0, params.noise_sigma, coarse.dims))
    out = resample_to(coarse, grid.dims, grid.affine, grid.voxel_size_mm).data
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return grid.with_data(out)


def make_training_pair(hr: VoxelGrid, recipe: DegradationRecipe) -> tuple[VoxelGrid, VoxelGrid]:
    """Return ``(input, target)``; the target is the augmented frame, the input its degraded copy."""
    target = apply_phi1(hr, recipe.phi1)
    source = apply_phi2(target, recipe.phi2, np.random.default_rng(recipe.seed))
    return source, target
