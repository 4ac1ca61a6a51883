"""Dense 3D volumes, trilinear interpolation, resampling and intensity scaling.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x.  The flat on-disk order
is x-fastest (NIfTI convention), i.e. ``data.ravel(order="F")``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DegenerateInputError, InvalidArgumentError, ShapeError

Vec3 = tuple[float, float, float]


def _as_vec3(values, name: str) -> Vec3:
    try:
        if np.isscalar(values):
            values = (values,) * 3
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{name} must be 3 numbers, got {values!r}") from exc
    if len(out) != 3:
        raise InvalidArgumentError(f"{name} must have 3 components, got {len(out)}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Immutable scalar field on a regular grid with physical voxel sizes in mm."""

    data: np.ndarray
    voxel_size_mm: Vec3 = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"volume data must be 3D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("volume data contains non-finite values")
        vox = _as_vec3(self.voxel_size_mm, "voxel_size_mm")
        if min(vox) <= 0:
            raise InvalidArgumentError(f"voxel sizes must be positive, got {vox}")
        if self.affine is None:
            affine = np.diag([*vox, 1.0])
        else:
            affine = np.array(self.affine, dtype=np.float64)
            if affine.shape != (4, 4):
                raise ShapeError(f"affine must be 4x4, got {affine.shape}")
            if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
                raise InvalidArgumentError("affine is not invertible")
        view = data.view()
        view.flags.writeable = False
        affine.flags.writeable = False
        object.__setattr__(self, "data", view)
        object.__setattr__(self, "voxel_size_mm", vox)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims) * np.asarray(self.voxel_size_mm)

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, flat, voxel_size_mm=(1.0, 1.0, 1.0), affine=None) -> "VoxelGrid":
        dims = tuple(int(n) for n in dims)
        flat = np.asarray(flat)
        if flat.size != int(np.prod(dims)):
            raise ShapeError(f"data length {flat.size} does not match dims {dims}")
        return cls(flat.reshape(dims, order="F"), voxel_size_mm, affine)

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        """Same geometry, new values."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise ShapeError(f"expected shape {self.data.shape}, got {data.shape}")
        return VoxelGrid(data, self.voxel_size_mm, self.affine)

    def same_grid(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.voxel_size_mm, other.voxel_size_mm)
            and np.allclose(self.affine, other.affine)
        )


@dataclass(frozen=True, eq=False)
class FrameSeries:
    """Ordered 3D frames sharing one grid, sampled every ``tr_seconds``."""

    frames: tuple[VoxelGrid, ...]
    tr_seconds: float = 3.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InvalidArgumentError("a frame series needs at least one frame")
        if not self.tr_seconds > 0:
            raise InvalidArgumentError(f"tr_seconds must be positive, got {self.tr_seconds}")
        ref = frames[0]
        for t, frame in enumerate(frames[1:], start=1):
            if not ref.same_grid(frame):
                raise ShapeError(f"frame {t} does not share the grid of frame 0")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "tr_seconds", float(self.tr_seconds))

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, t: int) -> VoxelGrid:
        return self.frames[t]

    @property
    def grid(self) -> VoxelGrid:
        return self.frames[0]

    def stack(self) -> np.ndarray:
        """4D array ``(x, y, z, t)``."""
        return np.stack([f.data for f in self.frames], axis=-1)


@dataclass(frozen=True)
class IntensityScale:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DegenerateInputError(f"intensity window is empty: lo={self.lo}, hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def normalize(self, values, clamp: bool = True) -> np.ndarray:
        out = (np.asarray(values, dtype=np.float64) - self.lo) / self.width
        return np.clip(out, 0.0, 1.0) if clamp else out

    def denormalize(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.width + self.lo


# ---------------------------------------------------------------------------
# interpolation

def _axis_weights(coord: np.ndarray, n: int):
    """Lower/upper neighbour indices and upper weight, with border clamping."""
    c = np.clip(coord, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.intp), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, c - i0


def sample_trilinear(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear samples of ``data`` at continuous index coordinates ``coords[..., 3]``.

    Coordinates outside the voxel-centre hull are clamped to the border.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 3:
        raise ShapeError(f"coordinates must end in an axis of length 3, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise InvalidArgumentError("sampling coordinates must be finite")
    return map_coordinates(
        np.asarray(data, dtype=np.float64), np.moveaxis(coords, -1, 0), order=1, mode="nearest", prefilter=False
    )


def trilinear_sample(grid: VoxelGrid, p: Sequence[float]) -> float:
    """Interpolated value at one continuous grid coordinate (border clamp)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError(f"coordinate must be 3 finite numbers, got {p!r}")
    idx, weights = [], []
    for c, n in zip(p, grid.dims):
        i0, i1, w = _axis_weights(c, n)
        idx.append((int(i0), int(i1)))
        weights.append((1.0 - float(w), float(w)))
    total = 0.0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                total += grid.data[idx[0][a], idx[1][b], idx[2][c]] * weights[0][a] * weights[1][b] * weights[2][c]
    return float(total)


def interp_axis(data: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation along one axis at index coordinates ``coords`` (border clamp)."""
    i0, i1, w = _axis_weights(coords, data.shape[axis])
    shape = [1] * data.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    return np.take(data, i0, axis=axis) * (1.0 - w) + np.take(data, i1, axis=axis) * w


def resample_to(grid: VoxelGrid, dims, affine: np.ndarray, voxel_size_mm=None) -> VoxelGrid:
    """Trilinearly resample ``grid`` onto the grid ``(dims, affine)`` through world space."""
    dims = tuple(int(n) for n in dims)
    if min(dims) < 1:
        raise InvalidArgumentError(f"degenerate output dims {dims}")
    affine = np.asarray(affine, dtype=np.float64)
    if voxel_size_mm is None:
        voxel_size_mm = tuple(np.linalg.norm(affine[:3, :3], axis=0))
    # target index -> source index
    m = np.linalg.solve(grid.affine, affine)
    data = grid.data.astype(np.float64, copy=False)
    lin = m[:3, :3]
    if np.all(np.abs(lin - np.diag(np.diag(lin))) < 1e-12):
        if dims == grid.dims and np.array_equal(m, np.eye(4)):
            out = data.copy()
        else:
            out = data
            for axis in range(3):
                coords = m[axis, axis] * np.arange(dims[axis]) + m[axis, 3]
                out = interp_axis(out, coords, axis)
    else:
        idx = np.stack(np.meshgrid(*(np.arange(n) for n in dims), indexing="ij"), axis=-1)
        coords = idx.astype(np.float64) @ lin.T + m[:3, 3]
        out = sample_trilinear(data, coords)
    return VoxelGrid(out, voxel_size_mm, affine)


def resample(grid: VoxelGrid, target_voxel_size_mm) -> VoxelGrid:
    """Resample to a new voxel size, keeping the physical extent centred on the same box."""
    target = _as_vec3(target_voxel_size_mm, "target_voxel_size_mm")
    if min(target) <= 0:
        raise InvalidArgumentError(f"target voxel sizes must be positive, got {target}")
    src = grid.voxel_size_mm
    dims, scale, offset = [], [], []
    for n, d_src, d_tgt in zip(grid.dims, src, target):
        n_out = max(1, math.floor(n * d_src / d_tgt + 0.5))
        s = d_tgt / d_src
        dims.append(n_out)
        scale.append(s)
        offset.append((n - 1) / 2.0 - s * (n_out - 1) / 2.0)
    index_map = np.eye(4)
    index_map[:3, :3] = np.diag(scale)
    index_map[:3, 3] = offset
    if tuple(dims) == grid.dims and target == src:
        return VoxelGrid(grid.data.astype(np.float64, copy=True), target, grid.affine)
    return resample_to(grid, dims, grid.affine @ index_map, target)


def normalize_intensity(grid: VoxelGrid, p_lo: float = 0.5, p_hi: float = 99.5):
    """Map the ``[p_lo, p_hi]`` percentile window to [0, 1] and clamp."""
    if not 0 <= p_lo < p_hi <= 100:
        raise InvalidArgumentError(f"bad percentile window ({p_lo}, {p_hi})")
    values = grid.data
    if values.size < 2 or np.all(values == values.flat[0]):
        raise DegenerateInputError("cannot normalize a constant volume")
    lo, hi = np.percentile(values, [p_lo, p_hi])
    if not hi > lo:
        raise DegenerateInputError(
            f"percentile window collapsed (p{p_lo}={lo}, p{p_hi}={hi}); volume is nearly constant"
        )
    scale = IntensityScale(float(lo), float(hi))
    return grid.with_data(scale.normalize(values)), scale
