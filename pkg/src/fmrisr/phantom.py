"""Procedural brain-like phantoms with interdigitated selectivity stripes.

The anatomy is a closed cortical ribbon: a band of fixed radial thickness under
a smooth random radial surface.  Selectivity stripes run around the z axis
through the ribbon centre, constant along depth, so they behave like columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .filters import gaussian_filter
from .volume import FrameSeries, VoxelGrid

BACKGROUND, GRAY, WHITE = 0, 1, 2
TISSUE_MEANS = {BACKGROUND: 0.1, GRAY: 0.6, WHITE: 0.9}
ROI_NAMES = ("V2", "V3", "V3A", "V4")


@dataclass(frozen=True)
class Phantom:
    anatomy: VoxelGrid
    labels: np.ndarray
    centre_vox: tuple[float, float, float]
    outer_radius_mm: float
    thickness_mm: float

    @property
    def ribbon(self) -> np.ndarray:
        return self.labels == GRAY


@dataclass(frozen=True)
class SelectivityPatterns:
    motion: np.ndarray
    color: np.ndarray
    stripes: np.ndarray
    rois: dict[str, np.ndarray]
    n_cycles: int
    period_mm: float


def _grid_coords(dims, voxel_mm):
    axes = [(np.arange(n) - (n - 1) / 2.0) * v for n, v in zip(dims, voxel_mm)]
    return np.meshgrid(*axes, indexing="ij")


def _smooth_sphere_field(rng, directions, n_terms=12, max_freq=5.0):
    """Random smooth function of direction, scaled to max |f| = 1."""
    field = np.zeros(directions.shape[:-1])
    for _ in range(n_terms):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        freq = rng.uniform(1.0, max_freq)
        field += rng.normal() / freq * np.cos(freq * (directions @ v) * math.pi + rng.uniform(0, 2 * math.pi))
    return field / max(np.abs(field).max(), 1e-12)


def generate_structural_phantom(
    seed: int,
    dims=(64, 64, 64),
    voxel_mm: float = 1.0,
    thickness_mm: float = 3.0,
    fold_amplitude: float = 0.1,
    bias_amplitude: float = 0.1,
    texture_sigma: float = 0.02,
) -> Phantom:
    dims = tuple(int(n) for n in np.broadcast_to(dims, (3,)))
    if min(dims) < 32:
        raise InvalidArgumentError(f"phantom dims must be >= 32 per axis, got {dims}")
    rng = np.random.default_rng(seed)
    vox = (float(voxel_mm),) * 3
    x, y, z = _grid_coords(dims, vox)
    r = np.sqrt(x * x + y * y + z * z)
    directions = np.stack([x, y, z], axis=-1) / np.maximum(r, 1e-9)[..., None]
    half_extent = min(n * v for n, v in zip(dims, vox)) / 2.0
    outer = 0.72 * half_extent
    surface = outer * (1.0 + fold_amplitude * _smooth_sphere_field(rng, directions))
    labels = np.full(dims, BACKGROUND, dtype=np.int8)
    labels[r < surface] = GRAY
    labels[r < surface - thickness_mm] = WHITE

    anatomy = np.choose(labels, [TISSUE_MEANS[BACKGROUND], TISSUE_MEANS[GRAY], TISSUE_MEANS[WHITE]]).astype(np.float64)
    bias = gaussian_filter(rng.normal(size=dims), (8.0 / voxel_mm,) * 3)
    bias /= max(np.abs(bias).max(), 1e-12)
    anatomy = anatomy * (1.0 + bias_amplitude * bias) + rng.normal(0.0, texture_sigma, dims)
    anatomy = np.clip(anatomy, 0.0, 1.0)
    centre = tuple((n - 1) / 2.0 for n in dims)
    return Phantom(VoxelGrid(anatomy, vox), labels, centre, outer, float(thickness_mm))


def measure_ribbon_thickness(labels: np.ndarray, voxel_mm: float = 1.0) -> float:
    """Mean distance from outer-boundary gray voxels to the nearest white voxel."""
    from scipy.ndimage import binary_erosion, distance_transform_edt

    gray = labels == GRAY
    outside = labels == BACKGROUND
    near_outside = ~binary_erosion(~outside, iterations=1, border_value=1)
    boundary = gray & near_outside
    dist_to_white = distance_transform_edt(labels != WHITE, sampling=voxel_mm)
    return float(dist_to_white[boundary].mean())


def generate_selectivity_patterns(
    seed: int,
    phantom: Phantom,
    stripe_period_mm: float = 4.0,
    n_rois: int = 4,
) -> SelectivityPatterns:
    """Interdigitated motion / colour maps (opposite half-waves of one stripe field) and ROI boxes."""
    if not 2 <= n_rois <= 4:
        raise InvalidArgumentError("between 2 and 4 ROIs are supported")
    rng = np.random.default_rng(seed)
    labels = phantom.labels
    vox = phantom.anatomy.voxel_size_mm
    x, y, z = _grid_coords(labels.shape, vox)
    ribbon = labels == GRAY
    mid_radius = phantom.outer_radius_mm - phantom.thickness_mm / 2.0
    n_cycles = max(1, int(round(2 * math.pi * mid_radius / stripe_period_mm)))
    phase = rng.uniform(0, 2 * math.pi)
    stripes = np.sin(n_cycles * np.arctan2(y, x) + phase)
    motion = np.where(ribbon, np.maximum(stripes, 0.0), 0.0)
    color = np.where(ribbon, np.maximum(-stripes, 0.0), 0.0)

    rois = {}
    azimuth0 = rng.uniform(0, 2 * math.pi)
    half = np.array([0.3, 0.3, 0.25]) * mid_radius
    for k in range(n_rois):
        az = azimuth0 + 2 * math.pi * k / n_rois
        centre = np.array([mid_radius * math.cos(az), mid_radius * math.sin(az), 0.0])
        box = (np.abs(x - centre[0]) <= half[0]) & (np.abs(y - centre[1]) <= half[1]) & (np.abs(z - centre[2]) <= half[2])
        rois[ROI_NAMES[k]] = box & ribbon
    return SelectivityPatterns(motion, color, stripes, rois, n_cycles, 2 * math.pi * mid_radius / n_cycles)


def measure_stripe_period(patterns: SelectivityPatterns, phantom: Phantom, samples: int = 4096) -> float:
    """Dominant period (mm) along the mid-ribbon equator, from the FFT peak of the stripe field."""
    radius = phantom.outer_radius_mm - phantom.thickness_mm / 2.0
    theta = np.arange(samples) * 2 * math.pi / samples
    vox = np.asarray(phantom.anatomy.voxel_size_mm)
    centre = np.asarray(phantom.centre_vox)
    pts = np.stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(samples)], axis=-1) / vox + centre
    from .volume import sample_trilinear

    values = sample_trilinear(patterns.stripes, pts)
    spectrum = np.abs(np.fft.rfft(values - values.mean()))
    k = int(np.argmax(spectrum))
    return 2 * math.pi * radius / k


def synthesize_task_series(
    phantom: Phantom,
    selectivity: np.ndarray,
    design,
    amplitude: float = 0.03,
    noise_sigma: float = 0.01,
    n_frames: int | None = None,
    seed: int = 0,
) -> FrameSeries:
    """``frame_t = anatomy + amplitude * map * regressor(t) + noise``, clamped to [0, 1]."""
    regressor = design.regressor()
    n_frames = design.n_frames if n_frames is None else int(n_frames)
    if n_frames < design.n_frames:
        raise InvalidArgumentError(f"n_frames {n_frames} shorter than the design ({design.n_frames})")
    if n_frames > len(regressor):
        regressor = np.concatenate([regressor, np.zeros(n_frames - len(regressor))])
    rng = np.random.default_rng(seed)
    base = phantom.anatomy.data
    frames = []
    for t in range(n_frames):
        frame = base + amplitude * selectivity * regressor[t]
        if noise_sigma > 0:
            frame = frame + rng.normal(0.0, noise_sigma, base.shape)
        frames.append(phantom.anatomy.with_data(np.clip(frame, 0.0, 1.0)))
    return FrameSeries(tuple(frames), design.tr_seconds)
