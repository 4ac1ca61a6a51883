"""Voxel-wise GLM selectivity maps and the consistency index."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gamma as gamma_dist

from .degradation import Phi2Params, apply_phi2
from .errors import DegenerateInputError, DesignError, InvalidArgumentError, ShapeError
from .inference import super_resolve_frame
from .losses import pearson, psnr, ssim3d
from .network import SRModel
from .volume import FrameSeries, VoxelGrid

T_SENTINEL = 1e6
HRF_SHAPE = 6.0  # gamma mode (shape - 1) * scale = 5 s
HRF_SCALE = 1.0
HRF_LENGTH_S = 30.0


def gamma_hrf(tr_seconds: float) -> np.ndarray:
    t = np.arange(0.0, HRF_LENGTH_S + 1e-9, tr_seconds)
    h = gamma_dist.pdf(t, HRF_SHAPE, scale=HRF_SCALE)
    return h / h.sum()


@dataclass
class TaskDesign:
    """Block design: ``on_blocks`` are half-open ``[start, stop)`` frame ranges, the rest is off."""

    n_frames: int
    on_blocks: list[tuple[int, int]]
    tr_seconds: float = 3.0
    hrf: bool = True

    def __post_init__(self):
        self.on_blocks = [tuple(int(v) for v in b) for b in self.on_blocks]
        box = self.boxcar()
        if not box.any() or box.all():
            raise DesignError("a design needs at least one on block and one off block")
        if self.tr_seconds <= 0:
            raise DesignError("tr_seconds must be positive")

    @classmethod
    def alternating(cls, n_frames: int, block_frames: int, tr_seconds: float = 3.0, hrf: bool = True) -> "TaskDesign":
        """Off/on blocks of equal length, starting with off."""
        blocks = [(s, min(s + block_frames, n_frames)) for s in range(block_frames, n_frames, 2 * block_frames)]
        return cls(n_frames, blocks, tr_seconds, hrf)

    def boxcar(self) -> np.ndarray:
        box = np.zeros(self.n_frames)
        for start, stop in self.on_blocks:
            if not 0 <= start < stop <= self.n_frames:
                raise DesignError(f"block [{start}, {stop}) outside a {self.n_frames}-frame series")
            box[start:stop] = 1.0
        return box

    def regressor(self) -> np.ndarray:
        box = self.boxcar()
        if not self.hrf:
            return box
        return np.convolve(box, gamma_hrf(self.tr_seconds))[: self.n_frames]

    def design_matrix(self) -> np.ndarray:
        n = self.n_frames
        drift = np.linspace(-1.0, 1.0, n)
        return np.column_stack([np.ones(n), drift, self.regressor()])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDesign":
        return cls(int(d["n_frames"]), [tuple(b) for b in d["on_blocks"]], float(d.get("tr_seconds", 3.0)), bool(d.get("hrf", True)))

    @classmethod
    def from_json(cls, path) -> "TaskDesign":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SelectivityMap:
    tmap: VoxelGrid
    flags: np.ndarray
    roi_masks: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.tmap.data


def glm_selectivity_map(series: FrameSeries, design: TaskDesign, roi_masks=None) -> SelectivityMap:
    """Per-voxel OLS on [intercept, drift, task] and the task t-statistic."""
    n = len(series)
    if n < 8:
        raise DesignError(f"need at least 8 frames, got {n}")
    if n != design.n_frames:
        raise DesignError(f"series has {n} frames but the design has {design.n_frames}")
    X = design.design_matrix()
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignError("design matrix is rank deficient")
    dims = series.grid.dims
    Y = series.stack().reshape(-1, n).T.astype(np.float64)
    xtx_inv = np.linalg.inv(X.T @ X)
    beta = xtx_inv @ (X.T @ Y)
    resid = Y - X @ beta
    dof = n - X.shape[1]
    sigma = np.sqrt(np.sum(resid * resid, axis=0) / dof)
    b_task = beta[-1]
    scale = np.sqrt(np.mean(Y * Y, axis=0))
    degenerate = sigma <= 1e-9 * scale
    t = np.zeros_like(b_task)
    ok = ~degenerate
    t[ok] = b_task[ok] / (sigma[ok] * math.sqrt(xtx_inv[-1, -1]))
    signal = degenerate & (np.abs(b_task) > 1e-9 * scale)
    t[signal] = np.sign(b_task[signal]) * T_SENTINEL
    grid = series.grid
    return SelectivityMap(
        VoxelGrid(t.reshape(dims), grid.voxel_size_mm, grid.affine),
        degenerate.reshape(dims),
        dict(roi_masks or {}),
    )


@dataclass(frozen=True)
class ConsistencyRow:
    name: str
    corr_motion: float
    corr_color: float
    consistency_index: float


def consistency_index(recovered: SelectivityMap, orig_motion: SelectivityMap, orig_color: SelectivityMap,
                      roi: str, mask: np.ndarray | None = None) -> ConsistencyRow:
    """Correlation with the original motion map minus correlation with the colour map, inside ``roi``."""
    if mask is None:
        for m in (recovered, orig_motion, orig_color):
            if roi in m.roi_masks:
                mask = m.roi_masks[roi]
                break
        else:
            raise InvalidArgumentError(f"unknown ROI {roi!r}")
    mask = np.asarray(mask, dtype=bool)
    shapes = {recovered.values.shape, orig_motion.values.shape, orig_color.values.shape, mask.shape}
    if len(shapes) != 1:
        raise ShapeError(f"maps and ROI do not share a grid: {shapes}")
    if mask.sum() < 3:
        raise DegenerateInputError(f"ROI {roi!r} has fewer than 3 voxels")
    rec = recovered.values[mask]
    try:
        cm = pearson(rec, orig_motion.values[mask])
        cc = pearson(rec, orig_color.values[mask])
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"ROI {roi!r}: {exc}") from exc
    return ConsistencyRow(roi, cm, cc, cm - cc)


def _json_float(v: float):
    return "inf" if math.isinf(v) else v


def evaluate_pipeline(model: SRModel, hr_series: FrameSeries, design: TaskDesign, resolutions,
                      rois: dict[str, np.ndarray], orig_color: SelectivityMap, noise_sigma: float = 0.0,
                      seed: int = 0, tile: int | None = None, frame_metrics: bool = True) -> dict:
    """Degrade every HR frame, compare baseline (trilinear) and SR series downstream.

    Returns a JSON-ready report; ``results`` holds one entry per
    (resolution, method) with per-ROI consistency rows and per-frame PSNR/SSIM.
    """
    if any(v < 1.0 - 1e-9 for v in hr_series.grid.voxel_size_mm):
        raise InvalidArgumentError("HR series must have voxels of at least 1 mm")
    orig_motion = glm_selectivity_map(hr_series, design, rois)
    report = {"model_id": model.fingerprint(), "noise_sigma": noise_sigma, "seed": seed, "results": []}
    for res in resolutions:
        res = float(res)
        if not 1.0 <= res <= 3.5:
            raise InvalidArgumentError(f"resolution {res} mm outside [1, 3.5]")
        params = Phi2Params((res, res, res), noise_sigma)
        baseline, sr = [], []
        for t, frame in enumerate(hr_series):
            lr = apply_phi2(frame, params, np.random.default_rng([seed, t]))
            baseline.append(lr)
            sr.append(super_resolve_frame(model, lr, frame.voxel_size_mm, tile=tile))
        for method, frames in (("baseline", baseline), ("sr", sr)):
            series = FrameSeries(tuple(frames), hr_series.tr_seconds)
            smap = glm_selectivity_map(series, design, rois)
            rows = [consistency_index(smap, orig_motion, orig_color, name) for name in rois]
            entry = {
                "resolution_mm": res,
                "method": method,
                "roi": [asdict(r) for r in rows],
            }
            if frame_metrics:
                entry["frames"] = [
                    {"psnr_db": _json_float(psnr(f, h)), "ssim": ssim3d(f, h)} for f, h in zip(frames, hr_series)
                ]
            report["results"].append(entry)
    return report
