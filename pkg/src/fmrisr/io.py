"""Volume and series file formats.

Supported on disk:

* NIfTI-1 single file (``.nii``), little-endian, float32 only.  ``dim``,
  ``pixdim`` and the sform rows are read; every other header field is ignored
  on read and zeroed on write.  4D files (``dim[4]`` frames, ``pixdim[4]`` = TR)
  hold a :class:`FrameSeries`.
* Raw ``<name>.f32`` little-endian float32 (x-fastest) plus ``<name>.json``
  sidecar ``{"dims", "voxel_size_mm", "affine"}``.
* Series manifest JSON ``{"tr_seconds", "frames": [paths]}``; relative paths
  resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import FrameSeries, VoxelGrid

HEADER_SIZE = 348
VOX_OFFSET = 352
NIFTI_MAGIC = b"n+1\x00"
DT_FLOAT32 = 16

header_dtype = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert header_dtype.itemsize == HEADER_SIZE


def _nifti_header(shape, voxel_size_mm, affine, tr_seconds=0.0) -> bytes:
    hdr = np.zeros((), dtype=header_dtype)
    hdr["sizeof_hdr"] = HEADER_SIZE
    dim = np.ones(8, dtype=np.int16)
    dim[0] = len(shape)
    dim[1 : 1 + len(shape)] = shape
    hdr["dim"] = dim
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = voxel_size_mm
    if len(shape) == 4:
        pixdim[4] = tr_seconds
    hdr["pixdim"] = pixdim
    hdr["datatype"] = DT_FLOAT32
    hdr["bitpix"] = 32
    hdr["vox_offset"] = VOX_OFFSET
    hdr["sform_code"] = 2
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["magic"] = NIFTI_MAGIC
    return hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE)


def _parse_nifti(raw: bytes, path) -> tuple[np.ndarray, tuple, np.ndarray, float]:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: header truncated ({len(raw)} of {HEADER_SIZE} bytes)")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype)[0]
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        swapped = int(np.frombuffer(raw[:4], dtype=">i4")[0])
        if swapped == HEADER_SIZE:
            raise FormatError(f"{path}: sizeof_hdr indicates big-endian data, only little-endian is supported")
        raise FormatError(f"{path}: sizeof_hdr is {int(hdr['sizeof_hdr'])}, expected {HEADER_SIZE}")
    if bytes(hdr["magic"]).ljust(4, b"\x00") != NIFTI_MAGIC:
        raise FormatError(f"{path}: magic is {bytes(hdr['magic'])!r}, expected {NIFTI_MAGIC!r}")
    if int(hdr["datatype"]) != DT_FLOAT32 or int(hdr["bitpix"]) != 32:
        raise FormatError(
            f"{path}: unsupported datatype {int(hdr['datatype'])} (bitpix {int(hdr['bitpix'])}); only float32 (16) is supported"
        )
    dim = [int(d) for d in hdr["dim"]]
    ndim = dim[0]
    if ndim not in (3, 4) or min(dim[1 : 1 + ndim]) < 1:
        raise FormatError(f"{path}: unsupported dim field {dim}")
    shape = tuple(dim[1 : 1 + ndim])
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset {offset} lies inside the header")
    expected = 4 * int(np.prod(shape))
    actual = max(len(raw) - offset, 0)
    if actual < expected:
        raise FormatError(f"{path}: payload truncated, expected {expected} bytes but found {actual}")
    data = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(np.float32)
    pixdim = [float(v) for v in hdr["pixdim"]]
    voxel = tuple(abs(v) for v in pixdim[1:4])
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0] = hdr["srow_x"]
        affine[1] = hdr["srow_y"]
        affine[2] = hdr["srow_z"]
    else:
        affine = np.diag([*voxel, 1.0])
    tr = pixdim[4] if ndim == 4 else 0.0
    return data, voxel, affine, tr


def _raw_paths(path: Path) -> tuple[Path, Path]:
    base = path.with_suffix("")
    return base.with_suffix(".f32"), base.with_suffix(".json")


def write_volume(grid: VoxelGrid, path) -> None:
    path = Path(path)
    data = np.asarray(grid.data, dtype="<f4")
    if path.suffix in (".f32", ".json"):
        bin_path, meta_path = _raw_paths(path)
        bin_path.write_bytes(data.tobytes(order="F"))
        meta = {
            "dims": list(grid.dims),
            "voxel_size_mm": list(grid.voxel_size_mm),
            "affine": np.asarray(grid.affine).tolist(),
        }
        meta_path.write_text(json.dumps(meta, indent=2))
        return
    if path.suffix != ".nii":
        raise FormatError(f"{path}: unknown volume extension {path.suffix!r} (use .nii or .f32)")
    header = _nifti_header(grid.dims, grid.voxel_size_mm, grid.affine)
    path.write_bytes(header + data.tobytes(order="F"))


def read_volume(path) -> VoxelGrid:
    path = Path(path)
    if path.suffix in (".f32", ".json"):
        bin_path, meta_path = _raw_paths(path)
        try:
            meta = json.loads(meta_path.read_text())
            dims = tuple(int(n) for n in meta["dims"])
            voxel = tuple(float(v) for v in meta["voxel_size_mm"])
            affine = np.asarray(meta.get("affine", np.diag([*voxel, 1.0])), dtype=np.float64)
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{meta_path}: malformed sidecar ({exc})") from exc
        raw = bin_path.read_bytes()
        expected = 4 * int(np.prod(dims))
        if len(raw) != expected:
            raise FormatError(f"{bin_path}: payload has {len(raw)} bytes, expected {expected}")
        data = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F").astype(np.float32)
        return VoxelGrid(data, voxel, affine)
    data, voxel, affine, _ = _parse_nifti(path.read_bytes(), path)
    if data.ndim != 3:
        raise FormatError(f"{path}: expected a 3D volume, found {data.ndim}D (use read_series)")
    return VoxelGrid(data, voxel, affine)


def write_series(series: FrameSeries, path) -> None:
    """Write a 4D NIfTI file, or a manifest plus per-frame volumes for ``.json``."""
    path = Path(path)
    if path.suffix == ".json":
        frame_dir = path.parent
        names = []
        for t, frame in enumerate(series):
            name = f"frame_{t:04d}.nii"
            write_volume(frame, frame_dir / name)
            names.append(name)
        write_manifest(path, names, series.tr_seconds)
        return
    ref = series.grid
    data = np.asarray(series.stack(), dtype="<f4")
    header = _nifti_header(data.shape, ref.voxel_size_mm, ref.affine, series.tr_seconds)
    path.write_bytes(header + data.tobytes(order="F"))


def write_manifest(path, frame_paths, tr_seconds: float) -> None:
    Path(path).write_text(
        json.dumps({"tr_seconds": float(tr_seconds), "frames": [str(p) for p in frame_paths]}, indent=2)
    )


def read_manifest(path) -> tuple[list[Path], float]:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
        frames = [Path(p) for p in meta["frames"]]
        tr = float(meta["tr_seconds"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    return [p if p.is_absolute() else path.parent / p for p in frames], tr


def read_series(path) -> FrameSeries:
    path = Path(path)
    if path.suffix == ".json":
        frames, tr = read_manifest(path)
        return FrameSeries(tuple(read_volume(p) for p in frames), tr)
    data, voxel, affine, tr = _parse_nifti(path.read_bytes(), path)
    if data.ndim == 3:
        return FrameSeries((VoxelGrid(data, voxel, affine),), tr if tr > 0 else 3.0)
    frames = tuple(VoxelGrid(np.ascontiguousarray(data[..., t]), voxel, affine) for t in range(data.shape[3]))
    return FrameSeries(frames, tr if tr > 0 else 3.0)
