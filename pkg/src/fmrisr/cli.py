"""Command-line entry point: ``fmrisr <subcommand> ...``.

Machine-readable output is JSON on stdout; logs go to stderr.  Exit codes:
0 success, 2 usage error, 1 runtime error (single-line JSON on stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import io
from .degradation import DegradationRecipe, Phi2Params, apply_phi2, make_training_pair
from .fmri import TaskDesign, evaluate_pipeline, glm_selectivity_map
from .inference import super_resolve_frame, super_resolve_series
from .losses import psnr, ssim3d
from .network import load_checkpoint, save_checkpoint
from .phantom import generate_selectivity_patterns, generate_structural_phantom, synthesize_task_series
from .training import TrainConfig, fit

log = logging.getLogger("fmrisr")


def _triple(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 1 or 3 comma-separated numbers, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), default=str)


def cmd_phantom(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    args.seed = args.seed or 0
    phantom = generate_structural_phantom(args.seed, (args.dims,) * 3)
    patterns = generate_selectivity_patterns(args.seed + 1, phantom, args.stripe_period)
    io.write_volume(phantom.anatomy, out / "anatomy.nii")
    io.write_volume(phantom.anatomy.with_data(phantom.labels.astype(np.float32)), out / "labels.nii")
    io.write_volume(phantom.anatomy.with_data(patterns.motion), out / "motion_map.nii")
    io.write_volume(phantom.anatomy.with_data(patterns.color), out / "color_map.nii")
    rois_dir = out / "rois"
    rois_dir.mkdir(exist_ok=True)
    for name, mask in patterns.rois.items():
        io.write_volume(phantom.anatomy.with_data(mask.astype(np.float32)), rois_dir / f"roi_{name}.nii")
    design = TaskDesign.alternating(args.frames, args.block, args.tr)
    (out / "design.json").write_text(json.dumps(design.to_dict(), indent=2))
    written = {}
    runs = (("motion", patterns.motion, args.amplitude), ("color", patterns.color, args.amplitude),
            ("rest", patterns.motion, 0.0))
    for k, (name, smap, amp) in enumerate(runs):
        series = synthesize_task_series(phantom, smap, design, amp, args.noise_sigma, seed=args.seed * 10 + 2 + k)
        sub = out / f"{name}_series"
        sub.mkdir(exist_ok=True)
        io.write_series(series, sub / "manifest.json")
        written[name] = str(sub / "manifest.json")
    return {"out": str(out), "series": written, "rois": sorted(patterns.rois)}


def cmd_degrade(args) -> dict:
    grid = io.read_volume(args.input)
    if args.recipe:
        recipe = DegradationRecipe.from_json(Path(args.recipe).read_text())
        result, target = make_training_pair(grid, recipe)
        if args.target_out:
            io.write_volume(target, args.target_out)
    else:
        if args.target_mm is None:
            raise argparse.ArgumentTypeError("--target-mm is required without --recipe")
        params = Phi2Params(args.target_mm, args.noise_sigma)
        result = apply_phi2(grid, params, np.random.default_rng(args.seed or 0), clamp=not args.no_clamp)
    io.write_volume(result, args.out)
    return {"out": args.out}


def cmd_train(args) -> dict:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.deterministic:
        config.deterministic = True
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.steps = args.steps
    if args.bake is not None:
        config.bake = args.bake
    series = io.read_series(args.frames)
    ckpt_dir = Path(args.out).parent / (Path(args.out).stem + "_ckpts") if config.checkpoint_every else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    model, journal = fit(list(series), config, ckpt_dir)
    save_checkpoint(model, args.out)
    journal_path = args.journal or str(Path(args.out).with_suffix(".jsonl"))
    journal.write(journal_path)
    return {"checkpoint": args.out, "journal": journal_path, **journal.final}


def cmd_infer(args) -> dict:
    model = load_checkpoint(args.model)
    src = Path(args.input)
    if src.suffix == ".json" or _is_4d(src):
        series = io.read_series(src)
        result = super_resolve_series(model, series, args.target_mm, args.tile, args.overlap)
        out = Path(args.out)
        if out.suffix == ".nii":
            io.write_series(result, out)
        else:
            out.mkdir(parents=True, exist_ok=True)
            io.write_series(result, out / "manifest.json")
        return {"out": str(out), "frames": len(result)}
    result = super_resolve_frame(model, io.read_volume(src), args.target_mm, args.tile, args.overlap)
    io.write_volume(result, args.out)
    return {"out": args.out, "dims": list(result.dims)}


def _is_4d(path: Path) -> bool:
    if path.suffix != ".nii":
        return False
    with open(path, "rb") as fh:
        head = fh.read(42)
    return len(head) == 42 and int(np.frombuffer(head[40:42], "<i2")[0]) == 4


def _load_rois(directory: Path) -> dict[str, np.ndarray]:
    rois = {p.stem[len("roi_"):]: io.read_volume(p).data > 0.5 for p in sorted(directory.glob("roi_*.nii"))}
    if not rois:
        raise FileNotFoundError(f"no roi_*.nii masks in {directory}")
    return rois


def cmd_eval(args) -> dict:
    model = load_checkpoint(args.model)
    hr = io.read_series(args.hr_series)
    design = TaskDesign.from_json(args.design)
    rois = _load_rois(Path(args.rois))
    color_path = Path(args.color_series) if args.color_series else Path(args.rois).parent / "color_series" / "manifest.json"
    color_map = glm_selectivity_map(io.read_series(color_path), design, rois)
    report = evaluate_pipeline(model, hr, design, args.resolutions, rois, color_map, args.noise_sigma, args.seed or 0,
                               args.tile)
    Path(args.report).write_text(_dump(report))
    summary = {
        f"{r['method']}@{r['resolution_mm']:g}mm": {row["name"]: row["consistency_index"] for row in r["roi"]}
        for r in report["results"]
    }
    return {"report": args.report, "consistency_index": summary}


def cmd_metrics(args) -> dict:
    a, b = io.read_volume(args.a), io.read_volume(args.b)
    return {"psnr_db": psnr(a, b, args.range), "ssim": ssim3d(a, b)}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="cap on internal parallelism")
    common.add_argument("--deterministic", action="store_true", help="force fixed reduction orders")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="fmrisr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("phantom", help="generate a phantom subject with task series")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--block", type=int, default=5)
    p.add_argument("--tr", type=float, default=3.0)
    p.add_argument("--amplitude", type=float, default=0.03)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--stripe-period", type=float, default=4.0)
    p.set_defaults(func=cmd_phantom)

    p = add("degrade", help="apply the resolution degradation to one volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--target-mm", type=_triple)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--recipe", help="replay a full recipe JSON (augmentation + degradation)")
    p.add_argument("--target-out", help="with --recipe, also write the augmented target")
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = add("train", help="train a model on HR frames")
    p.add_argument("--frames", required=True, help="series manifest JSON or 4D NIfTI")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--journal")
    p.add_argument("--steps", type=int)
    p.add_argument("--bake", type=int, help="pre-generate this many pairs instead of streaming")
    p.set_defaults(func=cmd_train)

    p = add("infer", help="super-resolve a volume or series")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--target-mm", type=_triple, default=(1.0, 1.0, 1.0))
    p.add_argument("--tile", type=int)
    p.add_argument("--overlap", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = add("eval", help="consistency-index evaluation on a task series")
    p.add_argument("--model", required=True)
    p.add_argument("--hr-series", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--resolutions", type=_floats, default=[2.0, 3.0])
    p.add_argument("--rois", required=True, help="directory of roi_<name>.nii masks")
    p.add_argument("--color-series", help="HR colour series manifest (default: ../color_series next to --rois)")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--tile", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = add("metrics", help="PSNR / SSIM between two volumes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--range", type=float, default=1.0)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
    try:
        result = args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"fmrisr: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(_dump(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
