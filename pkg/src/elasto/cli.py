"""Command-line orchestration of the elastography pipeline.

Every subcommand that produces files also writes a ``manifest.json``
recording the resolved configuration, the seed, and library versions, so a
run can be reproduced bit-identically.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, pipeline
from .coarse import coarse_lateral
from .dp import DpConfig
from .modes import learn_modes, truncate_basis
from .raster import load_modes, read_raster, save_modes, write_raster
from .refine import RefineConfig, ncc, refine, snr_cnr, strain, warp
from .select import (
    LabeledInstance,
    TrainConfig,
    eval_classifier,
    label_pair,
    load_model,
    save_model,
    select_best,
    train,
)
from .sim import DeformationSpec, GaussianCosinePsf, Inclusion, PhantomSpec, inject_line_noise, synthesize_pair
from .types import RfFrame, WeightVector

SWEEP_GRIDS = {
    "num-modes": (6, 12, 24),
    "num-lines": (2, 5, 10),
    "compression": (0.01, 0.03, 0.06),
}


def _add_dp_flags(parser):
    parser.add_argument("--alpha-dp", type=float, default=0.2)
    parser.add_argument("--search-range", type=int, default=32)
    parser.add_argument("--num-lines", type=int, default=5)
    parser.add_argument("--lateral-search-range", type=int, default=8)


def _add_refine_flags(parser):
    parser.add_argument("--alpha1", type=float, default=5.0)
    parser.add_argument("--alpha2", type=float, default=1.0)
    parser.add_argument("--beta1", type=float, default=5.0)
    parser.add_argument("--beta2", type=float, default=1.0)
    parser.add_argument("--max-iters", type=int, default=10)
    parser.add_argument("--step-tolerance", type=float, default=0.01)


def _dp_config(args) -> DpConfig:
    return DpConfig(
        alpha_dp=args.alpha_dp,
        search_range=args.search_range,
        num_lines=args.num_lines,
        lateral_search_range=args.lateral_search_range,
    )


def _refine_config(args) -> RefineConfig:
    return RefineConfig(
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        beta1=args.beta1,
        beta2=args.beta2,
        max_iters=args.max_iters,
        step_tolerance=args.step_tolerance,
    )


def _write_manifest(out_dir: Path, command: str, args) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    for key, value in config.items():
        if isinstance(value, Path):
            config[key] = str(value)
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "versions": {
            "elasto": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_frame(path) -> RfFrame:
    return RfFrame(read_raster(path).astype(np.float64), frame_id=str(path))


def _parse_inclusion(text: str) -> Inclusion:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("inclusion must be row,col,radius,stiffness")
    return Inclusion(center=(parts[0], parts[1]), radius=parts[2], relative_stiffness=parts[3])


def _parse_window(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("window must be r0,r1,c0,c1")
    return tuple(parts)


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = PhantomSpec(
        dims=(args.rows, args.cols),
        scatterer_density=args.density,
        psf=GaussianCosinePsf(),
        inclusions=tuple(args.inclusion or ()),
    )
    deform = DeformationSpec(kind=args.kind, magnitude=args.magnitude, rng_seed=args.seed)
    frame_1, frame_2, oracle = synthesize_pair(spec, deform)
    if args.noise_fraction > 0:
        frame_2 = inject_line_noise(frame_2, args.noise_fraction, args.noise_sigma2, args.seed + 1)
    write_raster(out / "i1.raster", frame_1.samples)
    write_raster(out / "i2.raster", frame_2.samples)
    write_raster(out / "oracle_axial.raster", oracle.axial)
    write_raster(out / "oracle_lateral.raster", oracle.lateral_or_zeros())
    _write_manifest(out, "simulate", args)
    return 0


def _cmd_learn_modes(args) -> int:
    fields_dir = Path(args.fields)
    paths = sorted(fields_dir.glob("*.raster"))
    if not paths:
        raise FileNotFoundError(f"no .raster fields in {fields_dir}")
    fields = [read_raster(p).astype(np.float64) for p in paths]
    basis = learn_modes(fields, args.num_modes)
    out = Path(args.out)
    save_modes(basis, out)
    _write_manifest(out, "learn-modes", args)
    print(
        f"learned {basis.n_modes} modes from {len(fields)} fields, "
        f"explained variance ratio {basis.explained_variance_ratio:.4f}"
    )
    return 0


def _estimate_outputs(args, frame_1, frame_2):
    dp_cfg = _dp_config(args)
    if args.stage == "dp":
        field = pipeline.full_dp_estimate(frame_1, frame_2, dp_cfg)
        return field, None
    basis = load_modes(args.modes)
    if args.num_modes < basis.n_modes:
        basis = truncate_basis(basis, args.num_modes)
    if args.stage == "coarse":
        est = pipeline.coarse_estimate(frame_1, frame_2, basis, dp_cfg)
        return est.field, est.weights
    refined, weights = pipeline.refined_estimate(frame_1, frame_2, basis, dp_cfg, _refine_config(args))
    return refined, weights


def _cmd_estimate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame_1 = _load_frame(args.i1)
    frame_2 = _load_frame(args.i2)
    if args.stage != "dp" and args.modes is None:
        raise ValueError(f"--modes is required for stage {args.stage}")
    field, weights = _estimate_outputs(args, frame_1, frame_2)
    write_raster(out / "axial.raster", field.axial)
    write_raster(out / "lateral.raster", field.lateral_or_zeros())
    if weights is not None:
        with open(out / "weights.json", "w") as fh:
            json.dump(
                {"w": [float(v) for v in weights.w], "residual_norm": weights.residual_norm},
                fh,
                indent=2,
            )
    if args.stage == "strain":
        image = strain(field, args.strain_window)
        write_raster(out / "strain.raster", image.strain)
    _write_manifest(out, "estimate", args)
    return 0


def _cmd_label(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame_1 = _load_frame(args.i1)
    frame_2 = _load_frame(args.i2)
    basis = load_modes(args.modes)
    instance = label_pair(frame_1, frame_2, basis, _dp_config(args), _refine_config(args))
    payload = {
        "ncc": None if not instance.valid else instance.ncc_true,
        "suitable": instance.suitable,
        "valid": instance.valid,
        "w": [float(v) for v in instance.w.w],
        "residual_norm": instance.w.residual_norm,
    }
    with open(out / "label.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    print(json.dumps(payload))
    _write_manifest(out, "label", args)
    return 0


def _cmd_train_classifier(args) -> int:
    instances = []
    with open(args.labels) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if not rec.get("valid", True):
                continue
            instances.append(
                LabeledInstance(
                    w=WeightVector(
                        w=np.asarray(rec["w"], dtype=np.float64),
                        residual_norm=float(rec.get("residual_norm", 0.0)),
                    ),
                    ncc_true=float(rec["ncc"]),
                    suitable=float(rec["ncc"]) > args.ncc_threshold,
                )
            )
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed)
    model = train(instances, cfg)
    out = Path(args.out)
    save_model(model, out)
    metrics = eval_classifier(model, instances, threshold=args.ncc_threshold)
    print(
        f"trained on {len(instances)} instances: "
        f"val_loss={model.metadata['val_loss'][-1]:.5f} "
        f"train accuracy={metrics.accuracy:.3f} f1={metrics.f1:.3f}"
    )
    _write_manifest(out, "train-classifier", args)
    return 0


def _cmd_select_frames(args) -> int:
    frames_dir = Path(args.frames)
    paths = sorted(frames_dir.glob("*.raster"))
    if len(paths) < 2:
        raise FileNotFoundError(f"need at least two frames in {frames_dir}")
    frames = [_load_frame(p) for p in paths]
    basis = load_modes(args.modes)
    model = load_model(args.model)
    partner = select_best(model, basis, frames, args.anchor, _dp_config(args), window=args.window)
    result = {"anchor": args.anchor, "partner": partner, "frames": [str(p) for p in paths]}
    print(json.dumps(result))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "selection.json", "w") as fh:
            json.dump(result, fh, indent=2)
        _write_manifest(out, "select-frames", args)
    return 0


def _cmd_evaluate(args) -> int:
    image = read_raster(args.strain).astype(np.float64)
    result = snr_cnr(image, args.target, args.background)
    print(json.dumps({"snr": result.snr, "cnr": result.cnr, "saturated": result.saturated}))
    return 0


def _cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    basis = load_modes(args.modes)
    grid = SWEEP_GRIDS[args.param]
    inclusions = tuple(args.inclusion or ())
    if not inclusions:
        inclusions = (
            Inclusion(
                center=(args.rows / 2, args.cols / 2),
                radius=min(args.rows, args.cols) / 6,
                relative_stiffness=3.0,
            ),
        )
    spec = PhantomSpec(dims=(args.rows, args.cols), scatterer_density=args.density, inclusions=inclusions)

    def run_setting(tag, n_modes, num_lines, magnitude):
        deform = DeformationSpec(kind="axial_compression", magnitude=magnitude, rng_seed=args.seed)
        frame_1, frame_2, _ = synthesize_pair(spec, deform)
        used = truncate_basis(basis, n_modes) if n_modes < basis.n_modes else basis
        dp_cfg = DpConfig(
            alpha_dp=args.alpha_dp,
            search_range=args.search_range,
            num_lines=num_lines,
            lateral_search_range=args.lateral_search_range,
        )
        refined, _w = pipeline.refined_estimate(frame_1, frame_2, used, dp_cfg, _refine_config(args))
        image = strain(refined, args.strain_window)
        write_raster(out / f"strain_{tag}.raster", image.strain)
        return image.strain

    results = {}
    for value in grid:
        if args.param == "num-modes":
            if value > basis.n_modes:
                raise ValueError(f"basis has {basis.n_modes} modes, sweep needs {value}")
            tag = f"N{value}"
            results[tag] = run_setting(tag, value, args.num_lines, args.magnitude)
        elif args.param == "num-lines":
            tag = f"p{value}"
            results[tag] = run_setting(tag, min(basis.n_modes, args.num_modes), value, args.magnitude)
        else:
            tag = f"eps{value:g}"
            results[tag] = run_setting(tag, min(basis.n_modes, args.num_modes), args.num_lines, value)

    tags = list(results)
    rms = {
        f"{a}_vs_{b}": float(np.sqrt(np.mean((results[a] - results[b]) ** 2)))
        for i, a in enumerate(tags)
        for b in tags[i + 1 :]
    }
    with open(out / "sweep.json", "w") as fh:
        json.dump({"param": args.param, "grid": list(grid), "rms_differences": rms}, fh, indent=2)
    print(json.dumps(rms))
    _write_manifest(out, "sweep", args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elasto", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a phantom frame pair with ground truth")
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--kind", choices=("axial_compression", "in_plane_rotation", "lateral_shift", "out_of_plane"), default="axial_compression")
    p.add_argument("--magnitude", type=float, default=0.02)
    p.add_argument("--density", type=float, default=0.8)
    p.add_argument("--inclusion", type=_parse_inclusion, action="append")
    p.add_argument("--noise-fraction", type=float, default=0.0)
    p.add_argument("--noise-sigma2", type=float, default=0.1225)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("learn-modes", help="learn a displacement mode basis from rasters")
    p.add_argument("--fields", required=True, help="directory of axial displacement rasters")
    p.add_argument("--num-modes", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_learn_modes)

    p = sub.add_parser("estimate", help="estimate displacement/strain for a frame pair")
    p.add_argument("--i1", required=True)
    p.add_argument("--i2", required=True)
    p.add_argument("--modes")
    p.add_argument("--stage", choices=("dp", "coarse", "refined", "strain"), default="strain")
    p.add_argument("--num-modes", type=int, default=12)
    p.add_argument("--strain-window", type=int, default=43)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_dp_flags(p)
    _add_refine_flags(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("label", help="label a frame pair by motion-compensated NCC")
    p.add_argument("--i1", required=True)
    p.add_argument("--i2", required=True)
    p.add_argument("--modes", required=True)
    p.add_argument("--ncc-threshold", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_dp_flags(p)
    _add_refine_flags(p)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train-classifier", help="train the NCC regressor on labelled pairs")
    p.add_argument("--labels", required=True, help="JSONL file with w/residual_norm/ncc per line")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--ncc-threshold", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("select-frames", help="pick the best partner frame in a window")
    p.add_argument("--frames", required=True, help="directory of frame rasters in sequence order")
    p.add_argument("--anchor", type=int, required=True)
    p.add_argument("--modes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_dp_flags(p)
    p.set_defaults(func=_cmd_select_frames)

    p = sub.add_parser("evaluate", help="SNR/CNR of a strain raster over two windows")
    p.add_argument("--strain", required=True)
    p.add_argument("--target", type=_parse_window, required=True, help="r0,r1,c0,c1")
    p.add_argument("--background", type=_parse_window, required=True, help="r0,r1,c0,c1")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep mode count, line count, or compression level")
    p.add_argument("--param", choices=tuple(SWEEP_GRIDS), required=True)
    p.add_argument("--modes", required=True)
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--density", type=float, default=0.8)
    p.add_argument("--inclusion", type=_parse_inclusion, action="append")
    p.add_argument("--magnitude", type=float, default=0.02)
    p.add_argument("--num-modes", type=int, default=12)
    p.add_argument("--strain-window", type=int, default=43)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_dp_flags(p)
    _add_refine_flags(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"elasto: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
