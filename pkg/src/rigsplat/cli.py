"""Command-line entry points: train / render / reenact / eval / gradcheck /
synth, plus --print-config for the full default table."""

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import TrainConfig, format_config, load_config
from .dataset import load_dataset, load_params_file, save_dataset
from .imgio import save_float_image, save_png
from .rasterizer import RasterSettings
from .toydata import (
    make_gt_gaussians,
    make_param_sequence,
    make_ring_cameras,
    make_toy_dataset,
    make_toy_rig,
    spatial_sine_warp,
)
from .trainer import evaluate, model_from_checkpoint, raster_settings, \
    render_frames, train


def _cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(format_config(cfg) + "\n")
    print(format_config(cfg))
    _, history = train(cfg, dataset, out_dir=args.out,
                       progress=args.progress)
    print(f"final loss {history['loss'][-1]:.6f}  "
          f"gaussians {history['n_gaussians'][-1]}")
    print(f"checkpoint written to {os.path.join(args.out, 'checkpoint.ckpt')}")
    return 0


def _load_model(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    model, cfg = model_from_checkpoint(ckpt)
    return model, cfg


def _write_renders(images, out, float_dump=False):
    os.makedirs(out, exist_ok=True)
    for i, img in enumerate(images):
        save_png(os.path.join(out, f"{i:06d}.png"), img)
        if float_dump:
            save_float_image(os.path.join(out, f"{i:06d}.f64"), img)


def _cmd_render(args):
    model, cfg = _load_model(args.ckpt)
    records = load_params_file(args.params)
    camera = None
    if args.camera:
        import json

        from .dataset import camera_from_dict

        with open(args.camera) as fh:
            camera = camera_from_dict(json.load(fh))
    pairs = []
    for params, cam in records:
        cam = cam or camera
        if cam is None:
            print("error: params record has no camera and no --camera given",
                  file=sys.stderr)
            return 2
        pairs.append((params, cam))
    background = np.zeros(3)
    images = render_frames(model, pairs, background,
                           settings=raster_settings(cfg))
    _write_renders(images, args.out, float_dump=args.float_dump)
    print(f"wrote {len(images)} frames to {args.out}")
    return 0


def _cmd_reenact(args):
    model, cfg = _load_model(args.ckpt)
    driving = load_dataset(args.driving)
    pairs = [(f.params, f.camera) for f in driving.frames]
    images = render_frames(model, pairs, driving.background,
                           settings=raster_settings(cfg))
    _write_renders(images, args.out, float_dump=args.float_dump)
    print(f"reenacted {len(images)} driving frames into {args.out}")
    return 0


def _cmd_eval(args):
    model, cfg = _load_model(args.ckpt)
    dataset = load_dataset(args.data)
    result = evaluate(model, dataset, settings=raster_settings(cfg))
    print(f"psnr {result['psnr']:.4f}")
    print(f"ssim {result['ssim']:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("frame,psnr,ssim\n")
            for i, (p, s) in enumerate(result["per_frame"]):
                fh.write(f"{i},{p!r},{s!r}\n")
    return 0


def _cmd_gradcheck(args):
    from . import gradcheck as gc

    tol = args.tolerance
    failures = 0
    if args.module == "full":
        report = gc.full_pipeline_gradcheck()
    else:
        report = gc.module_gradcheck(args.module)
    for name in sorted(report):
        ok = report[name] <= tol
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:12s} "
              f"max rel err {report[name]:.3e}")
    return 1 if failures else 0


def _cmd_synth(args):
    rig = make_toy_rig(seed=args.seed, n_blendshapes=4, n_joints=2)
    gt = make_gt_gaussians(rig, n_gaussians=args.gaussians, seed=args.seed + 1)
    cameras = make_ring_cameras(n_cameras=args.cameras, size=args.size)
    train_params = make_param_sequence(rig, n_settings=args.param_settings,
                                       seed=args.seed + 2)
    holdout_params = make_param_sequence(rig, n_settings=args.holdout_settings,
                                         seed=args.seed + 3)
    warp = spatial_sine_warp() if args.warp else None
    settings = RasterSettings()
    for name, seq in (("train", train_params), ("holdout", holdout_params)):
        ds = make_toy_dataset(rig, gt, cameras, seq, settings=settings,
                              warp=warp)
        out = os.path.join(args.out, name)
        save_dataset(out, [(f.image, f.mask, f.params, f.camera)
                           for f in ds.frames], rig, ds.background)
        print(f"wrote {len(ds.frames)} frames to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rigsplat",
        description="Deformable Gaussian splatting on a parametric mesh rig")
    parser.add_argument("--print-config", action="store_true",
                        help="print every config default and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="optimize an avatar against a dataset")
    p.add_argument("--config", help="text config file (key value per line)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--progress", type=int, default=0,
                   help="print a status line every N iterations")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render parameter records from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--params", required=True,
                   help="jsonl of psi/theta/head pose records")
    p.add_argument("--camera", help="JSON camera for records without one")
    p.add_argument("--out", required=True)
    p.add_argument("--float-dump", action="store_true",
                   help="also write raw float64 image dumps")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("reenact",
                       help="drive a checkpoint with another dataset's params")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--driving", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--float-dump", action="store_true")
    p.set_defaults(func=_cmd_reenact)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="optional per-frame CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the analytic gradients")
    p.add_argument("--module", default="full",
                   choices=("full", "rasterizer", "adjuster", "losses",
                            "covariance"))
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic rig + dataset pair")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cameras", type=int, default=20)
    p.add_argument("--param-settings", type=int, default=10)
    p.add_argument("--holdout-settings", type=int, default=10)
    p.add_argument("--gaussians", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--warp", action="store_true",
                   help="add the out-of-rig-span fine deformation")
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(format_config(TrainConfig()))
        return 0
    if not args.command:
        parser.print_help()
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
