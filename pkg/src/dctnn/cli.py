"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric contract violation.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import imageio, tensorio
from .kaleidoscope import KtParams, kt_forward, kt_inverse, mosaic
from .masks import ConfigError, SamplingMask, gaussian1d_mask, undersample
from .numeric import DimensionError, GradientContractError
from .phantom import phantom_dataset
from .pipeline import CheckpointError, dctnn_forward, load_checkpoint
from .runconfig import OUTPUT_ENV, RunConfig, load_run_config, validate_paths
from .training import NonFiniteLossError, evaluate, train, write_metrics

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("dctnn")


class NumericContractError(RuntimeError):
    pass


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, ".")) / name


def _save_mask(mask: SamplingMask, out: Path) -> tuple[Path, Path]:
    tpath = tensorio.save(out.with_suffix(".ktns"), mask.columns)
    ppath = imageio.write_png(out.with_suffix(".png"), mask.centered().astype(np.float64))
    return tpath, ppath


def load_mask(path, height: int | None = None) -> SamplingMask:
    cols = tensorio.load(path)
    if cols.ndim == 2:
        height = cols.shape[0] if height is None else height
        if not (cols == cols[:1]).all():
            raise ConfigError(f"{path} is not a column mask (rows differ)")
        cols = cols[0]
    cols = cols.astype(bool)
    n = int(cols.sum())
    return SamplingMask(cols, height or cols.size, cols.size / n if n else float("inf"))


# -- commands -------------------------------------------------------------------

def cmd_mask(args) -> int:
    mask = gaussian1d_mask(args.width, args.r, args.center_frac, args.seed, args.height)
    out = Path(args.out) if args.out else _default_out(f"mask_R{args.r:g}_seed{args.seed}")
    tpath, ppath = _save_mask(mask, out)
    print(f"sampled {mask.n_sampled}/{mask.width} columns (achieved R={mask.achieved_reduction:.3f})")
    print(f"wrote {tpath} and {ppath}")
    return EXIT_OK


def cmd_kt_demo(args) -> int:
    img = imageio.read_image(args.input)
    H, W = img.shape
    params = KtParams(args.nu, H, W)
    stack = kt_forward(img, params)
    back = kt_inverse(stack)
    if not np.array_equal(back, img):
        raise NumericContractError("Kaleidoscope round trip is not bitwise exact")
    tiled = mosaic(stack)
    out = Path(args.out) if args.out else _default_out(f"kt_nu{args.nu}.png")
    imageio.write_png(out, tiled)
    h, w = params.copy_shape
    print(f"{args.nu}x{args.nu} mosaic of {h}x{w} tiles written to {out}; round trip exact")
    return EXIT_OK


def cmd_simulate(args) -> int:
    images = phantom_dataset(args.n, args.height, args.width, args.seed)
    out = Path(args.out) if args.out else _default_out("phantoms")
    imageio.write_dataset(images, out, "phantom")
    print(f"wrote {len(images)} phantoms ({args.height}x{args.width}) to {out}")
    return EXIT_OK


def cmd_kspace(args) -> int:
    img = imageio.read_image(args.image)
    mask = load_mask(args.mask, img.shape[0])
    if mask.shape != img.shape:
        raise ConfigError(f"mask {mask.shape} does not match image {img.shape}")
    out = Path(args.out) if args.out else _default_out("kspace.ktns")
    tensorio.save(out, undersample(img, mask))
    print(f"wrote undersampled k-space ({mask.n_sampled}/{mask.width} columns) to {out}")
    return EXIT_OK


def _load_ckpt(path) -> object:
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        for line in exc.diff:
            print(line, file=sys.stderr)
        raise


def cmd_train(args) -> int:
    overrides = {"train.epochs": args.epochs, "train.lr": args.lr, "train.seed": args.seed,
                 "train.batch_size": args.batch_size, "paths.out": args.out}
    run: RunConfig = load_run_config(args.config, overrides)
    if args.deterministic:
        run.train.threads = 1
    else:
        run.train.threads = args.threads
    validate_paths(run)
    size = (run.model.height, run.model.width)
    if run.dataset == "phantoms":
        images = phantom_dataset(run.train.n_images, *size, seed=run.phantom_seed)
    else:
        images = imageio.read_dataset(run.dataset, size)[: run.train.n_images]
    out = run.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(run.train, images, out)
    except NonFiniteLossError as exc:
        print(f"error: {exc}; diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC
    _save_mask(result.mask, out / "mask")
    imageio.plot_history(result.history, out / "loss_curve.png")
    if len(result.split.test):
        best = load_checkpoint(out / "checkpoint")
        row = evaluate(best, result.split.test, result.mask, threads=run.train.threads)
        row.update(method=",".join(run.model.stage_kinds()), blocks=run.model.n_d)
        write_metrics([row], out / "test_metrics.csv")
        print(f"test PSNR {row['psnr']:.2f} dB (zero-filled {row['zf_psnr']:.2f}), "
              f"SSIM {row['ssim']:.4f} (zero-filled {row['zf_ssim']:.4f})")
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; outputs in {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    model = _load_ckpt(args.checkpoint)
    y = tensorio.load(args.kspace)
    mask = load_mask(args.mask, y.shape[-2]) if args.mask else model.mask
    if mask is None:
        raise ConfigError("no --mask given and the checkpoint carries none")
    y = np.where(mask.array(), y, 0.0)
    recon = np.array(dctnn_forward(model, y, mask).data)
    if not np.all(np.isfinite(recon)):
        raise NumericContractError("reconstruction contains non-finite values")
    out = Path(args.out) if args.out else _default_out("recon")
    tensorio.save(out.with_suffix(".ktns"), recon)
    imageio.write_png(out.with_suffix(".png"), recon)
    print(f"wrote {out.with_suffix('.ktns')} and {out.with_suffix('.png')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_ckpt(args.checkpoint)
    images = imageio.read_dataset(args.dataset, model.geometry)
    mask = load_mask(args.mask, model.geometry[0]) if args.mask else model.mask
    if mask is None:
        raise ConfigError("no --mask given and the checkpoint carries none")
    preds = imageio.read_dataset(args.predictions, model.geometry) if args.predictions else None
    threads = 1 if args.deterministic else args.threads
    row = evaluate(model, images, mask, threads=threads, predictions=preds)
    row.update(method="predictions" if preds is not None else ",".join(model.config.stage_kinds()),
               blocks=model.config.n_d)
    out = Path(args.out) if args.out else _default_out("metrics.csv")
    write_metrics([row], out)
    print(f"R={row['R']:g}: PSNR {row['psnr']:.2f} dB, SSIM {row['ssim']:.4f} "
          f"(zero-filled {row['zf_psnr']:.2f} dB / {row['zf_ssim']:.4f}) over {row['n_images']} images -> {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dctnn", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-image harness work")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded execution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mask", help="draw a 1D Gaussian column mask")
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--height", type=int, default=None)
    s.add_argument("--r", type=float, required=True, help="reduction factor")
    s.add_argument("--center-frac", type=float, default=0.04)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output path stem; .ktns and .png are written")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("kt-demo", help="write the Kaleidoscope mosaic of an image")
    s.add_argument("--input", required=True)
    s.add_argument("--nu", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_kt_demo)

    s = sub.add_parser("simulate", help="write a synthetic phantom dataset")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("kspace", help="undersample an image with a mask")
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_kspace)

    s = sub.add_parser("train", help="train a DcTNN from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="reconstruct one image from undersampled k-space")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--kspace", required=True)
    s.add_argument("--mask")
    s.add_argument("--out", help="output path stem; .ktns and .png are written")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="score a checkpoint on a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--mask")
    s.add_argument("--predictions", help="score these images instead of model output")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (NumericContractError, GradientContractError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DimensionError, CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
