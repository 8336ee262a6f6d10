"""Command line: simulate -> fit-transform -> train -> despeckle -> evaluate.

Exit codes: 0 success, 1 usage error, 2 data or domain error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import NumericError, S4DMError
from .fileio import read_f32r, read_manifest, write_f32r, write_pgm
from .gridmath import RandomStream
from .inference import TileScheme, despeckle
from .metrics import enl, format_flag, mse_psnr
from .network import load_checkpoint, save_checkpoint
from .speckle import SpeckleConfig, apply_speckle
from .training import TrainConfig, train
from .transform import MIN_MC_SAMPLES, TransformSpec, fit_lambda, to_z_domain

log = logging.getLogger("s4dm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _DataError(S4DMError):
    pass


def _positive_raster(path) -> np.ndarray:
    img = read_f32r(path)
    if not np.all(img > 0):
        raise _DataError(f"{path}: non-positive amplitude")
    return img


def cmd_simulate(args) -> int:
    clean = _positive_raster(args.clean)
    noisy = apply_speckle(clean, SpeckleConfig(args.looks, args.seed))
    write_f32r(args.out, noisy)
    if args.pgm:
        write_pgm(args.pgm, noisy)
    return EXIT_OK


def _anchor_from_manifest(manifest) -> float:
    images = [_positive_raster(p) for p in read_manifest(manifest)]
    if not images:
        raise _DataError(f"{manifest}: empty manifest")
    return float(np.mean([np.log(img).mean() for img in images]))


def cmd_fit_transform(args) -> int:
    if args.mc_samples < MIN_MC_SAMPLES:
        raise UsageError(f"--mc-samples must be at least {MIN_MC_SAMPLES}")
    if args.anchor_mu is not None:
        anchor = args.anchor_mu
    elif args.data is not None:
        anchor = _anchor_from_manifest(args.data)
    else:
        anchor = 0.0
    spec, obj = fit_lambda(args.looks, anchor, RandomStream(args.seed), n=args.mc_samples,
                           return_objective=True)
    spec.save(args.out)
    print(f"lambda_dagger = {spec.lambda_dagger:.17g}")
    print(f"noise_mean = {spec.noise_mean:.17g}")
    print(f"sigma_data = {spec.sigma_data:.17g}")
    print(f"skewness = {obj.skewness:.6g}")
    print(f"excess_kurtosis = {obj.excess_kurtosis:.6g}")
    print(f"objective = {obj.value:.6g}")
    return EXIT_OK


def _checkpoint_meta(spec: TransformSpec) -> dict[str, float]:
    return {"looks": spec.looks, "lambda_dagger": spec.lambda_dagger,
            "noise_mean": spec.noise_mean, "sigma_data": spec.sigma_data}


def cmd_train(args) -> int:
    spec = TransformSpec.load(args.transform)
    overrides = {"sigma_data": spec.sigma_data}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    cfg = TrainConfig.load(args.config, **overrides) if args.config else TrainConfig(**overrides)
    paths = read_manifest(args.data)
    if not paths:
        raise _DataError(f"{args.data}: empty manifest")
    # read everything before the first step
    images = [to_z_domain(_positive_raster(p), spec) for p in paths]
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            state = train(images, cfg, log_file=fh)
    else:
        state = train(images, cfg)
    save_checkpoint(state.params, cfg.arch, args.out, meta=_checkpoint_meta(spec))
    h = state.history
    k = min(50, len(h))
    print(f"steps = {state.step}")
    print(f"initial_loss = {np.mean(h[:k]):.9g}")
    print(f"final_loss = {np.mean(h[-k:]):.9g}")
    return EXIT_OK


def cmd_despeckle(args) -> int:
    if not Path(args.model).is_file():
        raise _DataError(f"{args.model}: model file not found")
    params, arch, meta = load_checkpoint(args.model, with_meta=True)
    spec = TransformSpec.load(args.transform)
    if "looks" in meta and meta["looks"] != spec.looks:
        raise _DataError(f"model was trained for {meta['looks']} looks, transform spec has {spec.looks}")
    for key, value in _checkpoint_meta(spec).items():
        if key in meta and meta[key] != value:
            log.warning("checkpoint %s = %r differs from transform spec %r", key, meta[key], value)
    x = _positive_raster(args.input)
    scheme = TileScheme.for_arch(arch, args.tile) if args.tile else None
    out = despeckle(x, params, arch, spec, scheme, threads=args.threads)
    write_f32r(args.out, out)
    if args.pgm:
        write_pgm(args.pgm, out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    img = read_f32r(args.input)
    h, w = img.shape
    if args.patch > min(h, w):
        raise UsageError(f"patch size {args.patch} exceeds image size {h}x{w}")
    report = enl(img, args.patch, args.rois)
    for msg in report.warnings:
        log.warning(msg)
    text = report.to_keyvalue() if args.format == "kv" else report.to_text()
    if args.ref:
        ref = read_f32r(args.ref)
        peak = args.peak if args.peak is not None else float(ref.max())
        mse, psnr = mse_psnr(img, ref, peak)
        sep = " = " if args.format == "kv" else " "
        text += f"mse{sep}{format_flag(mse)}\npsnr_db{sep}{format_flag(psnr)}\n"
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands repeat the global flags; SUPPRESS keeps them from resetting a value given earlier
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--threads", type=int, default=1 if default else argparse.SUPPRESS,
                       help="worker and BLAS threads; 1 gives bit-reproducible output (default 1)")
        g.add_argument("-v", "--verbose", action="store_true",
                       default=False if default else argparse.SUPPRESS)
        return g

    common = global_flags(False)
    p = _Parser(prog="s4dm", description="Self-supervised SAR despeckling in a Gaussianized log domain.",
                parents=[global_flags(True)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="apply Gamma speckle to a clean raster")
    s.add_argument("--clean", required=True)
    s.add_argument("--looks", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--pgm", help="also write a 16-bit PGM preview")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-transform", parents=[common], help="fit the Yeo-Johnson exponent")
    s.add_argument("--looks", type=float, required=True)
    s.add_argument("--mc-samples", type=int, default=1_000_000)
    s.add_argument("--anchor-mu", type=float, default=None,
                   help="log-amplitude operating point (default: manifest mean, else 0)")
    s.add_argument("--data", help="manifest used to derive --anchor-mu")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_transform)

    s = sub.add_parser("train", parents=[common], help="self-supervised training")
    s.add_argument("--data", required=True, help="manifest of F32R rasters")
    s.add_argument("--transform", required=True)
    s.add_argument("--config", help="key = value training config")
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="training log path")
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--iterations", type=int, default=None, help="overrides the config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("despeckle", parents=[common], help="despeckle a raster")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--transform", required=True)
    s.add_argument("--tile", type=int, default=0, help="tile core size; 0 processes the whole image")
    s.add_argument("--out", required=True)
    s.add_argument("--pgm", help="also write a 16-bit PGM preview")
    s.set_defaults(func=cmd_despeckle)

    s = sub.add_parser("evaluate", parents=[common], help="ENL report (and PSNR against --ref)")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--patch", type=int, default=32)
    s.add_argument("--rois", type=int, default=4)
    s.add_argument("--ref", help="clean reference raster")
    s.add_argument("--peak", type=float, default=None, help="PSNR peak (default: reference maximum)")
    s.add_argument("--format", choices=("text", "kv"), default="text")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as e:
        print(f"s4dm: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"s4dm: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (S4DMError, OSError) as e:
        print(f"s4dm: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
