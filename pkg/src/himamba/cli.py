"""Command-line entry point: ``himamba {sr,eval,train,count,verify}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import PRESETS, HiMambaConfig
from .errors import FormatError, InputError


def _config_arg(value):
    if value in PRESETS and not os.path.exists(value):
        return PRESETS[value]
    return HiMambaConfig.load(value)


def _size_arg(value):
    try:
        h, w = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {value!r}") from None
    return h, w


def cmd_sr(args):
    from .imaging import load_png, save_png
    from .inference import upscaler
    from .weightfile import load_weights

    sr = upscaler(load_weights(args.weights), ensemble=args.self_ensemble)
    save_png(sr(load_png(args.input)), args.output)


def cmd_eval(args):
    from .inference import run_eval, write_eval_csv
    from .weightfile import load_weights

    rows = run_eval(load_weights(args.weights), args.hr_dir, args.scale, ensemble=args.self_ensemble)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            write_eval_csv(rows, f)
    write_eval_csv(rows, sys.stdout)


def cmd_train(args):
    from .data import load_hr_dir, make_pairs
    from .train import TrainSchedule, train, write_loss_csv
    from .weightfile import save_weights

    cfg = args.config
    pairs = make_pairs(load_hr_dir(args.data), cfg.scale)
    schedule = TrainSchedule(iters=args.iters, lr=args.lr, batch_size=args.batch_size,
                             patch_size=args.patch_size, seed=args.seed)
    weights, curve = train(cfg, pairs, schedule)
    save_weights(weights, args.out)
    with open(args.loss_csv or args.out + ".loss.csv", "w", newline="") as f:
        write_loss_csv(curve, f)


def cmd_count(args):
    from .network import count_flops, count_params

    h, w = args.input_size
    print(f"params {count_params(args.config)}")
    print(f"flops@{h}x{w} {count_flops(args.config, h, w)}")


def cmd_verify(args):
    from .verify import run_checks

    results = run_checks(args.filter, out=sys.stdout, slow=args.slow)
    if not results:
        print(f"no check matches {args.filter!r}", file=sys.stderr)
        return 2
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="himamba", description="Hierarchical Mamba image super-resolution")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sr", help="super-resolve one PNG")
    s.add_argument("--weights", required=True, help="HIMB weight file")
    s.add_argument("--input", required=True, help="8-bit RGB PNG")
    s.add_argument("--output", required=True, help="where to write the upscaled PNG")
    s.add_argument("--self-ensemble", action="store_true", help="average over the 8 flips/rotations")
    s.set_defaults(func=cmd_sr)

    s = sub.add_parser("eval", help="PSNR/SSIM on a directory of HR images")
    s.add_argument("--weights", required=True, help="HIMB weight file")
    s.add_argument("--hr-dir", required=True, help="directory of HR PNGs; LR inputs are made by bicubic downscaling")
    s.add_argument("--scale", type=int, required=True, help="must match the model's scale")
    s.add_argument("--csv", help="also write the table here (it always goes to stdout)")
    s.add_argument("--self-ensemble", action="store_true", help="average over the 8 flips/rotations")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train", help="train on a directory of HR images")
    s.add_argument("--config", type=_config_arg, required=True, help="JSON file or preset name")
    s.add_argument("--data", required=True, help="directory of HR PNGs")
    s.add_argument("--iters", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="HIMB weight file to write")
    s.add_argument("--lr", type=float, default=2e-4, help="initial learning rate (default 2e-4)")
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--patch-size", type=int, default=64, help="LR patch side")
    s.add_argument("--loss-csv", help="default: <out>.loss.csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("count", help="parameter and FLOP counts")
    s.add_argument("--config", type=_config_arg, required=True, help="JSON file or preset name")
    s.add_argument("--input-size", type=_size_arg, default=(64, 64), metavar="HxW")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("verify", help="run the oracle and invariant checks")
    s.add_argument("--filter", help="only checks whose name contains this string")
    s.add_argument("--slow", action="store_true", help="also run the toy training check (about 10 minutes on one core)")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (InputError, FormatError, OSError) as e:
        print(f"himamba: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
