"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
3 validation error (bad config values, weights that do not fit the config),
4 a verification run (gradcheck) that did not pass.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import complexity
from .data import find_pairs, make_toy_patches
from .gradcheck import run_all
from .io import (
    UnsupportedFormatError,
    WeightFormatError,
    load_png,
    load_run_config,
    load_weights,
    save_png,
    save_weights,
)
from .metrics import ImageU8
from .model import ConfigError, ModelConfig, check_weights, init_weights
from .optim import evaluate_pairs, super_resolve, train_toy
from .viz import draw_boxes, routing_boxes

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_FAILED = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    return load_run_config(path)[0]


def _model(args) -> tuple[ModelConfig, dict]:
    cfg = _config(args.config)
    if getattr(args, "topk", None) is not None:
        cfg = replace(cfg, topk_infer=args.topk)
    store = load_weights(args.weights, requires_grad=False)
    check_weights(cfg, store)
    return cfg, store


def cmd_sr(args) -> int:
    cfg, store = _model(args)
    img = load_png(args.input)
    out = super_resolve(img, cfg, store, "infer")
    save_png(out, args.output)
    print(f"output {out.width}x{out.height} (scale {cfg.scale}), inference top-k {cfg.topk_infer}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args.config)
    defaults = {"C": cfg.embed_dim, "M": cfg.window_size, "k": cfg.topk_infer}
    try:
        grid = complexity.parse_grid_spec(args.grid, defaults)
    except ValueError as exc:
        raise UsageError(f"--grid: {exc}") from None
    rows = complexity.sweep_costs(grid, bytes_per_scalar=args.bytes_per_scalar)
    text = complexity.costs_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    # keep stdout pure CSV when the table goes there
    dest = sys.stdout if args.out else sys.stderr
    cross = complexity.find_crossover(rows)
    if cross is None:
        print("crossover: none in grid (fixed windows never strictly cheaper up to the largest size)", file=dest)
    else:
        print(f"crossover: fixed windows cheaper in total FLOPs from H*W = {cross}", file=dest)
    return 0


def _parse_window(text: str) -> tuple[int, int]:
    try:
        row, col = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--window expects ROW,COL, got {text!r}") from None
    return row, col


def cmd_viz_attn(args) -> int:
    window = _parse_window(args.window)
    cfg, store = _model(args)
    img = load_png(args.input)
    try:
        boxes = routing_boxes(img, cfg, store, window, args.mode)
    except IndexError as exc:
        raise UsageError(str(exc)) from None
    save_png(draw_boxes(img, boxes, args.zoom), args.out)
    keys = ", ".join(f"({b.row},{b.col})" for b in boxes[1:])
    print(f"query window ({window[0]},{window[1]}) routes to {len(boxes) - 1} windows: {keys}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = True
    for rep in run_all(args.seed):
        status = "PASS" if rep.passed else "FAIL"
        stable = "" if rep.routing_stable else " (routing changed under probe)"
        print(f"{status} {rep.name:6s} max rel err {rep.max_error:.3e} (tol {rep.tolerance:g}){stable}")
        ok &= rep.passed
    return 0 if ok else EXIT_FAILED


def _load_pairs(directory) -> list[tuple[ImageU8, ImageU8]]:
    return [(load_png(lo), load_png(hi)) for _, lo, hi in find_pairs(directory)]


def _fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.3f}"


def cmd_train_toy(args) -> int:
    cfg = _config(args.config)
    if args.dir:
        pairs = _load_pairs(args.dir)
        if not pairs:
            raise FileNotFoundError(f"no <stem>_lr.png/<stem>_hr.png pairs in {args.dir}")
    else:
        pairs = make_toy_patches(args.synthetic, args.patch_size, cfg.scale, args.seed)
    before = evaluate_pairs(pairs, cfg.scale, cfg, init_weights(cfg, args.seed))
    store, curve = train_toy(cfg, pairs, args.iters, lr=args.lr, seed=args.seed, augment=args.augment)
    after = evaluate_pairs(pairs, cfg.scale, cfg, store)
    save_weights(store, args.out_weights)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss"])
            w.writerows((i, repr(v)) for i, v in enumerate(curve))
    if curve:
        print(f"loss {curve[0]:.5f} -> {curve[-1]:.5f} over {len(curve)} iterations")
    print(f"PSNR {_fmt_psnr(before['psnr'])} -> {_fmt_psnr(after['psnr'])} dB, "
          f"SSIM {before['ssim']:.4f} -> {after['ssim']:.4f}")
    return 0


def cmd_eval(args) -> int:
    pairs = _load_pairs(args.dir)
    if not pairs:
        raise FileNotFoundError(f"no <stem>_lr.png/<stem>_hr.png pairs in {args.dir}")
    if args.weights:
        cfg, store = _model(args)
        scale = cfg.scale
    else:
        cfg, store, scale = None, None, args.border
    res = evaluate_pairs(pairs, scale, cfg, store)
    print(f"pairs {len(pairs)}  PSNR(Y) {_fmt_psnr(res['psnr'])} dB  SSIM(Y) {res['ssim']:.4f}")
    return 0


def cmd_init(args) -> int:
    cfg = _config(args.config)
    save_weights(init_weights(cfg, args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sscan", description="Fixed-window top-k routed attention for super-resolution.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sr", help="upscale a PNG")
    s.add_argument("--input", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--config", help="JSON run config (defaults when omitted)")
    s.add_argument("--output", required=True)
    s.add_argument("--topk", type=int, help="override the inference top-k")
    s.set_defaults(func=cmd_sr)

    s = sub.add_parser("analyze", help="FLOP / memory cost sweep as CSV")
    s.add_argument("--config")
    s.add_argument("--grid", default=complexity.DEFAULT_GRID,
                   help='e.g. "size=64,128;C=60;M=8;S2=64;k=4" (missing keys from --config)')
    s.add_argument("--out", help="CSV path (stdout when omitted)")
    s.add_argument("--bytes-per-scalar", type=int, default=4)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("viz-attn", help="draw a query window and its routed key windows")
    s.add_argument("--input", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--config")
    s.add_argument("--window", required=True, help="ROW,COL of the query window")
    s.add_argument("--out", required=True)
    s.add_argument("--topk", type=int)
    s.add_argument("--mode", choices=("train", "infer"), default="infer")
    s.add_argument("--zoom", type=int, default=1)
    s.set_defaults(func=cmd_viz_attn)

    s = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train-toy", help="short L1/Adam training run")
    s.add_argument("--dir", help="directory of <stem>_lr.png / <stem>_hr.png pairs")
    s.add_argument("--synthetic", type=int, default=10, help="synthetic patch count when --dir is absent")
    s.add_argument("--patch-size", type=int, default=32, help="LR size of synthetic patches")
    s.add_argument("--config")
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--lr", type=float, default=2e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--augment", action="store_true")
    s.add_argument("--out-weights", required=True)
    s.add_argument("--loss-csv")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("eval", help="Y-channel PSNR/SSIM over LR/HR pairs")
    s.add_argument("--dir", required=True)
    s.add_argument("--weights", help="score model output; otherwise LR is scored directly against HR")
    s.add_argument("--config")
    s.add_argument("--border", type=int, default=0, help="crop border without a model (model runs use the scale)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("init", help="write freshly initialised weights")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnsupportedFormatError, WeightFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
