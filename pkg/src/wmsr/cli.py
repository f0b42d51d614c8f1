"""``wmsr`` command line.

Failures print one line ``wmsr: error: <kind>: <message>`` on stderr and exit
with 2 (usage), 3 (data) or 4 (numeric). ``WMSR_NUM_THREADS`` caps the BLAS
thread pools.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "WMSR_NUM_THREADS"
HELP_WIDTH = 88


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wmsr", description="Wavelet-assisted state-space super-resolution for SST fields.",
                formatter_class=_formatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="write synthetic fields and a manifest", formatter_class=_formatter)
    g.add_argument("--out", required=True, metavar="DIR", help="output directory")
    g.add_argument("--fields", type=int, default=10, metavar="N", help="number of fields (default 10)")
    g.add_argument("--size", default="96x96", metavar="HxW", help="field size (default 96x96)")
    g.add_argument("--seed", type=int, default=0, metavar="S", help="random seed (default 0)")
    g.add_argument("--beta", type=float, default=3.0, help="spectral slope (default 3.0)")

    t = sub.add_parser("train", help="train a model from a config and a dataset", formatter_class=_formatter)
    t.add_argument("--config", required=True, metavar="FILE", help="key = value config file")
    t.add_argument("--data", required=True, metavar="DIR", help="directory with manifest.txt")
    t.add_argument("--out", required=True, metavar="DIR", help="output directory")
    t.add_argument("--max-steps", type=int, default=None, metavar="N", help="stop after N optimizer steps")
    t.add_argument("--eval-every", type=int, default=1, metavar="E", help="score the test split every E epochs")

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint, or of one grid against another",
                       formatter_class=_formatter)
    e.add_argument("--ckpt", metavar="FILE", help="checkpoint to evaluate on --data")
    e.add_argument("--data", metavar="DIR", help="directory with manifest.txt")
    e.add_argument("--split", choices=("test", "train"), default="test", help="split to score (default test)")
    e.add_argument("--pred", metavar="GRID", help="predicted GridFile (with --ref)")
    e.add_argument("--ref", metavar="GRID", help="reference GridFile (with --pred)")

    s = sub.add_parser("sr", help="super-resolve one GridFile", formatter_class=_formatter)
    s.add_argument("--ckpt", required=True, metavar="FILE", help="checkpoint")
    s.add_argument("--in", dest="inp", required=True, metavar="GRID", help="low-resolution GridFile")
    s.add_argument("--scale", type=int, required=True, metavar="R", help="scale, must match the checkpoint")
    s.add_argument("--out", required=True, metavar="GRID", help="output GridFile")

    f = sub.add_parser("fuse", help="re-parameterize PDC branches into single kernels",
                       formatter_class=_formatter)
    f.add_argument("--ckpt", required=True, metavar="FILE", help="multi-branch checkpoint")
    f.add_argument("--out", required=True, metavar="FILE", help="fused checkpoint")

    pl = sub.add_parser("plot", help="heatmap and |error| PNGs", formatter_class=_formatter)
    pl.add_argument("--in", dest="inp", required=True, metavar="GRID", help="GridFile to draw")
    pl.add_argument("--ref", metavar="GRID", help="reference GridFile for the error map")
    pl.add_argument("--out", required=True, metavar="PNGDIR", help="output directory")

    i = sub.add_parser("inspect", help="parameter count and FLOPs estimate", formatter_class=_formatter)
    i.add_argument("--config", required=True, metavar="FILE", help="key = value config file")
    i.add_argument("--height", type=int, default=48, help="LR height for FLOPs (default 48)")
    i.add_argument("--width", type=int, default=48, help="LR width for FLOPs (default 48)")
    return p


# ----------------------------------------------------------------- commands

def _parse_size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size: expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise UsageError(f"--size: dimensions must be positive, got {text!r}")
    return h, w


def _manifest(data_dir) -> Path:
    path = Path(data_dir) / "manifest.txt"
    if not path.is_file():
        raise DataError(f"no manifest.txt in {data_dir}")
    return path


def _load_ckpt(path):
    from .trainer import Checkpoint

    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def cmd_gen_data(args, out):
    from .data import SynthParams, generate_dataset

    h, w = _parse_size(args.size)
    if args.fields < 1:
        raise UsageError(f"--fields must be >= 1, got {args.fields}")
    manifest = generate_dataset(args.out, args.fields, h, w, args.seed, SynthParams(beta=args.beta))
    out.write(f"wrote {args.fields} fields and {manifest}\n")


def cmd_train(args, out):
    from .data import load_dataset
    from .network import ModelConfig, build
    from .trainer import train

    cfg = ModelConfig.load(args.config)
    train_pairs, test_pairs = load_dataset(_manifest(args.data), cfg.scale, cfg.patch, seed=cfg.seed)
    if not train_pairs:
        raise DataError("training split is empty")
    model = build(cfg)
    res = train(model, train_pairs, test_pairs, cfg, out_dir=args.out, max_steps=args.max_steps,
                eval_every=args.eval_every, progress=lambda line: out.write(line + "\n"))
    out.write(f"trained {res.steps} steps; outputs in {args.out}\n")


def cmd_eval(args, out):
    from .objective import psnr, ssim

    if args.pred or args.ref:
        if not (args.pred and args.ref):
            raise UsageError("eval: --pred and --ref go together")
        a, b = _read(args.pred).data, _read(args.ref).data
        if a.shape != b.shape:
            raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
        out.write("pred,psnr_db,ssim\n")
        out.write(f"{Path(args.pred).name},{psnr(a, b):.4f},{ssim(a, b):.6f}\n")
        return
    if not (args.ckpt and args.data):
        raise UsageError("eval: need --ckpt and --data, or --pred and --ref")
    from .data import load_dataset
    from .trainer import evaluate

    ck = _load_ckpt(args.ckpt)
    model = ck.to_model(np.float64)
    r = ck.config.scale
    train_pairs, test_pairs = load_dataset(_manifest(args.data), r, ck.config.patch, seed=ck.config.seed)
    pairs = test_pairs if args.split == "test" else train_pairs
    if not pairs:
        raise DataError(f"{args.split} split is empty")
    p, s = evaluate(model, pairs, ck.config.batch_size)
    out.write("scale,split,patches,psnr_db,ssim\n")
    out.write(f"x{r},{args.split},{len(pairs)},{p:.4f},{s:.6f}\n")


def _read(path):
    from .data import read_grid

    if not Path(path).is_file():
        raise DataError(f"grid not found: {path}")
    return read_grid(path)


def cmd_sr(args, out):
    from .data import write_grid
    from .network.model import MIN_SIZE

    ck = _load_ckpt(args.ckpt)
    if args.scale != ck.config.scale:
        raise UsageError(f"--scale {args.scale} does not match the checkpoint scale {ck.config.scale}")
    g = _read(args.inp)
    c, h, w = g.data.shape
    if h % 2 or w % 2 or h < MIN_SIZE or w < MIN_SIZE:
        raise DataError(f"input grid must have even sides >= {MIN_SIZE}, got {h}x{w}")
    # inference runs in float64 whatever the stored precision
    model = ck.to_model(np.float64)
    x = g.data.reshape(c, 1, h, w).astype(np.float64)
    y = model(x).data
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("model output is not finite")
    write_grid(args.out, np.clip(y[:, 0], 0.0, 1.0), g.vmin, g.vmax)
    out.write(f"wrote {args.out} ({c}x{h * args.scale}x{w * args.scale})\n")


def cmd_fuse(args, out):
    from .trainer import Checkpoint

    ck = _load_ckpt(args.ckpt)
    model = ck.to_model().fuse()
    Checkpoint.from_model(model, meta=ck.meta).save(args.out)
    out.write(f"wrote fused checkpoint {args.out}\n")


def cmd_plot(args, out):
    from .plot import error_png, heatmap_png

    g = _read(args.inp)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    stem = Path(args.inp).stem
    written = [heatmap_png(g.data[0], dest / f"{stem}_heatmap.png")]
    if args.ref:
        ref = _read(args.ref)
        if ref.data.shape != g.data.shape:
            raise DataError(f"shape mismatch: {g.data.shape} vs reference {ref.data.shape}")
        written.append(error_png(g.data[0], ref.data[0], dest / f"{stem}_error.png"))
    out.write("".join(f"wrote {p}\n" for p in written))


def cmd_inspect(args, out):
    from .network import ModelConfig, build
    from .network.model import (analytic_param_count, estimate_flops, format_count, format_flops,
                                table_reference)

    cfg = ModelConfig.load(args.config)
    runtime = build(cfg).num_parameters()
    analytic = analytic_param_count(cfg)
    lines = [
        f"config: C={cfg.channels} groups={cfg.groups} blocks={cfg.blocks_per_group} scale={cfg.scale}",
        f"params_runtime: {runtime} ({format_count(runtime)})",
        f"params_analytic: {analytic} ({format_count(analytic)})",
        f"params_match: {'yes' if runtime == analytic else 'NO'}",
        f"flops_estimate: {format_flops(estimate_flops(cfg, args.height, args.width))}"
        f" at {args.height}x{args.width}",
    ]
    ref = table_reference(cfg)
    for key, (flops, params) in ref.items():
        lines.append(f"reference_{key}: flops={flops} params={params} (published, not enforced)")
    if not ref:
        lines.append("reference: none for this configuration")
    out.write("\n".join(lines) + "\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sr": cmd_sr,
    "fuse": cmd_fuse,
    "plot": cmd_plot,
    "inspect": cmd_inspect,
}


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    from .data import GridFormatError
    from .network import ConfigError
    from .trainer import CheckpointError

    try:
        parser = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        limiter = _limit_threads()
        try:
            COMMANDS[args.command](args, out)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, ConfigError) as exc:
        return _fail(err, EXIT_USAGE, "usage", exc)
    except (DataError, GridFormatError, CheckpointError, OSError) as exc:
        return _fail(err, EXIT_DATA, "data", exc)
    except (FloatingPointError, ArithmeticError) as exc:
        return _fail(err, EXIT_NUMERIC, "numeric", exc)
    except ValueError as exc:
        return _fail(err, EXIT_DATA, "data", exc)
    return EXIT_OK


def _fail(err, code: int, kind: str, exc: BaseException) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    err.write(f"wmsr: error: {kind}: {message}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
