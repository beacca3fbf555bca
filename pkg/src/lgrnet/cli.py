"""Command-line tools: curves, locality reports, scan and gradient checks,
demo forward, overfit trainer and mask metrics.

Exit codes: 0 success, 1 validation failure (bad arguments, config or
input files), 2 numerical check failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import hilbert
from .config import ConfigError, ModelConfig, MICRO

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
THREADS_ENV = "LGRNET_THREADS"
SCAN_TOL = 1e-10

log = logging.getLogger("lgrnet")


class ValidationError(Exception):
    pass


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got {text!r}") from None
    return w, h


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_config(path: str | None, default: ModelConfig) -> ModelConfig:
    return ModelConfig.load(path) if path else default


# --- subcommands --------------------------------------------------------------

def cmd_curve(args) -> int:
    try:
        curve = hilbert.make_curve(args.kind, args.width, args.height)
    except ValueError as e:
        raise ValidationError(str(e)) from e
    text = hilbert.to_svg(curve) if args.svg else hilbert.to_csv(curve)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_locality(args) -> int:
    sizes = list(args.sizes)
    if args.pow2:
        sizes += [(2**n, 2**n) for n in args.pow2]
    if not sizes:
        raise ValidationError("give --sizes and/or --pow2")
    rows = []
    for w, h in sizes:
        try:
            curve = hilbert.make_curve(args.kind, w, h)
            res = hilbert.dilation_factor(curve, args.method, seed=args.seed)
        except ValueError as e:
            raise ValidationError(str(e)) from e
        row = {"kind": args.kind, "width": w, "height": h, **res.as_dict()}
        if args.kind == "zigzag" and w == h and w & (w - 1) == 0 and w > 1:
            row["formula"] = hilbert.zigzag_df_formula(w.bit_length() - 1)
        rows.append(row)
    _emit(rows, args.out)
    return EXIT_OK


def cmd_scan_bench(args) -> int:
    from .numkit.rng import Rng
    from .s6 import scan_parallel, scan_sequential

    rng = Rng(args.seed)
    rows, ok = [], True
    for S in args.lengths:
        for c in args.channels:
            for n in args.states:
                a = rng.uniform((S, n, c), 0.0, 1.0)
                b = rng.normal((S, n, c))
                t0 = time.perf_counter()
                hs = scan_sequential(a, b)
                t1 = time.perf_counter()
                hp = scan_parallel(a, b)
                t2 = time.perf_counter()
                diff = float(np.max(np.abs(hs - hp))) if S else 0.0
                ok &= diff <= SCAN_TOL
                rows.append({"S": S, "c": c, "c_state": n, "sequential_s": t1 - t0,
                             "parallel_s": t2 - t1, "max_abs_diff": diff})
    _emit({"tolerance": SCAN_TOL, "passed": bool(ok), "rows": rows}, args.out)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_gradcheck(args) -> int:
    from .checks import OP_CASES, run_model_check, run_op_check

    reports = [run_op_check(name, args.seed) for name in OP_CASES]
    if not args.skip_model:
        reports.append(run_model_check(args.seed))
    rows = [{"op": r.name, "max_rel_err": r.max_error, "tol": r.tol, "passed": r.passed}
            for r in reports]
    passed = all(r.passed for r in reports)
    _emit({"passed": passed, "checks": rows}, args.out)
    return EXIT_OK if passed else EXIT_NUMERIC


def _write_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + (mask.astype(np.uint8) * 255).tobytes())


def cmd_demo_forward(args) -> int:
    from .model import LGRNet, moving_ellipse

    cfg = _load_config(args.config, MICRO)
    clip = moving_ellipse(cfg.t_clip, cfg.height, cfg.width, args.seed)
    model = LGRNet(cfg, args.seed)
    t0 = time.perf_counter()
    pred = model.forward(clip.frames)
    elapsed = time.perf_counter() - t0
    fg = pred.foreground_prob()
    q = int(np.argmax(fg))
    h1, w1 = pred.size
    report = {
        "mask_shape": list(pred.masks.shape),
        "class_logits_shape": list(pred.class_logits.shape),
        "confidences": fg.tolist(),
        "selected_query": q,
        "selected_confidence": float(fg[q]),
        "seconds": elapsed,
        "finite": bool(np.isfinite(pred.masks.data).all()),
    }
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mask = (pred.masks.data[q] > 0).reshape(cfg.t_clip, h1, w1)
        for t in range(cfg.t_clip):
            _write_pgm(out / f"mask_{t:03d}.pgm", mask[t])
        (out / "confidences.json").write_text(json.dumps(report, indent=2) + "\n")
    _emit(report, None)
    return EXIT_OK


def cmd_overfit(args) -> int:
    from .model import DivergenceError, LGRNet, moving_ellipse, overfit

    cfg = _load_config(args.config, OVERFIT_CONFIG)
    clip = moving_ellipse(cfg.t_clip, cfg.height, cfg.width, args.seed)
    model = LGRNet(cfg, args.seed)
    try:
        trace = overfit(clip, model, args.steps, args.lr)
    except DivergenceError as e:
        _emit({"diverged": True, "step": e.step, "error": str(e)}, None)
        return EXIT_NUMERIC
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "total", "class", "dice", "bce", "train_dice"])
            writer.writeheader()
            for row in trace:
                writer.writerow(row.as_dict())
    first, last = trace[0], trace[-1]
    _emit({"steps": args.steps, "lr": args.lr, "initial_loss": first.total, "final_loss": last.total,
           "loss_ratio": last.total / first.total, "train_dice": last.train_dice}, None)
    return EXIT_OK


def cmd_eval_metrics(args) -> int:
    from .metrics import metrics
    from .numkit import io

    try:
        pred = io.load(args.pred).data
        gt = io.load(args.gt).data
        result = metrics(pred, gt)
    except (OSError, ValueError) as e:
        raise ValidationError(str(e)) from e
    _emit(result, args.out)
    return EXIT_OK


OVERFIT_CONFIG = ModelConfig(c=16, n_bar=4, n_hat=3, t_clip=3, height=32, width=32, num_scales=3,
                             k=3, d=1, heads=2, layers=1, c_state=4, c_rank=2, gn_groups=4, ffn_mult=2)


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgrnet", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS/OpenMP thread cap (default: ${THREADS_ENV} or library default)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curve", help="emit a flattening curve as CSV or SVG")
    c.add_argument("kind", choices=["hilbert", "zigzag"])
    c.add_argument("width", type=int)
    c.add_argument("height", type=int)
    c.add_argument("--svg", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_curve)

    c = sub.add_parser("locality", help="dilation factor report (JSON)")
    c.add_argument("kind", choices=["hilbert", "zigzag"])
    c.add_argument("--sizes", nargs="*", type=_parse_size, default=[], metavar="WxH")
    c.add_argument("--pow2", type=_int_list, default=None, metavar="N1,N2,...",
                   help="add 2^n x 2^n grids for each n")
    c.add_argument("--method", choices=["auto", "exact", "sampled"], default="auto")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_locality)

    c = sub.add_parser("scan-bench", help="sequential vs parallel scan timing and deviation")
    c.add_argument("--lengths", type=_int_list, default=[16, 256, 4096])
    c.add_argument("--channels", type=_int_list, default=[8, 64])
    c.add_argument("--states", type=_int_list, default=[4, 16])
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_scan_bench)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameterised op")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--skip-model", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("demo-forward", help="forward pass on a synthetic clip")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_demo_forward)

    c = sub.add_parser("overfit", help="plain gradient descent on one synthetic clip")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--steps", type=int, default=300)
    c.add_argument("--lr", type=float, default=1e-2)
    c.add_argument("--out", help="trace CSV path")
    c.set_defaults(func=cmd_overfit)

    c = sub.add_parser("eval-metrics", help="dice / IoU / MAE of two binary mask containers")
    c.add_argument("pred")
    c.add_argument("gt")
    c.add_argument("--out")
    c.set_defaults(func=cmd_eval_metrics)
    return p


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
