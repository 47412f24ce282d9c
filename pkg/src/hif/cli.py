"""Command-line surface.

Subcommands: extract-mv, train, eval, sweep, gradcheck. Exit codes:
0 success, 2 usage/config error, 3 numeric failure (non-finite loss or a
failed gradient check). ``--deterministic`` pins every worker knob to one
thread before numpy loads; HIF_THREADS=0 has the same effect.

Heavy imports happen inside the handlers on purpose: thread environment
variables must be set before numpy initializes its backend.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hif", description="Motion-hindsight policy toolkit")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded mode: reproducible bit-for-bit runs")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract-mv", help="block-matching motion extraction from frame files")
    ex.add_argument("frames_dir", help="directory of .pgm/.ppm (or raw) frames, sorted by name")
    ex.add_argument("--out", required=True, help="output tensor path (.hift); sidecar JSON beside it")
    ex.add_argument("--search-range", type=int, default=8)
    ex.add_argument("--method", choices=["exhaustive", "diamond"], default="exhaustive")
    ex.add_argument("--raw-dims", default=None, metavar="HxWxC",
                    help="treat files as raw planar 8-bit frames of these dims")

    tr = sub.add_parser("train", help="behavior-cloning training run")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--h", type=int, default=None)
    tr.add_argument("--lambda", dest="lambda_", type=float, default=None)
    tr.add_argument("--mode", default=None)
    tr.add_argument("--task", default=None)
    tr.add_argument("--steps", type=int, default=None)
    tr.add_argument("--out", default=None, help="output directory override")

    ev = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", default=None)
    ev.add_argument("--trials", type=int, default=100)
    ev.add_argument("--out", default=None, help="report JSON path (default: stdout)")

    sw = sub.add_parser("sweep", help="hindsight/mode/lambda sweeps and joint-training comparison")
    sw.add_argument("--config", required=True)
    sw.add_argument("--kind", choices=["hindsight", "modes", "joint", "lambda"], default="hindsight")
    sw.add_argument("--h", dest="h_list", default=None,
                    help="comma list of hindsight lengths (kind=hindsight)")
    sw.add_argument("--modes", default="expert_conditioned,vlm_injected",
                    help="comma list of modes (kind=modes)")
    sw.add_argument("--lambdas", default="0.1,0.05,0.01,0.001",
                    help="comma list of loss weights (kind=lambda)")
    sw.add_argument("--trials", type=int, default=50)
    sw.add_argument("--train-steps", type=int, default=None,
                    help="per-row training budget override")
    sw.add_argument("--out", required=True, help="report base path (writes .json/.csv/.png)")

    gc = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    gc.add_argument("scope", nargs="?", default="all", choices=["all", "ops", "end_to_end"])
    gc.add_argument("--tol", type=float, default=1e-5)
    return p


def _apply_determinism():
    os.environ["HIF_THREADS"] = "0"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _load_frames(frames_dir: str, raw_dims):
    from .motion import Frame
    from .pnm import read_pnm, read_raw

    root = Path(frames_dir)
    if not root.is_dir():
        raise CliError(f"not a directory: {frames_dir}")
    files = sorted(p for p in root.iterdir() if p.is_file())
    if raw_dims:
        try:
            h, w, c = (int(x) for x in raw_dims.lower().split("x"))
        except ValueError:
            raise CliError(f"bad --raw-dims {raw_dims!r}; expected HxWxC") from None
        images = [read_raw(p, h, w, c) for p in files]
    else:
        files = [p for p in files if p.suffix.lower() in (".pgm", ".ppm")]
        images = [read_pnm(p) for p in files]
    if len(images) < 2:
        raise CliError(f"need at least 2 frames in {frames_dir}, found {len(images)}")
    return [Frame(img) for img in images]


def cmd_extract_mv(args) -> int:
    import numpy as np

    from . import hift
    from .motion import MatchParams, MotionError, estimate_motion_field
    from .pnm import PnmError

    try:
        frames = _load_frames(args.frames_dir, args.raw_dims)
        params = MatchParams(search_range=args.search_range, method=args.method)
        fields = [estimate_motion_field(a, b, params)
                  for a, b in zip(frames[:-1], frames[1:])]
    except (PnmError, MotionError) as e:
        raise CliError(str(e)) from e
    tensor = np.stack([f.vectors for f in fields]).astype(np.float32) / args.search_range
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hift.write_tensor(out, tensor)
    sidecar = {
        "fields": len(fields),
        "grid": list(fields[0].grid_dims),
        "search_range": args.search_range,
        "method": args.method,
        "tie_break": "smallest dx^2+dy^2, then dy, then dx",
        "normalization": f"integer displacement / {args.search_range}",
        "layout": "h x (H//16) x (W//16) x 2, last axis (dx, dy)",
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({len(fields)} fields, grid {fields[0].grid_dims})")
    return EXIT_OK


def _config_from_args(args):
    from .config import ConfigError, RunConfig

    try:
        cfg = RunConfig.from_file(args.config)
        overrides = {}
        for attr in ("seed", "h", "lambda_", "mode", "task", "steps"):
            val = getattr(args, attr, None)
            if val is not None:
                overrides[attr] = val
        if getattr(args, "out", None):
            overrides["out_dir"] = args.out
        if overrides:
            raw = cfg.to_json_dict()
            raw.update({("lambda" if k == "lambda_" else k): v for k, v in overrides.items()})
            cfg = RunConfig.from_json_dict(raw)
        if args.deterministic:
            cfg.deterministic = True
        return cfg
    except ConfigError as e:
        raise CliError(str(e)) from e


def cmd_train(args) -> int:
    from .training import TrainDivergence, train

    cfg = _config_from_args(args)
    try:
        result = train(cfg, quiet=False)
    except TrainDivergence as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import ConfigError
    from .hift import ContainerError
    from .policy import Policy
    from .training import evaluate

    try:
        policy, step = Policy.load(args.checkpoint)
    except (ContainerError, ConfigError, FileNotFoundError, KeyError, ValueError) as e:
        raise CliError(f"cannot load checkpoint: {e}") from e
    cfg = policy.cfg
    if args.task is not None:
        if args.task != cfg.task:
            raise CliError(
                f"checkpoint was trained on task {cfg.task!r}, not {args.task!r}")
    report = evaluate(policy, cfg, trials=args.trials)
    report["checkpoint_step"] = step
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .reports import write_sweep_report
    from .training import (joint_training_comparison, sweep_hindsight,
                           sweep_lambda, sweep_modes)

    cfg = _config_from_args(args)
    out_dir = Path(args.out).parent / "sweep_runs"
    if args.kind == "hindsight":
        values = [int(x) for x in (args.h_list or "1,2,4,8,16").split(",")]
        rows = sweep_hindsight(cfg, values, trials=args.trials,
                               train_steps=args.train_steps, out_dir=out_dir)
    elif args.kind == "modes":
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        rows = sweep_modes(cfg, modes, trials=args.trials,
                           train_steps=args.train_steps, out_dir=out_dir)
    elif args.kind == "lambda":
        values = [float(x) for x in args.lambdas.split(",")]
        rows = sweep_lambda(cfg, values, trials=args.trials,
                            train_steps=args.train_steps, out_dir=out_dir)
    else:
        rows = joint_training_comparison(cfg, out_dir=out_dir)
    paths = write_sweep_report(args.kind, rows, args.out)
    print(json.dumps({"kind": args.kind, "report": paths}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_all

    ok = run_all(args.scope, tol=args.tol)
    if not ok:
        print("gradcheck: FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradcheck: all suites passed")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.deterministic or os.environ.get("HIF_THREADS") == "0":
        _apply_determinism()
    handlers = {
        "extract-mv": cmd_extract_mv,
        "train": cmd_train,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
