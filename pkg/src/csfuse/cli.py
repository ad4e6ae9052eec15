"""Command-line entry point.

Subcommands: ``gen`` (sample and dump scenario frames), ``roc``,
``calibrate``, ``bounds``, ``bench``, and ``ingest``.  Experiment commands
read a JSON config mirroring :class:`csfuse.harness.ExperimentConfig`;
``--seed``, ``--out``, ``--threads`` and ``--fixed-projection`` override the
config in place.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, ingest
from .errors import CsfuseError
from .ingest import FrameSet, frame_and_split, load_series, save_frameset
from .scenarios import sample_frames
from .seeding import spawn_seed


def _add_common(parser: argparse.ArgumentParser, needs_config: bool = True) -> None:
    parser.add_argument("--config", required=needs_config, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="parallel trial workers")
    parser.add_argument(
        "--fixed-projection",
        action="store_true",
        help="draw one projection per run instead of one per trial",
    )


def _load_config(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.from_json(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.fixed_projection:
        updates["fixed_projection"] = True
    return replace(config, **updates) if updates else config


def _out_dir(config: harness.ExperimentConfig) -> Path:
    out = Path(config.out_dir or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    hyp = 1 if args.hypothesis == "h1" else 0
    frames = sample_frames(
        config.scenario, hyp, args.frames, seed=spawn_seed(config.seed, "gen", hyp)
    )
    fs = FrameSet(frames, args.hypothesis, source=f"gen:{config.scenario.kind}")
    path = out / f"{config.scenario.kind}_{args.hypothesis}.csf"
    save_frameset(path, fs)
    print(f"wrote {frames.shape[0]} frames of {frames.shape[1]} to {path}")
    return 0


def _cmd_roc(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    curves = harness.run_roc(config)
    harness.emit_roc_csv(curves, out / "roc.csv")
    harness.emit_roc_svg(curves, out / "roc.svg")
    for c in curves:
        tag = f" c_r={c.c_r:g}" if c.detector.startswith("c:") else ""
        print(f"{c.detector}{tag}: auc={c.auc:.4f}")
    print(f"wrote {out / 'roc.csv'} and {out / 'roc.svg'}")
    return 0


def _cmd_calibrate(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    rows = []
    for det in config.detectors:
        for c_r in det.settings:
            for alpha in config.alpha_grid:
                rows.append(
                    harness.calibrate_threshold(
                        det,
                        config.scenario,
                        alpha,
                        config.trials,
                        config.seed,
                        c_r=c_r,
                        fixed_projection=config.fixed_projection,
                        threads=config.threads,
                    )
                )
    harness.emit_calibration_csv(rows, out / "calibration.csv")
    for r in rows:
        print(
            f"{r.detector} c_r={r.c_r:g} alpha0={r.alpha0:g}: "
            f"threshold={r.threshold:.6g} achieved_pf={r.achieved_pf:.4f}"
        )
    print(f"wrote {out / 'calibration.csv'}")
    return 0


def _cmd_bounds(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    rows = harness.run_bounds(config, mc_trials=args.mc_trials)
    harness.emit_bounds_csv(rows, out / "bounds.csv")
    for row in rows:
        r = row.report
        se = f" +- {r.stderr:.3g}" if r.stderr is not None else ""
        print(f"{r.approach} c_r={row.c_r:g}: d_b={r.d_b:.4f}{se} p_ub={r.p_ub:.3e}")
    print(f"wrote {out / 'bounds.csv'}")
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    rows = harness.bench(config, evals=args.evals)
    harness.emit_timing_csv(rows, out / "timing.csv")
    for r in rows:
        print(f"{r.approach} c_r={r.c_r:g}: {r.mean_seconds * 1e3:.4f} ms/eval")
    print(f"wrote {out / 'timing.csv'}")
    return 0


def _parse_range(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from exc


def _cmd_ingest(args) -> int:
    series = load_series(args.input, args.format, column=args.column)
    if args.h0_range is not None:
        a, b = args.h0_range
        # background prefix carries the null label; the remainder the alternate
        series = series[a:b] if args.label == "h0" else series[b:]
    train, test = frame_and_split(
        series,
        args.frame_size,
        args.train,
        args.test,
        args.label,
        allow_empty_train=args.allow_empty_train,
        source=str(args.input),
    )
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / f"{args.label}_train.csf"
    test_path = out / f"{args.label}_test.csf"
    save_frameset(train_path, train)
    save_frameset(test_path, test)
    print(
        f"{args.input}: {series.size} samples -> {train.count} train + "
        f"{test.count} test frames of {args.frame_size}"
    )
    print(f"wrote {train_path} and {test_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csfuse",
        description="Compressed-domain detection experiments for dependent multimodal data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a scenario and dump frames")
    _add_common(p)
    p.add_argument("--hypothesis", choices=("h0", "h1"), default="h1")
    p.add_argument("--frames", type=int, default=100)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("roc", help="Monte Carlo ROC curves")
    _add_common(p)
    p.set_defaults(fn=_cmd_roc)

    p = sub.add_parser("calibrate", help="simulation-based threshold calibration")
    _add_common(p)
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("bounds", help="Bhattacharyya distances and error bounds")
    _add_common(p)
    p.add_argument("--mc-trials", type=int, default=2000)
    p.set_defaults(fn=_cmd_bounds)

    p = sub.add_parser("bench", help="decision-statistic timing")
    _add_common(p)
    p.add_argument("--evals", type=int, default=1000)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("ingest", help="frame a time series into containers")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv-column", "raw-float64-le"), required=True)
    p.add_argument("--column", default=None, help="column name for csv-column")
    p.add_argument("--frame-size", type=int, required=True, metavar="N")
    p.add_argument("--train", type=int, required=True, metavar="N_TR")
    p.add_argument("--test", type=int, required=True, metavar="N_MONT")
    p.add_argument("--label", choices=("h0", "h1"), required=True)
    p.add_argument("--h0-range", type=_parse_range, default=None, metavar="A:B")
    p.add_argument("--allow-empty-train", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_ingest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CsfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
