"""Benchmark command line: vo-bench <subcommand> [flags].

Each subcommand runs one experiment, writes one CSV (format documented in
experiments) and prints the whisker summaries it embedded. Identical
invocations with the same --seed write byte-identical files regardless of
--jobs. Exit codes: 0 success, 2 usage error, 1 runtime failure.

Subcommands:
  compare-estimators   whole-trajectory error of both estimators, many trials
  error-per-frame      median error at each frame along the trajectory
  sweep-weight         accuracy across functional weights at fixed guess quality
  sweep-guess          refinement error as the initial guess degrades
  run-vo               full odometry pipeline over one synthetic sequence
  dataset-eval         robust estimator errors per dataset record
  dataset-convert      JSON-lines correspondence dump to the text format
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import numpy as np

from . import experiments as ex
from .datasetio import DatasetFormatError, convert_json_lines, read_dataset
from .geometry import so3_exp, so3_log
from .pipeline import VoPipeline
from .relpose import estimate_relative_pose
from .synthlab import (
    SequenceConfig,
    generate_sequence,
    trajectory_errors,
    whisker_stats,
)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("needs at least one value")
    return values


def _weights(text: str) -> tuple[float, ...]:
    values = _float_list(text)
    if any(w < 0.0 for w in values):
        raise argparse.ArgumentTypeError("weights must be non-negative")
    return values


def _gammas(text: str) -> tuple[float, ...]:
    values = _float_list(text)
    if any(not 0.0 <= g <= 1.0 for g in values):
        raise argparse.ArgumentTypeError("gammas must lie in [0, 1]")
    return values


def _gamma(text: str) -> float:
    return _gammas(text)[0]


def _sigma(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0.0:
        raise argparse.ArgumentTypeError("sigma must be non-negative")
    return value


_ARMS_BY_MODE = {
    "both": ex.ARMS,
    "constant": (ex.ARM_SPLIT_CONSTANT, ex.ARM_6DOF_CONSTANT),
    "known": (ex.ARM_SPLIT_KNOWN, ex.ARM_6DOF_KNOWN),
}


def _echo(path: str, rows: list, summaries: list) -> None:
    print(f"wrote {path} ({len(rows)} data rows)")
    for group, metric, st in summaries:
        cells = " ".join(f"p{p}={st[f'p{p}']:.6g}" for p in (5, 25, 50, 75, 95))
        print(f"  {group} {metric}: {cells}")


def _cmd_compare(args) -> int:
    trials = ex.run_comparison(args.trials, args.seed, args.jobs)
    rows, summaries = ex.write_comparison_csv(
        args.out, trials, _ARMS_BY_MODE[args.depth_mode]
    )
    _echo(args.out, rows, summaries)
    return 0


def _cmd_per_frame(args) -> int:
    trials = ex.run_comparison(args.trials, args.seed, args.jobs)
    rows, summaries = ex.write_per_frame_csv(
        args.out, trials, _ARMS_BY_MODE[args.depth_mode]
    )
    _echo(args.out, rows, summaries)
    return 0


def _cmd_sweep_weight(args) -> int:
    rows, summaries = ex.run_weight_sweep(
        args.weights, args.trials, args.gamma, args.seed, args.jobs
    )
    ex.write_weight_sweep_csv(args.out, rows, summaries)
    _echo(args.out, rows, summaries)
    return 0


def _cmd_sweep_guess(args) -> int:
    if args.dataset is not None:
        records = read_dataset(args.dataset)
    else:
        records = ex.synthesize_planar_records(args.records, args.seed)
    rows, summaries = ex.run_guess_sweep(records, args.gammas, args.jobs)
    ex.write_guess_sweep_csv(args.out, rows, summaries)
    _echo(args.out, rows, summaries)
    return 0


def _cmd_run_vo(args) -> int:
    cfg = SequenceConfig(n_frames=args.frames, pixel_sigma=args.pixel_sigma)
    seq = generate_sequence(cfg, np.random.default_rng(args.seed))
    pipe = VoPipeline(seq.camera, rng=np.random.default_rng(args.seed))
    rows = []
    estimates = []
    for k in range(seq.n_frames):
        ids = np.flatnonzero(seq.visible[k])
        res = pipe.process_frame(k, ids, seq.bearings[k][ids])
        if k == 0:
            continue
        rel0 = res.world_pose.inverse()
        rot_err = rel0.rotation.angle_to(seq.gt_relative_pose(k).rotation)
        estimates.append(rel0)
        rows.append(
            (
                str(k),
                str(res.keyframe_index),
                str(res.n_matched),
                str(res.n_inliers),
                str(int(res.coasted)),
                str(int(res.keyframe_inserted)),
                rot_err,
            )
        )
    errs = np.array([r[-1] for r in rows])
    summaries = [("session", "rot_err_deg", whisker_stats(errs))]
    ex.write_rows_csv(
        args.out,
        ("frame", "keyframe", "n_matched", "n_inliers", "coasted", "new_keyframe", "rot_err_deg"),
        rows,
        summaries,
    )
    te = trajectory_errors(seq, estimates, list(range(1, seq.n_frames)))
    _echo(args.out, rows, summaries)
    print(f"  trajectory: rot_err_pct={te.rot_err_pct:.6g} trans_err_pct={te.trans_err_pct:.6g}")
    return 0


def _cmd_dataset_eval(args) -> int:
    records = read_dataset(args.dataset)
    if not records:
        raise ValueError(f"{args.dataset} holds no records")
    children = np.random.SeedSequence(args.seed).spawn(len(records))
    rows = []
    by_seq: dict[str, list[tuple[float, float]]] = {}
    for rec, ss in zip(records, children):
        t_norm = float(np.linalg.norm(rec.t))
        if t_norm < 1e-9:
            raise ValueError(
                f"record {rec.pair_id} has no translation; direction error is undefined"
            )
        prior = so3_exp(so3_log(rec.rotation) * (1.0 - args.gamma))
        result = estimate_relative_pose(
            rec.f, rec.f_prime, prior, rng=np.random.default_rng(ss)
        )
        rot_err = result.rotation.angle_to(rec.rotation)
        dir_err = float(
            np.degrees(
                np.arccos(
                    np.clip(abs(result.direction.vector @ (rec.t / t_norm)), -1.0, 1.0)
                )
            )
        )
        rows.append(
            (
                rec.pair_id,
                rec.sequence,
                rot_err,
                dir_err,
                str(result.n_inliers),
                result.status.value,
            )
        )
        by_seq.setdefault(rec.sequence, []).append((rot_err, dir_err))
    summaries = []
    for seq_name in sorted(by_seq):
        pairs = np.array(by_seq[seq_name])
        summaries.append((seq_name, "rot_err_deg", whisker_stats(pairs[:, 0])))
        summaries.append((seq_name, "dir_err_deg", whisker_stats(pairs[:, 1])))
    ex.write_rows_csv(
        args.out,
        ("record", "sequence", "rot_err_deg", "dir_err_deg", "n_inliers", "status"),
        rows,
        summaries,
    )
    _echo(args.out, rows, summaries)
    return 0


def _cmd_dataset_convert(args) -> int:
    count = convert_json_lines(args.in_path, args.out)
    print(f"converted {count} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vo-bench",
        description="Visual odometry benchmark experiments, one CSV per run.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, trials_default: Optional[int] = None):
        if trials_default is not None:
            p.add_argument("--trials", type=_positive_int, default=trials_default)
        p.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
        p.add_argument(
            "--jobs",
            type=_positive_int,
            default=None,
            help="worker processes (default: VO_BENCH_JOBS or CPU count)",
        )
        p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser(
        "compare-estimators", help="whole-trajectory error distributions"
    )
    common(p, trials_default=50)
    p.add_argument("--depth-mode", choices=sorted(_ARMS_BY_MODE), default="both")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("error-per-frame", help="median error at each frame")
    common(p, trials_default=50)
    p.add_argument("--depth-mode", choices=sorted(_ARMS_BY_MODE), default="both")
    p.set_defaults(func=_cmd_per_frame)

    p = sub.add_parser("sweep-weight", help="accuracy across functional weights")
    common(p, trials_default=50)
    p.add_argument("--weights", type=_weights, default=ex.DEFAULT_WEIGHTS)
    p.add_argument(
        "--gamma",
        type=_gamma,
        default=ex.DEFAULT_SWEEP_GAMMA,
        help="initial guess quality, 0 perfect to 1 uninformative",
    )
    p.set_defaults(func=_cmd_sweep_weight)

    p = sub.add_parser("sweep-guess", help="error as the initial guess degrades")
    common(p)
    p.add_argument("--gammas", type=_gammas, default=ex.DEFAULT_GAMMAS)
    p.add_argument("--dataset", default=None, help="correspondence records file")
    p.add_argument(
        "--records",
        type=_positive_int,
        default=50,
        help="synthetic records when no --dataset is given",
    )
    p.set_defaults(func=_cmd_sweep_guess)

    p = sub.add_parser("run-vo", help="full pipeline over a synthetic sequence")
    common(p)
    p.add_argument("--frames", type=_positive_int, default=37)
    p.add_argument("--pixel-sigma", type=_sigma, default=0.75)
    p.set_defaults(func=_cmd_run_vo)

    p = sub.add_parser("dataset-eval", help="robust estimator over dataset records")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--gamma", type=_gamma, default=ex.DEFAULT_SWEEP_GAMMA)
    p.set_defaults(func=_cmd_dataset_eval)

    p = sub.add_parser("dataset-convert", help="JSON lines to the text format")
    p.add_argument("--in", dest="in_path", required=True, help="JSON-lines input")
    p.add_argument("--out", required=True, help="text format output")
    p.set_defaults(func=_cmd_dataset_convert)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetFormatError, OSError, ValueError, RuntimeError) as e:
        print(f"vo-bench: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
