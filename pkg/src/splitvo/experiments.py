"""Benchmark experiments and their CSV output.

The comparison experiments run on synthetic sequences and the weight sweep
on synthetic two-view records; the initial-guess sweep takes dataset
records, either loaded from a file or synthesized here. Every experiment
is deterministic for a given master seed and writes one CSV file. Output
format, shared by all writers:

* one header line naming the data columns,
* data rows with floats formatted as %.17g (lossless round-trip),
* trailing summary lines, comment-prefixed so ordinary CSV readers skip
  them, one per (group, metric):

    # summary,group=<label>,metric=<column>,p5=<v>,p25=<v>,p50=<v>,p75=<v>,p95=<v>

The summary percentiles are computed here, once; downstream consumers draw
whiskers from these lines verbatim instead of recomputing.

Trials are independent and may run in parallel worker processes. Results
are collected in submission order and per-trial generators come from
spawning one SeedSequence, so the bytes written never depend on the worker
count. The worker count comes from the jobs argument, the VO_BENCH_JOBS
environment variable, or the CPU count, in that order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .datasetio import BearingPairRecord
from .geometry import (
    CameraModel,
    RelativePose,
    Rotation,
    UnitDirection,
    add_pixel_noise_to_bearings,
    so3_exp,
    so3_log,
)
from .relpose import direction_from_rotation, refine_relative_pose
from .synthlab import (
    SequenceConfig,
    generate_sequence,
    pair_observations,
    trajectory_errors,
    whisker_stats,
)
from .transmag import estimate_magnitude, estimate_pose_6dof

ARM_SPLIT_CONSTANT = "split_5p1:constant"
ARM_SPLIT_KNOWN = "split_5p1:known"
ARM_6DOF_CONSTANT = "reproj_6dof:constant"
ARM_6DOF_KNOWN = "reproj_6dof:known"
ARMS = (ARM_SPLIT_CONSTANT, ARM_SPLIT_KNOWN, ARM_6DOF_CONSTANT, ARM_6DOF_KNOWN)

ASSUMED_DEPTH = 0.75

DEFAULT_WEIGHTS = (0.0, 15.0, 50.0, 250.0, 1000.0, 1e5)
DEFAULT_GAMMAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_SWEEP_GAMMA = 0.3


def resolve_jobs(jobs: Optional[int] = None) -> int:
    if jobs is not None:
        return max(1, int(jobs))
    env = os.environ.get("VO_BENCH_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_trials(worker: Callable, args: Sequence, jobs: int) -> list:
    """Run worker over args, preserving argument order in the results."""
    if jobs <= 1 or len(args) <= 1:
        return [worker(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(worker, a) for a in args]
        return [f.result() for f in futures]


def _g(x) -> str:
    return format(float(x), ".17g")


def _label(x) -> str:
    """Short label for group keys and swept-parameter columns."""
    return format(float(x), "g")


def write_rows_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence],
    summaries: Iterable[tuple[str, str, dict[str, float]]],
) -> None:
    """Write one experiment CSV (see the module docstring for the format)."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _g(c) for c in row))
    for group, metric, stats in summaries:
        parts = [f"p{p}={_g(stats[f'p{p}'])}" for p in (5, 25, 50, 75, 95)]
        lines.append(f"# summary,group={group},metric={metric}," + ",".join(parts))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# estimator comparison over full sequences


@dataclass
class TrialErrors:
    """Whole-trajectory and per-frame errors for the four estimator arms."""

    rot_pct: dict[str, float]
    trans_pct: dict[str, float]
    frame_rot_pct: dict[str, np.ndarray]
    frame_trans_pct: dict[str, np.ndarray]


def comparison_trial(seed_seq: np.random.SeedSequence) -> TrialErrors:
    """One synthetic sequence, estimated by all four arms.

    The split estimator runs its epipolar stage once per frame (the stage
    is depth-blind) and the magnitude stage twice, with assumed and with
    known depths. The reprojection baseline runs per depth mode. All four
    chains walk the sequence with the previous frame's estimate as the
    initial guess.
    """
    rng = np.random.default_rng(seed_seq)
    seq = generate_sequence(SequenceConfig(), rng)
    frames = list(range(1, seq.n_frames))
    known_ranges = seq.gt_ranges(0)

    poses: dict[str, list] = {arm: [] for arm in ARMS}

    rot_prev = Rotation.identity()
    dir_prev: Optional[UnitDirection] = None
    mag_prev = {ARM_SPLIT_CONSTANT: 0.0, ARM_SPLIT_KNOWN: 0.0}
    base_prev = {
        ARM_6DOF_CONSTANT: (Rotation.identity(), np.zeros(3)),
        ARM_6DOF_KNOWN: (Rotation.identity(), np.zeros(3)),
    }

    for k in frames:
        obs = pair_observations(seq, k)
        f, fp = obs.f, obs.f_prime
        if dir_prev is None:
            dir_prev, _ = direction_from_rotation(rot_prev, f, fp)
        rot, direction, _, _ = refine_relative_pose(f, fp, rot_prev, dir_prev)

        depth_modes = {
            ARM_SPLIT_CONSTANT: np.full(f.shape[0], ASSUMED_DEPTH),
            ARM_SPLIT_KNOWN: known_ranges[obs.landmark_ids],
        }
        for arm, depths in depth_modes.items():
            res = estimate_magnitude(
                seq.camera, rot, direction, f, depths, fp, mag_prev[arm]
            )
            mag_prev[arm] = res.magnitude
            poses[arm].append(RelativePose(rot, direction, res.magnitude))

        for arm, depths in (
            (ARM_6DOF_CONSTANT, depth_modes[ARM_SPLIT_CONSTANT]),
            (ARM_6DOF_KNOWN, depth_modes[ARM_SPLIT_KNOWN]),
        ):
            r0, t0 = base_prev[arm]
            rot6, t6, _ = estimate_pose_6dof(seq.camera, f, depths, fp, r0, t0)
            base_prev[arm] = (rot6, t6)
            poses[arm].append(RelativePose.from_rt(rot6, t6))

        rot_prev, dir_prev = rot, direction

    out = TrialErrors({}, {}, {}, {})
    for arm in ARMS:
        te = trajectory_errors(seq, poses[arm], frames)
        out.rot_pct[arm] = te.rot_err_pct
        out.trans_pct[arm] = te.trans_err_pct
        out.frame_rot_pct[arm] = te.per_frame_rot_pct
        out.frame_trans_pct[arm] = te.per_frame_trans_pct
    return out


def run_comparison(
    n_trials: int = 50, master_seed: int = 0, jobs: Optional[int] = None
) -> list[TrialErrors]:
    children = np.random.SeedSequence(master_seed).spawn(n_trials)
    return _run_trials(comparison_trial, children, resolve_jobs(jobs))


def write_comparison_csv(
    path: str, trials: list[TrialErrors], arms: Sequence[str] = ARMS
):
    rows = []
    for i, tr in enumerate(trials):
        for arm in arms:
            rows.append((str(i), arm, tr.rot_pct[arm], tr.trans_pct[arm]))
    summaries = []
    for arm in arms:
        for metric, pick in (
            ("rot_err_pct", lambda t, a=arm: t.rot_pct[a]),
            ("trans_err_pct", lambda t, a=arm: t.trans_pct[a]),
        ):
            vals = np.array([pick(t) for t in trials])
            summaries.append((arm, metric, whisker_stats(vals)))
    write_rows_csv(
        path, ("trial", "estimator", "rot_err_pct", "trans_err_pct"), rows, summaries
    )
    return rows, summaries


def write_per_frame_csv(
    path: str, trials: list[TrialErrors], arms: Sequence[str] = ARMS
):
    """Median-across-trials error at each frame, per arm."""
    n_frames = trials[0].frame_rot_pct[arms[0]].size
    rows = []
    med_rot: dict[str, np.ndarray] = {}
    med_trans: dict[str, np.ndarray] = {}
    for arm in arms:
        med_rot[arm] = np.median(
            np.stack([t.frame_rot_pct[arm] for t in trials]), axis=0
        )
        med_trans[arm] = np.median(
            np.stack([t.frame_trans_pct[arm] for t in trials]), axis=0
        )
    for j in range(n_frames):
        for arm in arms:
            rows.append((str(j + 1), arm, med_rot[arm][j], med_trans[arm][j]))
    summaries = [
        (arm, "rot_err_pct", whisker_stats(med_rot[arm])) for arm in arms
    ] + [(arm, "trans_err_pct", whisker_stats(med_trans[arm])) for arm in arms]
    write_rows_csv(
        path, ("frame", "estimator", "rot_err_pct", "trans_err_pct"), rows, summaries
    )
    return rows, summaries


# ---------------------------------------------------------------------------
# two-view records for the sweep experiments


def _cone_points(rng: np.random.Generator, n: int, half_angle_deg: float) -> np.ndarray:
    """Unit vectors uniform over a forward cone around +z."""
    cz = math.cos(math.radians(half_angle_deg))
    z = rng.uniform(cz, 1.0, size=n)
    az = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = np.sqrt(1.0 - z**2)
    return np.column_stack((r * np.cos(az), r * np.sin(az), z))


def _two_view_pairs(
    rng: np.random.Generator,
    *,
    planar: bool,
    n_pairs: int = 200,
    angle_deg: tuple[float, float] = (15.0, 30.0),
    t_mag: float = 0.5,
    pixel_sigma: float = 0.75,
) -> tuple[np.ndarray, np.ndarray, RelativePose]:
    """Noisy bearing pairs between two views of a random rigid scene.

    With planar=True the landmarks sit on a nearly flat wall two meters
    ahead (5 cm relief). A flat scene admits a second, wrong epipolar
    solution, so far-off initial guesses have somewhere bad to converge
    to; that makes these records the right stress test for guess quality.
    With planar=False the landmarks scatter over a 1 to 6 m depth range.
    """
    cam = CameraModel.spherical_default()
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(*angle_deg))
    rot = so3_exp(axis * angle)
    u = rng.normal(size=3)
    if planar:
        # cameras tracking a wall move mostly parallel to it; motion straight
        # at the plane puts the epipole mid-field and starves the parallax
        u[2] *= 0.3
    u /= np.linalg.norm(u)
    t = t_mag * u

    kept = np.empty((0, 3))
    for _ in range(200):
        if planar:
            xy = rng.uniform(-1.5, 1.5, size=(4 * n_pairs, 2))
            z = 2.0 + rng.normal(0.0, 0.05, size=4 * n_pairs)
            batch = np.column_stack((xy, z))
        else:
            depth = rng.uniform(1.0, 6.0, size=(4 * n_pairs, 1))
            batch = _cone_points(rng, 4 * n_pairs, 50.0) * depth
        cur = batch @ rot.matrix.T + t
        ok = (batch[:, 2] > 0.3) & (cur[:, 2] > 0.3)
        kept = np.vstack((kept, batch[ok]))
        if kept.shape[0] >= n_pairs:
            break
    else:
        raise RuntimeError("could not populate both views with landmarks")
    pts = kept[:n_pairs]
    cur = pts @ rot.matrix.T + t
    f = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    fp = cur / np.linalg.norm(cur, axis=1, keepdims=True)
    f = add_pixel_noise_to_bearings(cam, f, pixel_sigma, rng)
    fp = add_pixel_noise_to_bearings(cam, fp, pixel_sigma, rng)
    return f, fp, RelativePose(rot, UnitDirection.from_vector(u), t_mag)


def synthesize_planar_records(
    n_records: int = 50,
    master_seed: int = 0,
    *,
    n_pairs: int = 200,
    pixel_sigma: float = 0.75,
) -> list[BearingPairRecord]:
    """Two-view records of near-planar scenes, for initial-guess studies."""
    records = []
    for i, ss in enumerate(np.random.SeedSequence(master_seed).spawn(n_records)):
        rng = np.random.default_rng(ss)
        f, fp, gt = _two_view_pairs(
            rng,
            planar=True,
            n_pairs=n_pairs,
            angle_deg=(15.0, 25.0),
            t_mag=0.8,
            pixel_sigma=pixel_sigma,
        )
        records.append(
            BearingPairRecord(
                pair_id=f"planar{i:03d}",
                sequence="synth-planar",
                rotation=gt.rotation,
                t=gt.direction.vector * gt.magnitude,
                noiseless=pixel_sigma == 0.0,
                f=f,
                f_prime=fp,
            )
        )
    return records


def _degraded_guess(
    gt: RelativePose, gamma: float, rng: np.random.Generator
) -> tuple[Rotation, UnitDirection]:
    """Initial guess at quality gamma: 0 is the true pose, 1 uninformative.

    The rotation guess shrinks toward identity along its geodesic; the
    direction guess moves toward a uniformly random direction by the same
    fraction of the arc between them.
    """
    rot0 = so3_exp(so3_log(gt.rotation) * (1.0 - gamma))
    g = gt.direction.vector
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        v /= norm
        axis = np.cross(g, v)
        axis_norm = np.linalg.norm(axis)
        if axis_norm > 1e-9:
            break
    arc = math.acos(float(np.clip(g @ v, -1.0, 1.0)))
    step = so3_exp(axis / axis_norm * (gamma * arc))
    return rot0, UnitDirection.from_vector(step.matrix @ g)


# ---------------------------------------------------------------------------
# functional-weight sweep


def weight_trial(args) -> tuple[float, float, float]:
    """(weight, rot_err_deg, dir_err_deg) for one perturbed-guess fit."""
    seed_seq, weight, gamma = args
    rng = np.random.default_rng(seed_seq)
    f, fp, gt = _two_view_pairs(rng, planar=False)
    rot0, dir0 = _degraded_guess(gt, gamma, rng)
    rot, direction, _, _ = refine_relative_pose(f, fp, rot0, dir0, weight=weight)
    return (
        weight,
        rot.angle_to(gt.rotation),
        direction.angle_to(gt.direction),
    )


def run_weight_sweep(
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    n_trials: int = 50,
    gamma: float = DEFAULT_SWEEP_GAMMA,
    master_seed: int = 0,
    jobs: Optional[int] = None,
):
    """Seeds are paired: trial i sees the same record and guess at every
    weight, so per-weight medians differ only through the weight itself."""
    children = np.random.SeedSequence(master_seed).spawn(n_trials)
    args = [(ss, w, gamma) for w in weights for ss in children]
    results = _run_trials(weight_trial, args, resolve_jobs(jobs))
    rows = []
    for idx, (w, rot_err, dir_err) in enumerate(results):
        rows.append((str(idx % n_trials), _label(w), rot_err, dir_err))
    summaries = []
    for w in weights:
        picked = [r for r in results if r[0] == w]
        for metric, col in (("rot_err_deg", 1), ("dir_err_deg", 2)):
            vals = np.array([p[col] for p in picked])
            summaries.append((_label(w), metric, whisker_stats(vals)))
    return rows, summaries


def write_weight_sweep_csv(path: str, rows, summaries) -> None:
    write_rows_csv(
        path, ("trial", "weight", "rot_err_deg", "dir_err_deg"), rows, summaries
    )


# ---------------------------------------------------------------------------
# initial-guess degradation sweep


def guess_trial(args) -> list[tuple[float, float, float]]:
    """Errors across all gammas for one dataset record."""
    record, gammas = args
    t_norm = float(np.linalg.norm(record.t))
    if t_norm < 1e-9:
        raise ValueError(
            f"record {record.pair_id} has no translation; "
            "direction error is undefined"
        )
    gt_dir = UnitDirection.from_vector(record.t / t_norm)
    theta_gt = so3_log(record.rotation)
    out = []
    for gamma in gammas:
        rot0 = so3_exp(theta_gt * (1.0 - gamma))
        dir0, _ = direction_from_rotation(rot0, record.f, record.f_prime)
        rot, direction, _, _ = refine_relative_pose(record.f, record.f_prime, rot0, dir0)
        out.append(
            (gamma, rot.angle_to(record.rotation), direction.angle_to(gt_dir))
        )
    return out


def run_guess_sweep(
    records: Sequence[BearingPairRecord],
    gammas: Sequence[float] = DEFAULT_GAMMAS,
    jobs: Optional[int] = None,
):
    args = [(rec, tuple(gammas)) for rec in records]
    per_record = _run_trials(guess_trial, args, resolve_jobs(jobs))
    rows = []
    for rec, triples in zip(records, per_record):
        for gamma, rot_err, dir_err in triples:
            rows.append((rec.pair_id, _label(gamma), rot_err, dir_err))
    summaries = []
    for j, gamma in enumerate(gammas):
        for metric, col in (("rot_err_deg", 1), ("dir_err_deg", 2)):
            vals = np.array([per_record[r][j][col] for r in range(len(per_record))])
            summaries.append((_label(gamma), metric, whisker_stats(vals)))
    return rows, summaries


def write_guess_sweep_csv(path: str, rows, summaries) -> None:
    write_rows_csv(
        path, ("record", "gamma", "rot_err_deg", "dir_err_deg"), rows, summaries
    )
