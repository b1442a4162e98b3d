"""Reading and writing bearing-pair datasets.

The on-disk format is line-oriented UTF-8 text with LF endings. Each record
is a header line

    pair <id> <sequence> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <noiseless> <n>

followed by n correspondence lines with six floats each,

    <fx> <fy> <fz> <fpx> <fpy> <fpz>

where (f, f') are unit bearings in the keyframe and the current frame and
(q, t) is the ground-truth keyframe-to-frame transform (quaternion in wxyz
order, w >= 0 canonical on write). noiseless is 0 or 1. Floats are written
with repr-exact precision so a write/read cycle is lossless. Blank lines
between records are allowed; '#' starts a comment line.

Bearings that drift from unit norm by at most 1e-6 are renormalized on read
(logged); larger deviations are a format error, as are malformed headers,
non-unit ground-truth quaternions, and truncated records.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .geometry import Rotation

logger = logging.getLogger(__name__)

_NORM_TOL = 1e-6


class DatasetFormatError(Exception):
    def __init__(self, file: str, line: int, reason: str):
        self.file = file
        self.line = line
        self.reason = reason
        super().__init__(f"{file}:{line}: {reason}")


@dataclass
class BearingPairRecord:
    """One keyframe/frame correspondence set with ground truth."""

    pair_id: str
    sequence: str
    rotation: Rotation
    t: np.ndarray
    noiseless: bool
    f: np.ndarray
    f_prime: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.f.shape[0]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(path: str | Path, records: Iterable[BearingPairRecord]) -> None:
    path = Path(path)
    lines = []
    for rec in records:
        if not rec.pair_id or any(c.isspace() for c in rec.pair_id):
            raise ValueError(f"pair id {rec.pair_id!r} must be a single token")
        if not rec.sequence or any(c.isspace() for c in rec.sequence):
            raise ValueError(f"sequence {rec.sequence!r} must be a single token")
        if rec.f.shape != rec.f_prime.shape or rec.f.ndim != 2 or rec.f.shape[1] != 3:
            raise ValueError("bearing arrays must both be (n, 3)")
        q = rec.rotation.to_quaternion()
        head = ["pair", rec.pair_id, rec.sequence]
        head += [_fmt(v) for v in q]
        head += [_fmt(v) for v in rec.t]
        head += ["1" if rec.noiseless else "0", str(rec.n_pairs)]
        lines.append(" ".join(head))
        for a, b in zip(rec.f, rec.f_prime):
            lines.append(" ".join(_fmt(v) for v in (*a, *b)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_floats(tokens: list[str], file: str, line_no: int, what: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in tokens])
    except ValueError:
        raise DatasetFormatError(file, line_no, f"malformed {what}") from None


def _checked_bearings(
    raw: np.ndarray, file: str, first_line: int
) -> tuple[np.ndarray, int]:
    norms = np.linalg.norm(raw, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > _NORM_TOL)
    if bad.size:
        raise DatasetFormatError(
            file,
            first_line + int(bad[0]),
            f"bearing norm {norms[bad[0]]:.9g} deviates from 1 by more than {_NORM_TOL}",
        )
    drifted = int(np.count_nonzero(np.abs(norms - 1.0) > 1e-12))
    return raw / norms[:, None], drifted


def read_dataset(path: str | Path) -> list[BearingPairRecord]:
    path = Path(path)
    name = str(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    records: list[BearingPairRecord] = []
    renormalized = 0
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith("#"):
            i += 1
            continue
        header_line = i + 1
        tokens = line.split()
        if tokens[0] != "pair":
            raise DatasetFormatError(name, header_line, "expected 'pair' header")
        if len(tokens) != 12:
            raise DatasetFormatError(
                name, header_line, f"header has {len(tokens)} tokens, expected 12"
            )
        pair_id, sequence = tokens[1], tokens[2]
        q = _parse_floats(tokens[3:7], name, header_line, "quaternion")
        t = _parse_floats(tokens[7:10], name, header_line, "translation")
        if tokens[10] not in ("0", "1"):
            raise DatasetFormatError(name, header_line, "noiseless flag must be 0 or 1")
        try:
            n = int(tokens[11])
        except ValueError:
            raise DatasetFormatError(name, header_line, "malformed pair count") from None
        if n < 1:
            raise DatasetFormatError(name, header_line, "pair count must be positive")
        if abs(np.linalg.norm(q) - 1.0) > _NORM_TOL:
            raise DatasetFormatError(
                name, header_line, "ground-truth quaternion is not unit norm"
            )
        rows = np.empty((n, 6))
        for j in range(n):
            i += 1
            if i >= len(lines):
                raise DatasetFormatError(
                    name, len(lines), f"record {pair_id!r} truncated: expected {n} pair lines"
                )
            ptoks = lines[i].split()
            if len(ptoks) != 6:
                raise DatasetFormatError(
                    name, i + 1, f"pair line has {len(ptoks)} values, expected 6"
                )
            rows[j] = _parse_floats(ptoks, name, i + 1, "pair line")
        f, d1 = _checked_bearings(rows[:, :3], name, header_line + 1)
        fp, d2 = _checked_bearings(rows[:, 3:], name, header_line + 1)
        renormalized += d1 + d2
        records.append(
            BearingPairRecord(
                pair_id,
                sequence,
                Rotation.from_quaternion(q / np.linalg.norm(q)),
                t,
                tokens[10] == "1",
                f,
                fp,
            )
        )
        i += 1
    if renormalized:
        logger.warning(
            "%s: renormalized %d bearings with sub-tolerance norm drift",
            name,
            renormalized,
        )
    return records


def subsample_records(
    records: list[BearingPairRecord],
    per_sequence: int,
    rng: np.random.Generator,
) -> list[BearingPairRecord]:
    """Uniform subsample without replacement, applied per sequence.

    Sequences with at most `per_sequence` records are kept whole. Output
    preserves the original record order.
    """
    if per_sequence < 1:
        raise ValueError("per_sequence must be positive")
    by_seq: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        by_seq.setdefault(rec.sequence, []).append(idx)
    keep: set[int] = set()
    for seq in sorted(by_seq):
        idxs = by_seq[seq]
        if len(idxs) <= per_sequence:
            keep.update(idxs)
        else:
            keep.update(rng.choice(idxs, size=per_sequence, replace=False).tolist())
    return [rec for idx, rec in enumerate(records) if idx in keep]


def convert_json_lines(in_path: str | Path, out_path: str | Path) -> int:
    """Convert a JSON-lines correspondence dump to the native format.

    Each line is an object with "id", "seq", "t" (3 floats), "noiseless"
    (bool), "pairs" (list of 6-float lists), and either "q" (wxyz unit
    quaternion) or "R" (3x3 nested rotation matrix). Returns the number of
    records written.
    """
    in_path = Path(in_path)
    name = str(in_path)
    records = []
    for line_no, line in enumerate(in_path.read_text(encoding="utf-8").split("\n"), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(name, line_no, f"invalid JSON: {e.msg}") from None
        try:
            if "q" in obj:
                rotation = Rotation.from_quaternion(np.asarray(obj["q"], dtype=float))
            elif "R" in obj:
                rotation = Rotation(np.asarray(obj["R"], dtype=float))
            else:
                raise KeyError("q")
            pairs = np.asarray(obj["pairs"], dtype=float)
            if pairs.ndim != 2 or pairs.shape[1] != 6:
                raise ValueError("pairs must be n x 6")
            rec = BearingPairRecord(
                str(obj["id"]),
                str(obj["seq"]),
                rotation,
                np.asarray(obj["t"], dtype=float),
                bool(obj["noiseless"]),
                pairs[:, :3],
                pairs[:, 3:],
            )
        except KeyError as e:
            raise DatasetFormatError(name, line_no, f"missing field {e}") from None
        except ValueError as e:
            raise DatasetFormatError(name, line_no, str(e)) from None
        records.append(rec)
    write_dataset(out_path, records)
    return len(records)
