"""
Text and CSV formats shared by the CLI stages.

controls file, one line per frame (whitespace separated):
    t ax ay az gx gy gz [px py pz]
  the optional trailing triple is a position observation at that frame.

trajectory file, one line per frame:
    frame t px py pz qw qx qy qz c11 c12 c13 c22 c23 c33
  c.. is the upper triangle of the 3x3 position covariance.

Floats are written with 17 significant digits so files round-trip exactly.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.error_handling import DatasetError
from estimation.pose_filter import ControlInput, PositionObservation

logger = logging.getLogger(__name__)

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _fmt(values: Iterable[float]) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def _read_table(path, columns: int) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    try:
        return pd.read_csv(
            path, sep=r"\s+", header=None, names=list(range(columns)), comment="#",
            dtype=float, float_precision="round_trip",
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc


def _write_lines(path, lines: List[str]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    return path


# --- Controls / observations ---

def write_controls(path, timestamps, controls: Sequence[ControlInput],
                   observations: Optional[Dict[int, PositionObservation]] = None) -> Path:
    observations = observations or {}
    if len(timestamps) != len(controls):
        raise DatasetError(f"{len(timestamps)} timestamps but {len(controls)} controls")
    lines = []
    for k, (t, control) in enumerate(zip(timestamps, controls)):
        values = [t, *control.linear_acceleration, *control.angular_velocity]
        if k in observations:
            values.extend(observations[k].observed_position)
        lines.append(_fmt(values))
    return _write_lines(path, lines)


def read_controls(path) -> Tuple[np.ndarray, List[ControlInput], Dict[int, PositionObservation]]:
    """The dt of control k is t[k+1] - t[k]; the last record reuses the previous gap."""
    table = _read_table(path, 10).to_numpy()
    if len(table) < 2:
        raise DatasetError(f"{path}: need at least 2 control records, got {len(table)}")
    if np.isnan(table[:, :7]).any():
        raise DatasetError(f"{path}: control lines need 7 columns")
    timestamps = table[:, 0]
    gaps = np.diff(timestamps)
    if np.any(gaps <= 0):
        raise DatasetError(f"{path}: timestamps must be strictly increasing")
    dts = np.append(gaps, gaps[-1])

    controls = [ControlInput(angular_velocity=row[4:7], linear_acceleration=row[1:4], dt=dt)
                for row, dt in zip(table, dts)]
    observations = {}
    for k, row in enumerate(table):
        tail = row[7:10]
        if np.all(np.isfinite(tail)):
            observations[k] = PositionObservation(tail)
        elif np.any(np.isfinite(tail)):
            raise DatasetError(f"{path}: line {k + 1} has a partial observation")
    return timestamps, controls, observations


# --- Trajectories ---

@dataclass
class TrajectoryTable:
    frames: np.ndarray
    timestamps: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    position_covariances: np.ndarray

    def __len__(self):
        return len(self.frames)


def write_trajectory(path, timestamps, positions, rotations, position_covariances=None) -> Path:
    positions = np.asarray(positions, dtype=float)
    if position_covariances is None:
        position_covariances = np.zeros((len(positions), 3, 3))
    lines = []
    for k, (t, p, q, c) in enumerate(zip(timestamps, positions, rotations, position_covariances)):
        upper = [c[r][s] for r, s in _UPPER]
        lines.append(f"{k} " + _fmt([t, *p, *q, *upper]))
    return _write_lines(path, lines)


def write_states(path, timestamps, states) -> Path:
    return write_trajectory(
        path,
        timestamps,
        [s.position for s in states],
        [s.rotation for s in states],
        [s.position_covariance for s in states],
    )


def read_trajectory(path) -> TrajectoryTable:
    table = _read_table(path, 15).to_numpy()
    if np.isnan(table).any():
        raise DatasetError(f"{path}: trajectory lines need 15 columns")
    frames = table[:, 0].astype(int)
    if not np.array_equal(frames, np.arange(len(frames))):
        raise DatasetError(f"{path}: frame indices must be contiguous from 0")
    covariances = np.zeros((len(table), 3, 3))
    for col, (r, s) in enumerate(_UPPER):
        covariances[:, r, s] = table[:, 9 + col]
        covariances[:, s, r] = table[:, 9 + col]
    return TrajectoryTable(frames, table[:, 1], table[:, 2:5], table[:, 5:9], covariances)


# --- CSV / JSON outputs ---

def _write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    return path


def _read_csv(path, columns: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DatasetError(f"{path}: missing columns {missing}")
    return frame


def write_pairs_csv(pairs, path) -> Path:
    frame = pd.DataFrame(
        [(p.query, p.match, p.gate_distance, p.threshold) for p in pairs],
        columns=["i", "j", "distance", "threshold"],
    )
    return _write_csv(frame, path)


def write_areas_csv(areas, path) -> Path:
    frame = pd.DataFrame(
        [(*a.query_range, *a.match_range) for a in areas],
        columns=["i_lo", "i_hi", "j_lo", "j_hi"],
    )
    return _write_csv(frame, path)


def read_areas_csv(path):
    from detection.selector import CandidateArea

    frame = _read_csv(path, ["i_lo", "i_hi", "j_lo", "j_hi"])
    return [CandidateArea((r.i_lo, r.i_hi), (r.j_lo, r.j_hi)) for r in frame.itertuples()]


def write_similarity_csv(matrix, path) -> Path:
    rows = [(i, j, s) for (i, j), s in sorted(matrix.entries.items())]
    return _write_csv(pd.DataFrame(rows, columns=["i", "j", "similarity"]), path)


def write_loops_csv(loops, path) -> Path:
    frame = pd.DataFrame([(p.query, p.match, p.score) for p in loops], columns=["i", "j", "score"])
    return _write_csv(frame, path)


def read_loops_csv(path):
    from detection.selector import LoopPair

    frame = _read_csv(path, ["i", "j", "score"])
    return [LoopPair(int(r.i), int(r.j), score=float(r.score)) for r in frame.itertuples()]


def write_pr_csv(points, path) -> Path:
    frame = pd.DataFrame(
        [(p.threshold, p.precision, p.recall, p.tp, p.fp, p.fn) for p in points],
        columns=["threshold", "precision", "recall", "tp", "fp", "fn"],
    )
    return _write_csv(frame, path)


def write_timing_csv(rows, path) -> Path:
    frame = pd.DataFrame(
        [(r.stage, r.frames, r.total_ms, r.per_frame_ms, r.comparisons) for r in rows],
        columns=["stage", "frames", "total_ms", "per_frame_ms", "comparisons"],
    )
    return _write_csv(frame, path)


def write_json(data: dict, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"missing file: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
