"""File formats: CSV/binary matrices, instance directories, trajectory dumps.

Matrix CSV is plain comma-separated rows; vectors are a single column.  The
binary format is magic ``WNF1`` | u32 rows | u32 cols | row-major float64,
all little-endian.  A problem instance lives in a directory holding A, b and
optionally x_star / w, each as .csv or .bin.  All writes go through a
temp-file-and-rename so failures never leave partial outputs.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .flow import Snapshot, TrajectoryRecord
from .model import DenseState, PolarState, ProblemInstance, SignedState

MAGIC = b"WNF1"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------

def write_matrix_csv(path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = [",".join(f"{v:.17g}" for v in row) for row in mat]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows)


def write_matrix_bin(path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    header = MAGIC + struct.pack("<II", mat.shape[0], mat.shape[1])
    payload = mat.astype("<f8", copy=False).tobytes(order="C")
    atomic_write_bytes(path, header + payload)


def read_matrix_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a WNF1 file")
    rows, cols = struct.unpack("<II", raw[4:12])
    expected = 12 + rows * cols * 8
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}"
        )
    return np.frombuffer(raw[12:], dtype="<f8").reshape(rows, cols).copy()


def _read_any_matrix(base: Path, stem: str) -> np.ndarray | None:
    csv = base / f"{stem}.csv"
    if csv.exists():
        return read_matrix_csv(csv)
    binp = base / f"{stem}.bin"
    if binp.exists():
        return read_matrix_bin(binp)
    return None


# ---------------------------------------------------------------------------
# problem instances
# ---------------------------------------------------------------------------

def save_instance(inst: ProblemInstance, directory, fmt: str = "csv") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    writer = write_matrix_csv if fmt == "csv" else write_matrix_bin
    if fmt not in ("csv", "bin"):
        raise DataFormatError(f"unknown format {fmt!r}")
    writer(directory / f"A.{fmt}", inst.A)
    writer(directory / f"b.{fmt}", inst.b.reshape(-1, 1))
    if inst.x_star is not None:
        writer(directory / f"x_star.{fmt}", inst.x_star.reshape(-1, 1))
    if inst.w is not None:
        writer(directory / f"w.{fmt}", inst.w.reshape(-1, 1))


def load_instance(directory) -> ProblemInstance:
    base = Path(directory)
    A = _read_any_matrix(base, "A")
    b = _read_any_matrix(base, "b")
    if A is None or b is None:
        raise DataFormatError(f"{base}: missing A or b (csv or bin)")
    x_star = _read_any_matrix(base, "x_star")
    w = _read_any_matrix(base, "w")
    return ProblemInstance(
        A=A,
        b=b.ravel(),
        x_star=None if x_star is None else x_star.ravel(),
        w=None if w is None else w.ravel(),
    )


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def _state_header(state, coords) -> list[str]:
    if isinstance(state, DenseState):
        return [f"x{i:04d}" for i in coords]
    if isinstance(state, PolarState):
        return ["r"] + [f"u{i:04d}" for i in coords]
    return [f"up{i:04d}" for i in coords] + [f"um{i:04d}" for i in coords]


def _state_row(state, coords) -> list[float]:
    if isinstance(state, DenseState):
        return [state.x[i] for i in coords]
    if isinstance(state, PolarState):
        return [state.r] + [state.u[i] for i in coords]
    return [state.u_plus[i] for i in coords] + [state.u_minus[i] for i in coords]


def write_trajectory_csv(path, traj: TrajectoryRecord, coords=None) -> None:
    """Snapshot table: iter, t, loss, then state coordinates (optionally a
    subset for large N)."""
    first = traj.snapshots[0].state
    n = first.x.size if isinstance(first, DenseState) else (
        first.u.size if isinstance(first, PolarState) else first.u_plus.size
    )
    coords = list(range(n)) if coords is None else list(coords)
    header = ["iter", "t", "loss"] + _state_header(first, coords)
    lines = [",".join(header)]
    for snap in traj.snapshots:
        row = [f"{snap.iter}", f"{snap.t:.17g}", f"{snap.loss:.17g}"]
        row += [f"{v:.17g}" for v in _state_row(snap.state, coords)]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path) -> list[Snapshot]:
    """Rebuild snapshots from a full (untruncated) trajectory dump."""
    with open(path) as f:
        header_line = f.readline().strip()
        cols = header_line.split(",")
        if cols[:3] != ["iter", "t", "loss"]:
            raise DataFormatError(f"{path}: line 1: not a trajectory header")
        state_cols = cols[3:]
        snaps = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(cols)} fields, got {len(parts)}"
                )
            try:
                it = int(parts[0])
                t = float(parts[1])
                lo = float(parts[2])
                vals = np.array([float(v) for v in parts[3:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}")
            snaps.append(Snapshot(iter=it, t=t, state=_state_from(state_cols, vals), loss=lo))
    if not snaps:
        raise DataFormatError(f"{path}: no snapshots")
    return snaps


def _state_from(state_cols, vals):
    if state_cols and state_cols[0] == "r":
        return PolarState(r=float(vals[0]), u=vals[1:])
    if state_cols and state_cols[0].startswith("up"):
        half = len(state_cols) // 2
        return SignedState(u_plus=vals[:half], u_minus=vals[half:])
    return DenseState(x=vals)


def write_terminal_json(path, traj: TrajectoryRecord) -> None:
    term = traj.terminal
    payload = {
        "reason": term.reason,
        "iters": term.iters,
        "final_loss": term.final_loss,
        "l1_of_xtilde": float(np.sum(np.abs(term.final_xtilde))),
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# campaign tables
# ---------------------------------------------------------------------------

RESULTS_COLUMNS = [
    "sweep_index", "trial", "r0", "eta_ratio", "variant",
    "eps1", "eps2", "final_loss", "iters", "terminal", "q_unweighted",
    "bound_satisfied", "error",
]

SUMMARY_COLUMNS = [
    "sweep_index", "r0", "eta_ratio", "variant", "n_trials", "n_failed",
    "eps1_mean", "eps1_min", "eps1_max",
    "eps2_mean", "eps2_min", "eps2_max",
    "iters_mean", "iters_min", "iters_max",
]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_results_csv(path, results) -> None:
    lines = [",".join(RESULTS_COLUMNS)]
    for r in results:
        bound_ok = None if r.bound is None else r.bound.get("bound_satisfied")
        row = [
            r.sweep_index, r.trial, r.r0, r.eta_ratio, r.variant,
            r.eps1, r.eps2, r.final_loss, r.iters, r.terminal,
            r.q_unweighted, bound_ok, r.error,
        ]
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_csv(path, summaries) -> None:
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summaries:
        row = [getattr(s, c) for c in SUMMARY_COLUMNS]
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
