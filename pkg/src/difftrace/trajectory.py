"""Trajectory ingestion and preprocessing for periodic-boundary MD output.

Handles the steps between a raw wrapped trajectory and the centered series
the estimators consume: periodic-image unwrapping under a (possibly
fluctuating) orthorhombic box, net-drift removal, downsampling, and
segmentation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WrappedTrajectory",
    "UnwrappedTrajectory",
    "load_trajectory",
    "save_trajectory",
    "unwrap",
    "remove_drift",
    "downsample",
    "segment",
    "load_unwrapped",
    "save_unwrapped",
]

CSV_HEADER = ["frame", "mol", "atom", "role", "x", "y", "z", "bx", "by", "bz"]
UNWRAPPED_CSV_HEADER = ["frame", "mol", "x", "y", "z"]


@dataclass
class WrappedTrajectory:
    """Per-frame wrapped atom positions with per-frame box lengths.

    positions : (n_frames, n_atoms, 3) array, canonicalized into [0, box), A
    boxes     : (n_frames, 3) array of box edge lengths, A
    dt        : frame spacing, ps
    mols/atoms/roles : per-atom labels (molecule id, atom name, site role)
    """

    positions: np.ndarray
    boxes: np.ndarray
    dt: float
    mols: np.ndarray
    atoms: np.ndarray
    roles: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.boxes = np.asarray(self.boxes, dtype=float)
        self.mols = np.asarray(self.mols)
        self.atoms = np.asarray(self.atoms)
        self.roles = np.asarray(self.roles)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError("positions must have shape (n_frames, n_atoms, 3)")
        if self.boxes.shape != (self.positions.shape[0], 3):
            raise ValueError("boxes must have shape (n_frames, 3)")
        if self.positions.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 frames")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(self.boxes > 0):
            raise ValueError("non-positive box")
        n_atoms = self.positions.shape[1]
        for name, arr in (("mols", self.mols), ("atoms", self.atoms), ("roles", self.roles)):
            if arr.shape != (n_atoms,):
                raise ValueError(f"{name} must have length n_atoms={n_atoms}")
        # Canonicalize into [0, box); np.mod of a tiny negative can round up
        # to the box length itself, so fold that edge back to 0.
        box = np.broadcast_to(self.boxes[:, None, :], self.positions.shape)
        pos = np.mod(self.positions, box)
        self.positions = np.where(pos >= box, 0.0, pos)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[1]

    def volumes(self) -> np.ndarray:
        """Per-frame box volumes, A^3."""
        return np.prod(self.boxes, axis=1)


@dataclass
class UnwrappedTrajectory:
    """Continuous per-molecule positions after periodic-image unwrapping.

    positions : (n_frames, n_mols, 3) array, A
    dt        : frame spacing, ps
    """

    positions: np.ndarray
    dt: float
    mols: np.ndarray | None = None
    drift_removed: bool = False

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError("positions must have shape (n_frames, n_mols, 3)")
        if self.positions.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 frames")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mols is None:
            self.mols = np.arange(self.positions.shape[1])
        else:
            self.mols = np.asarray(self.mols)
            if self.mols.shape != (self.positions.shape[1],):
                raise ValueError("mols must have length n_mols")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_mols(self) -> int:
        return self.positions.shape[1]


def unwrap(w: WrappedTrajectory, role: str = "O") -> UnwrappedTrajectory:
    """Reconstruct continuous molecule paths from wrapped coordinates.

    The molecule position is the coordinate of its atom with the given role
    (one such atom required per molecule).  Displacements between successive
    frames are minimum-imaged against the *later* frame's box, which keeps
    the scheme consistent when the box fluctuates:

        u[t+1] = u[t] + d,   d = (w[t+1] - w[t]) - box[t+1] * round((w[t+1] - w[t]) / box[t+1])
    """
    sel = np.flatnonzero(w.roles == role)
    if sel.size == 0:
        raise ValueError(f"no atoms with role {role!r}")
    mols = w.mols[sel]
    if np.unique(mols).size != mols.size:
        raise ValueError(f"molecule has more than one atom with role {role!r}")
    pos = w.positions[:, sel, :]
    box = w.boxes[1:, None, :]
    diffs = pos[1:] - pos[:-1]
    deltas = diffs - box * np.round(diffs / box)
    out = np.empty_like(pos)
    out[0] = pos[0]
    np.cumsum(deltas, axis=0, out=out[1:])
    out[1:] += pos[0]
    return UnwrappedTrajectory(positions=out, dt=w.dt, mols=mols)


def remove_drift(u: UnwrappedTrajectory) -> UnwrappedTrajectory:
    """Translate each frame so its centroid over molecules is zero."""
    centered = u.positions - u.positions.mean(axis=1, keepdims=True)
    return UnwrappedTrajectory(positions=centered, dt=u.dt, mols=u.mols, drift_removed=True)


def downsample(u: UnwrappedTrajectory, factor: int) -> UnwrappedTrajectory:
    """Keep every factor-th frame (starting from the first); dt scales by factor."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    pos = u.positions[::factor]
    if pos.shape[0] < 2:
        raise ValueError("downsampling factor leaves fewer than 2 frames")
    return UnwrappedTrajectory(
        positions=pos, dt=u.dt * factor, mols=u.mols, drift_removed=u.drift_removed
    )


def segment(u: UnwrappedTrajectory, length: int) -> list[UnwrappedTrajectory]:
    """Split into maximal non-overlapping segments of exactly `length` frames.

    Each segment is re-based by subtracting its first frame, so segments
    start at the origin; a trailing remainder shorter than `length` is
    dropped.
    """
    length = int(length)
    if length < 2:
        raise ValueError("segment length must be >= 2")
    if length > u.n_frames:
        raise ValueError(f"segment length {length} exceeds frame count {u.n_frames}")
    n_seg = u.n_frames // length
    out = []
    for k in range(n_seg):
        chunk = u.positions[k * length : (k + 1) * length]
        out.append(
            UnwrappedTrajectory(
                positions=chunk - chunk[0],
                dt=u.dt,
                mols=u.mols,
                drift_removed=u.drift_removed,
            )
        )
    return out


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{where}: malformed number {text!r}") from None


def load_trajectory(path, format: str = "csv", dt: float = 1.0) -> WrappedTrajectory:
    """Load a wrapped trajectory from CSV or JSON-lines.

    CSV columns: frame,mol,atom,role,x,y,z,bx,by,bz (one row per atom per
    frame, frames strictly increasing).  JSONL: one object per frame,
    {"t": int, "box": [bx,by,bz], "mols": [{"id", "role", "xyz"}, ...]}.
    The frame spacing is not part of either format and is supplied by the
    caller.
    """
    if format == "csv":
        w = _load_csv(path)
    elif format == "jsonl":
        w = _load_jsonl(path)
    else:
        raise ValueError(f"unknown trajectory format {format!r}")
    w.dt = float(dt)
    if not w.dt > 0:
        raise ValueError("dt must be positive")
    return w


def _load_csv(path) -> WrappedTrajectory:
    frames: list[int] = []
    frame_pos: list[list[list[float]]] = []
    frame_box: list[list[float]] = []
    labels: list[tuple] | None = None
    cur_labels: list[tuple] = []

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        cur_frame = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}: line {lineno}"
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{where}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise ValueError(f"{where}: malformed frame index {row[0]!r}") from None
            mol, atom, role = row[1], row[2], row[3]
            xyz = [_parse_float(v, where) for v in row[4:7]]
            box = [_parse_float(v, where) for v in row[7:10]]
            if min(box) <= 0:
                raise ValueError(f"{where}: non-positive box")
            if t != cur_frame:
                if cur_frame is not None and t <= cur_frame:
                    raise ValueError(f"{where}: frames not strictly increasing")
                if cur_frame is not None:
                    labels = _close_frame(path, frames, cur_labels, labels)
                cur_frame = t
                frames.append(t)
                frame_pos.append([])
                frame_box.append(box)
                cur_labels = []
            elif box != frame_box[-1]:
                raise ValueError(f"{where}: box differs within frame {t}")
            frame_pos[-1].append(xyz)
            cur_labels.append((mol, atom, role))
    if cur_frame is None:
        raise ValueError(f"{path}: no frame records")
    labels = _close_frame(path, frames, cur_labels, labels)
    return _assemble(frame_pos, frame_box, labels)


def _close_frame(path, frames, cur_labels, labels):
    if labels is None:
        return list(cur_labels)
    if len(cur_labels) != len(labels):
        raise ValueError(
            f"{path}: frame {frames[-1]}: inconsistent atom count "
            f"({len(cur_labels)} vs {len(labels)})"
        )
    if cur_labels != labels:
        raise ValueError(f"{path}: frame {frames[-1]}: atom labels differ from first frame")
    return labels


def _load_jsonl(path) -> WrappedTrajectory:
    frame_pos, frame_box = [], []
    labels = None
    last_t = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}: line {lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: malformed JSON ({exc.msg})") from None
            try:
                t = int(rec["t"])
                box = [float(v) for v in rec["box"]]
                sites = rec["mols"]
                cur = [(str(m["id"]), "", str(m["role"])) for m in sites]
                xyz = [[float(v) for v in m["xyz"]] for m in sites]
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{where}: malformed record ({exc})") from None
            if len(box) != 3 or any(len(p) != 3 for p in xyz):
                raise ValueError(f"{where}: box and xyz must have 3 components")
            if min(box) <= 0:
                raise ValueError(f"{where}: non-positive box")
            if last_t is not None and t <= last_t:
                raise ValueError(f"{where}: frames not strictly increasing")
            last_t = t
            if labels is None:
                labels = cur
            elif len(cur) != len(labels):
                raise ValueError(
                    f"{where}: inconsistent atom count ({len(cur)} vs {len(labels)})"
                )
            elif cur != labels:
                raise ValueError(f"{where}: atom labels differ from first frame")
            frame_pos.append(xyz)
            frame_box.append(box)
    if not frame_pos:
        raise ValueError(f"{path}: no frame records")
    return _assemble(frame_pos, frame_box, labels)


def _assemble(frame_pos, frame_box, labels) -> WrappedTrajectory:
    positions = np.asarray(frame_pos, dtype=float)
    boxes = np.asarray(frame_box, dtype=float)
    mols = np.asarray([m for m, _, _ in labels])
    atoms = np.asarray([a for _, a, _ in labels])
    roles = np.asarray([r for _, _, r in labels])
    return WrappedTrajectory(
        positions=positions, boxes=boxes, dt=1.0, mols=mols, atoms=atoms, roles=roles
    )


def save_trajectory(w: WrappedTrajectory, path, format: str = "csv") -> None:
    """Write a wrapped trajectory in the CSV or JSONL wire format."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for t in range(w.n_frames):
                box = [repr(v) for v in w.boxes[t]]
                for a in range(w.n_atoms):
                    writer.writerow(
                        [t, w.mols[a], w.atoms[a], w.roles[a]]
                        + [repr(v) for v in w.positions[t, a]]
                        + box
                    )
    elif format == "jsonl":
        with open(path, "w") as fh:
            for t in range(w.n_frames):
                rec = {
                    "t": t,
                    "box": [float(v) for v in w.boxes[t]],
                    "mols": [
                        {
                            "id": str(w.mols[a]),
                            "role": str(w.roles[a]),
                            "xyz": [float(v) for v in w.positions[t, a]],
                        }
                        for a in range(w.n_atoms)
                    ],
                }
                fh.write(json.dumps(rec) + "\n")
    else:
        raise ValueError(f"unknown trajectory format {format!r}")


def save_unwrapped(u: UnwrappedTrajectory, path) -> None:
    """Write an unwrapped trajectory as CSV (frame,mol,x,y,z)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(UNWRAPPED_CSV_HEADER)
        for t in range(u.n_frames):
            for m in range(u.n_mols):
                writer.writerow([t, u.mols[m]] + [repr(v) for v in u.positions[t, m]])


def load_unwrapped(path, dt: float, drift_removed: bool = False) -> UnwrappedTrajectory:
    """Read an unwrapped-trajectory CSV written by save_unwrapped."""
    by_frame: dict[int, list[list[float]]] = {}
    mols_first: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != UNWRAPPED_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(UNWRAPPED_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}: line {lineno}"
            if len(row) != 5:
                raise ValueError(f"{where}: expected 5 fields, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise ValueError(f"{where}: malformed frame index {row[0]!r}") from None
            xyz = [_parse_float(v, where) for v in row[2:5]]
            if t not in by_frame:
                by_frame[t] = []
            if len(by_frame) == 1:
                mols_first.append(row[1])
            by_frame[t].append(xyz)
    if not by_frame:
        raise ValueError(f"{path}: no frame records")
    ts = sorted(by_frame)
    counts = {len(v) for v in by_frame.values()}
    if len(counts) != 1:
        raise ValueError(f"{path}: inconsistent molecule count across frames")
    positions = np.asarray([by_frame[t] for t in ts], dtype=float)
    return UnwrappedTrajectory(
        positions=positions, dt=dt, mols=np.asarray(mols_first), drift_removed=drift_removed
    )
