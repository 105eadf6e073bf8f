"""Trajectory ingestion, resampling, standardization, fold splitting and windowing.

Recordings are CSV files (``frame,agent_id,agent_type,controlled,x,y``) with a
JSON sidecar carrying the source frame rate.  Agent type labels are mapped to
integer indices through a dataset-level ``labels.json`` file.  All downstream
consumers work on fixed-rate, standardized ``SequenceWindow`` objects.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TARGET_RATE_HZ = 15.0
N_FOLDS = 5
VALIDATION_FRACTION = 0.20
MIN_PRESENCE_FRACTION = 0.50  # below this share of observed steps, an agent is loss-excluded


class TrajDataError(Exception):
    """Base class for trajectory-data failures."""


class ParseError(TrajDataError):
    """A recording file could not be parsed."""


class DataError(TrajDataError):
    """A recording parsed but violates a data invariant."""


@dataclass
class RawTrack:
    """One agent's samples on a frame grid (frames strictly increasing)."""

    agent_id: int
    agent_type: int
    controlled: bool
    frames: np.ndarray  # (n,) int
    xy: np.ndarray      # (n, 2) float

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.frames.ndim != 1 or self.xy.shape != (self.frames.size, 2):
            raise DataError(f"track {self.agent_id}: frames/xy shape mismatch")
        if self.frames.size > 1 and not np.all(np.diff(self.frames) > 0):
            raise DataError(f"track {self.agent_id}: frame indices not strictly increasing")

    @property
    def n_samples(self) -> int:
        return int(self.frames.size)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-dimension mean/std computed on training folds only."""

    mean_x: float
    mean_y: float
    std_x: float
    std_y: float

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_x, self.mean_y])

    @property
    def std(self) -> np.ndarray:
        return np.array([self.std_x, self.std_y])

    def to_dict(self) -> dict:
        return {"mean_x": self.mean_x, "mean_y": self.mean_y,
                "std_x": self.std_x, "std_y": self.std_y}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(d["mean_x"], d["mean_y"], d["std_x"], d["std_y"])


@dataclass
class SequenceWindow:
    """A fixed-length observation + prediction slice of one recording.

    Positions are stored for the full span of ``n_obs + n_pred`` timesteps;
    absent (agent, timestep) cells are NaN with ``presence`` False.  Controlled
    tracks are stored separately and must cover the whole span.
    """

    n_obs: int
    n_pred: int
    dt: float
    agent_ids: list[int]
    agent_types: np.ndarray        # (n_agents,) int
    positions: np.ndarray          # (n_agents, T, 2), NaN where absent
    presence: np.ndarray           # (n_agents, T) bool
    loss_excluded: np.ndarray      # (n_agents,) bool
    robot_ids: list[int]
    robot_types: np.ndarray        # (n_controlled,) int
    robot_xy: np.ndarray           # (n_controlled, T, 2)
    recording_id: str = ""
    start_frame: int = 0

    @property
    def total_steps(self) -> int:
        return self.n_obs + self.n_pred

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def n_controlled(self) -> int:
        return len(self.robot_ids)

    def robot_past(self, which: int = 0) -> np.ndarray:
        return self.robot_xy[which, : self.n_obs]

    def robot_future(self, which: int = 0) -> np.ndarray:
        return self.robot_xy[which, self.n_obs:]

    def ground_truth(self) -> np.ndarray:
        """Future positions of non-controlled agents, (n_agents, n_pred, 2)."""
        return self.positions[:, self.n_obs:]


@dataclass
class FoldSplit:
    """Disjoint temporal segments assigned to folds; one fold is held out."""

    segments: list[dict] = field(default_factory=list)  # recording_id, frame_start, frame_end, fold
    n_folds: int = N_FOLDS
    validation_fraction: float = VALIDATION_FRACTION
    test_fold: int = 0

    def save(self, path: Path) -> None:
        payload = {"schema_version": 1, "n_folds": self.n_folds,
                   "validation_fraction": self.validation_fraction,
                   "test_fold": self.test_fold, "segments": self.segments}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "FoldSplit":
        d = json.loads(Path(path).read_text())
        return cls(segments=d["segments"], n_folds=d["n_folds"],
                   validation_fraction=d["validation_fraction"], test_fold=d["test_fold"])


# ---------------------------------------------------------------------------
# ingestion


def ingest(path: Path, labels: list[str]) -> list[RawTrack]:
    """Parse a recording CSV into one RawTrack per agent id.

    Raises ParseError with the offending line number on malformed rows and
    DataError on duplicate (agent_id, frame) pairs or unknown type labels.
    """
    path = Path(path)
    rows_by_agent: dict[int, list[tuple[int, float, float]]] = {}
    meta_by_agent: dict[int, tuple[int, bool]] = {}
    seen: set[tuple[int, int]] = set()
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().strip()
        expected = "frame,agent_id,agent_type,controlled,x,y"
        if header != expected:
            raise ParseError(f"{path}:1: expected header '{expected}', got '{header}'")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            try:
                frame = int(parts[0])
                agent_id = int(parts[1])
                type_label = parts[2]
                controlled = int(parts[3])
                x = float(parts[4])
                y = float(parts[5])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if controlled not in (0, 1):
                raise ParseError(f"{path}:{lineno}: controlled must be 0 or 1, got {parts[3]}")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError(f"{path}:{lineno}: non-finite position")
            if type_label not in labels:
                raise DataError(f"{path}:{lineno}: unknown agent_type '{type_label}' "
                                f"(known: {labels})")
            key = (agent_id, frame)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate sample for agent {agent_id} "
                                f"at frame {frame}")
            seen.add(key)
            type_idx = labels.index(type_label)
            prev = meta_by_agent.get(agent_id)
            if prev is not None and prev != (type_idx, bool(controlled)):
                raise DataError(f"{path}:{lineno}: agent {agent_id} changes type/controlled flag")
            meta_by_agent[agent_id] = (type_idx, bool(controlled))
            rows_by_agent.setdefault(agent_id, []).append((frame, x, y))

    tracks = []
    for agent_id in sorted(rows_by_agent):
        rows = sorted(rows_by_agent[agent_id])
        type_idx, controlled = meta_by_agent[agent_id]
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        xy = np.array([[r[1], r[2]] for r in rows], dtype=np.float64)
        tracks.append(RawTrack(agent_id, type_idx, controlled, frames, xy))
    return tracks


def write_recording(path: Path, tracks: list[RawTrack], labels: list[str],
                    source_rate_hz: float, recording_id: str) -> None:
    """Write a recording CSV plus its JSON sidecar (rate + id)."""
    path = Path(path)
    rows = []
    for tr in tracks:
        for frame, (x, y) in zip(tr.frames, tr.xy):
            rows.append((int(frame), tr.agent_id, labels[tr.agent_type],
                         int(tr.controlled), float(x), float(y)))
    rows.sort()
    with path.open("w", encoding="utf-8") as f:
        f.write("frame,agent_id,agent_type,controlled,x,y\n")
        for frame, aid, label, ctrl, x, y in rows:
            f.write(f"{frame},{aid},{label},{ctrl},{x!r},{y!r}\n")
    sidecar = path.with_suffix("").with_suffix(".meta.json")
    sidecar.write_text(json.dumps(
        {"recording_id": recording_id, "source_rate_hz": source_rate_hz},
        indent=2, sort_keys=True) + "\n")


def read_sidecar(csv_path: Path) -> dict:
    sidecar = Path(csv_path).with_suffix("").with_suffix(".meta.json")
    if not sidecar.exists():
        raise TrajDataError(f"missing sidecar metadata {sidecar}")
    return json.loads(sidecar.read_text())


# ---------------------------------------------------------------------------
# resampling


def resample(tracks: list[RawTrack], source_rate: float,
             target_rate: float = TARGET_RATE_HZ) -> list[RawTrack]:
    """Resample each track to a uniform target-rate grid by linear interpolation.

    Output frame indices live on a global grid (frame j = time j/target_rate,
    sharing the origin of the source frame clock), clipped to each track's
    span.  Single-sample tracks pass through unchanged with a warning.
    """
    if source_rate < target_rate:
        raise TrajDataError(f"source rate {source_rate} Hz below target {target_rate} Hz")
    out = []
    eps = 1e-9
    for tr in tracks:
        if tr.n_samples < 2:
            warnings.warn(f"track {tr.agent_id} has a single sample; passed through unresampled")
            out.append(tr)
            continue
        t = tr.frames / source_rate
        j0 = int(math.ceil(t[0] * target_rate - eps))
        j1 = int(math.floor(t[-1] * target_rate + eps))
        grid = np.arange(j0, j1 + 1, dtype=np.int64)
        tq = grid / target_rate
        x = np.interp(tq, t, tr.xy[:, 0])
        y = np.interp(tq, t, tr.xy[:, 1])
        out.append(RawTrack(tr.agent_id, tr.agent_type, tr.controlled,
                            grid, np.stack([x, y], axis=1)))
    return out


# ---------------------------------------------------------------------------
# standardization


def fit_standardizer(tracks: list[RawTrack]) -> StandardizationStats:
    """Per-dimension mean/std (population std) over every sample position."""
    pts = np.concatenate([tr.xy for tr in tracks], axis=0) if tracks else np.zeros((0, 2))
    if pts.shape[0] < 2:
        raise TrajDataError("need at least 2 positions to fit standardization stats")
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    for dim, s in zip("xy", std):
        if s <= 0.0:
            raise TrajDataError(f"zero variance in {dim}: degenerate recording")
    return StandardizationStats(float(mean[0]), float(mean[1]), float(std[0]), float(std[1]))


def apply_standardizer(xy: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    return (np.asarray(xy, dtype=np.float64) - stats.mean) / stats.std


def invert_standardizer(xy: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    return np.asarray(xy, dtype=np.float64) * stats.std + stats.mean


def standardize_tracks(tracks: list[RawTrack], stats: StandardizationStats) -> list[RawTrack]:
    return [RawTrack(tr.agent_id, tr.agent_type, tr.controlled, tr.frames.copy(),
                     apply_standardizer(tr.xy, stats)) for tr in tracks]


# ---------------------------------------------------------------------------
# windowing


def window(tracks: list[RawTrack], n_obs: int, n_pred: int, stride: int | None = None,
           dt: float = 1.0 / TARGET_RATE_HZ, recording_id: str = "",
           frame_range: tuple[int, int] | None = None) -> tuple[list[SequenceWindow], int]:
    """Slice resampled tracks into (observe, predict) windows.

    A window is emitted only when exactly one controlled track covers its full
    span; candidate positions lacking that are counted as skipped.  Agents
    present for fewer than half the observed steps stay in the window as
    inputs but are flagged loss-excluded.  Returns (windows, n_skipped).
    """
    if stride is None:
        stride = n_pred
    if stride < 1:
        raise TrajDataError("stride must be >= 1")
    total = n_obs + n_pred
    if not tracks:
        return [], 0

    lo = min(int(tr.frames[0]) for tr in tracks)
    hi = max(int(tr.frames[-1]) for tr in tracks)
    if frame_range is not None:
        lo, hi = max(lo, frame_range[0]), min(hi, frame_range[1])

    controlled = [tr for tr in tracks if tr.controlled]
    others = [tr for tr in tracks if not tr.controlled]

    windows: list[SequenceWindow] = []
    n_skipped = 0
    start = lo
    while start + total - 1 <= hi:
        span = np.arange(start, start + total)
        robots = [tr for tr in controlled if _covers(tr, span)]
        if len(robots) != 1:
            n_skipped += 1
            start += stride
            continue

        agent_ids, agent_types, pos_rows, pres_rows = [], [], [], []
        for tr in others:
            pos, pres = _slice_track(tr, span)
            if pres[:n_obs].any():
                agent_ids.append(tr.agent_id)
                agent_types.append(tr.agent_type)
                pos_rows.append(pos)
                pres_rows.append(pres)
        if not agent_ids:
            n_skipped += 1
            start += stride
            continue
        positions = np.stack(pos_rows)
        presence = np.stack(pres_rows)
        loss_excluded = presence[:, :n_obs].sum(axis=1) < MIN_PRESENCE_FRACTION * n_obs

        robot_xy = np.stack([_slice_track(tr, span)[0] for tr in robots])
        windows.append(SequenceWindow(
            n_obs=n_obs, n_pred=n_pred, dt=dt,
            agent_ids=agent_ids, agent_types=np.array(agent_types, dtype=np.int64),
            positions=positions, presence=presence, loss_excluded=np.asarray(loss_excluded),
            robot_ids=[tr.agent_id for tr in robots],
            robot_types=np.array([tr.agent_type for tr in robots], dtype=np.int64),
            robot_xy=robot_xy, recording_id=recording_id, start_frame=int(start)))
        start += stride
    return windows, n_skipped


def _covers(tr: RawTrack, span: np.ndarray) -> bool:
    return bool(np.isin(span, tr.frames).all())


def _slice_track(tr: RawTrack, span: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.full((span.size, 2), np.nan)
    pres = np.zeros(span.size, dtype=bool)
    idx = np.searchsorted(tr.frames, span)
    for i, (j, frame) in enumerate(zip(idx, span)):
        if j < tr.frames.size and tr.frames[j] == frame:
            pos[i] = tr.xy[j]
            pres[i] = True
    return pos, pres


# ---------------------------------------------------------------------------
# folds and dataset assembly


def build_folds(recording_spans: dict[str, tuple[int, int]], n_folds: int = N_FOLDS,
                test_fold: int = 0) -> FoldSplit:
    """Assign recordings (or contiguous sub-spans of them) to disjoint folds.

    With at least ``n_folds`` recordings, each recording goes wholly to one
    fold.  With fewer, every recording's timeline is cut into enough contiguous
    segments that each fold is non-empty; segments never overlap in time.
    """
    rec_ids = sorted(recording_spans)
    if not rec_ids:
        raise TrajDataError("no recordings to split into folds")
    segments: list[dict] = []
    if len(rec_ids) >= n_folds:
        for i, rid in enumerate(rec_ids):
            lo, hi = recording_spans[rid]
            segments.append({"recording_id": rid, "frame_start": int(lo),
                             "frame_end": int(hi), "fold": i % n_folds})
    else:
        per_rec = math.ceil(n_folds / len(rec_ids))
        k = 0
        for rid in rec_ids:
            lo, hi = recording_spans[rid]
            cuts = np.linspace(lo, hi + 1, per_rec + 1).astype(int)
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b <= a:
                    continue
                segments.append({"recording_id": rid, "frame_start": int(a),
                                 "frame_end": int(b - 1), "fold": k % n_folds})
                k += 1
    return FoldSplit(segments=segments, test_fold=test_fold)


@dataclass
class Dataset:
    """Standardized, windowed dataset split into train/val/test windows."""

    name: str
    labels: list[str]
    stats: StandardizationStats
    folds: FoldSplit
    train_windows: list[SequenceWindow]
    val_windows: list[SequenceWindow]
    test_windows: list[SequenceWindow]
    dt: float = 1.0 / TARGET_RATE_HZ
    n_skipped: int = 0

    @property
    def k_types(self) -> int:
        return len(self.labels)


def list_recordings(root: Path) -> list[Path]:
    rec_dir = Path(root) / "recordings"
    if not rec_dir.is_dir():
        raise TrajDataError(f"no recordings directory under {root}")
    return sorted(rec_dir.glob("*.csv"))


def load_labels(root: Path) -> list[str]:
    labels_path = Path(root) / "labels.json"
    if not labels_path.exists():
        raise TrajDataError(f"missing labels file {labels_path}")
    labels = json.loads(labels_path.read_text())
    if not isinstance(labels, list) or not all(isinstance(s, str) for s in labels):
        raise TrajDataError(f"{labels_path}: expected a JSON list of type labels")
    return labels


def load_dataset(root: Path, n_obs: int, n_pred: int, stride: int | None = None,
                 test_fold: int = 0, seed: int = 0,
                 folds: FoldSplit | None = None) -> Dataset:
    """Load a dataset directory into standardized train/val/test windows.

    Standardization stats are fit on training-fold positions only, then
    applied everywhere.  The validation split takes a deterministic 20% of the
    training-fold windows.
    """
    root = Path(root)
    labels = load_labels(root)
    resampled: dict[str, list[RawTrack]] = {}
    for csv_path in list_recordings(root):
        meta = read_sidecar(csv_path)
        tracks = ingest(csv_path, labels)
        resampled[meta["recording_id"]] = resample(tracks, float(meta["source_rate_hz"]))
    if not resampled:
        raise TrajDataError(f"no recordings found under {root}")

    if folds is None:
        folds_path = root / "folds.json"
        if folds_path.exists():
            folds = FoldSplit.load(folds_path)
            folds.test_fold = test_fold
        else:
            spans = {rid: (int(min(t.frames[0] for t in trs)), int(max(t.frames[-1] for t in trs)))
                     for rid, trs in resampled.items()}
            folds = build_folds(spans, test_fold=test_fold)

    train_pts = []
    for seg in folds.segments:
        if seg["fold"] == folds.test_fold:
            continue
        for tr in resampled.get(seg["recording_id"], []):
            mask = (tr.frames >= seg["frame_start"]) & (tr.frames <= seg["frame_end"])
            if mask.any():
                train_pts.append(RawTrack(tr.agent_id, tr.agent_type, tr.controlled,
                                          tr.frames[mask], tr.xy[mask]))
    stats = fit_standardizer(train_pts)

    dt = 1.0 / TARGET_RATE_HZ
    train_all: list[SequenceWindow] = []
    test_all: list[SequenceWindow] = []
    n_skipped = 0
    for seg in folds.segments:
        tracks = standardize_tracks(resampled.get(seg["recording_id"], []), stats)
        wins, skipped = window(tracks, n_obs, n_pred, stride=stride, dt=dt,
                               recording_id=seg["recording_id"],
                               frame_range=(seg["frame_start"], seg["frame_end"]))
        n_skipped += skipped
        (test_all if seg["fold"] == folds.test_fold else train_all).extend(wins)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_all))
    n_val = int(round(folds.validation_fraction * len(train_all)))
    val_idx = set(order[:n_val].tolist())
    train_windows = [w for i, w in enumerate(train_all) if i not in val_idx]
    val_windows = [w for i, w in enumerate(train_all) if i in val_idx]

    return Dataset(name=root.name, labels=labels, stats=stats, folds=folds,
                   train_windows=train_windows, val_windows=val_windows,
                   test_windows=test_all, dt=dt, n_skipped=n_skipped)
