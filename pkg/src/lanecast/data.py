"""Trajectory tables: parsing, canonical I/O, per-frame scenes, vehicle splits
and extraction of overlapping history/future windows.

Canonical conventions (readers convert into them):

* 10 Hz frames, metres, seconds;
* ``x`` grows along the driving direction, ``y`` grows toward the left;
* lane ids ascend from the leftmost lane to the rightmost one, so a change to
  the left lowers the lane id.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

FRAME_RATE = 10
DT = 1.0 / FRAME_RATE
HISTORY = 30
HORIZON = 50
LOOKAHEAD = 20
FEET = 0.3048

CANONICAL_COLUMNS = ("vehicle_id", "frame", "x", "y", "v", "a", "lane_id")
FORMATS = ("canonical", "highd", "ngsim")


@dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    vehicle_id: int
    frame: int
    x: float
    y: float
    v: float
    a: float
    lane_id: int


@dataclass
class Scene:
    frame: int
    records: dict[int, TrajectoryRecord]


@dataclass(frozen=True)
class SampleWindow:
    target_id: int
    t0_frame: int
    history: tuple[TrajectoryRecord, ...]
    future: tuple[TrajectoryRecord, ...]
    lookahead: tuple[int, ...] = ()

    @property
    def current(self) -> TrajectoryRecord:
        return self.history[-1]

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.current.x, self.current.y])

    @property
    def history_frames(self) -> range:
        return range(self.history[0].frame, self.t0_frame + 1)


def derive_kinematics(frames, pos, smooth: int = 1):
    """Velocity and acceleration by backward differences of ``pos``.

    The first sample copies the second. ``smooth`` > 1 applies a centred moving
    average of that width to the derived velocity and acceleration.
    """
    frames = np.asarray(frames, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if len(pos) < 2:
        return np.zeros_like(pos), np.zeros_like(pos)
    dt = np.diff(frames) * DT
    v = np.empty_like(pos)
    v[1:] = np.diff(pos) / dt
    v[0] = v[1]
    v = _moving_average(v, smooth)
    a = np.empty_like(pos)
    a[1:] = np.diff(v) / dt
    a[0] = a[1]
    a = _moving_average(a, smooth)
    return v, a


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or len(x) < 2:
        return x
    half = width // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(x))
    return (c[hi] - c[lo]) / (hi - lo)


def _num(row: dict, key: str, line: int, cast=float):
    raw = row.get(key)
    if raw is None or raw.strip() == "":
        raise ParseError(f"missing value for column {key!r}", line)
    try:
        value = cast(float(raw)) if cast is int else cast(raw)
    except ValueError:
        raise ParseError(f"column {key!r}: cannot parse {raw!r} as a number", line) from None
    if cast is float and not math.isfinite(value):
        raise ParseError(f"column {key!r}: non-finite value {raw!r}", line)
    if cast is int and float(raw) != value:
        raise ParseError(f"column {key!r}: expected an integer, got {raw!r}", line)
    return value


def _pick(fieldnames, *options) -> str | None:
    for name in options:
        if name in fieldnames:
            return name
    return None


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        fields = reader.fieldnames or []
        for row in reader:
            if None in row:
                raise ParseError("row has more fields than the header", reader.line_num)
            if all((v or "").strip() == "" for v in row.values()):
                continue
            yield fields, reader.line_num, row


class _Collector:
    """Groups raw rows per vehicle, rejecting non-monotone frame sequences."""

    def __init__(self):
        self.tracks: dict[int, dict[str, list]] = {}

    def add(self, vid: int, frame: int, line: int, **cols):
        tr = self.tracks.get(vid)
        if tr is None:
            tr = self.tracks[vid] = defaultdict(list)
        if tr["frame"] and frame <= tr["frame"][-1]:
            raise ParseError(
                f"vehicle {vid}: frame {frame} does not increase after {tr['frame'][-1]}", line
            )
        tr["frame"].append(frame)
        for k, v in cols.items():
            tr[k].append(v)


def _records_from(collector: _Collector, smooth: int = 1) -> list[TrajectoryRecord]:
    out = []
    for vid in sorted(collector.tracks):
        tr = collector.tracks[vid]
        frames = tr["frame"]
        derived_v = derived_a = None
        if tr.get("v") is None or tr.get("a") is None or None in tr["v"] or None in tr["a"]:
            derived_v, derived_a = derive_kinematics(frames, tr["x"], smooth)
            derived_v = np.maximum(derived_v, 0.0)
        for i, f in enumerate(frames):
            v = tr["v"][i] if derived_v is None else float(derived_v[i])
            a = tr["a"][i] if derived_a is None else float(derived_a[i])
            out.append(TrajectoryRecord(vid, f, tr["x"][i], tr["y"][i], v, a, tr["lane"][i]))
    return out


def _parse_canonical(path) -> list[TrajectoryRecord]:
    col = _Collector()
    for fields, line, row in _read_rows(path):
        id_key = _pick(fields, "vehicle_id", "id")
        lane_key = _pick(fields, "lane_id", "lane")
        if id_key is None or lane_key is None or "frame" not in fields:
            raise ParseError("header must contain vehicle_id/id, frame, x, y and lane_id/lane", 1)
        has_va = "v" in fields and "a" in fields
        col.add(
            _num(row, id_key, line, int),
            _num(row, "frame", line, int),
            line,
            x=_num(row, "x", line),
            y=_num(row, "y", line),
            v=_num(row, "v", line) if has_va else None,
            a=_num(row, "a", line) if has_va else None,
            lane=_num(row, lane_key, line, int),
        )
    return _records_from(col)


def _parse_highd(path) -> list[TrajectoryRecord]:
    rows = []
    for fields, line, row in _read_rows(path):
        width = _num(row, "width", line) if "width" in fields else 0.0
        height = _num(row, "height", line) if "height" in fields else 0.0
        rows.append(
            (
                _num(row, "id", line, int),
                _num(row, "frame", line, int),
                _num(row, "x", line) + width / 2,
                _num(row, "y", line) + height / 2,
                _num(row, "xVelocity", line),
                _num(row, "xAcceleration", line) if "xAcceleration" in fields else 0.0,
                _num(row, "laneId", line, int),
                line,
            )
        )
    # driving direction per vehicle from the sign of its mean x velocity
    vel_sum = defaultdict(float)
    for r in rows:
        vel_sum[r[0]] += r[4]
    leftward = {vid for vid, s in vel_sum.items() if s < 0}
    # lanes of the leftward carriageway are numbered right-to-left in image order
    left_lanes = [r[6] for r in rows if r[0] in leftward]
    flip = (min(left_lanes) + max(left_lanes)) if left_lanes else 0

    col = _Collector()
    for vid, frame, x, y, vx, ax, lane, line in rows:
        if vid in leftward:
            x, vx, ax, lane = -x, -vx, -ax, flip - lane
        else:
            y = -y
        col.add(vid, frame, line, x=x, y=y, v=abs(vx), a=ax, lane=lane)
    return _records_from(col)


def _parse_ngsim(path, source_hz: int = FRAME_RATE, smooth: int = 5) -> list[TrajectoryRecord]:
    if source_hz % FRAME_RATE:
        raise ValueError(f"source rate {source_hz} Hz is not a multiple of {FRAME_RATE} Hz")
    step = source_hz // FRAME_RATE
    col = _Collector()
    for _, line, row in _read_rows(path):
        frame = _num(row, "Frame_ID", line, int)
        vid = _num(row, "Vehicle_ID", line, int)
        lateral = _num(row, "Local_X", line)
        longitudinal = _num(row, "Local_Y", line)
        lane = _num(row, "Lane_ID", line, int)
        if frame % step:
            continue
        col.add(
            vid, frame // step, line,
            x=longitudinal * FEET, y=-lateral * FEET, v=None, a=None, lane=lane,
        )
    return _records_from(col, smooth=smooth)


def parse_trajectory_file(path, format_tag: str = "canonical", **options) -> list[TrajectoryRecord]:
    """Read a delimited trajectory table into records sorted by (vehicle, frame).

    ``format_tag`` is one of ``canonical``, ``highd`` or ``ngsim``. Missing
    velocity/acceleration columns are derived from positions.
    """
    if format_tag == "canonical":
        return _parse_canonical(path)
    if format_tag == "highd":
        return _parse_highd(path)
    if format_tag == "ngsim":
        return _parse_ngsim(path, **options)
    raise ValueError(f"unknown trajectory format {format_tag!r}; choose from {FORMATS}")


def write_trajectory_file(records, path) -> None:
    """Write records in the canonical table; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for r in records:
            w.writerow((r.vehicle_id, r.frame, repr(r.x), repr(r.y), repr(r.v), repr(r.a), r.lane_id))


def group_tracks(records) -> dict[int, list[TrajectoryRecord]]:
    tracks: dict[int, list[TrajectoryRecord]] = defaultdict(list)
    for r in records:
        tracks[r.vehicle_id].append(r)
    for tr in tracks.values():
        tr.sort(key=lambda r: r.frame)
    return dict(tracks)


def build_scenes(records) -> dict[int, Scene]:
    scenes: dict[int, Scene] = {}
    for r in records:
        scene = scenes.get(r.frame)
        if scene is None:
            scene = scenes[r.frame] = Scene(r.frame, {})
        if r.vehicle_id in scene.records:
            raise ValueError(f"vehicle {r.vehicle_id} appears twice in frame {r.frame}")
        scene.records[r.vehicle_id] = r
    return scenes


def vehicle_ids(records) -> list[int]:
    return sorted({r.vehicle_id for r in records})


def split_by_vehicle(records, fractions=(0.7, 0.1, 0.2), seed: int = 0):
    """Seeded random partition of vehicle ids into train/val/test sets.

    Split sizes follow the largest-remainder rule; every split with a non-zero
    fraction receives at least one vehicle.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    ids = records if records and isinstance(next(iter(records)), (int, np.integer)) else vehicle_ids(records)
    ids = sorted({int(i) for i in ids})
    n = len(ids)
    if n < len(fractions):
        raise ValueError(f"cannot split {n} vehicles into {len(fractions)} parts")

    exact = fractions * n
    sizes = np.floor(exact + 1e-9).astype(int)
    order = np.argsort(-(exact - sizes), kind="stable")
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    for i in np.flatnonzero((sizes == 0) & (fractions > 0)):
        sizes[np.argmax(sizes)] -= 1
        sizes[i] += 1

    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    parts, start = [], 0
    for size in sizes:
        parts.append(frozenset(shuffled[start : start + size]))
        start += size
    return tuple(parts)


def write_id_list(ids, path) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in sorted(ids)), encoding="utf-8")


def read_id_list(path) -> frozenset[int]:
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(int(tok) for tok in text.split())


def _contiguous_runs(track: list[TrajectoryRecord]):
    start = 0
    for i in range(1, len(track) + 1):
        if i == len(track) or track[i].frame != track[i - 1].frame + 1:
            yield track[start:i]
            start = i


def extract_windows(records, stride: int = 10, history: int = HISTORY, horizon: int = HORIZON,
                    lookahead: int = LOOKAHEAD, vehicles=None) -> list[SampleWindow]:
    """Overlapping windows of ``history`` past and ``horizon`` future frames.

    Windows start every ``stride`` frames along each contiguous run of a
    vehicle's track, so a run of L frames yields floor((L-80)/stride)+1 windows
    with the defaults. Up to ``lookahead`` further lane ids are attached for
    labelling near the end of the horizon.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    tracks = records if isinstance(records, dict) else group_tracks(records)
    span = history + horizon
    windows = []
    for vid in sorted(tracks):
        if vehicles is not None and vid not in vehicles:
            continue
        for run in _contiguous_runs(tracks[vid]):
            for s in range(0, len(run) - span + 1, stride):
                hist = tuple(run[s : s + history])
                fut = tuple(run[s + history : s + span])
                extra = tuple(r.lane_id for r in run[s + span : s + span + lookahead])
                windows.append(SampleWindow(vid, hist[-1].frame, hist, fut, extra))
    return windows


def window_at(tracks: dict[int, list[TrajectoryRecord]], target_id: int, t0_frame: int,
              history: int = HISTORY, horizon: int = HORIZON, lookahead: int = LOOKAHEAD) -> SampleWindow:
    """The window of ``target_id`` whose newest history frame is ``t0_frame``."""
    if target_id not in tracks:
        raise KeyError(f"unknown vehicle {target_id}")
    by_frame = {r.frame: r for r in tracks[target_id]}
    try:
        hist = tuple(by_frame[f] for f in range(t0_frame - history + 1, t0_frame + 1))
        fut = tuple(by_frame[f] for f in range(t0_frame + 1, t0_frame + horizon + 1))
    except KeyError as exc:
        raise ValueError(f"vehicle {target_id} lacks frame {exc.args[0]} for a window at {t0_frame}") from None
    extra = []
    for f in range(t0_frame + horizon + 1, t0_frame + horizon + lookahead + 1):
        if f not in by_frame:
            break
        extra.append(by_frame[f].lane_id)
    return SampleWindow(target_id, t0_frame, hist, fut, tuple(extra))
