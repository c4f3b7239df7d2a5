"""Semantic neighborhood of a target vehicle and the supervision derived from it.

A sample is a ``4 x 8 x 30`` tensor: channels (x, y, v, a), one row per
neighbor slot, one column per past frame (oldest first). Positions are taken
relative to the target at the newest frame. Rows of absent neighbors are
exactly zero after normalization.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .data import FRAME_RATE, HISTORY, SampleWindow, Scene

PRED_STEPS = 5
N_CLASSES = 3
N_CHANNELS = 4
STRAIGHT, LEFT, RIGHT = 0, 1, 2
CLASS_NAMES = ("straight", "left", "right")
SIDE_GATE = 15.0
LABEL_HALF_WIDTH = 2 * FRAME_RATE  # frames either side of a lane-id change


class Slot(IntEnum):
    T = 0
    F = 1
    FL = 2
    L = 3
    RL = 4
    FR = 5
    R = 6
    RR = 7


N_SLOTS = len(Slot)
MIRROR = {
    Slot.T: Slot.T, Slot.F: Slot.F,
    Slot.FL: Slot.FR, Slot.L: Slot.R, Slot.RL: Slot.RR,
    Slot.FR: Slot.FL, Slot.R: Slot.L, Slot.RR: Slot.RL,
}


@dataclass(frozen=True)
class Normalizer:
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self):
        for name in ("in_mean", "in_std", "out_mean", "out_std"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        # output statistics are (rows, 2): one row shared by all steps, or one per step
        for name in ("out_mean", "out_std"):
            object.__setattr__(self, name, np.atleast_2d(getattr(self, name)))
        if self.in_mean.shape != self.in_std.shape or self.in_mean.ndim != 1:
            raise ValueError("input mean and std must be matching vectors")
        rows = self.out_mean.shape[0]
        if self.out_mean.shape != self.out_std.shape or self.out_mean.shape[1] != 2 or rows not in (1, PRED_STEPS):
            raise ValueError(f"output statistics must have shape (1, 2) or ({PRED_STEPS}, 2), got {self.out_mean.shape}")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("normalizer standard deviations must be positive")

    @classmethod
    def identity(cls, channels: int = N_CHANNELS) -> "Normalizer":
        return cls(np.zeros(channels), np.ones(channels), np.zeros(2), np.ones(2))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.in_mean, self.in_std, self.out_mean, self.out_std):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def normalize_offsets(self, offsets):
        return (np.asarray(offsets) - self.out_mean) / self.out_std

    def denormalize_offsets(self, normalized):
        return np.asarray(normalized) * self.out_std + self.out_mean

    def __eq__(self, other):
        if not isinstance(other, Normalizer):
            return NotImplemented
        return self.digest() == other.digest()

    def __hash__(self):
        return hash(self.digest())


def fit_normalizer(raw_inputs: np.ndarray, present: np.ndarray, raw_offsets: np.ndarray) -> Normalizer:
    """Per-channel z-score statistics over occupied entries of the training set.

    Output offsets get a mean and std per step and axis: the 1 s and 5 s
    offsets differ in scale by an order of magnitude, and a shared scale lets
    the lateral axis dominate the loss at short horizons.

    ``raw_inputs`` is ``(N, 4, 8, 30)``, ``present`` the ``(N, 8, 30)`` occupancy
    and ``raw_offsets`` the ``(N, 5, 2)`` future offsets in metres.
    """
    vals = np.stack([raw_inputs[:, c][present] for c in range(raw_inputs.shape[1])])
    in_mean = vals.mean(axis=1)
    in_std = vals.std(axis=1)
    out_mean = raw_offsets.mean(axis=0)
    out_std = raw_offsets.std(axis=0)
    in_std = np.where(in_std > 1e-9, in_std, 1.0)
    out_std = np.where(out_std > 1e-9, out_std, 1.0)
    return Normalizer(in_mean, in_std, out_mean, out_std)


@dataclass
class NeighborhoodTensor:
    values: np.ndarray
    mask: np.ndarray
    slots: dict


def assign_slots(scene: Scene, target_id: int, side_gate: float = SIDE_GATE) -> dict[Slot, int]:
    """Map occupied neighbor slots to vehicle ids for one frame.

    F is the nearest same-lane vehicle ahead. In each adjacent lane the side
    slot takes the vehicle with the smallest longitudinal gap if that gap is
    within ``side_gate``; of the remaining vehicles in the lane the nearest one
    ahead goes front-left/right and the nearest one behind rear-left/right.
    Equal gaps go to the lower vehicle id.
    """
    if target_id not in scene.records:
        raise KeyError(f"target {target_id} is not present in frame {scene.frame}")
    target = scene.records[target_id]
    by_lane: dict[int, list[tuple[float, int]]] = {}
    for vid, r in scene.records.items():
        if vid != target_id:
            by_lane.setdefault(r.lane_id, []).append((r.x - target.x, vid))

    slots = {Slot.T: target_id}
    ahead = [c for c in by_lane.get(target.lane_id, []) if c[0] > 0]
    if ahead:
        slots[Slot.F] = min(ahead)[1]

    for lane, (front, side, rear) in (
        (target.lane_id - 1, (Slot.FL, Slot.L, Slot.RL)),
        (target.lane_id + 1, (Slot.FR, Slot.R, Slot.RR)),
    ):
        cands = by_lane.get(lane, [])
        if not cands:
            continue
        nearest = min(cands, key=lambda c: (abs(c[0]), -c[0], c[1]))
        if abs(nearest[0]) <= side_gate:
            slots[side] = nearest[1]
            cands = [c for c in cands if c[1] != nearest[1]]
        fronts = [c for c in cands if c[0] > 0]
        rears = [c for c in cands if c[0] < 0]
        if fronts:
            slots[front] = min(fronts)[1]
        if rears:
            slots[rear] = min(rears, key=lambda c: (-c[0], c[1]))[1]
    return slots


def raw_neighborhood(window: SampleWindow, scenes: dict[int, Scene], side_gate: float = SIDE_GATE):
    """Unnormalized tensor ``(4, 8, H)``, per-entry occupancy ``(8, H)``, slot map.

    Slots are assigned once at the newest history frame and held fixed.
    """
    t0 = window.t0_frame
    if t0 not in scenes or window.target_id not in scenes[t0].records:
        raise ValueError(f"target {window.target_id} missing from frame {t0}")
    slots = assign_slots(scenes[t0], window.target_id, side_gate)
    origin = scenes[t0].records[window.target_id]
    frames = list(window.history_frames)
    raw = np.zeros((N_CHANNELS, N_SLOTS, len(frames)))
    present = np.zeros((N_SLOTS, len(frames)), dtype=bool)
    for j, f in enumerate(frames):
        scene = scenes.get(f)
        if scene is None or window.target_id not in scene.records:
            raise ValueError(f"target {window.target_id} missing from history frame {f}")
        for slot, vid in slots.items():
            r = scene.records.get(vid)
            if r is None:
                continue
            raw[:, slot, j] = (r.x - origin.x, r.y - origin.y, r.v, r.a)
            present[slot, j] = True
    return raw, present, slots


def normalize_inputs(raw: np.ndarray, present: np.ndarray, normalizer: Normalizer, dtype=np.float32) -> np.ndarray:
    """Z-score ``raw`` per channel and zero every unoccupied entry.

    Works on single ``(4, 8, H)`` or batched ``(N, 4, 8, H)`` inputs.
    """
    shape = (-1, 1, 1) if raw.ndim == 3 else (1, -1, 1, 1)
    z = (raw - normalizer.in_mean.reshape(shape)) / normalizer.in_std.reshape(shape)
    occ = present[None] if raw.ndim == 3 else present[:, None]
    return np.where(occ, z, 0.0).astype(dtype)


def build_tensor(window: SampleWindow, scenes: dict[int, Scene], normalizer: Normalizer,
                 side_gate: float = SIDE_GATE) -> NeighborhoodTensor:
    raw, present, slots = raw_neighborhood(window, scenes, side_gate)
    mask = np.zeros(N_SLOTS, dtype=bool)
    mask[list(slots)] = True
    return NeighborhoodTensor(normalize_inputs(raw, present, normalizer), mask, slots)


def label_maneuvers(window: SampleWindow, lane_ids_future=None) -> np.ndarray:
    """Per-second maneuver classes for the 5 prediction steps.

    A lane-id change at frame offset ``k`` (first frame in the new lane,
    relative to t0) marks every step within +-2 s of it as a change toward the
    lower (left) or higher (right) lane id; the nearest change wins where
    windows overlap.
    """
    past = [r.lane_id for r in window.history]
    if lane_ids_future is None:
        future = [r.lane_id for r in window.future] + list(window.lookahead)
    else:
        future = [int(v) for v in lane_ids_future]
    lanes = np.asarray(past + future, dtype=np.int64)
    if np.any(lanes < 1):
        raise ValueError(f"unknown lane id {lanes[lanes < 1][0]} in window of vehicle {window.target_id}")
    t0_idx = len(past) - 1
    idx = np.flatnonzero(np.diff(lanes)) + 1
    offsets = idx - t0_idx
    directions = np.where(lanes[idx] < lanes[idx - 1], LEFT, RIGHT)

    labels = np.full(PRED_STEPS, STRAIGHT, dtype=np.int64)
    for step in range(1, PRED_STEPS + 1):
        if len(offsets) == 0:
            break
        dist = np.abs(offsets - step * FRAME_RATE)
        best = int(np.argmin(dist))
        if dist[best] <= LABEL_HALF_WIDTH:
            labels[step - 1] = directions[best]
    return labels


def raw_offsets(window: SampleWindow) -> np.ndarray:
    """Future positions at 1..5 s minus the target position at t0, in metres."""
    out = np.empty((PRED_STEPS, 2))
    for k in range(PRED_STEPS):
        r = window.future[(k + 1) * FRAME_RATE - 1]
        out[k] = (r.x - window.current.x, r.y - window.current.y)
    return out


def target_offsets(window: SampleWindow, normalizer: Normalizer) -> np.ndarray:
    return normalizer.normalize_offsets(raw_offsets(window))


def denormalize_offsets(normalized, normalizer: Normalizer) -> np.ndarray:
    return normalizer.denormalize_offsets(normalized)


__all__ = [
    "HISTORY", "PRED_STEPS", "N_CLASSES", "STRAIGHT", "LEFT", "RIGHT", "Slot", "MIRROR",
    "Normalizer", "fit_normalizer", "NeighborhoodTensor", "assign_slots", "raw_neighborhood",
    "normalize_inputs", "build_tensor", "label_maneuvers", "raw_offsets", "target_offsets",
    "denormalize_offsets",
]
