"""Turning trajectory windows into network-ready arrays."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import SampleWindow, Scene, build_scenes
from .neighborhood import (
    SIDE_GATE, Normalizer, fit_normalizer, label_maneuvers, normalize_inputs,
    raw_neighborhood, raw_offsets,
)


@dataclass
class RawSamples:
    """Unnormalized inputs and supervision for a list of windows."""

    inputs: np.ndarray        # (N, 4, 8, 30) metres / m/s / m/s^2
    present: np.ndarray       # (N, 8, 30) bool
    maneuvers: np.ndarray     # (N, 5) int
    offsets: np.ndarray       # (N, 5, 2) metres
    origins: np.ndarray       # (N, 2) target position at t0
    target_ids: np.ndarray
    t0_frames: np.ndarray

    def __len__(self):
        return len(self.maneuvers)

    def subset(self, idx) -> "RawSamples":
        return RawSamples(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def select_vehicles(self, ids) -> "RawSamples":
        ids = np.fromiter(ids, dtype=np.int64)
        return self.subset(np.isin(self.target_ids, ids))

    @classmethod
    def concat(cls, parts) -> "RawSamples":
        parts = list(parts)
        return cls(**{f.name: np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)})


@dataclass
class WindowDataset:
    """Normalized tensors plus labels; what the training loops consume."""

    inputs: np.ndarray        # (N, C, 8, 30) float32
    maneuvers: np.ndarray     # (N, 5) int
    offsets: np.ndarray       # (N, 5, 2) normalized
    origins: np.ndarray       # (N, 2)
    raw_offsets: np.ndarray   # (N, 5, 2) metres
    normalizer: Normalizer

    def __len__(self):
        return len(self.maneuvers)

    def subset(self, idx) -> "WindowDataset":
        return WindowDataset(
            self.inputs[idx], self.maneuvers[idx], self.offsets[idx],
            self.origins[idx], self.raw_offsets[idx], self.normalizer,
        )


def collect_samples(windows: list[SampleWindow], scenes: dict[int, Scene] | None = None,
                    records=None, side_gate: float = SIDE_GATE) -> RawSamples:
    if scenes is None:
        scenes = build_scenes(records)
    n = len(windows)
    inputs = np.zeros((n, 4, 8, 30))
    present = np.zeros((n, 8, 30), dtype=bool)
    maneuvers = np.zeros((n, 5), dtype=np.int64)
    offsets = np.zeros((n, 5, 2))
    origins = np.zeros((n, 2))
    for i, w in enumerate(windows):
        inputs[i], present[i], _ = raw_neighborhood(w, scenes, side_gate)
        maneuvers[i] = label_maneuvers(w)
        offsets[i] = raw_offsets(w)
        origins[i] = w.origin
    ids = np.array([w.target_id for w in windows], dtype=np.int64)
    t0 = np.array([w.t0_frame for w in windows], dtype=np.int64)
    return RawSamples(inputs, present, maneuvers, offsets, origins, ids, t0)


def make_dataset(samples: RawSamples, normalizer: Normalizer) -> WindowDataset:
    return WindowDataset(
        normalize_inputs(samples.inputs, samples.present, normalizer),
        samples.maneuvers.copy(),
        normalizer.normalize_offsets(samples.offsets).astype(np.float32),
        samples.origins.copy(),
        samples.offsets.copy(),
        normalizer,
    )


def fit_on(samples: RawSamples, normalize: bool = True) -> Normalizer:
    if not normalize:
        return Normalizer.identity()
    return fit_normalizer(samples.inputs, samples.present, samples.offsets)
