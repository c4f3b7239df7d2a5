import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanecast import data
from lanecast.data import SampleWindow, Scene, TrajectoryRecord
from lanecast.neighborhood import (
    LEFT, MIRROR, RIGHT, STRAIGHT, Normalizer, Slot, assign_slots, build_tensor, fit_normalizer,
    label_maneuvers, raw_neighborhood, raw_offsets, target_offsets,
)

W = 3.5


def rec(vid, x, lane, frame=0, v=20.0, a=0.0, n_lanes=3):
    return TrajectoryRecord(vid, frame, float(x), (n_lanes - lane + 0.5) * W, v, a, lane)


def scene_of(*records):
    return Scene(records[0].frame, {r.vehicle_id: r for r in records})


def brute_force_slots(scene, tid, gate=15.0):
    """Scan every vehicle once per slot, following the slot rules literally."""
    t = scene.records[tid]
    out = {Slot.T: tid}
    best_f = None
    for vid, r in scene.records.items():
        if vid != tid and r.lane_id == t.lane_id and r.x > t.x:
            if best_f is None or (r.x - t.x, vid) < best_f:
                best_f = (r.x - t.x, vid)
    if best_f:
        out[Slot.F] = best_f[1]
    for dl, (front, side, rear) in ((-1, (Slot.FL, Slot.L, Slot.RL)), (1, (Slot.FR, Slot.R, Slot.RR))):
        lane = [(r.x - t.x, vid) for vid, r in scene.records.items() if vid != tid and r.lane_id == t.lane_id + dl]
        side_vid = None
        best = None
        for dx, vid in lane:
            key = (abs(dx), -dx, vid)
            if best is None or key < best:
                best = key
        if best is not None and best[0] <= gate:
            side_vid = best[2]
            out[side] = side_vid
        fronts = [(dx, vid) for dx, vid in lane if vid != side_vid and dx > 0]
        rears = [(-dx, vid) for dx, vid in lane if vid != side_vid and dx < 0]
        if fronts:
            out[front] = min(fronts)[1]
        if rears:
            out[rear] = min(rears)[1]
    return out


def test_fig1_layout():
    s = scene_of(rec(1, 0, 2), rec(2, 30, 2), rec(3, 3, 1), rec(4, 40, 1), rec(5, -2, 3), rec(6, -35, 1))
    slots = assign_slots(s, 1)
    assert slots == {Slot.T: 1, Slot.F: 2, Slot.L: 3, Slot.FL: 4, Slot.R: 5, Slot.RL: 6}
    assert Slot.FR not in slots and Slot.RR not in slots


def test_alone_on_road():
    assert assign_slots(scene_of(rec(9, 0, 2)), 9) == {Slot.T: 9}
    with pytest.raises(KeyError):
        assign_slots(scene_of(rec(9, 0, 2)), 1)


def test_side_gate_and_fallback_to_front():
    s = scene_of(rec(1, 0, 2), rec(2, 16, 1), rec(3, 60, 1))
    assert assign_slots(s, 1) == {Slot.T: 1, Slot.FL: 2}
    assert assign_slots(s, 1, side_gate=20.0) == {Slot.T: 1, Slot.L: 2, Slot.FL: 3}


def random_scene(r):
    n = int(r.integers(1, 15))
    recs = [rec(1, 0.0, int(r.integers(1, 4)))]
    for vid in range(2, n + 1):
        # coarse grid makes equal gaps and |dx| ties common
        recs.append(rec(vid, float(r.integers(-12, 13)) * 2.5, int(r.integers(1, 4))))
    return scene_of(*recs)


def test_slots_match_brute_force_on_1000_scenes():
    r = np.random.default_rng(7)
    for _ in range(1000):
        s = random_scene(r)
        got = assign_slots(s, 1)
        assert got == brute_force_slots(s, 1)
        assert len(set(got.values())) == len(got)


def mirror_scene(scene, n_lanes=3):
    return Scene(scene.frame, {
        vid: TrajectoryRecord(vid, r.frame, r.x, -r.y, r.v, r.a, n_lanes + 1 - r.lane_id)
        for vid, r in scene.records.items()
    })


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mirror_swaps_sides(seed):
    s = random_scene(np.random.default_rng(seed))
    a = assign_slots(s, 1)
    b = assign_slots(mirror_scene(s), 1)
    assert {MIRROR[k]: v for k, v in a.items()} == b


# ------------------------------------------------------------- windows & tensors

def constant_world(tracks_spec, n_frames=100):
    """Records for vehicles at constant speed: spec is {vid: (x0, lane, v)}."""
    recs = []
    for vid, (x0, lane, v) in tracks_spec.items():
        for f in range(n_frames):
            recs.append(rec(vid, x0 + v * f / 10, lane, frame=f, v=v))
    return recs


def test_hand_computed_tensor():
    recs = constant_world({1: (0.0, 2, 20.0), 2: (30.0, 2, 15.0), 3: (5.0, 1, 20.0)})
    tracks = data.group_tracks(recs)
    w = data.window_at(tracks, 1, 29)
    t = build_tensor(w, data.build_scenes(recs), Normalizer.identity())
    assert t.values.shape == (4, 8, 30)
    assert t.slots == {Slot.T: 1, Slot.F: 2, Slot.L: 3}
    d = np.arange(30) - 29            # frames relative to t0
    target_x0 = 20.0 * 29 / 10        # target position at t0
    np.testing.assert_allclose(t.values[0, Slot.T], 2.0 * d, atol=1e-5)
    np.testing.assert_allclose(t.values[0, Slot.F], 30.0 + 1.5 * (d + 29) - target_x0, atol=1e-5)
    np.testing.assert_allclose(t.values[0, Slot.L], 5.0 + 2.0 * d, atol=1e-5)
    np.testing.assert_allclose(t.values[1, Slot.L], W, atol=1e-6)
    np.testing.assert_allclose(t.values[1, Slot.F], 0.0, atol=1e-6)
    np.testing.assert_allclose(t.values[2, Slot.F], 15.0)
    assert not t.values[3].any()
    assert not t.values[:, [Slot.FL, Slot.RL, Slot.FR, Slot.R, Slot.RR]].any()
    np.testing.assert_array_equal(t.mask, [1, 1, 0, 1, 0, 0, 0, 0])


def test_reference_point_identity():
    recs = constant_world({1: (0.0, 2, 20.0), 2: (40.0, 2, 22.0)})
    norm = Normalizer(np.array([1.0, -0.5, 20.0, 0.1]), np.array([10.0, 2.0, 3.0, 0.5]), np.zeros(2), np.ones(2))
    w = data.window_at(data.group_tracks(recs), 1, 40)
    t = build_tensor(w, data.build_scenes(recs), norm)
    assert t.values[0, Slot.T, -1] == pytest.approx((0 - 1.0) / 10.0)
    assert t.values[1, Slot.T, -1] == pytest.approx((0 + 0.5) / 2.0)


def test_zero_row_property_with_late_arrival():
    recs = constant_world({1: (0.0, 2, 20.0), 2: (12.0, 1, 20.0)})
    recs = [r for r in recs if not (r.vehicle_id == 2 and r.frame < 20)]  # neighbor enters late
    scenes = data.build_scenes(recs)
    w = data.window_at(data.group_tracks(recs), 1, 29)
    norm = Normalizer(np.array([5.0, 1.0, 20.0, 0.0]), np.ones(4), np.zeros(2), np.ones(2))
    t = build_tensor(w, scenes, norm)
    for slot in Slot:
        assert (not t.mask[slot]) == (not t.values[:, slot].any())
    assert not t.values[:, Slot.L, :10].any() and t.values[:, Slot.L, 10:].any()


def test_missing_target_frame_rejected():
    recs = constant_world({1: (0.0, 2, 20.0)})
    w = data.window_at(data.group_tracks(recs), 1, 29)
    scenes = data.build_scenes([r for r in recs if r.frame != 10])
    with pytest.raises(ValueError, match="frame 10"):
        raw_neighborhood(w, scenes)


def test_removing_unslotted_vehicle_keeps_tensor():
    recs = constant_world({1: (0.0, 2, 20.0), 2: (30.0, 2, 20.0), 3: (80.0, 2, 20.0)})
    w = data.window_at(data.group_tracks(recs), 1, 29)
    full = build_tensor(w, data.build_scenes(recs), Normalizer.identity())
    cut = build_tensor(w, data.build_scenes([r for r in recs if r.vehicle_id != 3]), Normalizer.identity())
    np.testing.assert_array_equal(full.values, cut.values)


# ------------------------------------------------------------- labels

def lane_window(lanes_future, past_lane=2):
    hist = tuple(rec(1, 0, past_lane, frame=f) for f in range(30))
    fut = tuple(rec(1, 0, lanes_future[k], frame=30 + k) for k in range(50))
    return SampleWindow(1, 29, hist, fut, tuple(lanes_future[50:]))


def crossing(at_s, direction, n=70):
    k = int(round(at_s * 10))          # first future frame in the new lane, offset from t0
    new = 1 if direction == "left" else 3
    return [2 if 30 + i < 30 + k else new for i in range(1, n + 1)]


def test_no_change_is_straight():
    np.testing.assert_array_equal(label_maneuvers(lane_window([2] * 70)), [0, 0, 0, 0, 0])


def test_left_crossing_at_2_5s():
    np.testing.assert_array_equal(label_maneuvers(lane_window(crossing(2.5, "left"))), [1, 1, 1, 1, 0])


def test_right_crossing_at_0_5s():
    np.testing.assert_array_equal(label_maneuvers(lane_window(crossing(0.5, "right"))), [2, 2, 0, 0, 0])


def test_lookahead_crossing_labels_last_step():
    # crossing 6.5 s after t0 lies beyond the 5 s horizon but within 2 s of step 5
    assert label_maneuvers(lane_window(crossing(6.5, "left"))).tolist() == [0, 0, 0, 0, 1]


def test_nearest_crossing_wins():
    lanes = [2] * 10 + [1] * 20 + [2] * 40      # left at 1.0 s, right back at 3.0 s
    np.testing.assert_array_equal(label_maneuvers(lane_window(lanes)), [LEFT, LEFT, RIGHT, RIGHT, RIGHT])


def test_explicit_future_ids_and_unknown_lane():
    w = lane_window([2] * 70)
    assert label_maneuvers(w, crossing(2.5, "right")).tolist() == [2, 2, 2, 2, 0]
    with pytest.raises(ValueError):
        label_maneuvers(w, [0] * 70)


@settings(max_examples=60, deadline=None)
@given(st.integers(-20, 70), st.sampled_from(["left", "right"]))
def test_label_rule_property(k, direction):
    lanes = [2 if i < k else (1 if direction == "left" else 3) for i in range(1, 71)]
    got = label_maneuvers(lane_window(lanes))
    cls = LEFT if direction == "left" else RIGHT
    first_new = max(k, 1)              # offset of the first frame in the new lane
    for step in range(1, 6):
        expected = cls if (first_new <= 70 and abs(first_new - 10 * step) <= 20) else STRAIGHT
        assert got[step - 1] == expected


def test_mirrored_labels_swap():
    lanes = crossing(1.5, "left")
    mirrored = [4 - l for l in lanes]
    a = label_maneuvers(lane_window(lanes))
    b = label_maneuvers(lane_window(mirrored))
    swap = np.array([STRAIGHT, RIGHT, LEFT])
    np.testing.assert_array_equal(swap[a], b)


# ------------------------------------------------------------- offsets & normalizer

def test_constant_speed_offsets():
    recs = constant_world({1: (0.0, 2, 20.0)})
    w = data.window_at(data.group_tracks(recs), 1, 29)
    np.testing.assert_allclose(raw_offsets(w), [[20, 0], [40, 0], [60, 0], [80, 0], [100, 0]], atol=1e-9)


def test_stationary_offsets_are_normalized_zero():
    recs = constant_world({1: (5.0, 2, 0.0)})
    w = data.window_at(data.group_tracks(recs), 1, 29)
    norm = Normalizer(np.zeros(4), np.ones(4), np.array([3.0, -1.0]), np.array([2.0, 4.0]))
    np.testing.assert_allclose(target_offsets(w, norm), np.tile([-1.5, 0.25], (5, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_offset_normalization_round_trip(seed):
    r = np.random.default_rng(seed)
    norm = Normalizer(r.normal(size=4), r.uniform(0.1, 5, 4), r.normal(size=2) * 50, r.uniform(0.1, 40, 2))
    o = r.normal(size=(5, 2)) * 60
    np.testing.assert_allclose(norm.denormalize_offsets(norm.normalize_offsets(o)), o, atol=1e-6)


def test_fit_normalizer_uses_occupied_entries_only():
    raw = np.zeros((2, 4, 8, 30))
    present = np.zeros((2, 8, 30), dtype=bool)
    raw[:, 0, 0] = 4.0
    raw[1, 0, 0, :] = 6.0
    raw[:, 2, 0] = 25.0
    present[:, 0] = True
    n = fit_normalizer(raw, present, np.ones((2, 5, 2)))
    assert n.in_mean[0] == pytest.approx(5.0) and n.in_std[0] == pytest.approx(1.0)
    assert n.in_mean[2] == pytest.approx(25.0)
    assert n.in_std[1] == 1.0               # constant channel falls back to unit scale
    assert n.out_std.shape == (5, 2) and np.all(n.out_std == 1.0)
    with pytest.raises(ValueError):
        Normalizer(np.zeros(4), np.zeros(4), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        Normalizer(np.zeros(4), np.ones(4), np.zeros((3, 2)), np.ones((3, 2)))


def test_output_statistics_per_step():
    r = np.random.default_rng(5)
    offsets = r.normal(size=(200, 5, 2)) * [[4.0, 0.5]] + np.arange(1, 6)[:, None] * [25.0, 0.0]
    present = np.zeros((200, 8, 30), dtype=bool)
    present[:, 0] = True
    n = fit_normalizer(r.normal(size=(200, 4, 8, 30)), present, offsets)
    for s in range(5):
        for ax in range(2):
            col = offsets[:, s, ax]
            assert n.out_mean[s, ax] == pytest.approx(col.sum() / len(col))
            assert n.out_std[s, ax] == pytest.approx(np.sqrt(((col - col.mean()) ** 2).mean()))
    z = n.normalize_offsets(offsets)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(n.denormalize_offsets(z), offsets, atol=1e-9)
