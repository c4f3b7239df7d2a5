"""Analytic highway scenarios with exact ground truth.

Two layers:

* :func:`generate` executes a :class:`ScenarioSpec` — explicit per-vehicle
  scripts (initial state, optional quintic lane change, optional speed ramp).
* a small rule-based traffic world (:class:`WorldChoices`,
  :func:`world_scenario`, :func:`benchmark_corpus`) that writes those scripts
  so that the target's future maneuver follows from its neighborhood: a slower
  leader triggers a lane change once the gap shrinks to ``trigger_gap``; the
  left lane is preferred, the right lane is the fallback, and with both blocked
  the target brakes to the leader's speed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .data import FRAME_RATE, HISTORY, HORIZON, LOOKAHEAD, TrajectoryRecord, group_tracks, window_at
from .neighborhood import LEFT, RIGHT, label_maneuvers

DIRECTIONS = ("left", "right")
MIN_DURATION = 8.0


@dataclass(frozen=True)
class LaneChange:
    direction: str
    start: float
    duration: float = 4.0


@dataclass(frozen=True)
class SpeedChange:
    start: float
    target_speed: float
    rate: float


@dataclass(frozen=True)
class VehicleScript:
    vehicle_id: int
    x: float
    lane: int
    v: float
    a: float = 0.0
    lane_change: LaneChange | None = None
    speed_change: SpeedChange | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    vehicles: tuple[VehicleScript, ...]
    n_lanes: int = 3
    lane_width: float = 3.5
    duration: float = 10.0
    rate: int = FRAME_RATE
    noise: float = 0.0
    frame_offset: int = 0

    def validate(self) -> None:
        if self.rate != FRAME_RATE:
            raise ValueError(f"scenarios are sampled at {FRAME_RATE} Hz")
        if self.duration < MIN_DURATION:
            raise ValueError(f"duration must be >= {MIN_DURATION} s to hold one full window")
        if self.n_lanes < 1 or self.lane_width <= 0 or self.noise < 0:
            raise ValueError("need n_lanes >= 1, lane_width > 0 and noise >= 0")
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")
        for v in self.vehicles:
            if not 1 <= v.lane <= self.n_lanes:
                raise ValueError(f"vehicle {v.vehicle_id}: lane {v.lane} does not exist")
            if v.v < 0:
                raise ValueError(f"vehicle {v.vehicle_id}: negative speed")
            lc = v.lane_change
            if lc is not None:
                if lc.direction not in DIRECTIONS:
                    raise ValueError(f"vehicle {v.vehicle_id}: unknown direction {lc.direction!r}")
                if lc.duration <= 0:
                    raise ValueError(f"vehicle {v.vehicle_id}: lane change duration must be > 0")
                if not 1 <= target_lane(v.lane, lc.direction) <= self.n_lanes:
                    raise ValueError(f"vehicle {v.vehicle_id}: no lane to the {lc.direction} of lane {v.lane}")
            sc = v.speed_change
            if sc is not None and (sc.rate <= 0 or sc.target_speed < 0):
                raise ValueError(f"vehicle {v.vehicle_id}: speed change needs rate > 0 and target >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicles"] = [{k: val for k, val in v.items() if val is not None} for v in d["vehicles"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        vehicles = []
        for v in d.pop("vehicles"):
            v = dict(v)
            if v.get("lane_change") is not None:
                v["lane_change"] = LaneChange(**v["lane_change"])
            if v.get("speed_change") is not None:
                v["speed_change"] = SpeedChange(**v["speed_change"])
            vehicles.append(VehicleScript(**v))
        return cls(vehicles=tuple(vehicles), **d)


def target_lane(lane: int, direction: str) -> int:
    return lane - 1 if direction == "left" else lane + 1


def lane_center(lane: int, n_lanes: int, width: float) -> float:
    """Lateral coordinate of a lane centre; lane 1 is leftmost, y grows leftward."""
    return (n_lanes - lane + 0.5) * width


def quintic(tau):
    """Smooth 0->1 step with zero slope and curvature at both ends."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def _speed_profile(script: VehicleScript, t: np.ndarray) -> np.ndarray:
    v = np.maximum(script.v + script.a * t, 0.0)
    sc = script.speed_change
    if sc is not None:
        v_start = max(script.v + script.a * sc.start, 0.0)
        step = np.sign(sc.target_speed - v_start) * sc.rate * np.maximum(t - sc.start, 0.0)
        ramp = v_start + step
        ramp = np.minimum(ramp, sc.target_speed) if sc.target_speed >= v_start else np.maximum(ramp, sc.target_speed)
        v = np.where(t >= sc.start, ramp, v)
    return v


def generate(spec: ScenarioSpec, seed: int = 0) -> list[TrajectoryRecord]:
    """Records for every scripted vehicle, sorted by (vehicle, frame).

    Positions integrate the speed profile with backward Euler, so backward
    differences of noise-free ``x`` reproduce ``v`` exactly and ``a`` is the
    backward difference of ``v``. ``noise`` adds Gaussian jitter to x and y
    only. The lane id switches at the first frame at or past the lateral
    midpoint of a lane change.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = int(round(spec.duration * spec.rate))
    k = np.arange(n)
    t = k / spec.rate
    dt = 1.0 / spec.rate
    records = []
    for script in sorted(spec.vehicles, key=lambda s: s.vehicle_id):
        v = _speed_profile(script, t)
        x = script.x + np.concatenate([[0.0], np.cumsum(v[1:] * dt)])
        a = np.empty(n)
        a[1:] = np.diff(v) / dt
        a[0] = a[1] if n > 1 else script.a
        y = np.full(n, lane_center(script.lane, spec.n_lanes, spec.lane_width))
        lane = np.full(n, script.lane, dtype=np.int64)
        lc = script.lane_change
        if lc is not None:
            new_lane = target_lane(script.lane, lc.direction)
            y_to = lane_center(new_lane, spec.n_lanes, spec.lane_width)
            y = y + (y_to - y) * quintic((t - lc.start) / lc.duration)
            crossed = (k - lc.start * spec.rate) >= lc.duration * spec.rate / 2 - 1e-6
            lane[crossed] = new_lane
        if spec.noise > 0:
            x = x + rng.normal(0.0, spec.noise, n)
            y = y + rng.normal(0.0, spec.noise, n)
        for i in range(n):
            records.append(TrajectoryRecord(
                script.vehicle_id, spec.frame_offset + int(k[i]),
                float(x[i]), float(y[i]), float(v[i]), float(a[i]), int(lane[i]),
            ))
    return records


def edit_scene(records, removal: int) -> list[TrajectoryRecord]:
    """Drop every record of vehicle ``removal``."""
    out = [r for r in records if r.vehicle_id != removal]
    if len(out) == len(records):
        raise KeyError(f"vehicle {removal} does not appear in the scene")
    return out


def load_scenario(path) -> ScenarioSpec:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "scenario" in data:
        data = data["scenario"]
    return ScenarioSpec.from_dict(data)


def save_scenario(spec: ScenarioSpec, path, **extra) -> None:
    """Write ``spec`` under a ``scenario`` key; ``extra`` adds further top-level keys."""
    doc = {"scenario": spec.to_dict(), **extra}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


# --------------------------------------------------------------------------
# rule-based traffic world

@dataclass(frozen=True)
class WorldConfig:
    n_lanes: int = 3
    lane_width: float = 3.5
    duration: float = 16.0
    t0_frame: int = 59
    trigger_gap: float = 25.0
    follow_gap: float = 12.0
    lane_change_duration: float = 4.0
    speed_range: tuple[float, float] = (24.0, 34.0)
    slow_dv_range: tuple[float, float] = (3.0, 7.0)
    block_zone: tuple[float, float] = (-28.0, 12.0)
    drift: float = 1.0
    noise: float = 0.05


@dataclass(frozen=True)
class AdjacentTraffic:
    """Vehicles in one adjacent lane: longitudinal gaps to the target at the
    reference time and their speed differences to the target."""

    gaps: tuple[float, ...] = ()
    speed_deltas: tuple[float, ...] = ()


@dataclass(frozen=True)
class WorldChoices:
    target_lane: int
    target_speed: float
    leader: str = "none"           # none | slow | fast
    leader_dv: float = 0.0         # target speed minus leader speed
    crossing_time: float = 0.0     # slow leader: lane-id change time relative to t0 (s)
    leader_gap: float = 40.0       # fast leader: gap at t = 0
    left: AdjacentTraffic = field(default_factory=AdjacentTraffic)
    right: AdjacentTraffic = field(default_factory=AdjacentTraffic)


def blocked(traffic: AdjacentTraffic, world: WorldConfig) -> bool:
    lo, hi = world.block_zone
    return any(lo <= g <= hi for g in traffic.gaps)


def decide(choices: WorldChoices, world: WorldConfig = WorldConfig()) -> str:
    """World rule: 'left', 'right', 'brake' or 'cruise'."""
    if choices.leader != "slow":
        return "cruise"
    lane = choices.target_lane
    if lane > 1 and not blocked(choices.left, world):
        return "left"
    if lane < world.n_lanes and not blocked(choices.right, world):
        return "right"
    return "brake"


def trigger_frame(choices: WorldChoices, world: WorldConfig = WorldConfig()) -> int:
    """Frame at which the gap to a slow leader reaches ``trigger_gap``."""
    half = world.lane_change_duration * FRAME_RATE / 2
    return int(round(world.t0_frame + choices.crossing_time * FRAME_RATE - half))


def world_scenario(choices: WorldChoices, world: WorldConfig = WorldConfig(), target_id: int = 1,
                   frame_offset: int = 0, noise: float | None = None) -> ScenarioSpec:
    """Scripts for the target and its neighbors consistent with the world rule."""
    vT = choices.target_speed
    slow = choices.leader == "slow"
    t_trig = trigger_frame(choices, world) / FRAME_RATE if slow else world.t0_frame / FRAME_RATE
    vehicles = []
    next_id = target_id + 1

    if slow:
        dv = choices.leader_dv
        vehicles.append(VehicleScript(next_id, world.trigger_gap + dv * t_trig, choices.target_lane, vT - dv))
        next_id += 1
    elif choices.leader == "fast":
        vehicles.append(VehicleScript(next_id, choices.leader_gap, choices.target_lane, vT - choices.leader_dv))
        next_id += 1

    for lane, traffic in ((choices.target_lane - 1, choices.left), (choices.target_lane + 1, choices.right)):
        if not 1 <= lane <= world.n_lanes:
            continue
        for gap, dv in zip(traffic.gaps, traffic.speed_deltas):
            # place so that the gap holds at the reference time
            vehicles.append(VehicleScript(next_id, gap - dv * t_trig, lane, vT + dv))
            next_id += 1

    action = decide(choices, world)
    lane_change = speed_change = None
    if action in DIRECTIONS and t_trig < world.duration:
        lane_change = LaneChange(action, t_trig, world.lane_change_duration)
    elif action == "brake":
        dv = choices.leader_dv
        rate = dv**2 / (2.0 * (world.trigger_gap - world.follow_gap))
        speed_change = SpeedChange(t_trig, vT - dv, rate)
    target = VehicleScript(target_id, 0.0, choices.target_lane, vT, 0.0, lane_change, speed_change)
    return ScenarioSpec(
        (target, *vehicles), world.n_lanes, world.lane_width, world.duration, FRAME_RATE,
        world.noise if noise is None else noise, frame_offset,
    )


CHANGE_CROSSINGS = tuple(np.arange(-0.5, 7.0, 1.0))      # label a change somewhere in 1..5 s
QUIET_CROSSINGS = (-2.5, -1.5, 7.5, 8.5, 9.5)            # lane change outside the labelled horizon


def _traffic(rng, world: WorldConfig, state: str) -> AdjacentTraffic:
    lo, hi = world.block_zone
    gaps = []
    if state == "blocked":
        gaps.append(rng.uniform(lo, hi))
        if rng.random() < 0.3:
            g2 = rng.uniform(lo, hi)
            if abs(g2 - gaps[0]) >= 10.0:
                gaps.append(g2)
    elif state == "free":
        for _ in range(rng.integers(1, 3)):
            g = rng.uniform(hi + 10.0, 60.0) if rng.random() < 0.5 else rng.uniform(-70.0, lo - 8.0)
            if all(abs(g - o) >= 10.0 for o in gaps):
                gaps.append(g)
    deltas = tuple(float(rng.uniform(-world.drift, world.drift)) for _ in gaps)
    return AdjacentTraffic(tuple(float(g) for g in gaps), deltas)


def middle_lane(world: WorldConfig = WorldConfig()) -> int:
    if world.n_lanes < 3:
        raise ValueError("the traffic world needs at least three lanes")
    return (world.n_lanes + 1) // 2


def sample_choices(rng, bucket: str, world: WorldConfig = WorldConfig()) -> WorldChoices:
    """Draw a scenario whose target window falls in ``bucket`` (straight/left/right).

    The target drives in the middle lane, so both adjacent lanes exist and the
    world rule depends only on vehicles that appear in the neighborhood (a
    missing lane and an empty one look identical in the input tensor).
    """
    lane = middle_lane(world)
    speed = float(rng.uniform(*world.speed_range))
    dv = float(rng.uniform(*world.slow_dv_range))

    def side(free_only=False, blocked_only=False):
        if blocked_only:
            return _traffic(rng, world, "blocked")
        states = ("empty", "free") if free_only else ("empty", "free", "blocked")
        return _traffic(rng, world, states[rng.integers(len(states))])

    if bucket == "left":
        return WorldChoices(lane, speed, "slow", dv, float(rng.choice(CHANGE_CROSSINGS)),
                            left=side(free_only=True), right=side())
    if bucket == "right":
        return WorldChoices(lane, speed, "slow", dv, float(rng.choice(CHANGE_CROSSINGS)),
                            left=side(blocked_only=True), right=side(free_only=True))
    if bucket != "straight":
        raise ValueError(f"unknown bucket {bucket!r}")

    u = rng.random()
    if u < 0.35:
        # boxed in: both adjacent lanes are blocked, so the target brakes
        return WorldChoices(lane, speed, "slow", dv, float(rng.choice(CHANGE_CROSSINGS + QUIET_CROSSINGS)),
                            left=side(blocked_only=True), right=side(blocked_only=True))
    if u < 0.6:
        return WorldChoices(lane, speed, "slow", dv, float(rng.choice(QUIET_CROSSINGS)),
                            left=side(), right=side())
    if u < 0.8:
        return WorldChoices(lane, speed, "fast", float(rng.uniform(-4.0, 0.0)), 0.0,
                            float(rng.uniform(20.0, 70.0)), left=side(), right=side())
    return WorldChoices(lane, speed, "none", left=side(), right=side())


@dataclass
class Corpus:
    records: list[TrajectoryRecord]
    windows: list[tuple[int, int]]      # (target id, t0 frame)
    buckets: list[str]                  # per window
    scenario_of: list[int]              # per window, index into ``choices``
    choices: list[WorldChoices]


SCENARIO_FRAMES = 200
IDS_PER_SCENARIO = 16
BUCKETS = ("straight", "left", "right")


def bucket_of(labels) -> str:
    if LEFT in labels:
        return "left"
    if RIGHT in labels:
        return "right"
    return "straight"


def window_starts(world: WorldConfig = WorldConfig(), stride: int = 10) -> list[int]:
    """t0 frames of the overlapping windows that fit a scenario with full lookahead."""
    last = int(round(world.duration * FRAME_RATE)) - 1 - HORIZON - LOOKAHEAD
    return list(range(HISTORY - 1, last + 1, stride))


def benchmark_corpus(n_windows: int = 2000, mix=(0.2, 0.4, 0.4), seed: int = 0,
                     world: WorldConfig = WorldConfig(), noise: float | None = None,
                     stride: int = 10) -> Corpus:
    """Windows whose labels are straight/left/right in the proportions ``mix``.

    Every scenario is drawn for one class and contributes its overlapping
    windows (every ``stride`` frames) that carry that class. Scenarios occupy
    disjoint frame ranges, so the corpus forms one consistent recording.
    """
    exact = np.asarray(mix, dtype=np.float64) * n_windows
    quota = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - quota), kind="stable")[: n_windows - quota.sum()]:
        quota[i] += 1
    filled = np.zeros(3, dtype=int)
    rng = np.random.default_rng(seed)
    starts = window_starts(world, stride)

    corpus = Corpus([], [], [], [], [])
    while np.any(filled < quota):
        deficit = (quota - filled) / np.maximum(quota, 1)
        b = int(np.argmax(deficit))
        bucket = BUCKETS[b]
        s = len(corpus.choices)
        choices = sample_choices(rng, bucket, world)
        tid = s * IDS_PER_SCENARIO + 1
        offset = s * SCENARIO_FRAMES
        recs = generate(world_scenario(choices, world, tid, offset, noise), seed=int(rng.integers(2**31)))
        target = group_tracks([r for r in recs if r.vehicle_id == tid])
        matching = []
        for t0 in starts:
            labels = label_maneuvers(window_at(target, tid, offset + t0))
            if bucket_of(labels) == bucket:
                matching.append(offset + t0)
        take = [matching[i] for i in sorted(rng.permutation(len(matching))[: quota[b] - filled[b]])]
        if not take:
            continue
        filled[b] += len(take)
        corpus.records.extend(recs)
        corpus.choices.append(choices)
        for t0 in take:
            corpus.windows.append((tid, t0))
            corpus.buckets.append(bucket)
            corpus.scenario_of.append(s)
    return corpus


def slow_leader_choices(world: WorldConfig = WorldConfig()) -> WorldChoices:
    """Slower leader ahead, left lane free apart from a distant car."""
    return WorldChoices(
        target_lane=middle_lane(world), target_speed=29.0, leader="slow", leader_dv=5.0, crossing_time=2.5,
        left=AdjacentTraffic((40.0,), (0.0,)), right=AdjacentTraffic(),
    )


def rear_blocker_choices(world: WorldConfig = WorldConfig()) -> WorldChoices:
    """Slower leader, a rear-left car blocking the left lane and a car alongside on the right."""
    return WorldChoices(
        target_lane=middle_lane(world), target_speed=29.0, leader="slow", leader_dv=5.0, crossing_time=2.5,
        left=AdjacentTraffic((-22.0,), (0.5,)), right=AdjacentTraffic((6.0,), (0.0,)),
    )


def with_target(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    """Copy of ``spec`` with the first vehicle (the target) updated."""
    target = replace(spec.vehicles[0], **changes)
    return replace(spec, vehicles=(target, *spec.vehicles[1:]))

