"""Trajectory corpus handling: CSV ingestion, synthetic corpus generation,
window sampling for the generative model, replay lookup, and normalization.

Trajectory files are CSV with header
``vehicle_id,frame,x_m,y_m,speed_mps,heading_rad,length_m,width_m,lane_index``
at 0.1 s frame resolution. Behavior labels live in a sibling CSV with header
``vehicle_id,start_frame,end_frame,behavior``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import (
    DT,
    IdmParams,
    RoadMap,
    VehicleState,
    WorldState,
    detect_collisions,
    idm_accel,
    lane_position,
    nearest_waypoint,
    wrap_angle,
)

__all__ = [
    "TRAJECTORY_HEADER",
    "LABELS_HEADER",
    "WINDOW_VEHICLES",
    "WINDOW_STEPS",
    "WINDOW_CHANNELS",
    "BEHAVIORS",
    "DataError",
    "BehaviorLabel",
    "VehicleTrack",
    "TrajectoryDataset",
    "TrajectoryWindow",
    "NormStats",
    "load_trajectories",
    "save_trajectories",
    "generate_synthetic_corpus",
    "sample_window",
    "replay_state",
    "compute_norm_stats",
    "normalize_window",
    "denormalize_window",
    "windows_to_csv",
    "windows_from_csv",
]

TRAJECTORY_HEADER = [
    "vehicle_id",
    "frame",
    "x_m",
    "y_m",
    "speed_mps",
    "heading_rad",
    "length_m",
    "width_m",
    "lane_index",
]
LABELS_HEADER = ["vehicle_id", "start_frame", "end_frame", "behavior"]
BEHAVIORS = ("keep", "left-cut-in", "right-cut-in", "on-ramp", "off-ramp")

WINDOW_VEHICLES = 16
WINDOW_STEPS = 128
WINDOW_CHANNELS = 4  # x, y, speed, heading


class DataError(ValueError):
    """Malformed trajectory data or an unsatisfiable sampling request."""


@dataclass(frozen=True)
class BehaviorLabel:
    vehicle_id: int
    start_frame: int
    end_frame: int
    behavior: str


@dataclass
class VehicleTrack:
    """One vehicle's contiguous presence interval."""

    vehicle_id: int
    first_frame: int
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    heading: np.ndarray
    length: float
    width: float
    lane_index: np.ndarray  # int, -1 when off-lane

    def __len__(self) -> int:
        return len(self.x)

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self) - 1

    def present_at(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def state_at(self, frame: int, mode=None) -> VehicleState:
        i = frame - self.first_frame
        kw = {"mode": mode} if mode is not None else {}
        return VehicleState(
            self.vehicle_id,
            float(self.x[i]),
            float(self.y[i]),
            float(self.heading[i]),
            float(self.speed[i]),
            length=self.length,
            width=self.width,
            lane_index=int(self.lane_index[i]) if self.lane_index[i] >= 0 else None,
            **kw,
        )


@dataclass
class TrajectoryDataset:
    tracks: dict[int, VehicleTrack]
    n_frames: int
    labels: list[BehaviorLabel] = field(default_factory=list)

    def vehicles_at(self, frame: int) -> list[VehicleTrack]:
        return [t for t in self.tracks.values() if t.present_at(frame)]

    def world_at(self, road: RoadMap, frame: int) -> WorldState:
        states = {t.vehicle_id: t.state_at(frame) for t in self.vehicles_at(frame)}
        return WorldState(road, states, t=frame)

    def labels_for(self, vehicle_id: int) -> list[BehaviorLabel]:
        return [l for l in self.labels if l.vehicle_id == vehicle_id]


# ---------------------------------------------------------------------------
# file format


def load_trajectories(path, labels_path=None) -> TrajectoryDataset:
    path = Path(path)
    rows: dict[int, list[tuple]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise DataError(f"{path}: header does not match trajectory schema")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vid, frame = int(row[0]), int(row[1])
                x, y, speed, heading, length, width = map(float, row[2:8])
                lane = int(row[8])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row") from None
            if speed < 0:
                raise DataError(f"{path}:{lineno}: negative speed")
            rows.setdefault(vid, []).append(
                (frame, x, y, speed, heading, length, width, lane)
            )
    tracks: dict[int, VehicleTrack] = {}
    n_frames = 0
    for vid in sorted(rows):
        entries = sorted(rows[vid])
        frames = [e[0] for e in entries]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise DataError(f"vehicle {vid}: presence interval is not contiguous")
        arr = np.array([e[1:] for e in entries], dtype=np.float64)
        tracks[vid] = VehicleTrack(
            vehicle_id=vid,
            first_frame=frames[0],
            x=arr[:, 0].copy(),
            y=arr[:, 1].copy(),
            speed=arr[:, 2].copy(),
            heading=arr[:, 3].copy(),
            length=float(arr[0, 4]),
            width=float(arr[0, 5]),
            lane_index=arr[:, 6].astype(np.int64),
        )
        n_frames = max(n_frames, frames[-1] + 1)
    labels: list[BehaviorLabel] = []
    if labels_path is None:
        candidate = path.with_name(path.stem + ".labels.csv")
        labels_path = candidate if candidate.exists() else None
    if labels_path is not None:
        with Path(labels_path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LABELS_HEADER:
                raise DataError(f"{labels_path}: header does not match labels schema")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    labels.append(
                        BehaviorLabel(int(row[0]), int(row[1]), int(row[2]), row[3])
                    )
                except (ValueError, IndexError):
                    raise DataError(f"{labels_path}:{lineno}: malformed row") from None
                if labels[-1].behavior not in BEHAVIORS:
                    raise DataError(
                        f"{labels_path}:{lineno}: unknown behavior {row[3]!r}"
                    )
    return TrajectoryDataset(tracks=tracks, n_frames=n_frames, labels=labels)


def save_trajectories(dataset: TrajectoryDataset, path, labels_path=None) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for vid in sorted(dataset.tracks):
        t = dataset.tracks[vid]
        for i in range(len(t)):
            writer.writerow(
                [
                    vid,
                    t.first_frame + i,
                    repr(float(t.x[i])),
                    repr(float(t.y[i])),
                    repr(float(t.speed[i])),
                    repr(float(t.heading[i])),
                    repr(float(t.length)),
                    repr(float(t.width)),
                    int(t.lane_index[i]),
                ]
            )
    path.write_text(buf.getvalue())
    if labels_path is None:
        labels_path = path.with_name(path.stem + ".labels.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABELS_HEADER)
    for label in dataset.labels:
        writer.writerow(
            [label.vehicle_id, label.start_frame, label.end_frame, label.behavior]
        )
    Path(labels_path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass
class _Driver:
    """Internal scripted-driver state used only during generation."""

    vehicle_id: int
    lane: int  # target main lane while on the main road, -1 on a ramp
    stage: str  # "ramp-in" | "main" | "ramp-out"
    s: float  # x on the main road, else arc position along the ramp
    v: float
    v0: float
    length: float
    width: float
    spawn_frame: int
    plan_exit: bool = False
    change_from: float | None = None  # source lateral offset (m)
    change_t0: int = -1
    change_T: int = 0
    cooldown: int = 0
    done: bool = False
    states: list[tuple] = field(default_factory=list)


def _main_pose(road: RoadMap, lane: int, s: float) -> tuple[float, float, float]:
    return s, lane * road.lanes[0].width, 0.0


def _ramp_pose(road: RoadMap, s: float) -> tuple[float, float, float]:
    """Pose at arc position s along the ramp polyline (clamped to its span)."""
    ramp = road.lanes[-1]
    n = len(ramp) - 1
    s = min(max(s, 0.0), float(n))
    i = min(int(s), n - 1)
    frac = s - i
    xy = ramp.xy[i] + frac * (ramp.xy[i + 1] - ramp.xy[i])
    heading = ramp.heading[i] + frac * (ramp.heading[i + 1] - ramp.heading[i])
    return float(xy[0]), float(xy[1]), float(heading)


def _blend(tau: float) -> float:
    """Lateral progress with sinusoidal lateral-speed profile."""
    tau = min(max(tau, 0.0), 1.0)
    return tau - math.sin(2.0 * math.pi * tau) / (2.0 * math.pi)


def _blend_rate(tau: float) -> float:
    if not 0.0 <= tau <= 1.0:
        return 0.0
    return 1.0 - math.cos(2.0 * math.pi * tau)


def generate_synthetic_corpus(
    road: RoadMap,
    n_vehicles: int,
    duration_s: float,
    seed: int,
    idm: IdmParams | None = None,
) -> TrajectoryDataset:
    """IDM-driven lane keeping with scripted stochastic lane changes and ramp
    merges/diverges. Returns a labeled, collision-checked dataset."""
    if n_vehicles < 1 or duration_s <= 0:
        raise DataError("vehicle count and duration must be positive")
    idm = idm or IdmParams()
    rng = np.random.default_rng(seed)
    lane_w = road.lanes[0].width
    road_len = float(len(road.lanes[0]) - 1)
    ramp = road.lanes[-1] if road.lanes[-1].is_ramp else None
    ramp_len = float(len(ramp) - 1) if ramp is not None else 0.0

    spawn_gap = 12.0  # bumper-to-bumper clearance required at the entry
    capacity = road.n_main * int(road_len / (4.6 + idm.s0 + 8.0))
    if n_vehicles > capacity:
        raise DataError(
            f"requested density infeasible: {n_vehicles} vehicles exceed capacity "
            f"{capacity} at minimum spacing"
        )

    n_frames = int(round(duration_s / DT))
    drivers: list[_Driver] = []
    labels: list[BehaviorLabel] = []
    next_id = 0

    def spawn(frame: int, lane: int, s: float, stage: str, plan_exit: bool) -> _Driver:
        nonlocal next_id
        v0 = float(rng.uniform(12.0, 22.0))
        d = _Driver(
            vehicle_id=next_id,
            lane=lane,
            stage=stage,
            s=s,
            v=v0 * float(rng.uniform(0.7, 1.0)),
            v0=v0,
            length=float(rng.uniform(4.2, 5.0)),
            width=float(rng.uniform(1.7, 1.9)),
            spawn_frame=frame,
            plan_exit=plan_exit,
        )
        drivers.append(d)
        next_id += 1
        return d

    def wants_exit(lane: int, s: float) -> bool:
        return (
            ramp is not None
            and ramp.ramp_kind == "off"
            and lane == 0
            and s < ramp.join_index - 30.0
            and rng.random() < 0.5
        )

    # initial placement, interleaving lanes back-to-front
    per_lane_s = {lane: road_len - 15.0 for lane in range(road.n_main)}
    placed = 0
    while placed < n_vehicles:
        lane = placed % road.n_main
        s = per_lane_s[lane]
        if s < 10.0:
            break
        spawn(0, lane, s, "main", wants_exit(lane, s))
        per_lane_s[lane] -= 4.6 + idm.s0 + float(rng.uniform(8.0, 30.0))
        placed += 1

    def pose_of(d: _Driver, frame: int) -> tuple[float, float, float, float]:
        """(x, y, heading, speed) with the scripted lateral profile applied."""
        if d.stage in ("ramp-in", "ramp-out"):
            x, y, heading = _ramp_pose(road, d.s)
            return x, y, heading, d.v
        x, y, _ = _main_pose(road, d.lane, d.s)
        if d.change_from is not None:
            tau = (frame - d.change_t0) / d.change_T
            y0, y1 = d.change_from, d.lane * lane_w
            y = y0 + (y1 - y0) * _blend(tau)
            ydot = (y1 - y0) * _blend_rate(tau) / (d.change_T * DT)
            heading = math.atan2(ydot, max(d.v, 0.5))
            return x, y, heading, math.hypot(max(d.v, 0.0), ydot)
        return x, y, 0.0, d.v

    for frame in range(n_frames):
        active = [d for d in drivers if not d.done]
        poses = {d.vehicle_id: pose_of(d, frame) for d in active}
        for d in active:
            x, y, heading, speed = poses[d.vehicle_id]
            d.states.append((frame, x, y, speed, heading))

        # spawn replacements at clear entries to hold the target population
        if frame > 0 and len(active) < n_vehicles:
            entries: list[int] = list(range(road.n_main))
            if ramp is not None and ramp.ramp_kind == "on":
                entries.append(-1)  # ramp entry
            rng.shuffle(entries)
            for lane in entries:
                if len(active) >= n_vehicles:
                    break
                if lane == -1:
                    clear = all(
                        not (o.stage == "ramp-in" and o.s < spawn_gap + 10.0)
                        for o in active
                    )
                    if clear:
                        d = spawn(frame, 0, 0.0, "ramp-in", False)
                else:
                    clear = all(
                        not (
                            abs(poses[o.vehicle_id][1] - lane * lane_w) < 2.4
                            and poses[o.vehicle_id][0] < spawn_gap + 10.0
                        )
                        for o in active
                        if o.stage == "main"
                    )
                    if clear:
                        d = spawn(frame, lane, 0.0, "main", wants_exit(lane, 0.0))
                if clear:
                    x, y, heading, speed = pose_of(d, frame)
                    poses[d.vehicle_id] = (x, y, heading, speed)
                    d.states.append((frame, x, y, speed, heading))
                    active.append(d)

        # decide lane-change maneuvers
        for d in active:
            if d.cooldown > 0:
                d.cooldown -= 1
            if (
                d.stage != "main"
                or d.plan_exit
                or d.change_from is not None
                or d.cooldown > 0
                or d.v < 8.0
                or road.n_main < 2
            ):
                continue
            if rng.random() >= 0.004:  # expected roughly once per 25 s
                continue
            direction = int(rng.integers(0, 2)) * 2 - 1  # -1 right, +1 left
            target = d.lane + direction
            if not 0 <= target < road.n_main:
                continue
            x_now = poses[d.vehicle_id][0]
            safe = True
            for o in active:
                if o is d:
                    continue
                ox, oy = poses[o.vehicle_id][0], poses[o.vehicle_id][1]
                if abs(oy - target * lane_w) < 2.4 and -18.0 < ox - x_now < 30.0:
                    safe = False
                    break
            if not safe:
                continue
            d.change_from = d.lane * lane_w
            d.lane = target
            d.change_t0 = frame
            d.change_T = int(round(float(rng.uniform(3.0, 5.0)) / DT))
            d.cooldown = d.change_T + int(8.0 / DT)
            behavior = "left-cut-in" if direction > 0 else "right-cut-in"
            labels.append(
                BehaviorLabel(
                    d.vehicle_id, frame, min(n_frames - 1, frame + d.change_T), behavior
                )
            )

        # longitudinal IDM update against the corridor leader
        order = sorted(active, key=lambda d: poses[d.vehicle_id][0])
        for i, d in enumerate(order):
            x, y, heading, speed = poses[d.vehicle_id]
            me = VehicleState(
                d.vehicle_id, x, y, heading, max(speed, 0.0), d.length, d.width
            )
            leader_state = None
            best_gap = math.inf
            merging = d.stage == "ramp-in" and d.s > ramp_len - 60.0
            for o in order[i + 1 :]:
                ox, oy, oh, ov = poses[o.vehicle_id]
                near = abs(oy - y) < 2.4 or (merging and abs(oy) < 2.4)
                if d.change_from is not None:
                    near = near or abs(oy - d.lane * lane_w) < 2.4
                if not near:
                    continue
                if ox - x < best_gap:
                    best_gap = ox - x
                    leader_state = VehicleState(
                        o.vehicle_id, ox, oy, oh, max(ov, 0.0), o.length, o.width
                    )
            params = IdmParams(
                v0=d.v0, T=idm.T, s0=idm.s0, a=idm.a, b=idm.b, delta=idm.delta
            )
            accel, _ = idm_accel(me, leader_state, params)
            d.v = max(0.0, d.v + accel * DT)
            d.s += d.v * DT

            if d.stage == "ramp-in" and d.s >= ramp_len:
                d.stage = "main"
                d.lane = 0
                d.s = float(ramp.join_index) + (d.s - ramp_len)
                labels.append(
                    BehaviorLabel(
                        d.vehicle_id,
                        max(d.spawn_frame, frame - int(3.0 / DT)),
                        min(n_frames - 1, frame + int(2.0 / DT)),
                        "on-ramp",
                    )
                )
            elif (
                d.stage == "main"
                and d.plan_exit
                and d.lane == 0
                and d.change_from is None
                and d.s >= float(ramp.join_index)
            ):
                d.stage = "ramp-out"
                d.s = d.s - float(ramp.join_index)
                d.plan_exit = False
                labels.append(
                    BehaviorLabel(
                        d.vehicle_id,
                        max(d.spawn_frame, frame - int(2.0 / DT)),
                        min(n_frames - 1, frame + int(4.0 / DT)),
                        "off-ramp",
                    )
                )

            if d.change_from is not None and frame - d.change_t0 >= d.change_T:
                d.change_from = None

        # despawn past the road or ramp end, or outside the map extent
        for d in active:
            x, y, _, _ = pose_of(d, frame + 1)
            if d.stage == "main" and d.s > road_len:
                d.done = True
            elif d.stage == "ramp-out" and d.s >= ramp_len - 1.0:
                d.done = True
            elif not road.in_extent(x, y):
                d.done = True

    # assemble tracks
    tracks: dict[int, VehicleTrack] = {}
    for d in drivers:
        if len(d.states) < 2:
            continue
        arr = np.array([s[1:] for s in d.states], dtype=np.float64)
        frames = [s[0] for s in d.states]
        lane_idx = _lane_indices(road, arr[:, 0], arr[:, 1])
        tracks[d.vehicle_id] = VehicleTrack(
            vehicle_id=d.vehicle_id,
            first_frame=frames[0],
            x=arr[:, 0],
            y=arr[:, 1],
            speed=np.maximum(arr[:, 2], 0.0),
            heading=arr[:, 3],
            length=d.length,
            width=d.width,
            lane_index=lane_idx,
        )
    labeled = {l.vehicle_id for l in labels}
    for vid in sorted(set(tracks) - labeled):
        t = tracks[vid]
        labels.append(BehaviorLabel(vid, t.first_frame, t.last_frame, "keep"))
    labels = [l for l in labels if l.vehicle_id in tracks]
    dataset = TrajectoryDataset(tracks=tracks, n_frames=n_frames, labels=labels)

    # construction check: the corpus must be collision-free
    for frame in range(n_frames):
        hits = detect_collisions(dataset.world_at(road, frame))
        if hits:
            raise DataError(f"generator produced a collision at frame {frame}: {hits}")
    return dataset


def _lane_indices(road: RoadMap, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized nearest-lane lookup; -1 where off-lane."""
    out = np.full(len(xs), -1, dtype=np.int64)
    ax, ay = road._all_xy[:, 0], road._all_xy[:, 1]
    width = road.lanes[0].width
    for lo in range(0, len(xs), 256):
        hi = min(lo + 256, len(xs))
        d2 = (xs[lo:hi, None] - ax) ** 2 + (ys[lo:hi, None] - ay) ** 2
        best = np.argmin(d2, axis=1)
        lateral2 = d2[np.arange(hi - lo), best]
        lanes = road._lane_of[best]
        out[lo:hi] = np.where(lateral2 <= width**2, lanes, -1)
    return out


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class TrajectoryWindow:
    """16 vehicle slots x 128 steps x (x, y, speed, heading); slot 0 is ego."""

    data: np.ndarray  # (16, 128, 4)
    mask: np.ndarray  # (16, 128) bool
    slot_ids: np.ndarray  # (16,) source vehicle ids, -1 for empty slots
    frame_offset: int
    lengths: np.ndarray  # (16,)
    widths: np.ndarray  # (16,)

    def __post_init__(self):
        if self.data.shape != (WINDOW_VEHICLES, WINDOW_STEPS, WINDOW_CHANNELS):
            raise DataError("window tensor has the wrong shape")
        if not self.mask[0].all():
            raise DataError("ego slot must be valid at every step")
        if np.any(self.data[~self.mask] != 0.0):
            raise DataError("masked entries must be zero")


def sample_window(dataset: TrajectoryDataset, rng: np.random.Generator) -> TrajectoryWindow:
    """one ego with full 128-step presence plus its 15 nearest neighbors at
    the first step."""
    candidates = [t for t in dataset.tracks.values() if len(t) >= WINDOW_STEPS]
    if not candidates:
        raise DataError("no vehicle is present for a full 128-frame interval")
    ego = candidates[int(rng.integers(0, len(candidates)))]
    t0 = ego.first_frame + int(rng.integers(0, len(ego) - WINDOW_STEPS + 1))
    ex, ey = ego.x[t0 - ego.first_frame], ego.y[t0 - ego.first_frame]
    others = []
    for t in dataset.vehicles_at(t0):
        if t.vehicle_id == ego.vehicle_id:
            continue
        i = t0 - t.first_frame
        d = math.hypot(t.x[i] - ex, t.y[i] - ey)
        others.append((d, t.vehicle_id, t))
    others.sort(key=lambda p: (p[0], p[1]))
    slots = [ego] + [t for _, _, t in others[: WINDOW_VEHICLES - 1]]

    data = np.zeros((WINDOW_VEHICLES, WINDOW_STEPS, WINDOW_CHANNELS))
    mask = np.zeros((WINDOW_VEHICLES, WINDOW_STEPS), dtype=bool)
    slot_ids = np.full(WINDOW_VEHICLES, -1, dtype=np.int64)
    lengths = np.zeros(WINDOW_VEHICLES)
    widths = np.zeros(WINDOW_VEHICLES)
    for s, t in enumerate(slots):
        slot_ids[s] = t.vehicle_id
        lengths[s] = t.length
        widths[s] = t.width
        lo = max(t0, t.first_frame)
        hi = min(t0 + WINDOW_STEPS, t.last_frame + 1)
        for frame in range(lo, hi):
            i = frame - t.first_frame
            k = frame - t0
            data[s, k] = (t.x[i], t.y[i], t.speed[i], t.heading[i])
            mask[s, k] = True
    return TrajectoryWindow(
        data=data,
        mask=mask,
        slot_ids=slot_ids,
        frame_offset=t0,
        lengths=lengths,
        widths=widths,
    )


def replay_state(window: TrajectoryWindow, slot: int, t: int) -> VehicleState | None:
    """Recorded state of a slot at step t, or None while masked."""
    if not 0 <= slot < WINDOW_VEHICLES or not 0 <= t < WINDOW_STEPS:
        raise IndexError("slot or step out of range")
    if not window.mask[slot, t]:
        return None
    x, y, speed, heading = window.data[slot, t]
    return VehicleState(
        vehicle_id=slot,
        x=float(x),
        y=float(y),
        heading=float(heading),
        speed=float(max(speed, 0.0)),
        length=float(window.lengths[slot]) or 4.6,
        width=float(window.widths[slot]) or 1.8,
    )


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (4,)
    std: np.ndarray  # (4,)

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise DataError("normalization std must be positive in every channel")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        return cls(np.asarray(doc["mean"], float), np.asarray(doc["std"], float))


def compute_norm_stats(windows: list[TrajectoryWindow]) -> NormStats:
    values = np.concatenate([w.data[w.mask] for w in windows], axis=0)
    if values.size == 0:
        raise DataError("no valid entries to compute normalization stats")
    std = values.std(axis=0)
    std[std < 1e-8] = 1.0
    return NormStats(mean=values.mean(axis=0), std=std)


def normalize_window(window: TrajectoryWindow, stats: NormStats) -> TrajectoryWindow:
    data = (window.data - stats.mean) / stats.std
    data[~window.mask] = 0.0
    return TrajectoryWindow(
        data=data,
        mask=window.mask.copy(),
        slot_ids=window.slot_ids.copy(),
        frame_offset=window.frame_offset,
        lengths=window.lengths.copy(),
        widths=window.widths.copy(),
    )


def denormalize_window(window: TrajectoryWindow, stats: NormStats) -> TrajectoryWindow:
    data = window.data * stats.std + stats.mean
    data[~window.mask] = 0.0
    return TrajectoryWindow(
        data=data,
        mask=window.mask.copy(),
        slot_ids=window.slot_ids.copy(),
        frame_offset=window.frame_offset,
        lengths=window.lengths.copy(),
        widths=window.widths.copy(),
    )


# ---------------------------------------------------------------------------
# window <-> trajectory-CSV round trip (used for generated traffic)


def windows_to_csv(windows: list[TrajectoryWindow], path, road: RoadMap | None = None) -> None:
    """Write windows in the trajectory CSV schema. Slot k of window i becomes
    vehicle 16*i + k over frames [128*i, 128*(i+1))."""
    tracks: dict[int, VehicleTrack] = {}
    for widx, win in enumerate(windows):
        for slot in range(WINDOW_VEHICLES):
            steps = np.nonzero(win.mask[slot])[0]
            if steps.size == 0:
                continue
            if np.any(np.diff(steps) != 1):
                raise DataError("cannot export a slot with a gap in its presence")
            vid = WINDOW_VEHICLES * widx + slot
            seg = win.data[slot, steps]
            lane_idx = np.full(len(steps), -1, dtype=np.int64)
            if road is not None:
                for i in range(len(steps)):
                    li, _, lateral, _ = nearest_waypoint(
                        road, (seg[i, 0], seg[i, 1], seg[i, 3])
                    )
                    lane_idx[i] = li if abs(lateral) <= road.lanes[li].width else -1
            tracks[vid] = VehicleTrack(
                vehicle_id=vid,
                first_frame=WINDOW_STEPS * widx + int(steps[0]),
                x=seg[:, 0].copy(),
                y=seg[:, 1].copy(),
                speed=np.maximum(seg[:, 2], 0.0),
                heading=seg[:, 3].copy(),
                length=float(win.lengths[slot]) or 4.6,
                width=float(win.widths[slot]) or 1.8,
                lane_index=lane_idx,
            )
    n_frames = WINDOW_STEPS * len(windows)
    save_trajectories(TrajectoryDataset(tracks=tracks, n_frames=n_frames), path)


def windows_from_csv(path) -> list[TrajectoryWindow]:
    """Reconstruct windows written by windows_to_csv."""
    dataset = load_trajectories(path)
    if not dataset.tracks:
        return []
    n_windows = (max(dataset.tracks) // WINDOW_VEHICLES) + 1
    windows = []
    for widx in range(n_windows):
        data = np.zeros((WINDOW_VEHICLES, WINDOW_STEPS, WINDOW_CHANNELS))
        mask = np.zeros((WINDOW_VEHICLES, WINDOW_STEPS), dtype=bool)
        slot_ids = np.full(WINDOW_VEHICLES, -1, dtype=np.int64)
        lengths = np.zeros(WINDOW_VEHICLES)
        widths = np.zeros(WINDOW_VEHICLES)
        for slot in range(WINDOW_VEHICLES):
            vid = WINDOW_VEHICLES * widx + slot
            track = dataset.tracks.get(vid)
            if track is None:
                continue
            slot_ids[slot] = vid
            lengths[slot] = track.length
            widths[slot] = track.width
            for i in range(len(track)):
                k = track.first_frame + i - WINDOW_STEPS * widx
                if 0 <= k < WINDOW_STEPS:
                    data[slot, k] = (
                        track.x[i],
                        track.y[i],
                        track.speed[i],
                        track.heading[i],
                    )
                    mask[slot, k] = True
        windows.append(
            TrajectoryWindow(
                data=data,
                mask=mask,
                slot_ids=slot_ids,
                frame_offset=WINDOW_STEPS * widx,
                lengths=lengths,
                widths=widths,
            )
        )
    return windows
