"""Deterministic road world: synthetic highway maps, unicycle kinematics,
intelligent-driver-model longitudinal control, and collision detection.

Conventions: x/y in meters, headings in radians (0 along +x, CCW positive),
speeds in m/s, one simulation tick is 0.1 s. Lane 0 is the right-most main
lane; indices increase leftward. A ramp lane, when present, is appended after
the main lanes and flagged with the waypoint where it joins the main road.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "LANE_WIDTH",
    "DT",
    "ACCEL_LIMIT",
    "YAW_RATE_LIMIT",
    "ControlMode",
    "Lane",
    "RoadMap",
    "VehicleState",
    "WorldState",
    "IdmParams",
    "ConfigError",
    "build_highway_map",
    "validate_map",
    "nearest_waypoint",
    "lane_position",
    "step_vehicle",
    "idm_accel",
    "rectangle_corners",
    "obb_overlap",
    "detect_collisions",
    "wrap_angle",
    "map_to_text",
    "map_from_text",
]

LANE_WIDTH = 3.7
DT = 0.1
ACCEL_LIMIT = 3.0
YAW_RATE_LIMIT = 2.0

RAMP_ANGLE = math.radians(15.0)
RAMP_BLEND_M = 40.0
RAMP_ARC_M = 100.0


class ConfigError(ValueError):
    """Invalid geometry or configuration parameters."""


class ControlMode(enum.Enum):
    REPLAY = "replay"
    REACTIVE = "reactive"
    IDM = "idm"
    EGO = "ego"


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    out = math.remainder(theta, 2.0 * math.pi)
    if out <= -math.pi:
        out += 2.0 * math.pi
    return out


@dataclass(frozen=True)
class Lane:
    xy: np.ndarray  # (N, 2) waypoint positions
    heading: np.ndarray  # (N,)
    width: float = LANE_WIDTH
    left: int | None = None
    right: int | None = None
    is_ramp: bool = False
    ramp_kind: str | None = None  # "on" | "off"
    join_lane: int | None = None
    join_index: int | None = None
    name: str = ""

    def __len__(self) -> int:
        return len(self.xy)


@dataclass
class RoadMap:
    lanes: list[Lane]
    n_main: int
    # concatenated waypoint caches for vectorized nearest-waypoint queries
    _all_xy: np.ndarray = field(init=False, repr=False)
    _all_heading: np.ndarray = field(init=False, repr=False)
    _lane_of: np.ndarray = field(init=False, repr=False)
    _index_of: np.ndarray = field(init=False, repr=False)
    extent: tuple[float, float, float, float] = field(init=False)

    def __post_init__(self):
        xs, hs, lanes_idx, wp_idx = [], [], [], []
        for li, lane in enumerate(self.lanes):
            xs.append(lane.xy)
            hs.append(lane.heading)
            lanes_idx.append(np.full(len(lane), li, dtype=np.int64))
            wp_idx.append(np.arange(len(lane), dtype=np.int64))
        self._all_xy = np.concatenate(xs, axis=0)
        self._all_heading = np.concatenate(hs)
        self._lane_of = np.concatenate(lanes_idx)
        self._index_of = np.concatenate(wp_idx)
        x0, y0 = self._all_xy.min(axis=0)
        x1, y1 = self._all_xy.max(axis=0)
        m = 2.0 * LANE_WIDTH
        self.extent = (x0 - m, x1 + m, y0 - m, y1 + m)

    def lane_named(self, name: str) -> int:
        for i, lane in enumerate(self.lanes):
            if lane.name == name:
                return i
        raise KeyError(f"no lane named {name!r}")

    def in_extent(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.extent
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    x: float
    y: float
    heading: float
    speed: float
    length: float = 4.6
    width: float = 1.8
    lane_index: int | None = None
    mode: ControlMode = ControlMode.REPLAY

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("vehicle footprint must be positive")


@dataclass
class WorldState:
    road: RoadMap
    vehicles: dict[int, VehicleState]
    t: int = 0
    dt: float = DT


@dataclass(frozen=True)
class IdmParams:
    v0: float = 20.0  # desired speed
    T: float = 1.5  # time headway
    s0: float = 2.0  # minimum gap
    a: float = 1.5  # max acceleration
    b: float = 2.0  # comfortable deceleration
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")


# ---------------------------------------------------------------------------
# map construction


def _chord_resample(fine_xy: np.ndarray, fine_heading: np.ndarray, spacing: float = 1.0):
    """Pick points along a fine polyline so consecutive picks are exactly
    ``spacing`` apart in Euclidean distance (walks from the first point)."""
    pts = [fine_xy[0]]
    heads = [fine_heading[0]]
    anchor = fine_xy[0]
    i = 1
    while i < len(fine_xy):
        d = np.linalg.norm(fine_xy[i] - anchor)
        if d < spacing:
            i += 1
            continue
        # solve for the crossing on segment (i-1, i)
        p0, p1 = fine_xy[i - 1], fine_xy[i]
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(p0 + mid * (p1 - p0) - anchor) < spacing:
                lo = mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
        anchor = p0 + t * (p1 - p0)
        pts.append(anchor)
        heads.append(fine_heading[i - 1] + t * (fine_heading[i] - fine_heading[i - 1]))
    return np.array(pts), np.array(heads)


def _smoothstep5(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _ramp_centerline(kind: str, join_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fine ramp path ending (on) or starting (off) at the join point."""
    du = 0.01
    n = int(RAMP_ARC_M / du) + 1
    u = np.linspace(0.0, RAMP_ARC_M, n)
    if kind == "on":
        # heading falls from the approach angle to 0 over the last blend
        blend = _smoothstep5((u - (RAMP_ARC_M - RAMP_BLEND_M)) / RAMP_BLEND_M)
        heading = RAMP_ANGLE * (1.0 - blend)
        dx = np.cos(heading)
        dy = np.sin(heading)
        x = np.concatenate([[0.0], np.cumsum(0.5 * (dx[1:] + dx[:-1]) * du)])
        y = np.concatenate([[0.0], np.cumsum(0.5 * (dy[1:] + dy[:-1]) * du)])
        x += join_xy[0] - x[-1]
        y += join_xy[1] - y[-1]
    else:
        blend = _smoothstep5(u / RAMP_BLEND_M)
        heading = -RAMP_ANGLE * blend
        dx = np.cos(heading)
        dy = np.sin(heading)
        x = join_xy[0] + np.concatenate([[0.0], np.cumsum(0.5 * (dx[1:] + dx[:-1]) * du)])
        y = join_xy[1] + np.concatenate([[0.0], np.cumsum(0.5 * (dy[1:] + dy[:-1]) * du)])
    return np.stack([x, y], axis=1), heading


def build_highway_map(
    n_lanes: int,
    length_m: float,
    ramp: str | None = None,
    ramp_join_at_m: float | None = None,
) -> RoadMap:
    """Straight parallel lanes along +x, optionally with an on/off ramp
    joining the right-most lane at ``ramp_join_at_m``."""
    if n_lanes < 1:
        raise ConfigError("need at least one lane")
    if length_m < 100.0:
        raise ConfigError("road must be at least 100 m long")
    if ramp not in (None, "on", "off"):
        raise ConfigError(f"unknown ramp kind {ramp!r}")
    if ramp is not None:
        if ramp_join_at_m is None:
            raise ConfigError("ramp requires a join point")
        if not 0.0 < ramp_join_at_m < length_m:
            raise ConfigError("ramp join point must lie within the road")
        if ramp == "on" and ramp_join_at_m < RAMP_ARC_M * math.cos(RAMP_ANGLE) * 0.5:
            raise ConfigError("on-ramp join point too close to the road start")

    n_wp = int(math.floor(length_m)) + 1
    xs = np.arange(n_wp, dtype=np.float64)
    lanes: list[Lane] = []
    for i in range(n_lanes):
        xy = np.stack([xs, np.full(n_wp, i * LANE_WIDTH)], axis=1)
        lanes.append(
            Lane(
                xy=xy,
                heading=np.zeros(n_wp),
                left=i + 1 if i < n_lanes - 1 else None,
                right=i - 1 if i > 0 else None,
                name=str(i),
            )
        )
    if ramp is not None:
        join_index = int(round(ramp_join_at_m))
        join_xy = lanes[0].xy[join_index]
        fine_xy, fine_heading = _ramp_centerline(ramp, join_xy)
        if ramp == "on":
            # walk backward from the join so the last waypoint lands on it
            xy, heading = _chord_resample(fine_xy[::-1], fine_heading[::-1])
            xy, heading = xy[::-1].copy(), heading[::-1].copy()
        else:
            xy, heading = _chord_resample(fine_xy, fine_heading)
        lanes.append(
            Lane(
                xy=xy,
                heading=heading,
                is_ramp=True,
                ramp_kind=ramp,
                join_lane=0,
                join_index=join_index,
                name="ramp",
            )
        )
    road = RoadMap(lanes=lanes, n_main=n_lanes)
    validate_map(road)
    return road


def validate_map(road: RoadMap) -> None:
    """Check waypoint spacing, heading continuity, and adjacency symmetry."""
    for lane in road.lanes:
        if len(lane) < 2:
            raise ConfigError("lane needs at least two waypoints")
        gaps = np.linalg.norm(np.diff(lane.xy, axis=0), axis=1)
        if np.any(np.abs(gaps - 1.0) > 1e-6):
            raise ConfigError("waypoint spacing off 1.0 m")
        dh = np.abs(np.diff(lane.heading))
        if np.any(np.minimum(dh, 2 * math.pi - dh) >= 0.2):
            raise ConfigError("heading discontinuity between waypoints")
    for i, lane in enumerate(road.lanes):
        for other, back in ((lane.left, "right"), (lane.right, "left")):
            if other is not None and getattr(road.lanes[other], back) != i:
                raise ConfigError("lane adjacency is not symmetric")


# ---------------------------------------------------------------------------
# queries


def nearest_waypoint(
    road: RoadMap, pose: tuple[float, float, float]
) -> tuple[int, int, float, float]:
    """Global nearest waypoint to (x, y, heading).

    Returns (lane index, waypoint index, signed lateral offset, heading
    error). Ties go to the lower lane index, then the lower waypoint index.
    Lateral offset is positive to the waypoint's left.
    """
    x, y, theta = pose
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(theta)):
        raise ValueError("pose must be finite")
    if len(road._all_xy) == 0:
        raise ValueError("empty map")
    d2 = (road._all_xy[:, 0] - x) ** 2 + (road._all_xy[:, 1] - y) ** 2
    best = int(np.argmin(d2))
    wp_heading = float(road._all_heading[best])
    dx = x - road._all_xy[best, 0]
    dy = y - road._all_xy[best, 1]
    lateral = -math.sin(wp_heading) * dx + math.cos(wp_heading) * dy
    return (
        int(road._lane_of[best]),
        int(road._index_of[best]),
        lateral,
        wrap_angle(theta - wp_heading),
    )


def lane_position(road: RoadMap, lane_index: int, x: float, y: float) -> float:
    """Arc-length coordinate (m) of a point projected onto a lane polyline."""
    lane = road.lanes[lane_index]
    d2 = (lane.xy[:, 0] - x) ** 2 + (lane.xy[:, 1] - y) ** 2
    i = int(np.argmin(d2))
    wp = lane.xy[i]
    tangent = np.array([math.cos(lane.heading[i]), math.sin(lane.heading[i])])
    return float(i + tangent @ (np.array([x, y]) - wp))


# ---------------------------------------------------------------------------
# kinematics


def step_vehicle(
    state: VehicleState,
    action,
    dt: float,
    road: RoadMap | None = None,
) -> VehicleState:
    """Advance one unicycle step under a clamped (accel, yaw-rate) command.

    ``action`` may be an (a, w) pair or any object with accel/yaw_rate
    attributes. Speed is floored at zero; heading wraps to (-pi, pi]. When a
    road is given the lane index is recomputed from the nearest waypoint.
    """
    if hasattr(action, "accel"):
        a, w = action.accel, action.yaw_rate
    else:
        a, w = action
    if dt <= 0:
        raise ValueError("dt must be positive")
    vals = (state.x, state.y, state.heading, state.speed, a, w)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite state or action")
    # midpoint evaluation keeps 0.1 s steps within centimeters of a fine
    # integration of the same equations
    mid_heading = state.heading + 0.5 * w * dt
    mid_speed = max(0.0, state.speed + 0.5 * a * dt)
    x = state.x + mid_speed * math.cos(mid_heading) * dt
    y = state.y + mid_speed * math.sin(mid_heading) * dt
    heading = wrap_angle(state.heading + w * dt)
    speed = max(0.0, state.speed + a * dt)
    lane_index = state.lane_index
    if road is not None:
        li, _, lateral, _ = nearest_waypoint(road, (x, y, heading))
        lane_index = li if abs(lateral) <= road.lanes[li].width else None
    return replace(state, x=x, y=y, heading=heading, speed=speed, lane_index=lane_index)


def idm_accel(
    ego: VehicleState,
    leader: VehicleState | None,
    p: IdmParams,
    limits: tuple[float, float] = (-ACCEL_LIMIT, ACCEL_LIMIT),
) -> tuple[float, bool]:
    """Intelligent-driver-model acceleration, clamped to the action limits.

    Returns (accel, emergency). A non-positive bumper gap short-circuits to
    the emergency deceleration with the flag set.
    """
    free = p.a * (1.0 - (ego.speed / p.v0) ** p.delta)
    if leader is None:
        return float(np.clip(free, *limits)), False
    fwd = (math.cos(ego.heading), math.sin(ego.heading))
    center_gap = (leader.x - ego.x) * fwd[0] + (leader.y - ego.y) * fwd[1]
    gap = center_gap - 0.5 * (ego.length + leader.length)
    if gap <= 0.0:
        return limits[0], True
    dv = ego.speed - leader.speed
    s_star = p.s0 + ego.speed * p.T + ego.speed * dv / (2.0 * math.sqrt(p.a * p.b))
    accel = p.a * (1.0 - (ego.speed / p.v0) ** p.delta - (s_star / gap) ** 2)
    return float(np.clip(accel, *limits)), False


# ---------------------------------------------------------------------------
# collision detection


def rectangle_corners(state: VehicleState) -> np.ndarray:
    """Corners of the oriented footprint rectangle, CCW, shape (4, 2)."""
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = 0.5 * state.length, 0.5 * state.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([state.x, state.y])


def obb_overlap(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts)."""
    ca = rectangle_corners(a)
    cb = rectangle_corners(b)
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        for axis in ((c, s), (-s, c)):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def detect_collisions(world: WorldState) -> list[tuple[int, int]]:
    """All overlapping vehicle pairs, deduplicated and sorted by id pair."""
    vehicles = sorted(world.vehicles.values(), key=lambda v: v.vehicle_id)
    n = len(vehicles)
    if n < 2:
        return []
    centers = np.array([[v.x, v.y] for v in vehicles])
    radius = np.array([0.5 * math.hypot(v.length, v.width) for v in vehicles])
    pairs: list[tuple[int, int]] = []
    for i in range(n):
        d = np.linalg.norm(centers[i + 1 :] - centers[i], axis=1)
        for j in np.nonzero(d <= radius[i] + radius[i + 1 :])[0]:
            a, b = vehicles[i], vehicles[i + 1 + int(j)]
            if obb_overlap(a, b):
                pairs.append((a.vehicle_id, b.vehicle_id))
    return sorted(pairs)


# ---------------------------------------------------------------------------
# optional map file format


def map_to_text(road: RoadMap) -> str:
    doc = {
        "n_main": road.n_main,
        "lanes": [
            {
                "name": lane.name,
                "width": lane.width,
                "left": lane.left,
                "right": lane.right,
                "is_ramp": lane.is_ramp,
                "ramp_kind": lane.ramp_kind,
                "join_lane": lane.join_lane,
                "join_index": lane.join_index,
                "waypoints": [
                    [float(x), float(y), float(h)]
                    for (x, y), h in zip(lane.xy, lane.heading)
                ],
            }
            for lane in road.lanes
        ],
    }
    return json.dumps(doc, indent=1)


def map_from_text(text: str) -> RoadMap:
    doc = json.loads(text)
    lanes = []
    for entry in doc["lanes"]:
        wp = np.array(entry["waypoints"], dtype=np.float64)
        lanes.append(
            Lane(
                xy=wp[:, :2].copy(),
                heading=wp[:, 2].copy(),
                width=entry["width"],
                left=entry["left"],
                right=entry["right"],
                is_ramp=entry["is_ramp"],
                ramp_kind=entry["ramp_kind"],
                join_lane=entry["join_lane"],
                join_index=entry["join_index"],
                name=entry["name"],
            )
        )
    road = RoadMap(lanes=lanes, n_main=doc["n_main"])
    validate_map(road)
    return road


def load_map(path) -> RoadMap:
    return map_from_text(Path(path).read_text())


def save_map(road: RoadMap, path) -> None:
    Path(path).write_text(map_to_text(road))
