"""Egocentric observation encoding and action clamping.

The observation is a fixed 43-vector:

* [0:2]   ego velocity in the body frame (forward, lateral)
* [2:11]  per lane in (ego, left, right) order: nearest-waypoint offset
          (dx, dy) in the ego frame and heading error
* [11:43] per neighbor region in (BL, BM, BR, ML, MR, TL, TM, TR) order:
          relative position (dx, dy) in the ego frame, relative heading,
          and the neighbor's speed

Missing lanes and empty regions stay zero. All quantities are rotated by the
negative ego heading, so rigidly transforming the whole world leaves the
vector unchanged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .world import RoadMap, VehicleState, WorldState, wrap_angle

__all__ = [
    "OBS_DIM",
    "ActionCommand",
    "NeighborRegion",
    "clamp_action",
    "classify_neighbor_region",
    "encode_observation",
]

OBS_DIM = 43
ACCEL_BOUND = 3.0
YAW_RATE_BOUND = 2.0
REGION_MARGIN_M = 2.0


class NeighborRegion(enum.Enum):
    BL = 0
    BM = 1
    BR = 2
    ML = 3
    MR = 4
    TL = 5
    TM = 6
    TR = 7


@dataclass(frozen=True)
class ActionCommand:
    accel: float
    yaw_rate: float

    def __iter__(self):
        yield self.accel
        yield self.yaw_rate


def clamp_action(raw) -> ActionCommand:
    """Componentwise clamp to the [-3, 3] x [-2, 2] action box."""
    a, w = (raw.accel, raw.yaw_rate) if hasattr(raw, "accel") else tuple(raw)
    if not (math.isfinite(a) and math.isfinite(w)):
        raise ValueError("non-finite action")
    return ActionCommand(
        min(max(a, -ACCEL_BOUND), ACCEL_BOUND),
        min(max(w, -YAW_RATE_BOUND), YAW_RATE_BOUND),
    )


def _to_ego_frame(dx: float, dy: float, ego_heading: float) -> tuple[float, float]:
    c, s = math.cos(ego_heading), math.sin(ego_heading)
    return c * dx + s * dy, -s * dx + c * dy


def classify_neighbor_region(
    ego: VehicleState, other: VehicleState, road: RoadMap
) -> NeighborRegion | None:
    """Eight-region classification from lane difference and longitudinal gap.

    The lane letter comes from the signed lane-index difference (+1 left,
    0 middle, -1 right; anything farther is out of scope). The position
    letter uses the ego-frame longitudinal offset against a half-length
    threshold plus a fixed margin.
    """
    if ego.lane_index is None or other.lane_index is None:
        return None
    d_lane = other.lane_index - ego.lane_index
    if abs(d_lane) > 1:
        return None
    lane_letter = {1: "L", 0: "M", -1: "R"}[d_lane]
    dx, _ = _to_ego_frame(other.x - ego.x, other.y - ego.y, ego.heading)
    threshold = 0.5 * (ego.length + other.length) + REGION_MARGIN_M
    if dx > threshold:
        pos_letter = "T"
    elif dx < -threshold:
        pos_letter = "B"
    else:
        pos_letter = "M"
    if pos_letter + lane_letter == "MM":  # ego's own cell is excluded
        return None
    return NeighborRegion[pos_letter + lane_letter]


def _lane_block(road: RoadMap, lane_index: int | None, ego: VehicleState) -> list[float]:
    if lane_index is None:
        return [0.0, 0.0, 0.0]
    lane = road.lanes[lane_index]
    d2 = (lane.xy[:, 0] - ego.x) ** 2 + (lane.xy[:, 1] - ego.y) ** 2
    i = int(np.argmin(d2))
    dx, dy = _to_ego_frame(
        float(lane.xy[i, 0]) - ego.x, float(lane.xy[i, 1]) - ego.y, ego.heading
    )
    return [dx, dy, wrap_angle(float(lane.heading[i]) - ego.heading)]


def encode_observation(world: WorldState, vehicle_id: int) -> np.ndarray:
    """Encode the 43-vector for one vehicle; deterministic and always finite."""
    try:
        ego = world.vehicles[vehicle_id]
    except KeyError:
        raise KeyError(f"vehicle {vehicle_id} not in world") from None
    road = world.road
    out = np.zeros(OBS_DIM)
    # ego dynamics: velocity rotated into the body frame
    vx = ego.speed * math.cos(ego.heading)
    vy = ego.speed * math.sin(ego.heading)
    out[0], out[1] = _to_ego_frame(vx, vy, ego.heading)
    # lane observation for ego / left / right lanes
    if ego.lane_index is not None:
        lane = road.lanes[ego.lane_index]
        blocks = [ego.lane_index, lane.left, lane.right]
    else:
        blocks = [None, None, None]
    for k, lane_index in enumerate(blocks):
        out[2 + 3 * k : 5 + 3 * k] = _lane_block(road, lane_index, ego)
    # nearest neighbor per region
    best: dict[NeighborRegion, tuple[float, VehicleState]] = {}
    for other in world.vehicles.values():
        if other.vehicle_id == vehicle_id:
            continue
        region = classify_neighbor_region(ego, other, road)
        if region is None:
            continue
        d2 = (other.x - ego.x) ** 2 + (other.y - ego.y) ** 2
        if region not in best or d2 < best[region][0]:
            best[region] = (d2, other)
    for region, (_, other) in best.items():
        base = 11 + 4 * region.value
        dx, dy = _to_ego_frame(other.x - ego.x, other.y - ego.y, ego.heading)
        out[base : base + 4] = [
            dx,
            dy,
            wrap_angle(other.heading - ego.heading),
            other.speed,
        ]
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite observation")
    return out
