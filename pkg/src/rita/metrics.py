"""Evaluation mathematics: per-model trajectory scores, lateral-speed
spectrum envelopes with IoU/Coverage, cut-in scatter statistics with
confidence ellipses, egocentric affordance statistics, and benchmark
safety/completion/distance-ratio measures.

Episode logs are duck-typed: anything with ``steps`` (each step carrying
``states``, ``actions``, ``collisions`` keyed by vehicle id) and an
``evaluated_id`` works. ``rita.kit.EpisodeLog`` is the canonical producer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .obs import ACCEL_BOUND, YAW_RATE_BOUND
from .world import wrap_angle

__all__ = [
    "MetricsError",
    "TrajectoryScores",
    "SpectrumEnvelope",
    "ConfidenceEllipse",
    "AffordanceStats",
    "SPECTRUM_BINS",
    "TTC_CAP_S",
    "SENSING_RANGE_M",
    "trajectory_scores",
    "combined_control",
    "lateral_speed_series",
    "spectrum_envelope",
    "iou_coverage",
    "chi2_quantile_2dof",
    "confidence_ellipse",
    "cutin_event",
    "affordance_stats",
    "distance_ratio",
    "safety_completion",
]

SPECTRUM_BINS = 512
TTC_CAP_S = 20.0
SENSING_RANGE_M = 50.0


class MetricsError(ValueError):
    """Empty or degenerate inputs to a metric."""


# ---------------------------------------------------------------------------
# model scores


@dataclass(frozen=True)
class TrajectoryScores:
    safety: float
    completion: float
    stability: float
    diversity: float


def combined_control(actions: np.ndarray) -> np.ndarray:
    """Per-step control magnitude, each component normalized by its bound."""
    a = np.abs(actions[:, 0]) / ACCEL_BOUND
    w = np.abs(actions[:, 1]) / YAW_RATE_BOUND
    return 0.5 * (a + w)


def _evaluated_actions(log) -> np.ndarray:
    vid = log.evaluated_id
    rows = [step.actions[vid] for step in log.steps if vid in step.actions]
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def _has_collision(log) -> bool:
    vid = log.evaluated_id
    return any(vid in pair for step in log.steps for pair in step.collisions)


def trajectory_scores(logs, checker=None) -> TrajectoryScores:
    """Safety/completion rates over the episode set plus stability and
    diversity of the evaluated vehicle's combined control magnitude."""
    logs = list(logs)
    if not logs:
        raise MetricsError("empty episode set")
    safety = sum(not _has_collision(log) for log in logs) / len(logs)
    completed = 0
    if checker is not None:
        completed = sum(checker(log) is not None for log in logs)
    combined = np.concatenate([combined_control(_evaluated_actions(l)) for l in logs])
    if combined.size == 0:
        raise MetricsError("no recorded actions for the evaluated vehicle")
    return TrajectoryScores(
        safety=safety,
        completion=completed / len(logs),
        stability=1.0 - float(combined.mean()),
        diversity=float(combined.std()),
    )


def safety_completion(logs, checker=None) -> tuple[float, float]:
    """Benchmark-table rates; without a checker, completion equals safety
    (the safe-driving convention)."""
    logs = list(logs)
    if not logs:
        raise MetricsError("empty episode set")
    safety = sum(not _has_collision(log) for log in logs) / len(logs)
    if checker is None:
        return safety, safety
    completion = sum(checker(log) is not None for log in logs) / len(logs)
    return safety, completion


# ---------------------------------------------------------------------------
# spectrum envelopes


@dataclass(frozen=True)
class SpectrumEnvelope:
    freq: np.ndarray  # (512,) integer bins, -256..255
    amplitude: np.ndarray  # (512,) non-negative

    def __post_init__(self):
        if len(self.amplitude) != SPECTRUM_BINS or np.any(self.amplitude < 0):
            raise MetricsError("envelope must hold 512 non-negative amplitudes")


def lateral_speed_series(log, vehicle_id: int) -> np.ndarray:
    """Lateral (cross-road) speed of a vehicle over an episode, assuming the
    road runs along +x."""
    vals = [
        s.states[vehicle_id].speed * math.sin(s.states[vehicle_id].heading)
        for s in log.steps
        if vehicle_id in s.states
    ]
    return np.array(vals, dtype=np.float64)


def _single_spectrum(series: np.ndarray) -> np.ndarray:
    if len(series) < 2:
        raise MetricsError("series needs at least two samples")
    resampled = np.interp(
        np.linspace(0.0, len(series) - 1.0, SPECTRUM_BINS),
        np.arange(len(series), dtype=np.float64),
        series,
    )
    return np.abs(np.fft.fftshift(np.fft.fft(resampled)))


def spectrum_envelope(series_set) -> SpectrumEnvelope:
    """Per-bin maximum of the DFT magnitudes of the resampled series set."""
    series_set = list(series_set)
    if not series_set:
        raise MetricsError("empty series set")
    spectra = np.stack([_single_spectrum(np.asarray(s, float)) for s in series_set])
    freq = np.arange(-SPECTRUM_BINS // 2, SPECTRUM_BINS // 2)
    return SpectrumEnvelope(freq=freq, amplitude=spectra.max(axis=0))


def iou_coverage(model: SpectrumEnvelope, human: SpectrumEnvelope) -> tuple[float, float]:
    """Area overlap measures between amplitude envelopes:
    iou = sum(min)/sum(max), coverage = sum(model)/sum(max)."""
    vm, vh = model.amplitude, human.amplitude
    if len(vm) != len(vh):
        raise MetricsError("envelopes must have equal bin counts")
    denom = float(np.maximum(vm, vh).sum())
    if denom == 0.0:
        raise MetricsError("both envelopes are identically zero")
    return float(np.minimum(vm, vh).sum()) / denom, float(vm.sum()) / denom


# ---------------------------------------------------------------------------
# confidence ellipse

_CHI2_CACHE: dict[float, float] = {}


def chi2_quantile_2dof(level: float, n_draws: int = 1_000_000) -> float:
    """Chi-square(2) quantile by Monte Carlo calibration, cached per level."""
    if not 0.0 < level < 1.0:
        raise MetricsError("confidence level must be in (0, 1)")
    if level not in _CHI2_CACHE:
        rng = np.random.default_rng(20_240_601)
        r2 = rng.standard_normal((n_draws, 2))
        _CHI2_CACHE[level] = float(np.quantile((r2**2).sum(axis=1), level))
    return _CHI2_CACHE[level]


@dataclass(frozen=True)
class ConfidenceEllipse:
    center: np.ndarray  # (2,)
    cov: np.ndarray  # (2, 2)
    scale: float  # chi-square quantile for the level

    def contains(self, points: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(points) - self.center
        sol = np.linalg.solve(self.cov, diff.T).T
        return (diff * sol).sum(axis=1) <= self.scale

    def boundary(self, n: int = 256) -> np.ndarray:
        angles = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        unit = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        chol = np.linalg.cholesky(self.cov)
        return self.center + math.sqrt(self.scale) * unit @ chol.T


def confidence_ellipse(points, level: float = 0.95) -> ConfidenceEllipse:
    """Gaussian confidence ellipse of 2-D points at the given level."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise MetricsError("need at least three 2-D points")
    cov = np.cov(pts.T)
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals[0] <= 1e-12 * max(eigvals[1], 1.0):
        raise MetricsError("singular covariance")
    return ConfidenceEllipse(
        center=pts.mean(axis=0), cov=cov, scale=chi2_quantile_2dof(level)
    )


# ---------------------------------------------------------------------------
# cut-in scatter


def cutin_event(log, vehicle_id: int):
    """First step the vehicle's center crosses into the ego's lane.

    Returns (step, ttc seconds, lateral speed m/s) or None. TTC is the
    longitudinal bumper gap over the closing speed, capped for plotting.
    """
    ego_id = log.evaluated_id
    prev_lane = None
    for t, step in enumerate(log.steps):
        if vehicle_id not in step.states or ego_id not in step.states:
            prev_lane = None
            continue
        v = step.states[vehicle_id]
        ego = step.states[ego_id]
        lane, ego_lane = v.lane_index, ego.lane_index
        if (
            lane is not None
            and ego_lane is not None
            and prev_lane is not None
            and prev_lane != ego_lane
            and lane == ego_lane
        ):
            fwd = (math.cos(ego.heading), math.sin(ego.heading))
            d_long = (v.x - ego.x) * fwd[0] + (v.y - ego.y) * fwd[1]
            gap = abs(d_long) - 0.5 * (ego.length + v.length)
            v_long = v.speed * math.cos(v.heading - ego.heading)
            closing = (ego.speed - v_long) if d_long >= 0 else (v_long - ego.speed)
            if closing <= 0.0:
                ttc = TTC_CAP_S
            elif gap <= 0.0:
                ttc = 0.0
            else:
                ttc = min(gap / closing, TTC_CAP_S)
            lateral = v.speed * math.sin(v.heading - ego.heading)
            return t, float(ttc), float(lateral)
        prev_lane = lane
    return None


# ---------------------------------------------------------------------------
# affordance statistics


@dataclass(frozen=True)
class AffordanceStats:
    mean_distance: float
    mean_speed: float
    mean_heading: float  # mean absolute heading error (rad)
    ratio_distance: float = 1.0
    ratio_speed: float = 1.0
    ratio_heading: float = 1.0

    def max_error_rate(self) -> float:
        return max(
            abs(self.ratio_distance - 1.0),
            abs(self.ratio_speed - 1.0),
            abs(self.ratio_heading - 1.0),
        )


def affordance_stats(logs, baseline: AffordanceStats | None = None) -> AffordanceStats:
    """Mean neighbor distance/speed/|heading error| in the ego's view over
    all steps of all logs, within the sensing range."""
    dist, speed, heading = [], [], []
    for log in logs:
        vid = log.evaluated_id
        for step in log.steps:
            if vid not in step.states:
                continue
            ego = step.states[vid]
            for other_id, other in step.states.items():
                if other_id == vid:
                    continue
                d = math.hypot(other.x - ego.x, other.y - ego.y)
                if d > SENSING_RANGE_M:
                    continue
                dist.append(d)
                speed.append(other.speed)
                heading.append(abs(wrap_angle(other.heading - ego.heading)))
    if not dist:
        raise MetricsError("no neighbors within sensing range anywhere in the logs")
    stats = AffordanceStats(
        mean_distance=float(np.mean(dist)),
        mean_speed=float(np.mean(speed)),
        mean_heading=float(np.mean(heading)),
    )
    if baseline is None:
        return stats

    def ratio(value: float, base: float) -> float:
        if base <= 0.0:
            return 1.0 if value <= 0.0 else value / 1e-9
        return value / base

    return AffordanceStats(
        mean_distance=stats.mean_distance,
        mean_speed=stats.mean_speed,
        mean_heading=stats.mean_heading,
        ratio_distance=ratio(stats.mean_distance, baseline.mean_distance),
        ratio_speed=ratio(stats.mean_speed, baseline.mean_speed),
        ratio_heading=ratio(stats.mean_heading, baseline.mean_heading),
    )


# ---------------------------------------------------------------------------
# distance ratio


def _arc_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def distance_ratio(log, window) -> float:
    """Ego's simulated arc length over its replay arc length, capped at 1."""
    vid = log.evaluated_id
    sim_pts = np.array(
        [(s.states[vid].x, s.states[vid].y) for s in log.steps if vid in s.states]
    )
    replay_pts = window.data[0, window.mask[0], :2]
    sim = _arc_length(sim_pts)
    replay = _arc_length(replay_pts)
    if replay == 0.0:
        return 1.0
    return min(1.0, sim / replay)
