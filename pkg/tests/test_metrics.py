import math
from dataclasses import dataclass, field

import numpy as np
import pytest

from rita import dataio as dio
from rita import metrics as m
from rita.world import VehicleState


@dataclass
class FakeStep:
    states: dict = field(default_factory=dict)
    actions: dict = field(default_factory=dict)
    collisions: list = field(default_factory=list)


@dataclass
class FakeLog:
    steps: list
    evaluated_id: int = 0


def make_log(actions, collisions_at=(), states=None):
    steps = []
    for t, act in enumerate(actions):
        step = FakeStep(actions={0: act})
        if t in collisions_at:
            step.collisions = [(0, 1)]
        if states is not None:
            step.states = states[t]
        steps.append(step)
    return FakeLog(steps=steps)


class TestTrajectoryScores:
    def test_zero_actions(self):
        log = make_log([(0.0, 0.0)] * 10)
        scores = m.trajectory_scores([log], checker=lambda l: None)
        assert scores.safety == 1.0
        assert scores.completion == 0.0
        assert scores.stability == 1.0
        assert scores.diversity == 0.0

    def test_full_throttle_stability(self):
        log = make_log([(3.0, 0.0)] * 20)
        scores = m.trajectory_scores([log])
        assert scores.stability == pytest.approx(0.5)

    def test_diversity_matches_brute_force(self):
        rng = np.random.default_rng(0)
        acts = [(float(a), float(w)) for a, w in rng.uniform(-3, 2, size=(50, 2))]
        scores = m.trajectory_scores([make_log(acts)])
        combined = [(abs(a) / 3 + abs(w) / 2) / 2 for a, w in acts]
        assert scores.diversity == pytest.approx(float(np.std(combined)))
        assert scores.stability == pytest.approx(1.0 - float(np.mean(combined)))

    def test_empty_set_rejected(self):
        with pytest.raises(m.MetricsError):
            m.trajectory_scores([])


class TestSpectrumEnvelope:
    def test_dc_signal(self):
        env = m.spectrum_envelope([np.full(100, 2.5)])
        zero_bin = np.nonzero(env.freq == 0)[0][0]
        assert env.amplitude[zero_bin] == pytest.approx(512 * 2.5)
        rest = np.delete(env.amplitude, zero_bin)
        assert np.all(rest < 1e-9)

    def test_pure_sinusoid_peaks_at_k(self):
        k = 17
        n = np.arange(m.SPECTRUM_BINS)
        series = np.sin(2 * math.pi * k * n / m.SPECTRUM_BINS)
        env = m.spectrum_envelope([series])
        top2 = np.argsort(env.amplitude)[-2:]
        assert set(env.freq[top2]) == {-k, k}

    def test_envelope_dominates_members(self):
        rng = np.random.default_rng(1)
        series = [rng.normal(size=200) for _ in range(5)]
        env = m.spectrum_envelope(series)
        for s in series:
            single = m.spectrum_envelope([s])
            assert np.all(env.amplitude >= single.amplitude - 1e-12)

    def test_empty_rejected(self):
        with pytest.raises(m.MetricsError):
            m.spectrum_envelope([])


class TestIouCoverage:
    def env(self, values):
        amp = np.zeros(m.SPECTRUM_BINS)
        amp[: len(values)] = values
        freq = np.arange(-256, 256)
        return m.SpectrumEnvelope(freq=freq, amplitude=amp)

    def test_identical(self):
        e = self.env([1.0, 2.0, 3.0])
        assert m.iou_coverage(e, e) == (1.0, 1.0)

    def test_zero_model(self):
        assert m.iou_coverage(self.env([0.0]), self.env([1.0, 2.0])) == (0.0, 0.0)

    def test_hand_fractions(self):
        iou, cov = m.iou_coverage(self.env([1.0, 3.0]), self.env([2.0, 2.0]))
        assert iou == pytest.approx(0.6)
        assert cov == pytest.approx(0.8)

    def test_both_zero_rejected(self):
        with pytest.raises(m.MetricsError):
            m.iou_coverage(self.env([0.0]), self.env([0.0]))

    def test_iou_symmetric_coverage_not(self):
        a, b = self.env([1.0, 3.0]), self.env([2.0, 3.0])
        assert m.iou_coverage(a, b)[0] == m.iou_coverage(b, a)[0]
        assert m.iou_coverage(a, b)[1] != m.iou_coverage(b, a)[1]


class TestConfidenceEllipse:
    def test_isotropic_radius(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((200_000, 2))
        ell = m.confidence_ellipse(pts, level=0.95)
        # chi-square(2, 0.95) is 5.991; Monte Carlo calibration lands nearby
        assert math.sqrt(ell.scale) == pytest.approx(2.448, abs=0.02)

    def test_all_points_equal_rejected(self):
        with pytest.raises(m.MetricsError):
            m.confidence_ellipse(np.ones((10, 2)))

    def test_containment_converges(self):
        rng = np.random.default_rng(3)
        cov = np.array([[2.0, 0.7], [0.7, 1.0]])
        chol = np.linalg.cholesky(cov)
        pts = rng.standard_normal((100_000, 2)) @ chol.T + np.array([3.0, -1.0])
        ell = m.confidence_ellipse(pts, level=0.95)
        frac = float(ell.contains(pts).mean())
        assert abs(frac - 0.95) < 0.01

    def test_too_few_points_rejected(self):
        with pytest.raises(m.MetricsError):
            m.confidence_ellipse(np.zeros((2, 2)))


class TestCutinEvent:
    def make_states(self, lane_seq, gap=15.0, closing=5.0, lateral_heading=0.1):
        states = []
        for lane in lane_seq:
            ego = VehicleState(0, 0.0, 0.0, 0.0, 10.0, length=5.0, lane_index=0)
            vx = gap + 5.0  # bumper gap == gap for two 5 m vehicles
            other = VehicleState(
                1,
                vx,
                0.0 if lane == 0 else 3.7,
                lateral_heading,
                (10.0 - closing) / math.cos(lateral_heading),
                length=5.0,
                lane_index=lane,
            )
            states.append({0: ego, 1: other})
        return states

    def test_no_lane_change(self):
        states = self.make_states([1] * 20)
        log = make_log([(0.0, 0.0)] * 20, states=states)
        assert m.cutin_event(log, 1) is None

    def test_scripted_crossing(self):
        states = self.make_states([1] * 40 + [0] * 20)
        log = make_log([(0.0, 0.0)] * 60, states=states)
        step, ttc, lateral = m.cutin_event(log, 1)
        assert step == 40
        assert ttc == pytest.approx(3.0, rel=1e-6)
        assert lateral == pytest.approx(
            (10.0 - 5.0) / math.cos(0.1) * math.sin(0.1), rel=1e-6
        )

    def test_zero_closing_capped(self):
        states = self.make_states([1] * 5 + [0] * 5, closing=0.0)
        log = make_log([(0.0, 0.0)] * 10, states=states)
        _, ttc, _ = m.cutin_event(log, 1)
        assert ttc == m.TTC_CAP_S


class TestAffordanceStats:
    def static_log(self, separation=10.0, steps=5):
        states = []
        for _ in range(steps):
            states.append(
                {
                    0: VehicleState(0, 0.0, 0.0, 0.0, 0.0, lane_index=0),
                    1: VehicleState(1, separation, 0.0, 0.0, 0.0, lane_index=0),
                }
            )
        return make_log([(0.0, 0.0)] * steps, states=states)

    def test_two_static_vehicles(self):
        stats = m.affordance_stats([self.static_log()])
        assert stats.mean_distance == pytest.approx(10.0)

    def test_self_baseline_gives_unit_ratios(self):
        log = self.static_log()
        base = m.affordance_stats([log])
        stats = m.affordance_stats([log], baseline=base)
        assert stats.ratio_distance == pytest.approx(1.0)
        assert stats.ratio_speed == pytest.approx(1.0)
        assert stats.max_error_rate() == pytest.approx(0.0)

    def test_brute_force_recompute(self):
        rng = np.random.default_rng(5)
        states = []
        expected = []
        for _ in range(30):
            frame = {0: VehicleState(0, 0.0, 0.0, 0.0, 5.0, lane_index=0)}
            for vid in range(1, 4):
                x, y = rng.uniform(-30, 30, size=2)
                sp = rng.uniform(0, 20)
                frame[vid] = VehicleState(vid, float(x), float(y), 0.3, float(sp))
                d = math.hypot(x, y)
                if d <= m.SENSING_RANGE_M:
                    expected.append((d, sp, 0.3))
            states.append(frame)
        log = make_log([(0.0, 0.0)] * 30, states=states)
        stats = m.affordance_stats([log])
        arr = np.array(expected)
        assert stats.mean_distance == pytest.approx(arr[:, 0].mean())
        assert stats.mean_speed == pytest.approx(arr[:, 1].mean())
        assert stats.mean_heading == pytest.approx(arr[:, 2].mean())

    def test_no_neighbors_rejected(self):
        states = [{0: VehicleState(0, 0.0, 0.0, 0.0, 0.0)} for _ in range(3)]
        log = make_log([(0.0, 0.0)] * 3, states=states)
        with pytest.raises(m.MetricsError):
            m.affordance_stats([log])


class TestDistanceRatio:
    def window_with_path(self, xs):
        data = np.zeros((16, 128, 4))
        mask = np.zeros((16, 128), dtype=bool)
        data[0, :, 0] = xs
        mask[0, :] = True
        return dio.TrajectoryWindow(
            data,
            mask,
            np.full(16, -1, dtype=np.int64),
            0,
            np.full(16, 4.6),
            np.full(16, 1.8),
        )

    def log_with_path(self, xs):
        states = [
            {0: VehicleState(0, float(x), 0.0, 0.0, 1.0, lane_index=0)} for x in xs
        ]
        return make_log([(0.0, 0.0)] * len(xs), states=states)

    def test_identical(self):
        xs = np.linspace(0, 127, 128)
        assert m.distance_ratio(self.log_with_path(xs), self.window_with_path(xs)) == 1.0

    def test_half_distance(self):
        xs = np.linspace(0, 127, 128)
        ratio = m.distance_ratio(self.log_with_path(xs / 2), self.window_with_path(xs))
        assert ratio == pytest.approx(0.5)

    def test_capped_at_one(self):
        xs = np.linspace(0, 127, 128)
        ratio = m.distance_ratio(self.log_with_path(xs * 2), self.window_with_path(xs))
        assert ratio == 1.0


class TestSafetyCompletion:
    def test_counted_rates(self):
        logs = [make_log([(0.0, 0.0)] * 5) for _ in range(10)]
        for i in (2, 7):
            logs[i].steps[3].collisions = [(0, 1)]
        safety, completion = m.safety_completion(logs, checker=None)
        assert safety == pytest.approx(0.8)
        assert completion == safety

    def test_mixed_events_hand_count(self):
        logs = [make_log([(0.0, 0.0)] * 5) for _ in range(4)]
        logs[0].steps[0].collisions = [(0, 9)]
        hits = {id(logs[1]), id(logs[2])}
        checker = lambda log: "event" if id(log) in hits else None  # noqa: E731
        safety, completion = m.safety_completion(logs, checker=checker)
        assert safety == pytest.approx(0.75)
        assert completion == pytest.approx(0.5)
