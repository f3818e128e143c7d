from __future__ import annotations

import json

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import approx, fixture, mark, raises

from rail.lineride import geometry, guideline
from rail.lineride.guideline import (
    Guideline,
    GuidelineProgress,
    GuidelineTracker,
    KeyOrientationSet,
    OrientationSequence,
    PositionKeyOrientation,
    ProgressKind,
    TerminationVerdict,
)


def point(x: float, z: float = 0.0) -> np.ndarray:
    return np.array([x, 0.0, z])


@fixture(name="flip_keys")
def fixture_flip_keys() -> KeyOrientationSet:
    quarter = [geometry.quat_from_pitch(-0.5 * np.pi * j) for j in range(1, 5)]
    seq = OrientationSequence(
        start=PositionKeyOrientation(1, geometry.UnitQuaternion.identity()),
        intermediates=tuple(quarter[:-1]),
        end=PositionKeyOrientation(5, quarter[-1]),
    )
    landing = PositionKeyOrientation(6, geometry.quat_from_pitch(np.radians(17.0)), 0.5)
    return KeyOrientationSet(positions=(landing,), sequences=(seq,))


class TestGuideline:
    def test_validation(self):
        with raises(ValueError, match="two waypoints"):
            Guideline([[0, 0, 0]], [0.0], 0.3)
        with raises(ValueError, match="increasing"):
            Guideline([[0, 0, 0], [1, 0, 0]], [0.0, 0.0], 0.3)
        with raises(ValueError, match="margin"):
            Guideline([[0, 0, 0], [1, 0, 0]], [0.0, 1.0], 0.0)
        with raises(ValueError, match="non-negative"):
            Guideline([[0, 0, 0], [1, 0, 0]], [-1.0, 1.0], 0.3)

    def test_immutable(self, line_guideline):
        with raises(ValueError):
            line_guideline.points[0, 0] = 1.0

    def test_nearest(self, line_guideline):
        assert line_guideline.nearest_index(point(1.3)) == 3
        assert line_guideline.distance_to(3, point(1.2, 0.5)) == approx(0.5)


class TestBuildGuideline:
    def test_end_points(self, straight_samples):
        gl = guideline.build_guideline(straight_samples, k=2, margin=0.3)
        assert_allclose(gl.points, [[0, 0, 0], [1, 0, 0]], atol=1e-12)
        assert_allclose(gl.distances, [0.0, 1.0], atol=1e-6)

    def test_equal_spacing(self, straight_guideline):
        assert len(straight_guideline) == 5
        assert_allclose(straight_guideline.distances, [0, 0.25, 0.5, 0.75, 1.0], atol=2e-3)

    def test_telescoping(self, straight_samples):
        # consecutive distance differences add up to the total arc-length
        gl = guideline.build_guideline(straight_samples, k=17, margin=0.1)
        assert np.sum(np.diff(gl.distances)) == approx(straight_samples.total_length)
        assert np.all(np.diff(gl.distances) > 0.0)

    def test_coarse_sampling(self):
        seg = geometry.HermiteSegment((0, 0, 0), (1, 0, 0), (1, 0, 0), (1, 0, 0))
        samples = geometry.sample_dense([seg], n=5)
        gl = guideline.build_guideline(samples, k=5, margin=0.1)
        assert_allclose(gl.distances, samples.cum_lengths)

    def test_errors(self, straight_samples):
        with raises(ValueError, match="number of waypoints"):
            guideline.build_guideline(straight_samples, k=1, margin=0.3)
        with raises(ValueError, match="margin"):
            guideline.build_guideline(straight_samples, k=5, margin=0.0)
        flat = geometry.DenseSampling(np.zeros((10, 3)), np.zeros(10))
        with raises(ValueError, match="zero length"):
            guideline.build_guideline(flat, k=5, margin=0.3)


class TestLineReward:
    @mark.parametrize("prev,now,expect", [(1.0, 0.8, 0.2), (0.8, 0.8, 0.0), (0.8, 1.0, -0.2)])
    def test_distance_change(self, line_guideline, prev, now, expect):
        progress = GuidelineProgress(active_index=3)
        goal = line_guideline.points[3]
        reward = guideline.line_reward(
            progress, goal - point(prev), goal - point(now), line_guideline
        )
        assert reward == approx(expect)

    def test_finished(self, line_guideline):
        progress = GuidelineProgress(finished=True)
        assert guideline.line_reward(progress, point(0.0), point(1.0), line_guideline) == 0.0


class TestAdvance:
    def test_within_margin(self, line_guideline):
        progress = GuidelineProgress(active_index=1)
        event = guideline.advance(progress, point(0.4 - 0.29), 0.1, line_guideline)
        assert event.kind is ProgressKind.ADVANCED
        assert event.count == 1
        assert progress.active_index == 2
        assert progress.traveled == approx(0.1)

    def test_on_margin(self, line_guideline):
        progress = GuidelineProgress(active_index=1)
        # distance 0.4 - 0.1 is not below the margin of 0.3
        event = guideline.advance(progress, point(0.1), 0.0, line_guideline)
        assert event.kind is ProgressKind.NO_CHANGE
        assert progress.active_index == 1

    def test_multiple(self):
        gl = Guideline(
            [[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [1.0, 0, 0]], [0, 0.1, 0.2, 1.0], margin=0.3
        )
        progress = GuidelineProgress()
        event = guideline.advance(progress, point(0.1), 0.1, gl)
        assert event == guideline.ProgressEvent(ProgressKind.ADVANCED, 3)
        assert progress.active_index == 3

    def test_finished_absorbing(self, line_guideline):
        progress = GuidelineProgress(active_index=6)
        event = guideline.advance(progress, point(2.4), 0.1, line_guideline)
        assert event.kind is ProgressKind.FINISHED
        assert progress.finished

        event = guideline.advance(progress, point(5.0), 0.1, line_guideline)
        assert event.kind is ProgressKind.NO_CHANGE
        assert progress.finished
        assert progress.active_index == 6

    def test_negative_displacement(self, line_guideline):
        with raises(ValueError):
            guideline.advance(GuidelineProgress(), point(0.0), -0.1, line_guideline)


class TestCheckTermination:
    def test_overrun(self, line_guideline):
        progress = GuidelineProgress(active_index=3, traveled=1.2 + 1e-9)
        verdict = guideline.check_termination(progress, point(1.2, 0.5), line_guideline)
        assert verdict is TerminationVerdict.TERMINATE
        assert verdict

    def test_budget_left(self, line_guideline):
        progress = GuidelineProgress(active_index=3, traveled=1.0)
        assert not guideline.check_termination(progress, point(10.0), line_guideline)

    def test_reach_supersedes(self, line_guideline):
        progress = GuidelineProgress(active_index=3, traveled=1.2)
        x_now = point(1.2, 0.2)
        guideline.advance(progress, x_now, 0.05, line_guideline)
        assert progress.active_index == 4
        verdict = guideline.check_termination(progress, x_now, line_guideline)
        assert verdict is TerminationVerdict.CONTINUE

    def test_overrun_oracle(self, line_guideline, seed):
        # random walks: termination fires exactly when the budget of the
        # active waypoint is spent outside its margin
        rng = np.random.default_rng(seed)
        for _ in range(20):
            progress = GuidelineProgress()
            x = point(0.0)
            for _ in range(200):
                x_new = x + rng.normal(0.05, 0.05, size=3) * np.array([1.0, 0.0, 0.3])
                guideline.advance(progress, x_new, float(np.linalg.norm(x_new - x)), line_guideline)
                x = x_new
                verdict = guideline.check_termination(progress, x, line_guideline)
                if progress.finished:
                    assert not verdict
                    break
                i = progress.active_index
                expect = (
                    progress.traveled > line_guideline.distances[i]
                    and line_guideline.distance_to(i, x) >= line_guideline.margin
                )
                assert bool(verdict) == expect
                if verdict:
                    break


class TestKeyOrientations:
    def test_position_match(self, line_guideline):
        key = PositionKeyOrientation(2, geometry.quat_from_pitch(0.3))
        reward, verdict = guideline.pos_key_reward(key.q, key, point(0.8), line_guideline)
        assert reward == approx(1.0)
        assert verdict is TerminationVerdict.CONTINUE

    def test_position_mismatch(self, line_guideline):
        key = PositionKeyOrientation(2, geometry.UnitQuaternion.identity(), theta_thres=1.0)
        q = geometry.quat_from_pitch(0.5 * np.pi)
        reward, verdict = guideline.pos_key_reward(q, key, point(0.8), line_guideline)
        assert reward == approx(np.exp(-0.5 * np.pi))
        assert reward == approx(0.2079, abs=1e-4)
        assert verdict is TerminationVerdict.TERMINATE

    def test_landing_pitch_maximum(self, line_guideline):
        key = PositionKeyOrientation(6, geometry.quat_from_pitch(np.radians(17.0)))
        pitches = np.radians(np.linspace(0.0, 40.0, 81))
        rewards = [
            guideline.pos_key_reward(geometry.quat_from_pitch(p), key, point(2.4), line_guideline)[0]
            for p in pitches
        ]
        assert np.degrees(pitches[np.argmax(rewards)]) == approx(17.0)

    def test_key_is_active(self, line_guideline):
        key = PositionKeyOrientation(2, geometry.UnitQuaternion.identity())
        assert guideline.key_is_active(key, point(0.9), line_guideline)
        assert not guideline.key_is_active(key, point(1.2), line_guideline)

    def test_key_validation(self, line_guideline):
        with raises(ValueError):
            PositionKeyOrientation(-1, geometry.UnitQuaternion.identity())
        with raises(ValueError):
            PositionKeyOrientation(1, geometry.UnitQuaternion.identity(), theta_thres=4.0)
        keys = KeyOrientationSet(positions=(PositionKeyOrientation(7, (1, 0, 0, 0)),))
        with raises(ValueError, match="anchor"):
            keys.validate(line_guideline)

    def test_sequence_progress(self, flip_keys):
        seq = flip_keys.sequences[0]
        progress = GuidelineProgress()
        target = seq.targets[0]
        q_prev = geometry.quat_from_pitch(geometry.quat_to_pitch(target) + 1.0)
        q_now = geometry.quat_from_pitch(geometry.quat_to_pitch(target) + 0.9)
        reward, verdict, update = guideline.seq_key_reward(q_now, q_prev, seq, progress)
        assert reward == approx(0.1)
        assert verdict is TerminationVerdict.CONTINUE
        assert update is None
        assert progress.active_seq_target == 0

        reward, verdict, _ = guideline.seq_key_reward(q_now, q_now, seq, progress)
        assert reward == approx(0.0, abs=1e-7)
        assert verdict is TerminationVerdict.CONTINUE

    def test_sequence_capture(self, flip_keys):
        seq = flip_keys.sequences[0]
        progress = GuidelineProgress()
        q = seq.targets[0]
        _, _, update = guideline.seq_key_reward(q, q, seq, progress)
        assert update == 1
        assert progress.active_seq_target == 1

    def test_sequence_monotonicity(self, flip_keys):
        seq = flip_keys.sequences[0]
        progress = GuidelineProgress()
        q_prev = geometry.quat_from_pitch(-0.5 * np.pi + 0.5)
        q_now = geometry.quat_from_pitch(-0.5 * np.pi + 1.0)
        _, verdict, _ = guideline.seq_key_reward(q_now, q_prev, seq, progress)
        assert verdict is TerminationVerdict.TERMINATE

    def test_sequence_validation(self):
        start = PositionKeyOrientation(3, geometry.UnitQuaternion.identity())
        end = PositionKeyOrientation(1, geometry.UnitQuaternion.identity())
        with raises(ValueError, match="precede"):
            OrientationSequence(start, (geometry.UnitQuaternion.identity(),), end)
        with raises(ValueError, match="intermediate"):
            OrientationSequence(end, (), start)

    def test_sequence_active(self, flip_keys):
        seq = flip_keys.sequences[0]
        assert [seq.is_active(i) for i in range(7)] == [False, False, True, True, True, True, False]


class TestGuidelineTracker:
    def test_drive_through(self, line_guideline):
        tracker = GuidelineTracker(line_guideline)
        x_prev = point(0.0)
        q = geometry.UnitQuaternion.identity()
        total = 0.0
        for x in np.linspace(0.05, 2.4, 48):
            step = tracker.step(x_prev, point(x), q, q)
            assert not step.terminated
            total += step.line
            x_prev = point(x)
            if tracker.finished:
                break
        assert tracker.finished
        assert total > 0.0

    def test_line_overrun(self, line_guideline):
        tracker = GuidelineTracker(line_guideline)
        q = geometry.UnitQuaternion.identity()
        # drive sideways until the budget of the first waypoint after start is spent
        x_prev = point(0.0)
        tracker.step(x_prev, x_prev, q, q)
        cause = None
        for z in np.linspace(0.1, 2.0, 20):
            step = tracker.step(x_prev, point(0.0, z), q, q)
            x_prev = point(0.0, z)
            if step.terminated:
                cause = step.cause
                break
        assert cause == "line_overrun"

    def test_key_orientation_termination(self, line_guideline):
        key = PositionKeyOrientation(1, geometry.UnitQuaternion.identity(), theta_thres=0.5)
        tracker = GuidelineTracker(line_guideline, KeyOrientationSet(positions=(key,)))
        identity = geometry.UnitQuaternion.identity()
        tracker.step(point(0.0), point(0.0), identity, identity)
        q_bad = geometry.quat_from_pitch(1.0)
        step = tracker.step(point(0.0), point(0.4), q_bad, q_bad)
        assert step.terminated
        assert step.cause == "key_orientation"
        assert step.rotation == approx(np.exp(-1.0))

    def test_reset(self, line_guideline):
        tracker = GuidelineTracker(line_guideline)
        q = geometry.UnitQuaternion.identity()
        step = tracker.step(point(0.0), point(0.2), q, q)
        assert not step.terminated
        assert tracker.progress.active_index == 2
        tracker.reset()
        assert tracker.progress.active_index == 0
        assert tracker.progress.traveled == 0.0
        assert not tracker.finished

    def test_sequence_counters(self, line_guideline, flip_keys):
        flip = flip_keys.sequences[0]
        tilt = OrientationSequence(
            start=PositionKeyOrientation(1, geometry.UnitQuaternion.identity()),
            intermediates=(geometry.quat_from_pitch(0.5),),
            end=PositionKeyOrientation(4, geometry.quat_from_pitch(1.0)),
        )
        tracker = GuidelineTracker(line_guideline, KeyOrientationSet(sequences=(flip, tilt)))
        assert len(tracker.sequence_progress) == 2
        identity = geometry.UnitQuaternion.identity()
        tracker.step(point(0.0), point(0.2), identity, identity)
        assert tracker.progress.active_index == 2

        # capturing the first target of the flip leaves the tilt on its first target
        q = flip.targets[0]
        step = tracker.step(point(0.2), point(0.3), q, q)
        assert not step.terminated
        assert tracker.sequence_progress[0].active_seq_target == 1
        assert tracker.sequence_progress[1].active_seq_target == 0

        tracker.reset()
        assert all(p.active_seq_target is None for p in tracker.sequence_progress)


class TestGuidelineFile:
    def test_roundtrip_bytes(self, tmp_path, line_guideline, flip_keys):
        path = str(tmp_path / "flip.json")
        guideline.write_guideline(path, line_guideline, flip_keys)
        with open(path) as f:
            original = f.read()

        gl, keys = guideline.read_guideline(path)
        assert_array_equal(gl.points, line_guideline.points)
        assert_array_equal(gl.distances, line_guideline.distances)
        assert gl.margin == line_guideline.margin
        assert keys.sequences[0].end.anchor_index == 5
        assert len(keys.sequences[0].targets) == 4
        assert guideline.dumps_guideline(gl, keys) == original

    def test_schema(self, line_guideline):
        data = guideline.guideline_to_dict(line_guideline)
        assert list(data) == ["version", "name", "waypoints", "margin", "key_orientations"]
        assert set(data["waypoints"][3]) == {"p", "d"}
        assert data["waypoints"][3]["d"] == approx(1.2)

    def test_version(self, tmp_path, line_guideline):
        data = guideline.guideline_to_dict(line_guideline)
        data["version"] = 99
        path = tmp_path / "gl.json"
        path.write_text(json.dumps(data))
        with raises(ValueError, match="version"):
            guideline.read_guideline(str(path))

    def test_invalid(self, tmp_path):
        path = tmp_path / "gl.json"
        path.write_text("{not json")
        with raises(ValueError, match="JSON"):
            guideline.read_guideline(str(path))
        path.write_text(json.dumps({"version": 1, "waypoints": [{"p": [0, 0, 0]}]}))
        with raises(ValueError, match="schema"):
            guideline.read_guideline(str(path))
        with raises(FileNotFoundError):
            guideline.read_guideline(str(tmp_path / "missing.json"))

    def test_unknown_key_type(self, line_guideline):
        data = guideline.guideline_to_dict(line_guideline)
        data["key_orientations"] = [{"type": "spiral", "quaternions": [[1, 0, 0, 0]]}]
        with raises(ValueError, match="spiral"):
            guideline.guideline_from_dict(data)
