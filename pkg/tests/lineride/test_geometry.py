from __future__ import annotations

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import approx, fixture, mark, raises
from scipy.integrate import quad

from rail.lineride import geometry


@fixture(name="bump")
def fixture_bump() -> geometry.HermiteSegment:
    return geometry.HermiteSegment((0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 0, -1))


class TestHermiteSegment:
    def test_end_points(self, bump):
        assert_array_equal(geometry.hermite_eval(bump, 0.0), bump.x0)
        assert_array_equal(geometry.hermite_eval(bump, 1.0), bump.x1)

    def test_midpoint(self, bump):
        assert_allclose(geometry.hermite_eval(bump, 0.5), [0.5, 0.0, 0.25])

    def test_vectorised(self, bump):
        u = np.linspace(0.0, 1.0, 7)
        points = geometry.hermite_eval(bump, u)
        assert points.shape == (7, 3)
        assert_allclose(points[3], geometry.hermite_eval(bump, 0.5))

    @mark.parametrize("u", [-0.1, 1.0 + 1e-9, np.nan])
    def test_domain(self, bump, u):
        with raises(ValueError, match="parameter"):
            geometry.hermite_eval(bump, u)

    def test_tangent_end_points(self, bump):
        assert_array_equal(geometry.hermite_tangent(bump, 0.0), bump.m0)
        assert_array_equal(geometry.hermite_tangent(bump, 1.0), bump.m1)

    @mark.parametrize("u", [0.1, 0.5, 0.9])
    def test_tangent_straight(self, u):
        line = geometry.HermiteSegment((0, 0, 0), (1, 0, 0), (1, 0, 0), (1, 0, 0))
        assert_allclose(geometry.hermite_tangent(line, u), [1.0, 0.0, 0.0], atol=1e-12)

    @mark.parametrize("u", [0.2, 0.5, 0.7])
    def test_tangent_finite_difference(self, bump, u):
        eps = 1e-6
        numeric = (
            geometry.hermite_eval(bump, u + eps) - geometry.hermite_eval(bump, u - eps)
        ) / (2.0 * eps)
        assert_allclose(geometry.hermite_tangent(bump, u), numeric, atol=1e-6)

    def test_invalid_vector(self):
        with raises(ValueError, match="3-vector"):
            geometry.HermiteSegment((0, 0), (1, 0, 0), (1, 0, 0), (1, 0, 0))
        with raises(ValueError, match="finite"):
            geometry.HermiteSegment((0, 0, np.inf), (1, 0, 0), (1, 0, 0), (1, 0, 0))


def test_hermite_chain():
    points = [(0, 0, 0), (1, 0, 1), (2, 0, 0)]
    tangents = [(1, 0, 1), (1, 0, 0), (1, 0, -1)]
    chain = geometry.hermite_chain(points, tangents)
    assert len(chain) == 2
    # C1 at the shared control point
    assert_array_equal(chain[0].x1, chain[1].x0)
    assert_array_equal(chain[0].m1, chain[1].m0)

    with raises(ValueError):
        geometry.hermite_chain(points[:1], tangents[:1])
    with raises(ValueError):
        geometry.hermite_chain(points, tangents[:2])


class TestSampleDense:
    def test_straight_length(self, straight_samples):
        assert len(straight_samples) == 1000
        assert straight_samples.cum_lengths[0] == 0.0
        assert straight_samples.total_length == approx(1.0, abs=1e-6)

    def test_two_samples(self):
        seg = geometry.HermiteSegment((0, 0, 0), (2, 0, 0), (2, 0, 0), (2, 0, 0))
        samples = geometry.sample_dense([seg], n=2)
        assert_allclose(samples.cum_lengths, [0.0, 2.0])

    def test_quarter_circle(self):
        k = 4.0 * (np.sqrt(2.0) - 1.0) / 3.0 * 3.0  # Bezier handle in Hermite scaling
        seg = geometry.HermiteSegment((1, 0, 0), (0, 1, 0), (0, k, 0), (-k, 0, 0))
        samples = geometry.sample_dense([seg])

        def speed(u):
            return np.linalg.norm(geometry.hermite_tangent(seg, u))

        reference, _ = quad(speed, 0.0, 1.0)
        assert samples.total_length == approx(reference, rel=1e-5)
        assert samples.total_length == approx(0.5 * np.pi, rel=0.01)

    def test_monotonic(self, bump):
        samples = geometry.sample_dense([bump, bump])
        assert np.all(np.diff(samples.cum_lengths) >= 0.0)

    def test_errors(self, bump):
        with raises(ValueError, match="empty"):
            geometry.sample_dense([])
        with raises(ValueError):
            geometry.sample_dense([bump], n=1)

    @mark.parametrize(
        "cum_lengths",
        [[0.5, 1.0, 2.0], [0.0, 1.0, 0.5], [2.0, 1.0, 0.0]],
    )
    def test_invalid_cumulative(self, cum_lengths):
        with raises(ValueError, match="cumulative"):
            geometry.DenseSampling(np.zeros((3, 3)), cum_lengths)

    def test_shape_errors(self):
        with raises(ValueError, match="shape"):
            geometry.DenseSampling(np.zeros((3, 2)), [0.0, 1.0, 2.0])
        with raises(ValueError, match="differ"):
            geometry.DenseSampling(np.zeros((3, 3)), [0.0, 1.0])


class TestQuaternion:
    def test_angle_identical(self):
        q = geometry.quat_from_pitch(0.3)
        assert geometry.quat_angle(q, q) == approx(0.0, abs=1e-7)

    def test_angle_quarter_turn(self):
        q = geometry.UnitQuaternion(np.cos(np.pi / 4), 0.0, np.sin(np.pi / 4), 0.0)
        assert geometry.quat_angle(geometry.UnitQuaternion.identity(), q) == approx(0.5 * np.pi)

    def test_angle_double_cover(self):
        q = np.array(geometry.quat_from_pitch(1.1))
        assert geometry.quat_angle(q, -q) == approx(0.0, abs=1e-7)

    def test_angle_non_unit(self):
        with raises(ValueError, match="normalised"):
            geometry.quat_angle((1.0, 0.0, 1e-3, 0.0), (1.0, 0.0, 0.0, 0.0))

    def test_from_pitch(self):
        assert geometry.quat_from_pitch(0.0) == geometry.UnitQuaternion.identity()
        assert_allclose(geometry.quat_from_pitch(np.pi), [0.0, 0.0, 1.0, 0.0], atol=1e-15)

    def test_from_pitch_angle(self):
        theta = np.radians(17.0)
        q = geometry.quat_from_pitch(theta)
        assert geometry.quat_angle(geometry.UnitQuaternion.identity(), q) == approx(theta, abs=1e-9)

    @mark.parametrize("theta", [-3.0, -0.5, 0.0, 0.5, 3.0])
    def test_to_pitch(self, theta):
        assert geometry.quat_to_pitch(geometry.quat_from_pitch(theta)) == approx(theta)

    def test_wrap_angle(self):
        assert geometry.wrap_angle(2.0 * np.pi) == approx(0.0, abs=1e-12)
        assert geometry.wrap_angle(np.pi) == approx(-np.pi)
        assert geometry.wrap_angle(-0.5) == approx(-0.5)

    def test_multiply_conjugate(self):
        qa = geometry.quat_from_pitch(0.4)
        qb = geometry.quat_from_pitch(0.7)
        assert geometry.quat_to_pitch(geometry.quat_multiply(qa, qb)) == approx(1.1)
        product = geometry.quat_multiply(qa, geometry.quat_conjugate(qa))
        assert_allclose(product, geometry.UnitQuaternion.identity(), atol=1e-15)

    def test_normalized(self):
        assert geometry.UnitQuaternion.normalized([2.0, 0.0, 0.0, 0.0]) == (1.0, 0.0, 0.0, 0.0)
        with raises(ValueError):
            geometry.UnitQuaternion.normalized([0.0, 0.0, 0.0, 0.0])
