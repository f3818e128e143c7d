from __future__ import annotations

from dataclasses import replace

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import approx, fixture, mark, raises

from rail.lineride import dynamics
from rail.lineride.dynamics import (
    JointTargets,
    PlanarBikeParams,
    PlanarBikeState,
    RandomizationConfig,
)


@fixture(name="flying")
def fixture_flying(params) -> PlanarBikeState:
    # high above ground, tumbling and extending
    return PlanarBikeState(
        x_com=0.0, z_com=3.0, xdot_com=1.0, zdot_com=2.0, phi=0.2, phidot=-3.0,
        h=params.h_mid, hdot=0.5, wheel_speed=10.0,
    )  # fmt: skip


def simulate(state, targets, params, steps, dt=dynamics.DEFAULT_DT):
    states = [state]
    for _ in range(steps):
        states.append(dynamics.step(states[-1], targets, params, dt))
    return states


class TestPlanarBikeParams:
    def test_derived(self, params):
        assert params.total_mass == approx(26.0)
        assert params.reduced_mass == approx(8.0 * 18.0 / 26.0)
        assert params.kd_h == approx(2.0 * np.sqrt(params.kp_h * params.reduced_mass))
        assert params.normalized_extension(params.h_min) == 0.0
        assert params.normalized_extension(params.h_max) == 1.0

    @mark.parametrize(
        "kwargs", [dict(m_boing=0.0), dict(h_min=0.5), dict(kp_h=-1.0), dict(wheel_radius=-0.1)]
    )
    def test_invalid(self, kwargs):
        with raises(ValueError):
            PlanarBikeParams(**kwargs)


class TestPdTorque:
    def test_zero_error(self):
        assert dynamics.pd_torque(0.3, 0.3, 1.0, 1.0, kp=10.0, kd=1.0) == 0.0

    def test_substitution(self):
        assert dynamics.pd_torque(0.5, 0.0, 0.0, 1.0, kp=10.0, kd=1.0) == approx(4.0)

    def test_saturation(self):
        assert dynamics.pd_torque(100.0, 0.0, 0.0, 0.0, kp=10.0, kd=1.0, limit=20.0) == 20.0
        assert dynamics.pd_torque(-100.0, 0.0, 0.0, 0.0, kp=10.0, kd=1.0, limit=20.0) == -20.0


class TestStep:
    def test_rest(self, params):
        rest = dynamics.rest_state(params)
        assert rest.F_contact == approx(params.total_mass * params.gravity)
        states = simulate(rest, JointTargets(params.h_min), params, steps=200)
        final = states[-1]
        assert_allclose(final.coordinates(), rest.coordinates(), atol=1e-6)
        assert_allclose(final.velocities(), 0.0, atol=1e-6)
        assert final.rear_contact and final.front_contact
        assert final.F_contact == approx(params.total_mass * params.gravity, rel=1e-6)

    @mark.parametrize("h_target", [0.1, 0.25, 0.4])
    def test_flight_ballistic(self, params, flying, h_target):
        dt = 0.005
        states = simulate(flying, JointTargets(h_target, 30.0), params, steps=10, dt=dt)
        final = states[-1]
        assert final.zdot_com == approx(flying.zdot_com - params.gravity * 10 * dt, abs=1e-6)
        assert final.xdot_com == approx(flying.xdot_com, abs=1e-12)
        assert not final.in_contact
        assert final.F_contact == 0.0
        momentum = [dynamics.angular_momentum(s, params) for s in states]
        assert_allclose(momentum, momentum[0], atol=1e-6)

    def test_flight_energy(self, params, flying):
        # without actuation the prismatic joint only follows the centrifugal term
        passive = replace(params, kp_h=0.0, kd_h=0.0, kd_wheel=0.0)
        state = replace(flying, hdot=0.0, wheel_speed=0.0)
        states = simulate(state, JointTargets(passive.h_mid), passive, steps=40, dt=0.001)
        energy = [dynamics.total_energy(s, passive) for s in states]
        assert_allclose(energy, energy[0], rtol=1e-3)

    def test_energy_audit(self, params):
        # extend, contract into a hop, land and keep driving
        schedule = [(params.h_max, 10.0)] * 40 + [(params.h_min, 10.0)] * 40 + [(params.h_mid, 0.0)] * 80
        state = dynamics.rest_state(params, params.h_min)
        actuator_work = 0.0
        for h_target, speed_target in schedule:
            report = dynamics.step_with_report(state, JointTargets(h_target, speed_target), params)
            before = dynamics.total_energy(state, params)
            change = dynamics.total_energy(report.state, params) - before
            ledger = report.energy
            assert change == approx(ledger.total, abs=1e-5 * max(1.0, abs(before)))
            assert change == approx(
                ledger.actuator + ledger.inertial - ledger.dissipation,
                abs=1e-5 * max(1.0, abs(before)),
            )
            assert ledger.integrator <= 0.0
            actuator_work += ledger.actuator
            state = report.state
        assert actuator_work > 0.0

    def test_friction_cone(self, params):
        # a spinning wheel on slippery ground saturates the friction impulse
        slippery = replace(params, friction_mu=0.3)
        state = dynamics.rest_state(slippery)
        targets = JointTargets(state.h, slippery.wheel_speed_limit)
        ratios = []
        for _ in range(100):
            report = dynamics.step_with_report(state, targets, slippery)
            rear, _ = report.normal_impulses
            assert np.all(report.normal_impulses >= 0.0)
            assert abs(report.friction_impulse) <= slippery.friction_mu * rear + 1e-12
            if rear > 0.0:
                ratios.append(abs(report.friction_impulse) / (slippery.friction_mu * rear))
            state = report.state
        assert max(ratios) == approx(1.0)
        assert state.xdot_com > 0.0

    def test_contraction_lifts_off(self, params):
        # pulling the boing down lifts the chassis and wheels off the ground
        state = dynamics.rest_state(params, params.h_max)
        weight = params.total_mass * params.gravity
        states = simulate(state, JointTargets(params.h_min), params, steps=100)
        forces = np.array([s.F_contact for s in states])
        assert np.all(forces >= 0.0)
        assert forces[1] < weight
        assert not states[1].in_contact
        assert states[1].hdot < 0.0

    def test_deterministic(self, params, flying):
        targets = JointTargets(0.3, 5.0)
        assert dynamics.step(flying, targets, params) == dynamics.step(flying, targets, params)

    def test_errors(self, params, flying):
        with raises(ValueError, match="time step"):
            dynamics.step(flying, JointTargets(0.2), params, dt=0.05)
        broken = replace(flying, phidot=np.nan)
        with raises(dynamics.SimulationFault):
            dynamics.step(broken, JointTargets(0.2), params)

    def test_wheel_speed_limit(self, params, flying):
        fast = replace(flying, wheel_speed=2.0 * params.wheel_speed_limit)
        state = dynamics.step(fast, JointTargets(0.2, 1e3), params)
        assert abs(state.wheel_speed) <= params.wheel_speed_limit


def test_has_fallen(params):
    assert not dynamics.has_fallen(dynamics.rest_state(params), params)
    sunk = replace(dynamics.rest_state(params), z_com=0.05)
    assert dynamics.has_fallen(sunk, params)


class TestRandomization:
    def test_disabled(self, params, seed):
        config = RandomizationConfig.disabled()
        assert dynamics.apply_randomization(params, config, seed) == params
        assert config.sample_delay(np.random.default_rng(seed)) == 0

    def test_seeded(self, params, seed):
        config = RandomizationConfig()
        first = dynamics.apply_randomization(params, config, seed)
        second = dynamics.apply_randomization(params, config, seed)
        assert first == second
        assert first != params

    def test_ranges(self, params, seed):
        config = RandomizationConfig()
        rng = np.random.default_rng(seed)
        for _ in range(50):
            sample = dynamics.apply_randomization(params, config, rng)
            assert 0.9 <= sample.m_boing / params.m_boing <= 1.1
            assert 0.7 <= sample.friction_mu <= 1.5
            assert 0.85 <= sample.force_limit_h / params.force_limit_h <= 1.05
            assert 0.85 <= sample.kp_h / params.kp_h <= 1.15

    def test_invalid(self):
        with raises(ValueError, match="ordered"):
            RandomizationConfig(mass_scale=(1.2, 0.8))
        with raises(ValueError, match="negative"):
            RandomizationConfig(gravity_noise=-0.1)

    def test_perturb_identity(self, seed):
        obs = np.arange(15.0)
        channels = dynamics.ObservationChannels(slice(0, 1), slice(1, 3), slice(3, 4), slice(4, 6))
        noisy = dynamics.perturb_observation(
            obs, RandomizationConfig.disabled(), np.random.default_rng(seed), channels
        )
        assert_array_equal(noisy, obs)

    def test_perturb_channels(self, seed):
        obs = np.zeros((100_000, 15))
        channels = dynamics.ObservationChannels(slice(0, 1), slice(1, 3), slice(3, 4), slice(4, 6))
        config = RandomizationConfig()
        noisy = dynamics.perturb_observation(obs, config, np.random.default_rng(seed), channels)
        assert_array_equal(obs, 0.0)  # input untouched
        assert_array_equal(noisy[:, 6:], 0.0)
        assert config.joint_vel_noise_std == 0.1
        assert np.std(noisy[:, 1:3]) == approx(0.1, abs=0.005)
        assert np.max(np.abs(noisy[:, 3])) <= config.ang_vel_noise
        assert np.max(np.abs(noisy[:, 4:6])) <= config.gravity_noise

    def test_disturb_velocity(self, params, seed):
        rest = dynamics.rest_state(params)
        rng = np.random.default_rng(seed)
        assert dynamics.disturb_velocity(rest, RandomizationConfig.disabled(), rng) == rest
        kicked = dynamics.disturb_velocity(rest, RandomizationConfig(), rng)
        assert 0.0 < abs(kicked.xdot_com) <= 0.1
        assert kicked.x_com == rest.x_com


def test_actuator_delay():
    delay = dynamics.ActuatorDelay(2, JointTargets(0.1))
    outputs = [delay.push(JointTargets(h)) for h in (0.2, 0.3, 0.4)]
    assert [t.h_target for t in outputs] == [0.1, 0.1, 0.2]

    direct = dynamics.ActuatorDelay(0, JointTargets(0.1))
    assert direct.push(JointTargets(0.3)).h_target == 0.3

    with raises(ValueError):
        dynamics.ActuatorDelay(-1, JointTargets(0.1))


def test_write_trace_csv(tmp_path, params):
    rest = dynamics.rest_state(params)
    records = [dynamics.trace_record(0.01 * i, rest, "driving") for i in range(3)]
    records[1]["reward"] = 1.5
    path = str(tmp_path / "trace.csv")
    table = dynamics.write_trace_csv(records, path, extra_columns=("reward",))
    assert list(table.columns) == [*dynamics.TRACE_COLUMNS, "reward"]
    with open(path) as f:
        header = f.readline().strip()
    assert header == ",".join([*dynamics.TRACE_COLUMNS, "reward"])
    assert table["rear_contact"].tolist() == [1, 1, 1]
