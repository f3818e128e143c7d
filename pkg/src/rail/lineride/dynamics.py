"""
This file implements the planar two-mass bicycle that serves as the training
plant: a chassis with two wheels and a heavy boing mass connected by a
prismatic joint of extension `h`, actuated by PD controllers on the joint and
the driven rear wheel.

The generalised coordinates are `(x_com, z_com, phi, h, wheel_angle)`, where
the first two describe the centre of mass of the whole robot and the wheel
angle is measured relative to the chassis. Integration uses a semi-implicit
Euler step in momentum form. Ground contact, Coulomb friction at the driven
wheel and the joint limits are resolved as velocity-level impulses with a
projected Gauss-Seidel solver, so that the normal impulse is never negative
and the friction impulse stays inside its cone.

The body frame has its `x` axis pointing forward and `z` axis upward, a
positive pitch `phi` lowers the nose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from pandas import DataFrame

if TYPE_CHECKING:
    from collections.abc import Iterable

    from numpy.typing import NDArray

__all__ = [
    "ActuatorDelay",
    "EnergyLedger",
    "JointTargets",
    "ObservationChannels",
    "PlanarBikeParams",
    "PlanarBikeState",
    "RandomizationConfig",
    "SimulationFault",
    "StepReport",
    "TRACE_COLUMNS",
    "angular_momentum",
    "apply_randomization",
    "disturb_velocity",
    "has_fallen",
    "pd_torque",
    "perturb_observation",
    "rest_state",
    "step",
    "step_with_report",
    "total_energy",
    "trace_record",
    "trace_table",
    "wheel_centers",
    "write_trace_csv",
]

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.005
"""Physics time step in seconds."""
MAX_DT = 0.02
"""Largest physics time step accepted by `step`."""
CONTACT_TOLERANCE = 1e-4
"""Wheel height above ground (m) that still counts as contact."""
PENETRATION_RECOVERY = 0.2
"""Fraction of a ground penetration corrected per step."""
SOLVER_ITERATIONS = 100
SOLVER_TOLERANCE = 1e-12
VELOCITY_FAULT_LIMIT = 1e3
"""Speed (m/s or rad/s) beyond which the simulation counts as unstable."""

TRACE_COLUMNS = (
    "t",
    "x_com",
    "z_com",
    "phi",
    "h",
    "wheel_speed",
    "F_contact",
    "rear_contact",
    "front_contact",
    "mode",
)
"""Fixed column order of exported simulation traces."""


class SimulationFault(RuntimeError):
    """Raised when the integration produces non-finite or exploding states."""


@dataclass(frozen=True)
class PlanarBikeParams:
    """
    Physical and actuation parameters of the planar two-mass model.

    Parameters
    ----------
    m_chassis, m_boing : float
        Masses (kg) of the chassis (including wheels) and the boing.
    inertia_chassis, inertia_boing : float
        Pitch inertias (kg m^2) of both bodies about their own centre of mass.
    inertia_wheel : float
        Spin inertia (kg m^2) of the driven rear wheel.
    wheel_radius : float
        Radius of both wheels (m).
    wheelbase : float
        Distance between the wheel axles (m), centred on the chassis.
    axle_offset : float
        Distance (m) of the axles below the chassis centre of mass.
    h_min, h_max : float
        Limits of the prismatic extension, distance between the centres of
        mass of chassis and boing (m).
    kp_h, kd_h : float
        PD gains of the prismatic joint. If `kd_h` is omitted, it is chosen
        for critical damping of the free-flight prismatic mode.
    force_limit_h : float
        Force limit (N) of the prismatic actuator.
    kp_wheel, kd_wheel : float
        PD gains of the rear wheel, which is velocity controlled.
    torque_limit_wheel : float
        Torque limit (N m) of the rear wheel motor.
    wheel_speed_limit : float
        Maximum wheel speed (rad/s) relative to the chassis.
    friction_mu : float
        Coulomb friction coefficient at the driven wheel.
    gravity : float
        Gravitational acceleration (m/s^2).
    chassis_clearance : float
        Height (m) of the chassis centre of mass below which the chassis
        touches the ground.
    boing_radius : float
        Height (m) of the boing centre of mass below which it touches the
        ground.
    """

    m_chassis: float = 8.0
    m_boing: float = 18.0
    inertia_chassis: float = 0.25
    inertia_boing: float = 0.30
    inertia_wheel: float = 0.01
    wheel_radius: float = 0.12
    wheelbase: float = 0.7
    axle_offset: float = 0.08
    h_min: float = 0.10
    h_max: float = 0.40
    kp_h: float = 3000.0
    kd_h: float | None = None
    force_limit_h: float = 900.0
    kp_wheel: float = 0.0
    kd_wheel: float = 2.0
    torque_limit_wheel: float = 20.0
    wheel_speed_limit: float = 60.0
    friction_mu: float = 1.0
    gravity: float = 9.81
    chassis_clearance: float = 0.05
    boing_radius: float = 0.10

    def __post_init__(self) -> None:
        positive = (
            "m_chassis",
            "m_boing",
            "inertia_chassis",
            "inertia_boing",
            "inertia_wheel",
            "wheel_radius",
            "wheelbase",
            "force_limit_h",
            "torque_limit_wheel",
            "wheel_speed_limit",
        )
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"'{name}' must be positive")
        if not 0.0 < self.h_min < self.h_max:
            raise ValueError("prismatic limits must satisfy 0 < h_min < h_max")
        if self.kd_h is None:
            object.__setattr__(
                self, "kd_h", 2.0 * float(np.sqrt(self.kp_h * self.reduced_mass))
            )
        for name in ("kp_h", "kd_h", "kp_wheel", "kd_wheel", "friction_mu", "gravity"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"'{name}' must not be negative")

    @property
    def total_mass(self) -> float:
        return self.m_chassis + self.m_boing

    @property
    def reduced_mass(self) -> float:
        """Effective mass of the relative chassis-boing motion."""
        return self.m_chassis * self.m_boing / self.total_mass

    @property
    def mass_ratio(self) -> float:
        """Fraction of the total mass carried by the boing."""
        return self.m_boing / self.total_mass

    @property
    def pitch_inertia(self) -> float:
        return self.inertia_chassis + self.inertia_boing

    @property
    def h_mid(self) -> float:
        return 0.5 * (self.h_min + self.h_max)

    def normalized_extension(self, h: float) -> float:
        """Map `h` affinely from `[h_min, h_max]` to `[0, 1]`."""
        return (h - self.h_min) / (self.h_max - self.h_min)

    def rest_height(self, h: float) -> float:
        """Height of the centre of mass when both wheels touch level ground."""
        return self.wheel_radius + self.axle_offset + self.mass_ratio * h

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class PlanarBikeState:
    """
    Configuration and velocity of the planar model plus contact readouts.

    The contact flags and the contact force (sum of both normal forces in N)
    are outputs of the last integration step.
    """

    x_com: float = 0.0
    z_com: float = 0.0
    xdot_com: float = 0.0
    zdot_com: float = 0.0
    phi: float = 0.0
    phidot: float = 0.0
    h: float = 0.0
    hdot: float = 0.0
    wheel_angle: float = 0.0
    wheel_speed: float = 0.0
    rear_contact: bool = False
    front_contact: bool = False
    F_contact: float = 0.0

    def coordinates(self) -> NDArray:
        """Generalised coordinates `(x_com, z_com, phi, h, wheel_angle)`."""
        return np.array([self.x_com, self.z_com, self.phi, self.h, self.wheel_angle])

    def velocities(self) -> NDArray:
        """Generalised velocities matching `coordinates`."""
        return np.array(
            [self.xdot_com, self.zdot_com, self.phidot, self.hdot, self.wheel_speed]
        )

    @classmethod
    def from_arrays(
        cls,
        q: NDArray,
        v: NDArray,
        *,
        rear_contact: bool = False,
        front_contact: bool = False,
        F_contact: float = 0.0,
    ) -> PlanarBikeState:
        x, z, phi, h, angle = (float(val) for val in q)
        xd, zd, phid, hd, speed = (float(val) for val in v)
        return cls(
            x, z, xd, zd, phi, phid, h, hd, angle, speed,
            bool(rear_contact), bool(front_contact), float(F_contact),
        )  # fmt: skip

    @property
    def in_contact(self) -> bool:
        return self.rear_contact or self.front_contact

    @property
    def position(self) -> NDArray:
        """Base position as 3-vector `(x, 0, z)`."""
        return np.array([self.x_com, 0.0, self.z_com])


class JointTargets(NamedTuple):
    """Setpoints of the PD controllers."""

    h_target: float
    wheel_speed_target: float = 0.0


def rest_state(params: PlanarBikeParams, h: float | None = None, x: float = 0.0) -> PlanarBikeState:
    """State standing still on level ground with both wheels in contact."""
    h = params.h_min if h is None else float(np.clip(h, params.h_min, params.h_max))
    return PlanarBikeState(
        x_com=x,
        z_com=params.rest_height(h),
        h=h,
        rear_contact=True,
        front_contact=True,
        F_contact=params.total_mass * params.gravity,
    )


def pd_torque(
    q_des: float,
    q: float,
    qdot_des: float,
    qdot: float,
    kp: float,
    kd: float,
    limit: float = np.inf,
) -> float:
    """
    Evaluate `kp (q_des - q) + kd (qdot_des - qdot)` and clamp to `±limit`.
    """
    torque = kp * (q_des - q) + kd * (qdot_des - qdot)
    return float(np.clip(torque, -limit, limit))


def mass_matrix(h: float, params: PlanarBikeParams) -> NDArray:
    """Generalised mass matrix, only the pitch entry depends on `h`."""
    mu = params.reduced_mass
    i_w = params.inertia_wheel
    mass = np.diag(
        [
            params.total_mass,
            params.total_mass,
            params.pitch_inertia + mu * h * h + i_w,
            mu,
            i_w,
        ]
    )
    mass[2, 4] = mass[4, 2] = i_w
    return mass


def _wheel_offsets(params: PlanarBikeParams, h: float) -> tuple[NDArray, float]:
    along = np.array([-0.5, 0.5]) * params.wheelbase  # rear, front
    normal = -params.axle_offset - params.mass_ratio * h
    return along, normal


def wheel_centers(state: PlanarBikeState, params: PlanarBikeParams) -> NDArray:
    """Rear and front wheel axle positions `(x, z)`, shape `(2, 2)`."""
    along, normal = _wheel_offsets(params, state.h)
    sin, cos = np.sin(state.phi), np.cos(state.phi)
    x = state.x_com + along * cos + normal * sin
    z = state.z_com - along * sin + normal * cos
    return np.stack([x, z], axis=1)


def body_points(state: PlanarBikeState, params: PlanarBikeParams) -> dict[str, NDArray]:
    """Centres of mass of chassis and boing plus both wheel axles."""
    beta = params.mass_ratio
    up = np.array([np.sin(state.phi), np.cos(state.phi)])
    com = np.array([state.x_com, state.z_com])
    rear, front = wheel_centers(state, params)
    return dict(
        chassis=com - beta * state.h * up,
        boing=com + (1.0 - beta) * state.h * up,
        rear_wheel=rear,
        front_wheel=front,
    )


def has_fallen(state: PlanarBikeState, params: PlanarBikeParams) -> bool:
    """Whether the chassis or the boing touches the ground."""
    points = body_points(state, params)
    return bool(
        points["chassis"][1] < params.chassis_clearance
        or points["boing"][1] < params.boing_radius
    )


def _contact_rows(q: NDArray, params: PlanarBikeParams) -> tuple[NDArray, NDArray, NDArray]:
    """Normal Jacobians, gaps and the tangential Jacobian of the rear wheel."""
    _, z, phi, h, _ = q
    along, normal = _wheel_offsets(params, h)
    beta = params.mass_ratio
    r_w = params.wheel_radius
    sin, cos = np.sin(phi), np.cos(phi)

    gaps = z - along * sin + normal * cos - r_w
    jac_n = np.zeros((2, 5))
    jac_n[:, 1] = 1.0
    jac_n[:, 2] = -along * cos - normal * sin
    jac_n[:, 3] = -beta * cos

    jac_t = np.array(
        [1.0, 0.0, -along[0] * sin + normal * cos - r_w, -beta * sin, -r_w]
    )
    return jac_n, gaps, jac_t


def _solve_impulses(
    inv_mass: NDArray,
    p_free: NDArray,
    rows: NDArray,
    targets: NDArray,
    friction_mu: float,
) -> NDArray:
    """
    Projected Gauss-Seidel on the row velocities `J v >= target`.

    Row order: rear normal, front normal, rear friction, lower limit, upper
    limit. The friction row is an equality bounded by `±mu` times the rear
    normal impulse, all others are unilateral.
    """
    coupling = rows @ inv_mass @ rows.T
    free_velocity = rows @ (inv_mass @ p_free)
    diag = np.diag(coupling)
    impulses = np.zeros(len(rows))
    for _ in range(SOLVER_ITERATIONS):
        change = 0.0
        for i in range(len(rows)):
            velocity = free_velocity[i] + coupling[i] @ impulses
            value = impulses[i] + (targets[i] - velocity) / diag[i]
            if i == 2:
                bound = friction_mu * impulses[0]
                value = min(max(value, -bound), bound)
            else:
                value = max(value, 0.0)
            change = max(change, abs(value - impulses[i]))
            impulses[i] = value
        if change < SOLVER_TOLERANCE:
            break
    return impulses


def _clamp_wheel_speed(v: NDArray, p: NDArray, h: float, params: PlanarBikeParams) -> NDArray:
    limit = params.wheel_speed_limit
    if abs(v[4]) <= limit:
        return v
    v = v.copy()
    v[4] = np.clip(v[4], -limit, limit)
    # keep the pitch momentum, i.e. the angular momentum about the COM
    pitch_mass = params.pitch_inertia + params.reduced_mass * h * h + params.inertia_wheel
    v[2] = (p[2] - params.inertia_wheel * v[4]) / pitch_mass
    return v


class EnergyLedger(NamedTuple):
    """
    Energy flows (J) of a single physics step.

    The change of `total_energy` across the step equals `total` up to
    rounding. `inertial` collects the centrifugal work on the prismatic
    joint together with the kinetic energy change of the mass matrix update
    and the wheel speed clamp, `integrator` is the numerical dissipation of
    the implicit velocity update.
    """

    actuator: float
    contact: float
    joint_limits: float
    inertial: float
    integrator: float

    @property
    def total(self) -> float:
        return float(sum(self))

    @property
    def dissipation(self) -> float:
        """Energy removed by contact, friction, joint limits and the integrator."""
        return -(self.contact + self.joint_limits + self.integrator)


class StepReport(NamedTuple):
    """Successor state of a physics step with its impulses and energy flows."""

    state: PlanarBikeState
    energy: EnergyLedger
    normal_impulses: NDArray
    friction_impulse: float
    limit_impulses: NDArray


def step_with_report(
    state: PlanarBikeState,
    joint_targets: JointTargets,
    params: PlanarBikeParams,
    dt: float = DEFAULT_DT,
) -> StepReport:
    """
    Advance the planar model by one physics step and account for the energy.

    Takes the same arguments and raises the same exceptions as `step`.

    Returns
    -------
    StepReport
        The successor state, the energy ledger of the step and the impulses
        (N s) of the rear and front contact, the rear wheel friction and the
        lower and upper joint limits.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"time step must be in (0, {MAX_DT}]")
    q = state.coordinates()
    v = state.velocities()
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
        raise SimulationFault("non-finite state passed to the integrator")

    h_target = float(np.clip(joint_targets.h_target, params.h_min, params.h_max))
    speed_target = float(
        np.clip(joint_targets.wheel_speed_target, -params.wheel_speed_limit, params.wheel_speed_limit)
    )
    force = pd_torque(h_target, q[3], 0.0, v[3], params.kp_h, params.kd_h, params.force_limit_h)
    torque = pd_torque(
        0.0, 0.0, speed_target, v[4], params.kp_wheel, params.kd_wheel, params.torque_limit_wheel
    )

    mass = mass_matrix(q[3], params)
    inv_mass = np.linalg.inv(mass)
    momentum = mass @ v
    centrifugal = params.reduced_mass * q[3] * v[2] ** 2
    generalized_force = np.array(
        [0.0, -params.total_mass * params.gravity, 0.0, force + centrifugal, torque]
    )
    p_free = momentum + dt * generalized_force

    jac_n, gaps, jac_t = _contact_rows(q, params)
    limit_rows = np.array([[0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, -1.0, 0.0]])
    rows = np.vstack([jac_n, jac_t, limit_rows])
    contact_targets = np.where(gaps >= 0.0, -gaps / dt, -PENETRATION_RECOVERY * gaps / dt)
    targets = np.array(
        [
            contact_targets[0],
            contact_targets[1],
            0.0,
            -(q[3] - params.h_min) / dt,
            -(params.h_max - q[3]) / dt,
        ]
    )
    impulses = _solve_impulses(inv_mass, p_free, rows, targets, params.friction_mu)

    p_new = p_free + rows.T @ impulses
    v_mid = inv_mass @ p_new  # velocity that moves the coordinates
    q_new = q + dt * v_mid
    q_new[3] = np.clip(q_new[3], params.h_min, params.h_max)
    mass_new = mass_matrix(q_new[3], params)
    v_new = np.linalg.solve(mass_new, p_new)
    v_new = _clamp_wheel_speed(v_new, p_new, q_new[3], params)

    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(v_new))):
        raise SimulationFault("integration produced a non-finite state")
    if np.max(np.abs(v_new)) > VELOCITY_FAULT_LIMIT:
        raise SimulationFault(f"unstable integration, velocities: {v_new}")

    # gravity work along v_mid equals the potential energy change exactly
    row_velocity = rows @ v_mid
    dv = v_mid - v
    energy = EnergyLedger(
        actuator=float(dt * (force * v_mid[3] + torque * v_mid[4])),
        contact=float(impulses[:3] @ row_velocity[:3]),
        joint_limits=float(impulses[3:] @ row_velocity[3:]),
        inertial=float(
            dt * centrifugal * v_mid[3]
            + 0.5 * v_new @ mass_new @ v_new
            - 0.5 * v_mid @ mass @ v_mid
        ),
        integrator=float(-0.5 * dv @ mass @ dv),
    )

    _, gaps_new, _ = _contact_rows(q_new, params)
    contact = gaps_new <= CONTACT_TOLERANCE
    successor = PlanarBikeState.from_arrays(
        q_new,
        v_new,
        rear_contact=contact[0],
        front_contact=contact[1],
        F_contact=(impulses[0] + impulses[1]) / dt,
    )
    return StepReport(
        state=successor,
        energy=energy,
        normal_impulses=impulses[:2].copy(),
        friction_impulse=float(impulses[2]),
        limit_impulses=impulses[3:].copy(),
    )


def step(
    state: PlanarBikeState,
    joint_targets: JointTargets,
    params: PlanarBikeParams,
    dt: float = DEFAULT_DT,
) -> PlanarBikeState:
    """
    Advance the planar model by one physics step.

    Parameters
    ----------
    state : PlanarBikeState
        Current state.
    joint_targets : JointTargets
        Setpoints for the prismatic extension and the wheel speed, clamped to
        the joint and speed limits before actuation.
    params : PlanarBikeParams
        Model parameters.
    dt : float, optional
        Time step in `(0, 0.02]` seconds.

    Returns
    -------
    PlanarBikeState
        The successor state including contact flags and contact force.

    Raises
    ------
    ValueError
        If the time step is out of range.
    SimulationFault
        If the state becomes non-finite or unstable.
    """
    return step_with_report(state, joint_targets, params, dt).state


def total_energy(state: PlanarBikeState, params: PlanarBikeParams) -> float:
    """Kinetic plus gravitational potential energy (J)."""
    v = state.velocities()
    kinetic = 0.5 * v @ mass_matrix(state.h, params) @ v
    return float(kinetic + params.total_mass * params.gravity * state.z_com)


def angular_momentum(state: PlanarBikeState, params: PlanarBikeParams) -> float:
    """Angular momentum (kg m^2/s) about the centre of mass, including the wheel spin."""
    return float((mass_matrix(state.h, params) @ state.velocities())[2])


@dataclass(frozen=True)
class RandomizationConfig:
    """
    Ranges of the domain randomisation.

    Ranges are `(lo, hi)` tuples of uniform distributions, noise standard
    deviations and half-widths must not be negative. Setting `friction` to
    `None` keeps the nominal friction coefficient.
    """

    mass_scale: tuple[float, float] = (0.9, 1.1)
    friction: tuple[float, float] | None = (0.7, 1.5)
    motor_strength: tuple[float, float] = (0.85, 1.05)
    gain_scale: tuple[float, float] = (0.85, 1.15)
    actuation_delay: tuple[int, int] = (0, 1)
    joint_pos_noise_std: float = 0.001
    joint_vel_noise_std: float = 0.1
    ang_vel_noise: float = 0.1
    gravity_noise: float = 0.015
    velocity_disturbance: float = 0.1

    def __post_init__(self) -> None:
        ranges = ("mass_scale", "friction", "motor_strength", "gain_scale", "actuation_delay")
        for name in ranges:
            value = getattr(self, name)
            if value is None:
                continue
            lo, hi = value
            if lo > hi:
                raise ValueError(f"range '{name}' is not ordered: {lo} > {hi}")
            if lo < 0:
                raise ValueError(f"range '{name}' must not be negative")
            object.__setattr__(self, name, (lo, hi))
        scalars = (
            "joint_pos_noise_std",
            "joint_vel_noise_std",
            "ang_vel_noise",
            "gravity_noise",
            "velocity_disturbance",
        )
        for name in scalars:
            if getattr(self, name) < 0.0:
                raise ValueError(f"'{name}' must not be negative")

    @classmethod
    def disabled(cls) -> RandomizationConfig:
        """Configuration without any randomisation or noise."""
        return cls(
            mass_scale=(1.0, 1.0),
            friction=None,
            motor_strength=(1.0, 1.0),
            gain_scale=(1.0, 1.0),
            actuation_delay=(0, 0),
            joint_pos_noise_std=0.0,
            joint_vel_noise_std=0.0,
            ang_vel_noise=0.0,
            gravity_noise=0.0,
            velocity_disturbance=0.0,
        )

    def sample_delay(self, rng: np.random.Generator) -> int:
        """Draw the actuation delay in control steps."""
        lo, hi = self.actuation_delay
        return int(rng.integers(lo, hi + 1))


def apply_randomization(
    params: PlanarBikeParams, config: RandomizationConfig, rng_seed: int | np.random.Generator
) -> PlanarBikeParams:
    """
    Sample a randomised copy of the model parameters.

    Masses and inertias are scaled by the added-mass ratio, actuator limits
    by the motor strength, PD gains by the gain scale, and the friction
    coefficient is replaced by a sample of its range.

    Parameters
    ----------
    params : PlanarBikeParams
        Nominal parameters.
    config : RandomizationConfig
        Randomisation ranges.
    rng_seed : int or Generator
        Seed or random generator, identical seeds give identical results.

    Returns
    -------
    PlanarBikeParams
        The randomised parameters.
    """
    rng = np.random.default_rng(rng_seed)
    mass = rng.uniform(*config.mass_scale)
    strength = rng.uniform(*config.motor_strength)
    gains = rng.uniform(*config.gain_scale)
    friction = params.friction_mu
    if config.friction is not None:
        friction = rng.uniform(*config.friction)
    return replace(
        params,
        m_chassis=params.m_chassis * mass,
        m_boing=params.m_boing * mass,
        inertia_chassis=params.inertia_chassis * mass,
        inertia_boing=params.inertia_boing * mass,
        force_limit_h=params.force_limit_h * strength,
        torque_limit_wheel=params.torque_limit_wheel * strength,
        kp_h=params.kp_h * gains,
        kd_h=params.kd_h * gains,
        kp_wheel=params.kp_wheel * gains,
        kd_wheel=params.kd_wheel * gains,
        friction_mu=float(friction),
    )


class ObservationChannels(NamedTuple):
    """Slices of the observation vector receiving the different noise types."""

    joint_pos: slice
    joint_vel: slice
    ang_vel: slice
    gravity: slice
    base_vel: slice | None = None


def perturb_observation(
    obs: NDArray,
    config: RandomizationConfig,
    rng: np.random.Generator,
    channels: ObservationChannels,
) -> NDArray:
    """
    Add observation noise to a single or a batch of observations.

    Joint positions and velocities receive Gaussian noise, angular velocity,
    projected gravity and (if present) base velocity channels uniform noise.
    The input is not modified.
    """
    noisy = np.array(obs, dtype=np.float64)

    def add(sl: slice, noise) -> None:
        shape = noisy[..., sl].shape
        noisy[..., sl] += noise(shape)

    if config.joint_pos_noise_std > 0.0:
        add(channels.joint_pos, lambda s: rng.normal(0.0, config.joint_pos_noise_std, s))
    if config.joint_vel_noise_std > 0.0:
        add(channels.joint_vel, lambda s: rng.normal(0.0, config.joint_vel_noise_std, s))
    if config.ang_vel_noise > 0.0:
        add(channels.ang_vel, lambda s: rng.uniform(-config.ang_vel_noise, config.ang_vel_noise, s))
    if config.gravity_noise > 0.0:
        add(channels.gravity, lambda s: rng.uniform(-config.gravity_noise, config.gravity_noise, s))
    if channels.base_vel is not None and config.velocity_disturbance > 0.0:
        width = config.velocity_disturbance
        add(channels.base_vel, lambda s: rng.uniform(-width, width, s))
    return noisy


def disturb_velocity(
    state: PlanarBikeState, config: RandomizationConfig, rng: np.random.Generator
) -> PlanarBikeState:
    """Apply the randomised body velocity disturbance to the simulated state."""
    width = config.velocity_disturbance
    if width == 0.0:
        return state
    dx, dz = rng.uniform(-width, width, size=2)
    return replace(state, xdot_com=state.xdot_com + dx, zdot_com=state.zdot_com + dz)


@dataclass
class ActuatorDelay:
    """
    Delays joint targets by a fixed number of control steps.

    Before the buffer is filled, the initial targets are returned.
    """

    delay: int
    initial: JointTargets
    _buffer: list[JointTargets] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("delay must not be negative")
        self.reset(self.initial)

    def reset(self, initial: JointTargets) -> None:
        self.initial = initial
        self._buffer = [initial] * self.delay

    def push(self, targets: JointTargets) -> JointTargets:
        """Add the latest targets and return those to apply now."""
        self._buffer.append(targets)
        return self._buffer.pop(0)


def trace_record(t: float, state: PlanarBikeState, mode: str) -> dict[str, float | int | str]:
    """One row of the trace export in `TRACE_COLUMNS` order."""
    return dict(
        t=float(t),
        x_com=state.x_com,
        z_com=state.z_com,
        phi=state.phi,
        h=state.h,
        wheel_speed=state.wheel_speed,
        F_contact=state.F_contact,
        rear_contact=int(state.rear_contact),
        front_contact=int(state.front_contact),
        mode=mode,
    )


def trace_table(records: Iterable[dict], extra_columns: Iterable[str] = ()) -> DataFrame:
    """
    Arrange trace records in a table with the columns `TRACE_COLUMNS`
    followed by `extra_columns`, missing entries are left empty.
    """
    columns = list(TRACE_COLUMNS) + [c for c in extra_columns if c not in TRACE_COLUMNS]
    return DataFrame.from_records(list(records), columns=columns)


def write_trace_csv(
    records: Iterable[dict], path: str, extra_columns: Iterable[str] = ()
) -> DataFrame:
    """
    Write trace records as CSV with a header and fixed column order, see
    `trace_table`.

    Returns
    -------
    DataFrame
        The written table.
    """
    table = trace_table(records, extra_columns)
    table.to_csv(path, index=False)
    logger.debug("wrote %d trace rows to '%s'", len(table), path)
    return table
