"""
This file implements the line-riding MDP on top of the planar two-mass model.

Episodes start in driving mode, in which the policy tracks randomly resampled
velocity and boing-extension commands. After a random switch time, the robot
enters stunt mode and follows the guideline (expressed relative to its pose at
that moment) until the final waypoint is reached, after which it returns to
driving mode. The observation never contains the guideline itself.

Observation layout (15 entries):

    0       h               prismatic extension (joint position)
    1, 2    hdot, wheel     joint velocities
    3       phidot          base pitch rate
    4, 5    gravity         projected gravity (body x, body z)
    6, 7    a_prev          previous action
    8       c               mode flag (0 driving, 1 stunt)
    9-11    commands        v_drive, omega_drive, rho_drive (zero in stunt mode)
    12-14   x_stunt         position relative to trigger (zero in driving mode)

The action holds the normalised boing extension target and the rear wheel
speed target, both in `[-1, 1]`.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any

import gymnasium
import numpy as np
import yaml
from gymnasium import spaces

from rail.lineride import dynamics
from rail.lineride.dynamics import (
    JointTargets,
    ObservationChannels,
    PlanarBikeParams,
    PlanarBikeState,
    RandomizationConfig,
)
from rail.lineride.geometry import quat_from_pitch, wrap_angle
from rail.lineride.guideline import GuidelineTracker, KeyOrientationSet, SequenceTolerances

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rail.lineride.guideline import Guideline, GuidelineProgress

__all__ = [
    "OBS_DIM",
    "REWARD_TERMS",
    "ACT_DIM",
    "CommandSampler",
    "DriveCommand",
    "EnvConfig",
    "EpisodeContext",
    "EpisodeDoneError",
    "LineRideEnv",
    "Mode",
    "VectorLineRideEnv",
    "driving_reward",
    "driving_reward_terms",
    "make_env_config",
    "mode_transition",
    "regularization_penalties",
    "regularization_terms",
]

logger = logging.getLogger(__name__)

OBS_DIM = 15
ACT_DIM = 2
COMMAND_SLICE = slice(9, 12)
STUNT_SLICE = slice(12, 15)
OBS_CHANNELS = ObservationChannels(
    joint_pos=slice(0, 1),
    joint_vel=slice(1, 3),
    ang_vel=slice(3, 4),
    gravity=slice(4, 6),
)

V_DRIVE_RANGE = (-1.0, 2.0)
OMEGA_DRIVE_RANGE = (-1.5, 1.5)
RHO_DRIVE_RANGE = (0.06, 1.0)

CONTACT_FORCE_LIMIT = 350.0
SPEED_LIMIT = 2.0
REWARD_TERMS = (
    "lin_vel",
    "ang_vel",
    "boing_pos",
    "line",
    "rotation",
    "smoothness",
    "fork_vel",
    "contact_force",
    "joint_limits",
    "velocity",
)
"""Names of all reward terms, each reported in `info["terms"]` of the active mode."""


class EpisodeDoneError(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


class Mode(Enum):
    DRIVING = 0
    STUNT = 1


@dataclass(frozen=True)
class DriveCommand:
    """
    Driving-mode commands; `omega_drive` has no effect on the planar model
    and `rho_drive` is the target of the normalised boing extension.
    """

    v_drive: float = 0.0
    omega_drive: float = 0.0
    rho_drive: float = 0.5

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("v_drive", V_DRIVE_RANGE),
            ("omega_drive", OMEGA_DRIVE_RANGE),
            ("rho_drive", RHO_DRIVE_RANGE),
        ):
            if not lo <= getattr(self, name) <= hi:
                raise ValueError(f"'{name}' outside of [{lo}, {hi}]")

    def as_array(self) -> NDArray:
        return np.array([self.v_drive, self.omega_drive, self.rho_drive])


@dataclass
class CommandSampler:
    """
    Resamples each driving command independently whenever its own interval
    timer expires.
    """

    rng: np.random.Generator
    v_range: tuple[float, float] = V_DRIVE_RANGE
    omega_range: tuple[float, float] = OMEGA_DRIVE_RANGE
    rho_range: tuple[float, float] = RHO_DRIVE_RANGE
    v_interval: tuple[float, float] = (2.0, 15.0)
    omega_interval: tuple[float, float] = (3.0, 8.0)
    rho_interval: tuple[float, float] = (3.0, 10.0)
    command: DriveCommand = field(default_factory=DriveCommand)
    next_resample: NDArray = field(default_factory=lambda: np.zeros(3))

    def reset(self, t: float = 0.0) -> DriveCommand:
        """Sample all commands and restart all timers at time `t`."""
        self.next_resample = np.full(3, -np.inf)
        return self.sample_commands(t)

    def sample_commands(self, t: float) -> DriveCommand:
        """Return the active command at time `t`, resampling expired entries."""
        values = self.command.as_array()
        configs = (
            (self.v_range, self.v_interval),
            (self.omega_range, self.omega_interval),
            (self.rho_range, self.rho_interval),
        )
        for i, (value_range, interval) in enumerate(configs):
            if t >= self.next_resample[i]:
                values[i] = self.rng.uniform(*value_range)
                self.next_resample[i] = t + self.rng.uniform(*interval)
        self.command = DriveCommand(*values)
        return self.command


@dataclass
class EpisodeContext:
    """Mode machinery and stunt bookkeeping of one episode."""

    mode: Mode = Mode.DRIVING
    t: float = 0.0
    t_switch: float = 0.0
    mode_entered: float = 0.0
    stunt_origin: NDArray | None = None
    stunts_completed: int = 0
    stunt_triggers: int = 0
    landing_recorded: bool = False
    prev_stunt_height: float = 0.0

    def stunt_position(self, state: PlanarBikeState) -> NDArray:
        """Base position relative to the pose at stunt trigger."""
        if self.stunt_origin is None:
            return np.zeros(3)
        return state.position - self.stunt_origin


def mode_transition(
    ctx: EpisodeContext,
    progress: GuidelineProgress,
    state: PlanarBikeState,
    rng: np.random.Generator,
    t_switch_range: tuple[float, float] = (2.0, 5.0),
    stunts_enabled: bool = True,
) -> EpisodeContext:
    """
    Switch between driving and stunt mode.

    Driving switches to stunt once `t_switch` has elapsed since entering
    driving mode, recording the trigger pose and resetting the guideline
    progress. Stunt switches back to driving when the guideline is finished,
    which counts the stunt as completed and samples a new `t_switch`.
    """
    if ctx.mode is Mode.DRIVING:
        if stunts_enabled and ctx.t - ctx.mode_entered >= ctx.t_switch:
            ctx.mode = Mode.STUNT
            ctx.mode_entered = ctx.t
            ctx.stunt_origin = state.position.copy()
            ctx.stunt_triggers += 1
            ctx.landing_recorded = False
            ctx.prev_stunt_height = 0.0
            progress.reset()
            logger.debug("stunt triggered at t=%.2f s", ctx.t)
    elif progress.finished:
        ctx.mode = Mode.DRIVING
        ctx.mode_entered = ctx.t
        ctx.stunt_origin = None
        ctx.stunts_completed += 1
        ctx.t_switch = float(rng.uniform(*t_switch_range))
        logger.debug("stunt completed at t=%.2f s", ctx.t)
    return ctx


def driving_reward_terms(
    state: PlanarBikeState,
    cmd: DriveCommand,
    params: PlanarBikeParams,
    omega_base: float | None = None,
) -> dict[str, float]:
    """
    Tracking rewards `3 exp(-err^2)` of forward velocity, yaw rate and boing
    extension.

    The planar model has no yaw, so unless `omega_base` is given the yaw-rate
    error is zero.
    """
    omega_err = 0.0 if omega_base is None else omega_base - cmd.omega_drive
    rho = params.normalized_extension(state.h)
    return dict(
        lin_vel=3.0 * float(np.exp(-((state.xdot_com - cmd.v_drive) ** 2))),
        ang_vel=3.0 * float(np.exp(-(omega_err**2))),
        boing_pos=3.0 * float(np.exp(-((rho - cmd.rho_drive) ** 2))),
    )


def driving_reward(
    state: PlanarBikeState,
    cmd: DriveCommand,
    params: PlanarBikeParams,
    omega_base: float | None = None,
) -> float:
    """Sum of `driving_reward_terms`."""
    return sum(driving_reward_terms(state, cmd, params, omega_base).values())


def regularization_terms(
    state: PlanarBikeState,
    action: NDArray,
    prev_action: NDArray,
    *,
    joint_out_of_limits: bool = False,
    fork_velocity: float = 0.0,
) -> dict[str, float]:
    """Penalties applied in both modes, each entry is non-positive."""
    action = np.asarray(action, dtype=np.float64)
    prev_action = np.asarray(prev_action, dtype=np.float64)
    excess_force = max(state.F_contact - CONTACT_FORCE_LIMIT, 0.0)
    excess_speed = max(abs(state.xdot_com) - SPEED_LIMIT, 0.0)
    return dict(
        smoothness=-1e-4 * float(np.sum((action - prev_action) ** 2)),
        fork_vel=-0.001 * fork_velocity**2,
        contact_force=-1e-6 * excess_force**2,
        joint_limits=-1.0 if joint_out_of_limits else 0.0,
        velocity=-3.0 * excess_speed**2,
    )


def regularization_penalties(
    state: PlanarBikeState,
    action: NDArray,
    prev_action: NDArray,
    *,
    joint_out_of_limits: bool = False,
) -> float:
    """Sum of `regularization_terms`."""
    return sum(
        regularization_terms(
            state, action, prev_action, joint_out_of_limits=joint_out_of_limits
        ).values()
    )


@dataclass(frozen=True)
class EnvConfig:
    """
    Configuration of `LineRideEnv`.

    Parameters
    ----------
    guideline : Guideline or None
        The stunt guideline; without one the robot stays in driving mode.
    keys : KeyOrientationSet
        Key-orientations attached to the guideline.
    params : PlanarBikeParams
        Nominal model parameters.
    randomization : RandomizationConfig
        Domain randomisation ranges.
    """

    guideline: Guideline | None = None
    keys: KeyOrientationSet = field(default_factory=KeyOrientationSet)
    params: PlanarBikeParams = field(default_factory=PlanarBikeParams)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    tolerances: SequenceTolerances = field(default_factory=SequenceTolerances)
    control_dt: float = 0.02
    substeps: int = 4
    episode_length: float = 20.0
    t_switch_range: tuple[float, float] = (2.0, 5.0)
    v_range: tuple[float, float] = V_DRIVE_RANGE
    omega_range: tuple[float, float] = OMEGA_DRIVE_RANGE
    rho_range: tuple[float, float] = RHO_DRIVE_RANGE
    v_interval: tuple[float, float] = (2.0, 15.0)
    omega_interval: tuple[float, float] = (3.0, 8.0)
    rho_interval: tuple[float, float] = (3.0, 10.0)
    wheel_speed_scale: float = 25.0
    landing_height: float = 0.15

    def __post_init__(self) -> None:
        if self.substeps < 1:
            raise ValueError("at least one physics substep is required")
        if not 0.0 < self.control_dt / self.substeps <= dynamics.MAX_DT:
            raise ValueError("physics time step out of range")
        if not 0.0 < self.episode_length:
            raise ValueError("episode length must be positive")
        for name in (
            "t_switch_range", "v_range", "omega_range", "rho_range",
            "v_interval", "omega_interval", "rho_interval",
        ):  # fmt: skip
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range '{name}' is not ordered")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.guideline is not None:
            self.keys.validate(self.guideline)

    @property
    def physics_dt(self) -> float:
        return self.control_dt / self.substeps

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str = ".") -> EnvConfig:
        """
        Create a configuration from a mapping.

        The entry `guideline` names a preset or a guideline file (relative to
        `base_dir`), `landing_key_deg` optionally attaches a landing pitch
        key-orientation, `randomize` toggles the domain randomisation and
        `params` overrides model parameters. All other keys map directly to
        the dataclass fields.
        """
        from rail.lineride import presets  # pylint: disable=import-outside-toplevel

        data = dict(data)
        kwargs: dict[str, Any] = {}
        source = data.pop("guideline", None)
        landing_key = data.pop("landing_key_deg", None)
        margin = data.pop("margin", None)
        if source is not None:
            path = os.path.join(base_dir, source)
            gl, keys = presets.load_guideline(path if os.path.exists(path) else source, margin=margin)
            if landing_key is not None:
                height = float(data.get("landing_height", presets.DEFAULT_LANDING_HEIGHT))
                keys = presets.with_landing_key(gl, keys, float(landing_key), height=height)
            kwargs.update(guideline=gl, keys=keys)
        if "params" in data:
            kwargs["params"] = PlanarBikeParams(**data.pop("params"))
        randomize = data.pop("randomize", True)
        if not randomize:
            kwargs["randomization"] = RandomizationConfig.disabled()
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown environment options: {sorted(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path: str) -> EnvConfig:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


class LineRideEnv(gymnasium.Env):
    """
    Single line-riding environment with gymnasium's reset/step interface.

    `step` returns `(obs, reward, terminated, truncated, info)`; `info`
    lists each reward term in `info["terms"]` (summing to the reward), the
    mode, the termination cause and the stunt statistics of the episode.
    """

    metadata = {"render_modes": []}

    def __init__(self, config: EnvConfig | None = None) -> None:
        self.config = EnvConfig() if config is None else config
        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(OBS_DIM,), dtype=np.float64)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(ACT_DIM,), dtype=np.float64)
        self.tracker = (
            None
            if self.config.guideline is None
            else GuidelineTracker(self.config.guideline, self.config.keys, self.config.tolerances)
        )
        self.params = self.config.params
        self.state = dynamics.rest_state(self.params, self.params.h_mid)
        self.ctx = EpisodeContext()
        self.sampler: CommandSampler | None = None
        self.command = DriveCommand()
        self.prev_action = np.zeros(ACT_DIM)
        self._delay: dynamics.ActuatorDelay | None = None
        self._done = True
        self._landing_pitches: list[float] = []
        self._tracking_errors: list[float] = []

    @property
    def stunts_enabled(self) -> bool:
        return self.tracker is not None

    def action_to_targets(self, action: NDArray) -> JointTargets:
        """Map a clipped action to joint targets."""
        p = self.params
        h_target = p.h_min + 0.5 * (action[0] + 1.0) * (p.h_max - p.h_min)
        return JointTargets(float(h_target), float(action[1] * self.config.wheel_speed_scale))

    def reset(self, *, seed: int | None = None, options: dict | None = None):
        super().reset(seed=seed)
        rng = self.np_random
        cfg = self.config

        self.params = dynamics.apply_randomization(cfg.params, cfg.randomization, rng)
        self.state = dynamics.rest_state(self.params, self.params.h_mid)
        self.state = dynamics.disturb_velocity(self.state, cfg.randomization, rng)
        self.prev_action = np.zeros(ACT_DIM)
        self._delay = dynamics.ActuatorDelay(
            cfg.randomization.sample_delay(rng), self.action_to_targets(self.prev_action)
        )
        self.ctx = EpisodeContext(t_switch=float(rng.uniform(*cfg.t_switch_range)))
        if self.tracker is not None:
            self.tracker.reset()
        self.sampler = CommandSampler(
            rng,
            v_range=cfg.v_range,
            omega_range=cfg.omega_range,
            rho_range=cfg.rho_range,
            v_interval=cfg.v_interval,
            omega_interval=cfg.omega_interval,
            rho_interval=cfg.rho_interval,
        )
        self.command = self.sampler.reset(0.0)
        self._done = False
        self._landing_pitches = []
        self._tracking_errors = []
        return self._observe(), self._episode_info()

    def _observe(self) -> NDArray:
        s = self.state
        obs = np.zeros(OBS_DIM)
        obs[0] = s.h
        obs[1] = s.hdot
        obs[2] = s.wheel_speed
        obs[3] = s.phidot
        obs[4] = np.sin(s.phi)
        obs[5] = -np.cos(s.phi)
        obs[6:8] = self.prev_action
        obs = dynamics.perturb_observation(obs, self.config.randomization, self.np_random, OBS_CHANNELS)
        if self.ctx.mode is Mode.DRIVING:
            obs[8] = 0.0
            obs[COMMAND_SLICE] = self.command.as_array()
            obs[STUNT_SLICE] = 0.0
        else:
            obs[8] = 1.0
            obs[COMMAND_SLICE] = 0.0
            obs[STUNT_SLICE] = self.ctx.stunt_position(self.state)
        return obs

    def _episode_info(self) -> dict[str, Any]:
        return dict(
            mode=self.ctx.mode.name.lower(),
            t=self.ctx.t,
            stunts_completed=self.ctx.stunts_completed,
            stunt_triggers=self.ctx.stunt_triggers,
            landing_pitch=list(self._landing_pitches),
            tracking_error=float(np.mean(self._tracking_errors)) if self._tracking_errors else float("nan"),
        )

    def _record_landing(self, x_stunt: NDArray) -> None:
        height = float(x_stunt[2])
        threshold = self.config.landing_height
        if not self.ctx.landing_recorded and self.ctx.prev_stunt_height >= threshold > height:
            self.ctx.landing_recorded = True
            self._landing_pitches.append(float(np.degrees(wrap_angle(self.state.phi))))
        self.ctx.prev_stunt_height = height

    def step(self, action: Sequence[float]):
        if self._done:
            raise EpisodeDoneError("episode is done, call reset() first")
        raw = np.asarray(action, dtype=np.float64).reshape(ACT_DIM)
        clipped = np.clip(raw, -1.0, 1.0)
        targets = self._delay.push(self.action_to_targets(clipped))

        mode = self.ctx.mode
        x_prev = self.ctx.stunt_position(self.state)
        q_prev = quat_from_pitch(self.state.phi)
        for _ in range(self.config.substeps):
            self.state = dynamics.step(self.state, targets, self.params, self.config.physics_dt)
        self.ctx.t += self.config.control_dt
        x_now = self.ctx.stunt_position(self.state)

        terms: dict[str, float] = {}
        cause = None
        if mode is Mode.DRIVING:
            self.command = self.sampler.sample_commands(self.ctx.t)
            terms.update(driving_reward_terms(self.state, self.command, self.params))
        else:
            track = self.tracker.step(x_prev, x_now, q_prev, quat_from_pitch(self.state.phi))
            terms.update(line=track.line, rotation=track.rotation)
            cause = track.cause
            self._record_landing(x_now)
            if not self.tracker.finished:
                active = self.tracker.progress.active_index
                self._tracking_errors.append(self.tracker.guideline.distance_to(active, x_now))

        terms.update(
            regularization_terms(
                self.state,
                clipped,
                self.prev_action,
                joint_out_of_limits=bool(abs(raw[0]) > 1.0),
            )
        )
        reward = sum(terms.values())
        self.prev_action = clipped

        if cause is None and dynamics.has_fallen(self.state, self.params):
            cause = "fall"
        terminated = cause is not None
        truncated = not terminated and self.ctx.t >= self.config.episode_length - 1e-9
        if truncated:
            cause = "time_limit"

        if not terminated and self.tracker is not None:
            mode_transition(
                self.ctx,
                self.tracker.progress,
                self.state,
                self.np_random,
                self.config.t_switch_range,
                self.stunts_enabled,
            )
            if self.ctx.mode is not mode:
                self.state = dynamics.disturb_velocity(self.state, self.config.randomization, self.np_random)
                if self.ctx.mode is Mode.DRIVING:
                    self.command = self.sampler.sample_commands(self.ctx.t)
                else:
                    self.tracker.reset()  # sequence counters

        self._done = terminated or truncated
        info = self._episode_info()
        info.update(terms=terms, cause=cause, step_mode=mode.name.lower())
        return self._observe(), float(reward), terminated, truncated, info


class VectorLineRideEnv:
    """
    Runs `num_envs` environments on a thread pool, synchronising once per
    batch. Finished environments are reset automatically; their last info is
    available as `info["final_info"]`.
    """

    def __init__(self, config: EnvConfig, num_envs: int, max_workers: int | None = None) -> None:
        if num_envs < 1:
            raise ValueError("at least one environment is required")
        self.envs = [LineRideEnv(config) for _ in range(num_envs)]
        self.num_envs = num_envs
        self._pool = ThreadPoolExecutor(max_workers=max_workers or min(num_envs, os.cpu_count() or 1))

    def reset(self, seed: int | None = None) -> tuple[NDArray, list[dict]]:
        seeds = [None if seed is None else seed + i for i in range(self.num_envs)]
        results = list(self._pool.map(lambda pair: pair[0].reset(seed=pair[1]), zip(self.envs, seeds)))
        return np.stack([obs for obs, _ in results]), [info for _, info in results]

    def _step_one(self, env: LineRideEnv, action: NDArray):
        obs, reward, terminated, truncated, info = env.step(action)
        if terminated or truncated:
            final = info
            obs, info = env.reset()
            info = dict(info, final_info=final)
        return obs, reward, terminated, truncated, info

    def step(self, actions: NDArray):
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_envs, ACT_DIM):
            raise ValueError(f"expected actions of shape ({self.num_envs}, {ACT_DIM})")
        results = list(self._pool.map(self._step_one, self.envs, actions))
        obs = np.stack([r[0] for r in results])
        rewards = np.array([r[1] for r in results])
        terminated = np.array([r[2] for r in results])
        truncated = np.array([r[3] for r in results])
        return obs, rewards, terminated, truncated, [r[4] for r in results]

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self) -> VectorLineRideEnv:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_env_config(
    path: str | None = None,
    guideline: Guideline | None = None,
    keys: KeyOrientationSet | None = None,
    *,
    randomize: bool | None = None,
    landing_key_deg: float | None = None,
) -> EnvConfig:
    """
    Assemble an environment configuration.

    Parameters
    ----------
    path : str, optional
        YAML configuration file, defaults are used otherwise.
    guideline : Guideline, optional
        Replaces the guideline (and key-orientations) of the file.
    keys : KeyOrientationSet, optional
        Key-orientations of `guideline`.
    randomize : bool, optional
        If `False`, disables all domain randomisation.
    landing_key_deg : float, optional
        Adds a landing pitch key-orientation, see `presets.with_landing_key`.
    """
    from rail.lineride import presets  # pylint: disable=import-outside-toplevel

    config = EnvConfig() if path is None else EnvConfig.from_yaml(path)
    if guideline is not None:
        config = replace(config, guideline=guideline, keys=KeyOrientationSet() if keys is None else keys)
    if landing_key_deg is not None:
        if config.guideline is None:
            raise ValueError("a landing key-orientation requires a guideline")
        keys = presets.with_landing_key(
            config.guideline, config.keys, float(landing_key_deg), height=config.landing_height
        )
        config = replace(config, keys=keys)
    if randomize is False:
        config = replace(config, randomization=RandomizationConfig.disabled())
    return config
