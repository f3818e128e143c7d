"""
This file implements proximal policy optimisation with generalised advantage
estimation for the line-riding environment.

Training alternates between collecting a rollout of `horizon` steps from
`num_envs` parallel environments and several epochs of minibatched updates
of the clipped surrogate objective. Observations are normalised by running
statistics, which are frozen for evaluation.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import torch
import yaml
from pandas import DataFrame

from rail.lineride.dynamics import SimulationFault, trace_record, trace_table
from rail.lineride.env import REWARD_TERMS, LineRideEnv, VectorLineRideEnv
from rail.lineride.policy import ActorCritic, PolicySpec, RunningMeanStd, save_checkpoint

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from rail.lineride.env import EnvConfig

__all__ = [
    "EpisodeRecord",
    "EvalReport",
    "PPOConfig",
    "RolloutBuffer",
    "TrainResult",
    "TrainingFault",
    "clipped_surrogate",
    "evaluate",
    "gae_advantages",
    "normalize_advantages",
    "ppo_loss",
    "ppo_update",
    "trace_episode",
    "train",
]

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
FINAL_CHECKPOINT = "policy.hdf5"


class TrainingFault(RuntimeError):
    """Raised when the optimisation produces non-finite values."""


@dataclass(frozen=True)
class PPOConfig:
    """
    Hyperparameters of the training loop.

    Parameters
    ----------
    gamma : float
        Discount factor in `[0, 1]`.
    gae_lambda : float
        GAE smoothing parameter in `[0, 1]`.
    clip : float
        Clip range of the probability ratio, positive.
    learning_rate : float
        Adam step size.
    epochs : int
        Passes over each rollout.
    minibatch_size : int
        Samples per gradient step.
    horizon : int
        Steps collected per environment and update.
    num_envs : int
        Number of parallel environments.
    total_steps : int
        Environment steps to train for, summed over all environments.
    """

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 5
    minibatch_size: int = 4096
    horizon: int = 512
    num_envs: int = 64
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    total_steps: int = 5_000_000
    checkpoint_interval: int = 20
    normalize_advantages: bool = True
    normalize_observations: bool = True
    seed: int = 12345
    policy: PolicySpec = field(default_factory=PolicySpec)

    def __post_init__(self) -> None:
        if isinstance(self.policy, dict):
            object.__setattr__(self, "policy", PolicySpec(**self.policy))
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("'gamma' and 'gae_lambda' must be in [0, 1]")
        if self.clip <= 0.0 or self.learning_rate <= 0.0:
            raise ValueError("'clip' and 'learning_rate' must be positive")
        counts = ("epochs", "minibatch_size", "horizon", "num_envs", "checkpoint_interval")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"'{name}' must be positive")
        if self.total_steps < 0:
            raise ValueError("'total_steps' must not be negative")

    @property
    def batch_size(self) -> int:
        return self.horizon * self.num_envs

    @property
    def num_updates(self) -> int:
        return math.ceil(self.total_steps / self.batch_size)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["policy"] = self.policy.to_dict()
        return data

    @classmethod
    def from_yaml(cls, path: str | None = None, **overrides) -> PPOConfig:
        """
        Read hyperparameters from a YAML file, `overrides` that are not `None`
        take precedence over the file.
        """
        data: dict[str, Any] = {}
        if path is not None:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        data.update({key: value for key, value in overrides.items() if value is not None})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown PPO options: {sorted(unknown)}")
        return cls(**data)


class RolloutBuffer:
    """
    Fixed-size storage of `horizon` steps from `num_envs` environments.

    Values have one additional row for the bootstrap value of the final
    observation, added with `add_last_value`.
    """

    def __init__(self, obs_dim: int, act_dim: int, horizon: int, num_envs: int) -> None:
        self.horizon = horizon
        self.num_envs = num_envs
        self.obs = torch.zeros(horizon, num_envs, obs_dim)
        self.actions = torch.zeros(horizon, num_envs, act_dim)
        self.log_probs = torch.zeros(horizon, num_envs)
        self.rewards = torch.zeros(horizon, num_envs, dtype=torch.float64)
        self.dones = torch.zeros(horizon, num_envs, dtype=torch.bool)
        self.values = torch.zeros(horizon + 1, num_envs, dtype=torch.float64)
        self.ptr = 0
        self.has_last_value = False

    @property
    def full(self) -> bool:
        return self.ptr == self.horizon and self.has_last_value

    def reset(self) -> None:
        self.ptr = 0
        self.has_last_value = False

    def add(self, obs, actions, log_probs, rewards, dones, values) -> None:
        if self.ptr >= self.horizon:
            raise ValueError("rollout buffer is full")
        t = self.ptr
        self.obs[t] = torch.as_tensor(obs, dtype=self.obs.dtype)
        self.actions[t] = torch.as_tensor(actions, dtype=self.actions.dtype)
        self.log_probs[t] = torch.as_tensor(log_probs, dtype=self.log_probs.dtype)
        self.rewards[t] = torch.as_tensor(rewards, dtype=self.rewards.dtype)
        self.dones[t] = torch.as_tensor(dones, dtype=torch.bool)
        self.values[t] = torch.as_tensor(values, dtype=self.values.dtype)
        self.ptr += 1

    def add_last_value(self, values) -> None:
        self.values[self.ptr] = torch.as_tensor(values, dtype=self.values.dtype)
        self.has_last_value = True


def gae_advantages(
    buffer: RolloutBuffer, gamma: float, gae_lambda: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Generalised advantage estimates and returns of a complete buffer.

    The recursion is `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t` and
    `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, the returns are
    `A + V`.

    Raises
    ------
    ValueError
        If the buffer is incomplete or its arrays have inconsistent shapes.
    """
    rewards, values, dones = buffer.rewards, buffer.values, buffer.dones
    if values.shape[0] != rewards.shape[0] + 1 or rewards.shape != dones.shape:
        raise ValueError("inconsistent buffer shapes")
    if values.shape[1:] != rewards.shape[1:]:
        raise ValueError("inconsistent buffer shapes")
    if not buffer.full:
        raise ValueError("buffer is incomplete, rollout or bootstrap value missing")

    nonterminal = (~dones).to(values.dtype)
    advantages = torch.zeros_like(rewards, dtype=values.dtype)
    last = torch.zeros_like(values[0])
    for t in reversed(range(rewards.shape[0])):
        delta = rewards[t] + gamma * values[t + 1] * nonterminal[t] - values[t]
        last = delta + gamma * gae_lambda * nonterminal[t] * last
        advantages[t] = last
    return advantages, advantages + values[:-1]


def normalize_advantages(advantages: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    return (advantages - advantages.mean()) / (advantages.std() + eps)


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip: float) -> torch.Tensor:
    """Per-sample clipped objective `min(r A, clip(r, 1-eps, 1+eps) A)`."""
    return torch.min(ratio * advantages, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages)


def ppo_loss(
    policy: ActorCritic,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    config: PPOConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """
    Total loss of a minibatch: negative clipped surrogate, weighted value
    loss and negative weighted entropy bonus.
    """
    log_probs, entropy, values = policy.evaluate_actions(obs, actions)
    ratio = torch.exp(log_probs - old_log_probs)
    policy_loss = -clipped_surrogate(ratio, advantages, config.clip).mean()
    value_loss = 0.5 * ((values - returns) ** 2).mean()
    entropy_mean = entropy.mean()
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy_mean

    with torch.no_grad():
        stats = dict(
            policy_loss=float(policy_loss),
            value_loss=float(value_loss),
            entropy=float(entropy_mean),
            approx_kl=float((old_log_probs - log_probs).mean()),
            clip_fraction=float(((ratio - 1.0).abs() > config.clip).to(torch.float64).mean()),
        )
    return loss, stats


def ppo_update(
    policy: ActorCritic,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    config: PPOConfig,
    generator: torch.Generator | None = None,
) -> dict[str, float]:
    """
    Run the configured epochs of minibatched updates on a complete buffer.

    Returns
    -------
    dict
        Mean of each loss term over all minibatches.

    Raises
    ------
    TrainingFault
        If a loss or gradient becomes non-finite.
    """
    advantages, returns = gae_advantages(buffer, config.gamma, config.gae_lambda)
    n = buffer.horizon * buffer.num_envs
    obs = buffer.obs.reshape(n, -1)
    actions = buffer.actions.reshape(n, -1)
    old_log_probs = buffer.log_probs.reshape(n)
    advantages = advantages.reshape(n)
    returns = returns.reshape(n).to(obs.dtype)
    if config.normalize_advantages and n > 1:
        advantages = normalize_advantages(advantages)
    advantages = advantages.to(obs.dtype)

    totals: Counter[str] = Counter()
    num_batches = 0
    batch_size = min(config.minibatch_size, n)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, stats = ppo_loss(
                policy, obs[idx], actions[idx], old_log_probs[idx], advantages[idx], returns[idx], config
            )
            if not torch.isfinite(loss):
                raise TrainingFault(f"non-finite loss in update, terms: {stats}")
            optimizer.zero_grad()
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            if not torch.isfinite(grad_norm):
                raise TrainingFault(f"non-finite gradient norm, terms: {stats}")
            optimizer.step()
            totals.update(stats)
            num_batches += 1
    return {key: value / num_batches for key, value in totals.items()}


@dataclass
class EpisodeStats:
    """Running statistics of the episodes finished during one rollout."""

    returns: list[float] = field(default_factory=list)
    completed: int = 0
    triggers: int = 0
    causes: Counter = field(default_factory=Counter)

    def add(self, episode_return: float, info: dict[str, Any]) -> None:
        self.returns.append(episode_return)
        self.completed += info["stunts_completed"]
        self.triggers += info["stunt_triggers"]
        self.causes[info["cause"]] += 1

    @property
    def success_rate(self) -> float:
        return self.completed / self.triggers if self.triggers else float("nan")


@dataclass
class TrainResult:
    """Outcome of `train`."""

    policy: ActorCritic
    normalizer: RunningMeanStd
    steps: int
    checkpoints: list[str] = field(default_factory=list)
    metrics: list[dict[str, Any]] = field(default_factory=list)


def _nan_to_none(value: float) -> float | None:
    return None if math.isnan(value) else value


class _Trainer:
    """Holds the mutable state of one training run."""

    def __init__(
        self, env_config: EnvConfig, config: PPOConfig, policy: ActorCritic | None, output_dir: str | None
    ) -> None:
        self.config = config
        self.output_dir = output_dir
        self.policy = ActorCritic(config.policy, seed=config.seed) if policy is None else policy
        self.normalizer = RunningMeanStd(shape=(self.policy.spec.obs_dim,))
        self.optimizer = torch.optim.Adam(self.policy.parameters(), lr=config.learning_rate)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.env_config = env_config
        self.steps = 0
        self.checkpoints: list[str] = []
        self.metrics: list[dict[str, Any]] = []

    def normalize(self, obs: NDArray) -> torch.Tensor:
        if self.config.normalize_observations:
            self.normalizer.update(obs)
            obs = self.normalizer.normalize(obs)
        return torch.as_tensor(obs, dtype=torch.float32)

    def checkpoint(self, name: str | None = None) -> None:
        if self.output_dir is None:
            return
        path = os.path.join(self.output_dir, name or f"checkpoint_{self.steps:09d}.hdf5")
        save_checkpoint(
            path,
            self.policy,
            self.normalizer,
            step=self.steps,
            metadata=dict(ppo=self.config.to_dict()),
        )
        self.checkpoints.append(path)

    def log_metrics(self, record: dict[str, Any]) -> None:
        self.metrics.append(record)
        if self.output_dir is not None:
            with open(os.path.join(self.output_dir, METRICS_FILE), mode="a") as f:
                f.write(json.dumps(record) + "\n")
        logger.info(
            "update %d | steps %d | return %s | success %s",
            record["update"],
            record["step"],
            record["mean_return"],
            record["success_rate"],
        )

    def collect(self, envs: VectorLineRideEnv, buffer: RolloutBuffer, obs: torch.Tensor, running: NDArray):
        buffer.reset()
        stats = EpisodeStats()
        for _ in range(self.config.horizon):
            with torch.no_grad():
                actions, log_probs, values = self.policy.act(obs, generator=self.generator)
            next_obs, rewards, terminated, truncated, infos = envs.step(actions.numpy().astype(np.float64))
            dones = terminated | truncated
            buffer.add(obs, actions, log_probs, rewards, dones, values)
            running += rewards
            for i in np.flatnonzero(dones):
                stats.add(float(running[i]), infos[i]["final_info"])
                running[i] = 0.0
            obs = self.normalize(next_obs)
            self.steps += envs.num_envs
        with torch.no_grad():
            buffer.add_last_value(self.policy.value(obs))
        return obs, stats

    def run(self) -> TrainResult:
        cfg = self.config
        self.checkpoint()
        if cfg.num_updates == 0:
            return TrainResult(self.policy, self.normalizer, self.steps, self.checkpoints, self.metrics)

        buffer = RolloutBuffer(self.policy.spec.obs_dim, self.policy.spec.act_dim, cfg.horizon, cfg.num_envs)
        running = np.zeros(cfg.num_envs)
        with VectorLineRideEnv(self.env_config, cfg.num_envs) as envs:
            raw_obs, _ = envs.reset(seed=cfg.seed)
            obs = self.normalize(raw_obs)
            for update in range(1, cfg.num_updates + 1):
                try:
                    obs, stats = self.collect(envs, buffer, obs, running)
                    losses = ppo_update(self.policy, self.optimizer, buffer, cfg, self.generator)
                except (SimulationFault, TrainingFault):
                    self.checkpoint(f"checkpoint_fault_{self.steps:09d}.hdf5")
                    logger.error("training aborted at step %d, state saved", self.steps)
                    raise

                mean_return = float(np.mean(stats.returns)) if stats.returns else float("nan")
                self.log_metrics(
                    dict(
                        update=update,
                        step=self.steps,
                        episodes=len(stats.returns),
                        mean_return=_nan_to_none(mean_return),
                        success_rate=_nan_to_none(stats.success_rate),
                        stunts_completed=stats.completed,
                        stunt_triggers=stats.triggers,
                        causes=dict(sorted((str(k), v) for k, v in stats.causes.items())),
                        losses=losses,
                    )
                )
                if update % cfg.checkpoint_interval == 0:
                    self.checkpoint()
        self.checkpoint(FINAL_CHECKPOINT)
        return TrainResult(self.policy, self.normalizer, self.steps, self.checkpoints, self.metrics)


def train(
    env_config: EnvConfig,
    config: PPOConfig | None = None,
    policy: ActorCritic | None = None,
    output_dir: str | None = None,
) -> TrainResult:
    """
    Train a policy on the environments described by `env_config`.

    Parameters
    ----------
    env_config : EnvConfig
        Configuration shared by all parallel environments.
    config : PPOConfig, optional
        Training hyperparameters.
    policy : ActorCritic, optional
        Policy to continue training, a new one is created from the config
        otherwise.
    output_dir : str, optional
        Directory receiving the checkpoints and the metrics log.

    Returns
    -------
    TrainResult
        The trained policy and normaliser, checkpoint paths and metrics.

    Raises
    ------
    SimulationFault, TrainingFault
        After writing a checkpoint of the state at the time of the fault.
    """
    config = PPOConfig() if config is None else config
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
    torch.manual_seed(config.seed)
    return _Trainer(env_config, config, policy, output_dir).run()


@dataclass(frozen=True)
class EpisodeRecord:
    """Summary of one evaluation episode."""

    seed: int
    episode_return: float
    steps: int
    stunt_triggers: int
    stunts_completed: int
    cause: str | None
    tracking_error: float
    landing_pitch: tuple[float, ...] = ()


@dataclass
class EvalReport:
    """Per-episode records of an evaluation with aggregated statistics."""

    episodes: list[EpisodeRecord]

    @property
    def success_rate(self) -> float:
        triggers = sum(e.stunt_triggers for e in self.episodes)
        completed = sum(e.stunts_completed for e in self.episodes)
        return completed / triggers if triggers else 0.0

    @property
    def landing_pitches(self) -> NDArray:
        return np.array([p for e in self.episodes for p in e.landing_pitch])

    def landing_pitch_stats(self) -> dict[str, float]:
        pitches = self.landing_pitches
        if len(pitches) == 0:
            return dict(count=0, median=float("nan"), mean=float("nan"), std=float("nan"))
        return dict(
            count=len(pitches),
            median=float(np.median(pitches)),
            mean=float(np.mean(pitches)),
            std=float(np.std(pitches)),
        )

    def to_table(self) -> DataFrame:
        rows = [asdict(e) for e in self.episodes]
        for row in rows:
            row["landing_pitch"] = ";".join(f"{p:.2f}" for p in row["landing_pitch"])
        return DataFrame(rows)

    def summary(self) -> dict[str, Any]:
        tracking = [e.tracking_error for e in self.episodes if not math.isnan(e.tracking_error)]
        return dict(
            episodes=len(self.episodes),
            success_rate=self.success_rate,
            stunts_completed=sum(e.stunts_completed for e in self.episodes),
            stunt_triggers=sum(e.stunt_triggers for e in self.episodes),
            mean_tracking_error=float(np.mean(tracking)) if tracking else float("nan"),
            landing_pitch=self.landing_pitch_stats(),
        )


def run_episode(
    policy: ActorCritic,
    normalizer: RunningMeanStd,
    env: LineRideEnv,
    seed: int,
    callback=None,
) -> EpisodeRecord:
    """
    Roll out one episode with deterministic actions.

    `callback(env, info)` is called after every step, e.g. to record traces.
    """
    obs, info = env.reset(seed=seed)
    total = 0.0
    steps = 0
    done = False
    while not done:
        with torch.no_grad():
            obs_t = torch.as_tensor(normalizer.normalize(obs), dtype=torch.float32)
            action, _, _ = policy.act(obs_t.unsqueeze(0), deterministic=True)
        obs, reward, terminated, truncated, info = env.step(action[0].numpy().astype(np.float64))
        total += reward
        steps += 1
        done = terminated or truncated
        if callback is not None:
            callback(env, info)
    return EpisodeRecord(
        seed=seed,
        episode_return=total,
        steps=steps,
        stunt_triggers=info["stunt_triggers"],
        stunts_completed=info["stunts_completed"],
        cause=info["cause"],
        tracking_error=info["tracking_error"],
        landing_pitch=tuple(info["landing_pitch"]),
    )


def evaluate(
    policy: ActorCritic,
    normalizer: RunningMeanStd,
    env_config: EnvConfig,
    episodes: int,
    seed: int = 0,
) -> EvalReport:
    """
    Evaluate a policy with deterministic actions on seeded episodes.

    Episode `i` is reset with seed `seed + i`; the normaliser is not updated.
    """
    if episodes < 1:
        raise ValueError("at least one episode is required")
    env = LineRideEnv(env_config)
    records = [run_episode(policy, normalizer, env, seed + i) for i in range(episodes)]
    report = EvalReport(records)
    logger.info("evaluated %d episodes, success rate %.3f", episodes, report.success_rate)
    return report


def trace_episode(
    policy: ActorCritic,
    normalizer: RunningMeanStd,
    env_config: EnvConfig,
    seed: int = 0,
) -> tuple[DataFrame, EpisodeRecord]:
    """
    Replay one deterministic episode and record a per-step trace.

    Each step adds a row with the state columns of `TRACE_COLUMNS`, the
    reward and its terms. At every stunt trigger, the guideline waypoints are
    added as rows with mode `waypoint`, placed relative to the trigger pose.
    """
    records: list[dict[str, Any]] = []

    def record(env: LineRideEnv, info: dict[str, Any]) -> None:
        row = trace_record(info["t"], env.state, info["step_mode"])
        row.update(info["terms"], reward=sum(info["terms"].values()))
        records.append(row)
        triggered = info["mode"] == "stunt" and info["step_mode"] == "driving"
        if triggered and env.config.guideline is not None:
            origin = env.ctx.stunt_origin
            for i, p in enumerate(env.config.guideline.points):
                records.append(
                    dict(t=info["t"], x_com=origin[0] + p[0], z_com=origin[2] + p[2], mode="waypoint", waypoint=i)
                )

    env = LineRideEnv(env_config)
    episode = run_episode(policy, normalizer, env, seed, callback=record)
    table = trace_table(records, extra_columns=("reward", *REWARD_TERMS, "waypoint"))
    return table, episode
