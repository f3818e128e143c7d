"""
This file implements the actor-critic network, the running observation
normaliser and the checkpoint file format.

The policy is a diagonal Gaussian with state-independent log standard
deviation on top of a multilayer perceptron; the value function uses a
separate network of the same shape. Checkpoints are HDF5 files that store
the network specification, all parameter tensors and the normaliser state.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import h5py
import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

from rail.lineride.env import ACT_DIM, OBS_DIM

if TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = [
    "CHECKPOINT_VERSION",
    "ActorCritic",
    "Checkpoint",
    "PolicySpec",
    "RunningMeanStd",
    "load_checkpoint",
    "save_checkpoint",
]

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
"""Version of the checkpoint file layout, checked when reading."""

ACTIVATIONS = {
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
}


@dataclass(frozen=True)
class PolicySpec:
    """
    Architecture of the actor-critic networks.

    Parameters
    ----------
    obs_dim : int
        Input dimension, must match the observation dimension.
    act_dim : int
        Output dimension, must match the action dimension.
    hidden : tuple of int
        Sizes of the hidden layers of both networks.
    activation : str
        Name of the activation function, one of `elu`, `relu`, `tanh`.
    init_log_std : float
        Initial value of the log standard deviation of the action head.
    """

    obs_dim: int = OBS_DIM
    act_dim: int = ACT_DIM
    hidden: tuple[int, ...] = (256, 128)
    activation: str = "elu"
    init_log_std: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}', options: {sorted(ACTIVATIONS)}")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["hidden"] = list(self.hidden)
        return data


def _mlp(sizes: list[int], activation: str) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(n_in, n_out))
        if i < len(sizes) - 2:
            layers.append(ACTIVATIONS[activation]())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """
    Gaussian policy and value function.

    Parameters
    ----------
    spec : PolicySpec
        The network architecture.
    seed : int, optional
        Seed for the parameter initialisation.
    """

    def __init__(self, spec: PolicySpec | None = None, seed: int | None = None) -> None:
        super().__init__()
        self.spec = PolicySpec() if spec is None else spec
        sizes = [self.spec.obs_dim, *self.spec.hidden]
        with torch.random.fork_rng(enabled=seed is not None):
            if seed is not None:
                torch.manual_seed(seed)
            self.actor = _mlp([*sizes, self.spec.act_dim], self.spec.activation)
            self.critic = _mlp([*sizes, 1], self.spec.activation)
        self.log_std = nn.Parameter(torch.full((self.spec.act_dim,), float(self.spec.init_log_std)))

    def distribution(self, obs: torch.Tensor) -> Normal:
        mean = self.actor(obs)
        return Normal(mean, self.log_std.exp().expand_as(mean))

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.actor(obs), self.value(obs)

    def act(
        self,
        obs: torch.Tensor,
        deterministic: bool = False,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Sample actions for a batch of observations.

        Returns
        -------
        actions, log_prob, value : Tensor
            The actions (the mean if `deterministic`), their log-density
            summed over action dimensions, and the value estimates.
        """
        dist = self.distribution(obs)
        if deterministic:
            actions = dist.mean
        else:
            noise = torch.randn(dist.mean.shape, generator=generator, dtype=dist.mean.dtype)
            actions = dist.mean + dist.stddev * noise
        return actions, dist.log_prob(actions).sum(-1), self.value(obs)

    def evaluate_actions(
        self, obs: torch.Tensor, actions: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Log-density, entropy and value estimate for given actions."""
        dist = self.distribution(obs)
        return dist.log_prob(actions).sum(-1), dist.entropy().sum(-1), self.value(obs)


@dataclass
class RunningMeanStd:
    """
    Running mean and variance of observations, merged batch-wise.

    Parameters
    ----------
    shape : tuple of int
        Shape of a single observation.
    clip : float
        Normalised observations are clipped to `[-clip, clip]`.
    frozen : bool
        If set, `update` leaves the statistics unchanged.
    """

    shape: tuple[int, ...] = (OBS_DIM,)
    clip: float = 10.0
    frozen: bool = False
    epsilon: float = 1e-8
    mean: NDArray = field(default=None)
    var: NDArray = field(default=None)
    count: float = 1e-4

    def __post_init__(self) -> None:
        self.shape = tuple(self.shape)
        if self.mean is None:
            self.mean = np.zeros(self.shape)
        if self.var is None:
            self.var = np.ones(self.shape)

    def update(self, batch: NDArray) -> None:
        if self.frozen:
            return
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, *self.shape)
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        n = len(batch)

        delta = batch_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta**2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs: NDArray) -> NDArray:
        normed = (np.asarray(obs, dtype=np.float64) - self.mean) / np.sqrt(self.var + self.epsilon)
        return np.clip(normed, -self.clip, self.clip)


@dataclass
class Checkpoint:
    """Contents of a checkpoint file."""

    policy: ActorCritic
    normalizer: RunningMeanStd
    step: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: str,
    policy: ActorCritic,
    normalizer: RunningMeanStd,
    step: int = 0,
    metadata: dict[str, Any] | None = None,
) -> None:
    """
    Write the policy parameters and normaliser state to an HDF5 file.

    Parameters
    ----------
    path : str
        Output file, overwritten if it exists.
    policy : ActorCritic
        The network to store.
    normalizer : RunningMeanStd
        Observation normaliser belonging to the policy.
    step : int, optional
        Number of environment steps used to train the policy.
    metadata : dict, optional
        Additional JSON-serialisable information.
    """
    with h5py.File(path, mode="w") as f:
        f.attrs["version"] = CHECKPOINT_VERSION
        f.attrs["spec"] = json.dumps(policy.spec.to_dict())
        f.attrs["step"] = int(step)
        f.attrs["metadata"] = json.dumps(metadata or {})

        group = f.create_group("parameters")
        for name, tensor in policy.state_dict().items():
            group.create_dataset(name, data=tensor.detach().cpu().numpy())

        norm = f.create_group("normalizer")
        norm.create_dataset("mean", data=normalizer.mean)
        norm.create_dataset("var", data=normalizer.var)
        norm.attrs["count"] = normalizer.count
        norm.attrs["clip"] = normalizer.clip
    logger.debug("wrote checkpoint at step %d to '%s'", step, path)


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`.

    The normaliser of the returned checkpoint is frozen.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ValueError
        If the file is not a checkpoint or has an unsupported version.
    """
    try:
        f = h5py.File(path, mode="r")
    except FileNotFoundError:
        raise
    except OSError as err:
        raise ValueError(f"not a checkpoint file: {path}") from err

    with f:
        version = int(f.attrs.get("version", -1))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version} in '{path}'")
        spec = PolicySpec(**json.loads(f.attrs["spec"]))
        policy = ActorCritic(spec)
        state = {
            name: torch.as_tensor(np.asarray(dset)) for name, dset in f["parameters"].items()
        }
        policy.load_state_dict(state)

        norm = f["normalizer"]
        normalizer = RunningMeanStd(
            shape=(spec.obs_dim,),
            clip=float(norm.attrs["clip"]),
            frozen=True,
            mean=np.asarray(norm["mean"]),
            var=np.asarray(norm["var"]),
            count=float(norm.attrs["count"]),
        )
        step = int(f.attrs["step"])
        metadata = json.loads(f.attrs["metadata"])
    return Checkpoint(policy, normalizer, step, metadata)
