from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from pytest import fixture

from rail.core.stage import RailStage
from rail.lineride import geometry
from rail.lineride.dynamics import PlanarBikeParams, RandomizationConfig
from rail.lineride.env import EnvConfig
from rail.lineride.guideline import Guideline, KeyOrientationSet, build_guideline

if TYPE_CHECKING:  # pragma: no cover
    from rail.core.data import DataStore


@fixture(name="data_store", scope="session", autouse=True)
def fixture_data_store() -> DataStore:
    data_store = RailStage.data_store
    data_store.__class__.allow_overwrite = True
    return data_store


@fixture(name="seed", scope="session")
def fixture_seed() -> int:
    return 12345


@fixture(name="params", scope="session")
def fixture_params() -> PlanarBikeParams:
    return PlanarBikeParams()


def straight_segment(length: float = 1.0) -> geometry.HermiteSegment:
    return geometry.HermiteSegment(
        (0.0, 0.0, 0.0), (length, 0.0, 0.0), (length, 0.0, 0.0), (length, 0.0, 0.0)
    )


@fixture(name="straight_samples", scope="session")
def fixture_straight_samples() -> geometry.DenseSampling:
    return geometry.sample_dense([straight_segment()], n=1000)


@fixture(name="straight_guideline", scope="session")
def fixture_straight_guideline(straight_samples) -> Guideline:
    return build_guideline(straight_samples, k=5, margin=0.1, name="straight")


@fixture(name="line_guideline", scope="session")
def fixture_line_guideline() -> Guideline:
    # seven waypoints spaced by 0.4 m, d_3 = 1.2 m
    x = np.linspace(0.0, 2.4, 7)
    points = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    return Guideline(points, x.copy(), margin=0.3, name="line")


@fixture(name="env_config")
def fixture_env_config(straight_guideline) -> EnvConfig:
    # short episodes on a quiet robot to keep the environment tests fast
    return EnvConfig(
        guideline=straight_guideline,
        keys=KeyOrientationSet(),
        randomization=RandomizationConfig.disabled(),
        episode_length=1.0,
    )
