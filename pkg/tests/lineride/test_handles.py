from __future__ import annotations

import numpy as np
import torch
from numpy.testing import assert_array_equal
from pandas import DataFrame
from pandas.testing import assert_frame_equal

from rail.lineride import handles
from rail.lineride.guideline import KeyOrientationSet
from rail.lineride.policy import ActorCritic, Checkpoint, PolicySpec, RunningMeanStd


def test_GuidelineHandle(tmp_path, straight_guideline):
    path = tmp_path / "guideline.json"
    handle = handles.GuidelineHandle("guideline", (straight_guideline, KeyOrientationSet()), path=path)

    handle.write()  # ._write()
    f = handle.open()  # ._open()
    f.close()
    gl, keys = handle.read(force=True)  # ._read()
    assert_array_equal(gl.points, straight_guideline.points)
    assert gl.name == "straight"
    assert not keys


def test_CheckpointHandle(tmp_path, seed):
    path = tmp_path / "policy.hdf5"
    policy = ActorCritic(PolicySpec(hidden=(8,)), seed=seed)
    ckpt = Checkpoint(policy, RunningMeanStd(), step=3, metadata=dict(a=1))
    handle = handles.CheckpointHandle("checkpoint", ckpt, path=path)

    handle.write()
    f = handle.open(mode="r")
    f.close()
    restored = handle.read(force=True)
    assert restored.step == 3
    assert restored.metadata == dict(a=1)
    assert torch.equal(restored.policy.log_std, policy.log_std)


def test_TraceHandle(tmp_path):
    path = tmp_path / "trace.csv"
    table = DataFrame(dict(t=[0.0, 0.02], mode=["driving", "stunt"]))
    handle = handles.TraceHandle("trace", table, path=path)

    handle.write()
    assert_frame_equal(handle.read(force=True), table)


def test_ReportHandle(tmp_path):
    path = tmp_path / "summary.json"
    report = dict(episodes=2, success_rate=0.5, landing_pitch=dict(count=1, median=17.0))
    handle = handles.ReportHandle("report", report, path=path)

    handle.write()
    assert handle.read(force=True) == report
    assert np.isclose(handle.read(force=True)["landing_pitch"]["median"], 17.0)
