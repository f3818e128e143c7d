from __future__ import annotations

import inspect
import json
from subprocess import check_call

import yaml
from pandas import DataFrame
from pytest import fixture, mark, raises

from rail.lineride import dynamics, presets
from rail.lineride.policy import Checkpoint
from rail.lineride.rundir import RunDirectory
from rail.stunts.algos import lineride


def test_create_lineride_alias():
    name = "test"
    aliases = lineride.create_lineride_alias(lineride.LineRideTrain, name)
    assert set(aliases) == {"guideline", "output"}
    assert all(alias == f"{key}_{name}" for key, alias in aliases.items())


@fixture(name="config_files")
def fixture_config_files(tmp_path) -> dict[str, str]:
    env_path = tmp_path / "env.yml"
    env_path.write_text(yaml.safe_dump(dict(episode_length=0.2)))
    ppo_path = tmp_path / "ppo.yml"
    ppo_path.write_text(yaml.safe_dump(dict(minibatch_size=8, epochs=1, policy=dict(hidden=[8]))))
    return dict(env_config=str(env_path), ppo_config=str(ppo_path))


class TestLineRideGuideline:
    def test_preset(self):
        handle = lineride.LineRideGuideline.make_stage(
            name="guideline_preset",
            aliases=lineride.create_lineride_alias(lineride.LineRideGuideline, "preset"),
            preset="large-hop",
        ).author()
        gl, keys = handle.data
        assert gl.name == "large-hop"
        assert len(gl) == 12
        assert not keys

    def test_control_points(self):
        handle = lineride.LineRideGuideline.make_stage(
            name="guideline_points",
            aliases=lineride.create_lineride_alias(lineride.LineRideGuideline, "points"),
            control_points=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.5], [2.0, 0.0, 0.0]],
            num_waypoints=7,
            margin=0.2,
        ).author()
        gl, _ = handle.data
        assert len(gl) == 7
        assert gl.margin == 0.2
        assert gl.points[:, 2].max() > 0.4

    def test_unsupported(self):
        stage = lineride.LineRideGuideline.make_stage(
            name="guideline_turn",
            aliases=lineride.create_lineride_alias(lineride.LineRideGuideline, "turn"),
            preset="drift-turn",
        )
        with raises(presets.UnsupportedPreset):
            stage.author()


def test_trajopt_stage():
    handles = lineride.LineRideTrajOpt.make_stage(
        name="trajopt_flight",
        aliases=lineride.create_lineride_alias(lineride.LineRideTrajOpt, "flight"),
        problem="flight",
        num_waypoints=8,
        margin=0.1,
    ).optimize()
    gl, keys = handles["output"].data
    assert len(gl) == 8
    assert not keys  # no pitch sweep
    solution = handles["solution"].data
    assert isinstance(solution, DataFrame)
    assert len(solution) == 21


def test_policy_stages(tmp_path, config_files):
    guideline = lineride.LineRideGuideline.make_stage(
        name="guideline_chain",
        aliases=lineride.create_lineride_alias(lineride.LineRideGuideline, "chain"),
        preset="mini-hop",
    ).author()

    env_kwargs = dict(env_config=config_files["env_config"], randomize=False, landing_key_deg=17.0)
    path = tmp_path / "train_run"
    checkpoint = lineride.LineRideTrain.make_stage(
        name="train_chain",
        aliases=lineride.create_lineride_alias(lineride.LineRideTrain, "chain"),
        path=str(path),
        total_steps=16,
        num_envs=2,
        horizon=8,
        ppo_config=config_files["ppo_config"],
        **env_kwargs,
    ).train(guideline=guideline)
    assert isinstance(checkpoint.data, Checkpoint)
    assert checkpoint.data.step == 16
    assert (path / "policy.hdf5").exists()
    manifest = RunDirectory(str(path)).read_manifest()
    assert manifest.command == "LineRideTrain"
    assert manifest.arguments["total_steps"] == 16

    report = lineride.LineRideEvaluate.make_stage(
        name="evaluate_chain",
        aliases=lineride.create_lineride_alias(lineride.LineRideEvaluate, "chain"),
        episodes=2,
        **env_kwargs,
    ).evaluate(guideline=guideline, checkpoint=checkpoint)
    assert report.data["episodes"] == 2
    assert report.data["success_rate"] == 0.0

    trace = lineride.LineRideTrace.make_stage(
        name="trace_chain",
        aliases=lineride.create_lineride_alias(lineride.LineRideTrace, "chain"),
        **env_kwargs,
    ).trace(guideline=guideline, checkpoint=checkpoint)
    assert list(trace.data.columns[: len(dynamics.TRACE_COLUMNS)]) == list(dynamics.TRACE_COLUMNS)
    assert len(trace.data) > 0


def test_train_guideline_from_env_config(tmp_path, config_files):
    env_path = tmp_path / "env_hop.yml"
    env_path.write_text(yaml.safe_dump(dict(episode_length=0.2, guideline="large-hop")))
    stage = lineride.LineRideTrain.make_stage(
        name="train_envfile",
        aliases=lineride.create_lineride_alias(lineride.LineRideTrain, "envfile"),
        path=str(tmp_path / "train_run"),
        total_steps=16,
        num_envs=2,
        horizon=8,
        ppo_config=config_files["ppo_config"],
        env_config=str(env_path),
        randomize=False,
    )
    # no guideline input is connected
    assert stage.get_optional_data("guideline") is None
    assert stage._env_config().guideline.name == "large-hop"

    checkpoint = stage.train()
    assert checkpoint.data.step == 16


@mark.slow
def test_ceci_pipeline(tmp_path) -> None:
    # build and run the example pipeline in a temporary directory
    from rail.pipelines.stunts import (  # pylint: disable=C0415
        build_pipeline as pipeline_build_script,
    )

    build_script = inspect.getfile(pipeline_build_script)

    DEBUG_LOG_PATH = "/dev/null"
    with open(DEBUG_LOG_PATH, "w") as f:
        redirect = dict(stdout=f, stderr=f)
        check_call(
            ["python3", str(build_script), "--root", str(tmp_path), "--total-steps", "2048"],
            **redirect,
        )
        check_call(["ceci", str(tmp_path / "stunt_pipeline.yml")], **redirect)

    with open(tmp_path / "data" / "output_evaluate.json") as f:
        summary = json.load(f)
    assert summary["episodes"] == 20
    assert 0.0 <= summary["success_rate"] <= 1.0
    assert (tmp_path / "data" / "output_trace.csv").exists()
