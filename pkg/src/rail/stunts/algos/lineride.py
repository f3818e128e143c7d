"""
This file implements all stages required to run the line-guided stunt
laboratory in RAIL. These are:

- LineRideGuideline:
  Authoring a guideline from a preset or from Hermite control points.
- LineRideTrajOpt:
  Solving a trajectory optimisation problem and exporting the result as
  guideline with its pitch key-orientations.
- LineRideTrain:
  Training a stunt policy with PPO in a run directory.
- LineRideEvaluate:
  Measuring stunt success and landing pitch of a trained policy.
- LineRideTrace:
  Replaying one episode of a trained policy as per-step trace table.
"""

from __future__ import annotations

import os
from itertools import chain
from typing import TYPE_CHECKING

from rail.lineride import ppo, presets, stage_config, trajopt
from rail.lineride.dynamics import PlanarBikeParams
from rail.lineride.env import make_env_config
from rail.lineride.guideline import KeyOrientationSet
from rail.lineride.handles import CheckpointHandle, GuidelineHandle, ReportHandle, TraceHandle
from rail.lineride.policy import Checkpoint
from rail.lineride.rundir import RunDirectory, RunManifest
from rail.lineride.utils import LineRideStage, lineride_logged

if TYPE_CHECKING:
    from typing import Any

    from pandas import DataFrame

    from rail.lineride.env import EnvConfig
    from rail.lineride.guideline import Guideline

__all__ = [
    "LineRideEvaluate",
    "LineRideGuideline",
    "LineRideTrace",
    "LineRideTrain",
    "LineRideTrajOpt",
    "create_lineride_alias",
]


def create_lineride_alias(stage: type[LineRideStage], suffix: str) -> dict[str, Any]:
    """
    Create an alias mapping for all in- and outputs of a stunt stage.

    Useful when running the same stage for several stunts, e.g. by setting
    `aliases=create_lineride_alias(LineRideTrain, "hop")`.

    Parameters
    ----------
    stage : type
        The stage class.
    suffix : str
        The suffix to append to the in- and output tags, e.g. `"guideline_hop"`.

    Returns
    -------
    dict
        Mapping from original to aliased in- and output tags.
    """
    keys_in = (key for key, _ in stage.inputs)
    keys_out = (key for key, _ in stage.outputs)
    return {key: f"{key}_{suffix}" for key in chain(keys_in, keys_out)}


class _EnvStageMixin:
    """Shared construction of the environment configuration."""

    def _env_config(self) -> EnvConfig:
        # without a guideline input, the one of the environment file applies
        config = self.get_config_dict()
        guideline = self.get_optional_data("guideline")
        gl, keys = (None, None) if guideline is None else guideline
        return make_env_config(
            config["env_config"],
            gl,
            keys,
            randomize=config["randomize"],
            landing_key_deg=config["landing_key_deg"],
        )


class LineRideGuideline(
    LineRideStage,
    config_items=dict(
        **stage_config.guideline_options,
    ),
):
    """
    Author a guideline from Hermite control points or a named preset.

    Hop presets (`mini-hop`, `large-hop`, `straight`) are built directly from
    their control points, the `backflip` preset runs the trajectory
    optimisation first. Yaw-plane stunts are rejected.
    """

    inputs = []
    outputs = [
        ("output", GuidelineHandle),
    ]

    def author(self) -> GuidelineHandle:
        """
        Create the guideline.

        Returns
        -------
        GuidelineHandle
            A handle for the guideline and its key-orientations.
        """
        self.run()
        return self.get_handle("output")

    @lineride_logged
    def run(self) -> None:
        config = self.get_config_dict()
        if config["control_points"] is not None:
            preset = presets.GUIDELINE_PRESETS["straight"]
            gl = presets.guideline_from_controls(
                config["control_points"],
                k=config["num_waypoints"] or preset.k,
                margin=config["margin"] or preset.margin,
            )
            keys = KeyOrientationSet()
        else:
            gl, keys = presets.preset_guideline(
                config["preset"], k=config["num_waypoints"], margin=config["margin"]
            )
        self.add_data("output", (gl, keys))


class LineRideTrajOpt(
    LineRideStage,
    config_items=dict(
        **stage_config.trajopt_options,
    ),
):
    """
    Wrapper stage for the trajectory optimisation of a stunt.

    The solution is exported as guideline (with the pitch sequence of flips)
    and as a table of the optimised knot states and controls. The stage fails
    if the optimisation does not converge.
    """

    inputs = []
    outputs = [
        ("output", GuidelineHandle),
        ("solution", TraceHandle),
    ]

    def optimize(self) -> dict[str, Any]:
        """
        Solve the configured problem.

        Returns
        -------
        dict
            Handles for the exported guideline (`output`) and the solution
            table (`solution`).
        """
        self.run()
        return {tag: self.get_handle(tag) for tag, _ in self.outputs}

    @lineride_logged
    def run(self) -> None:
        config = self.get_config_dict()
        params = PlanarBikeParams()
        if os.path.exists(config["problem"]):
            problem = trajopt.problem_from_yaml(config["problem"], params)
        else:
            problem = presets.preset_problem(config["problem"], params)

        solution = trajopt.solve(problem, max_iters=config["max_iters"])
        gl, seq = trajopt.export_guideline(solution, config["num_waypoints"], config["margin"])
        keys = KeyOrientationSet(sequences=() if seq is None else (seq,))

        self.add_data("output", (gl, keys))
        self.add_data("solution", solution.to_table())


class LineRideTrain(
    _EnvStageMixin,
    LineRideStage,
    config_items=dict(
        **stage_config.run_dir,
        **stage_config.env_options,
        **stage_config.train_options,
        seed=stage_config.lineride_seed,
    ),
):
    """
    Train a stunt policy with PPO.

    Checkpoints, the metrics log and the run manifest are written to a new run
    directory; the final policy is the stage output.
    """

    inputs = [
        ("guideline", GuidelineHandle),
    ]
    outputs = [
        ("output", CheckpointHandle),
    ]

    def train(
        self, guideline: GuidelineHandle | tuple[Guideline, KeyOrientationSet] | None = None
    ) -> CheckpointHandle:
        """
        Train a policy to drive and perform the stunt of the guideline.

        Parameters
        ----------
        guideline : tuple of Guideline and KeyOrientationSet, optional
            The stunt guideline, replaces the guideline of `env_config`.

        Returns
        -------
        CheckpointHandle
            A handle for the trained policy.
        """
        if guideline is not None:
            self.set_data("guideline", guideline)

        self.run()
        return self.get_handle("output")

    @lineride_logged
    def run(self) -> None:
        config = self.get_config_dict()
        env_config = self._env_config()
        ppo_config = ppo.PPOConfig.from_yaml(
            config["ppo_config"],
            total_steps=config["total_steps"],
            num_envs=config["num_envs"],
            horizon=config["horizon"],
            learning_rate=config["learning_rate"],
            seed=config["seed"],
        )

        run = RunDirectory.create(config["path"], overwrite=config["overwrite"])
        run.write_manifest(
            RunManifest(
                command=type(self).name,
                arguments=self.get_algo_config_dict(),
                config_paths={k: config[k] for k in ("env_config", "ppo_config") if config[k]},
                seed=config["seed"],
            )
        )
        result = ppo.train(env_config, ppo_config, output_dir=run.path)
        self.add_data(
            "output",
            Checkpoint(result.policy, result.normalizer, result.steps, dict(ppo=ppo_config.to_dict())),
        )


class LineRideEvaluate(
    _EnvStageMixin,
    LineRideStage,
    config_items=dict(
        **stage_config.env_options,
        **stage_config.eval_options,
        seed=stage_config.lineride_seed,
    ),
):
    """
    Evaluate a trained policy on seeded episodes with deterministic actions.

    The report lists the stunt success rate, the mean tracking error and the
    landing pitch statistics.
    """

    inputs = [
        ("guideline", GuidelineHandle),
        ("checkpoint", CheckpointHandle),
    ]
    outputs = [
        ("output", ReportHandle),
    ]

    def evaluate(
        self,
        checkpoint: CheckpointHandle | Checkpoint,
        guideline: GuidelineHandle | tuple[Guideline, KeyOrientationSet] | None = None,
    ) -> ReportHandle:
        """
        Run the evaluation episodes.

        Parameters
        ----------
        checkpoint : Checkpoint
            The trained policy.
        guideline : tuple of Guideline and KeyOrientationSet, optional
            The stunt guideline, replaces the guideline of `env_config`.

        Returns
        -------
        ReportHandle
            A handle for the evaluation summary.
        """
        if guideline is not None:
            self.set_data("guideline", guideline)
        self.set_data("checkpoint", checkpoint)

        self.run()
        return self.get_handle("output")

    @lineride_logged
    def run(self) -> None:
        config = self.get_config_dict()
        env_config = self._env_config()
        ckpt: Checkpoint = self.get_data("checkpoint")
        report = ppo.evaluate(ckpt.policy, ckpt.normalizer, env_config, config["episodes"], seed=config["seed"])
        self.add_data("output", report.summary())


class LineRideTrace(
    _EnvStageMixin,
    LineRideStage,
    config_items=dict(
        **stage_config.env_options,
        seed=stage_config.lineride_seed,
    ),
):
    """
    Replay one deterministic episode and export the per-step trace with the
    guideline waypoints overlaid at each stunt trigger.
    """

    inputs = [
        ("guideline", GuidelineHandle),
        ("checkpoint", CheckpointHandle),
    ]
    outputs = [
        ("output", TraceHandle),
    ]

    def trace(
        self,
        checkpoint: CheckpointHandle | Checkpoint,
        guideline: GuidelineHandle | tuple[Guideline, KeyOrientationSet] | None = None,
    ) -> TraceHandle:
        """
        Record the trace of one episode.

        Returns
        -------
        TraceHandle
            A handle for the trace table.
        """
        if guideline is not None:
            self.set_data("guideline", guideline)
        self.set_data("checkpoint", checkpoint)

        self.run()
        return self.get_handle("output")

    @lineride_logged
    def run(self) -> None:
        config = self.get_config_dict()
        env_config = self._env_config()
        ckpt: Checkpoint = self.get_data("checkpoint")
        table: DataFrame = ppo.trace_episode(ckpt.policy, ckpt.normalizer, env_config, seed=config["seed"])[0]
        self.add_data("output", table)
