"""
This file implements the stage parameters of the stunt stages, grouped by the
stages that use them.
"""

from __future__ import annotations

from ceci.config import StageParameter

__all__ = [
    "env_options",
    "eval_options",
    "guideline_options",
    "lineride_seed",
    "lineride_verbose",
    "run_dir",
    "train_options",
    "trajopt_options",
]


#### all stages ####

lineride_verbose = StageParameter(
    str,
    required=False,
    default="info",
    msg="lowest log level emitted by the stunt stages",
)
"""Stage parameter for the logging level."""


#### shared ####

lineride_seed = StageParameter(
    int,
    required=False,
    default=12345,
    msg="random seed of environments and training",
)
"""Stage parameter for the random seed."""

run_dir = dict(
    path=StageParameter(
        str, required=True, msg="path to run directory, must not exist"
    ),
    overwrite=StageParameter(
        bool,
        required=False,
        default=False,
        msg="overwrite the path if it is an existing run directory",
    ),
)
"""Stage parameters to specify the run directory."""

env_options = dict(
    env_config=StageParameter(
        str,
        required=False,
        msg="path to a YAML environment configuration file",
    ),
    landing_key_deg=StageParameter(
        float,
        required=False,
        msg="pitch (degrees) of an optional landing key-orientation",
    ),
    randomize=StageParameter(
        bool,
        required=False,
        default=True,
        msg="whether to apply domain randomisation",
    ),
)
"""Stage parameters to configure the environment."""


#### LineRideGuideline ####

guideline_options = dict(
    preset=StageParameter(
        str,
        required=False,
        default="mini-hop",
        msg="name of the guideline preset, ignored if control points are given",
    ),
    control_points=StageParameter(
        list,
        required=False,
        msg="Hermite control points as list of [x, y, z] in metres",
    ),
    num_waypoints=StageParameter(
        int,
        required=False,
        msg="number of waypoints, defaults to the preset's value",
    ),
    margin=StageParameter(
        float,
        required=False,
        msg="waypoint reach margin in metres, defaults to the preset's value",
    ),
)
"""Stage parameters to author a guideline."""


#### LineRideTrajOpt ####

trajopt_options = dict(
    problem=StageParameter(
        str,
        required=False,
        default="backflip",
        msg="name of a trajectory optimisation preset or path to a YAML problem file",
    ),
    max_iters=StageParameter(
        int,
        required=False,
        default=50,
        msg="maximum number of outer augmented-Lagrangian iterations",
    ),
    num_waypoints=StageParameter(
        int,
        required=False,
        default=20,
        msg="number of waypoints of the exported guideline",
    ),
    margin=StageParameter(
        float,
        required=False,
        default=0.3,
        msg="waypoint reach margin of the exported guideline in metres",
    ),
)
"""Stage parameters to run the trajectory optimisation."""


#### LineRideTrain ####

train_options = dict(
    total_steps=StageParameter(
        int,
        required=False,
        default=5_000_000,
        msg="number of environment steps summed over all environments",
    ),
    num_envs=StageParameter(
        int,
        required=False,
        default=64,
        msg="number of parallel environments",
    ),
    horizon=StageParameter(
        int,
        required=False,
        default=512,
        msg="rollout length per environment and update",
    ),
    learning_rate=StageParameter(
        float,
        required=False,
        default=3e-4,
        msg="Adam step size",
    ),
    ppo_config=StageParameter(
        str,
        required=False,
        msg="path to a YAML file with further PPO hyperparameters",
    ),
)
"""Stage parameters to configure the training."""


#### LineRideEvaluate ####

eval_options = dict(
    episodes=StageParameter(
        int,
        required=False,
        default=100,
        msg="number of seeded evaluation episodes",
    ),
)
"""Stage parameters to configure the evaluation."""
