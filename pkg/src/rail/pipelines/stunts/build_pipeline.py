#!/usr/bin/env python3
#
# This script produces a pipeline file that authors the mini-hop guideline,
# trains a policy on it, and evaluates and traces the trained policy.
#

# coverage is excluded since the code is run in an external interpreter
# pylint: skip-file
import argparse
import os
from shutil import rmtree

import rail.stages
from rail.core.stage import RailPipeline, RailStage

rail.stages.import_and_attach_all()
from rail.stages import *

try:
    LineRideGuideline
except NameError:
    from rail.stunts.algos.lineride import *


VERBOSE = "debug"  # verbosity level of built-in logger, disable with "error"

parser = argparse.ArgumentParser(
    description="Build the rail_lineride ceci example pipeline."
)
parser.add_argument("--root", default=".")
parser.add_argument(
    "--total-steps",
    type=int,
    default=200_000,
    help="training budget, the default is a quick demonstration",
)

# configuration shared by the stages that run the environment
env_config = dict(
    landing_key_deg=17.0,
    randomize=True,
    seed=12345,
    verbose=VERBOSE,
)


class StuntPipeline(RailPipeline):  # pragma: no cover

    def __init__(self, data_dir, total_steps):
        super().__init__()

        DS = RailStage.data_store
        DS.__class__.allow_overwrite = True

        self.guideline = LineRideGuideline.build(
            preset="mini-hop",
            verbose=VERBOSE,
        )

        self.train = LineRideTrain.build(
            connections=dict(
                guideline=self.guideline.io.output,
            ),
            path=os.path.join(data_dir, "train_run"),
            overwrite=True,
            total_steps=total_steps,
            num_envs=16,
            horizon=256,
            **env_config,
        )

        self.evaluate = LineRideEvaluate.build(
            connections=dict(
                guideline=self.guideline.io.output,
                checkpoint=self.train.io.output,
            ),
            episodes=20,
            **env_config,
        )

        self.trace = LineRideTrace.build(
            connections=dict(
                guideline=self.guideline.io.output,
                checkpoint=self.train.io.output,
            ),
            **env_config,
        )


if __name__ == "__main__":  # pragma: no cover
    args = parser.parse_args()
    root = args.root
    print(f"setting working directory: {root}")
    if not os.path.exists(root):
        os.mkdir(root)

    data_dir = os.path.join(root, "data")
    log_dir = os.path.join(root, "logs")
    for folder in (data_dir, log_dir):
        if os.path.exists(folder):
            rmtree(folder)
        os.mkdir(folder)

    pipe = StuntPipeline(data_dir, args.total_steps)
    pipe.initialize(
        overall_inputs=dict(),
        run_config=dict(output_dir=data_dir, log_dir=log_dir, resume=False),
        stages_config=None,
    )
    pipe.save(os.path.join(root, "stunt_pipeline.yml"), site_name="local")
