#!/usr/bin/env python3
#
# This scripts prints the evaluation summary and the stunt segments of the
# trace produced by the example pipeline. Automatically run by run_pipeline.sh
#

# pylint: skip-file
import json
import os

import pandas as pd

with open(os.path.join("data", "output_evaluate.json")) as f:
    summary = json.load(f)
print(json.dumps(summary, indent=2))

trace = pd.read_csv(os.path.join("data", "output_trace.csv"))
stunt = trace[trace["mode"] == "stunt"]
print(f"{len(stunt)} of {len(trace)} trace rows recorded in stunt mode")
print(stunt[["t", "x_com", "z_com", "phi", "reward"]].describe())
