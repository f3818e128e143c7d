"""
This file implements the `lineride` command line interface.

Every command writes its outputs into a new run directory together with a
manifest, from which the command can be repeated with `lineride rerun`.
Exit codes are 0 on success, 1 on usage errors (including invalid inputs and
missing files) and 2 if the optimisation does not converge or training
fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import TYPE_CHECKING

from pandas import DataFrame

from rail.lineride import ppo, presets, trajopt
from rail.lineride.dynamics import PlanarBikeParams, SimulationFault
from rail.lineride.env import make_env_config
from rail.lineride.guideline import KeyOrientationSet, write_guideline
from rail.lineride.policy import load_checkpoint
from rail.lineride.rundir import RunDirectory, RunManifest
from rail.lineride.utils import init_logger, remove_handlers

if TYPE_CHECKING:
    from collections.abc import Sequence

    from rail.lineride.guideline import Guideline

__all__ = [
    "EXIT_FAILURE",
    "EXIT_SUCCESS",
    "EXIT_USAGE",
    "build_parser",
    "main",
]

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    """Invalid command line input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_points(text: str) -> list[list[float]]:
    """Parse `"x,y,z;x,y,z;..."` into a list of 3-vectors."""
    try:
        points = [[float(v) for v in item.split(",")] for item in text.split(";") if item.strip()]
    except ValueError as err:
        raise UsageError(f"invalid point list: '{text}'") from err
    if any(len(p) != 3 for p in points):
        raise UsageError("every point requires three comma-separated coordinates")
    return points


def waypoint_table(gl: Guideline) -> DataFrame:
    table = DataFrame(gl.points, columns=["x", "y", "z"])
    table["d"] = gl.distances
    table.index.name = "waypoint"
    return table


def _load_guideline(source: str) -> tuple[Guideline, KeyOrientationSet]:
    try:
        return presets.load_guideline(source)
    except FileNotFoundError as err:
        raise UsageError(str(err)) from err


def _load_checkpoint(path: str):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _env_config(args: argparse.Namespace):
    gl, keys = _load_guideline(args.guideline)
    return make_env_config(
        args.env_config,
        gl,
        keys,
        randomize=not args.no_randomize,
        landing_key_deg=args.landing_key_deg,
    )


def cmd_guideline(args: argparse.Namespace, run: RunDirectory) -> int:
    if args.points is not None:
        points = parse_points(args.points)
        tangents = None if args.tangents is None else parse_points(args.tangents)
        if tangents is not None and len(tangents) != len(points):
            raise UsageError("number of tangents must match the number of points")
        default = presets.GUIDELINE_PRESETS["straight"]
        gl = presets.guideline_from_controls(
            points,
            tangents,
            k=args.num_waypoints or default.k,
            margin=args.margin or default.margin,
            name=args.name,
        )
        keys = KeyOrientationSet()
    else:
        gl, keys = presets.preset_guideline(args.preset, k=args.num_waypoints, margin=args.margin)
    if args.landing_key_deg is not None:
        keys = presets.with_landing_key(gl, keys, args.landing_key_deg)

    path = run.file("guideline.json")
    write_guideline(path, gl, keys)
    print(waypoint_table(gl).to_string(float_format=lambda v: f"{v:.4f}"))
    print(f"wrote guideline '{gl.name}' with {len(gl)} waypoints to '{path}'")
    return EXIT_SUCCESS


def cmd_trajopt(args: argparse.Namespace, run: RunDirectory) -> int:
    params = PlanarBikeParams()
    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"problem configuration not found: {args.config}")
        problem = trajopt.problem_from_yaml(args.config, params)
    else:
        problem = presets.preset_problem(args.preset, params)

    solution = trajopt.solve(problem, max_iters=args.max_iters)
    solution.to_table().to_csv(run.file("solution.csv"), index=False)
    report = solution.report()
    with open(run.file("report.json"), "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    for key, value in report.items():
        print(f"{key:>14s}: {value}")

    if not solution.converged:
        logger.error("optimisation did not converge, max defect %.3e", solution.max_defect)
        return EXIT_FAILURE
    try:
        gl, seq = trajopt.export_guideline(solution, args.num_waypoints, args.margin)
    except trajopt.EmptyPathError:
        logger.info("solution does not move the base, no guideline exported")
        return EXIT_SUCCESS
    keys = KeyOrientationSet(sequences=() if seq is None else (seq,))
    write_guideline(run.file("guideline.json"), gl, keys)
    return EXIT_SUCCESS


def cmd_train(args: argparse.Namespace, run: RunDirectory) -> int:
    env_config = _env_config(args)
    config = ppo.PPOConfig.from_yaml(
        args.ppo_config,
        total_steps=args.total_steps,
        num_envs=args.num_envs,
        horizon=args.horizon,
        seed=args.seed,
    )
    try:
        result = ppo.train(env_config, config, output_dir=run.path)
    except (ppo.TrainingFault, SimulationFault) as err:
        logger.error("training failed: %s", err)
        return EXIT_FAILURE
    print(f"trained for {result.steps} steps, final checkpoint in '{result.checkpoints[-1]}'")
    return EXIT_SUCCESS


def print_eval_summary(summary: dict) -> None:
    pitch = summary["landing_pitch"]
    rows = [
        ("episodes", f"{summary['episodes']}"),
        ("stunts completed", f"{summary['stunts_completed']} / {summary['stunt_triggers']}"),
        ("success rate", f"{summary['success_rate']:.3f}"),
        ("tracking error [m]", f"{summary['mean_tracking_error']:.4f}"),
        ("landings measured", f"{pitch['count']}"),
        ("landing pitch median [deg]", f"{pitch['median']:.1f}"),
        ("landing pitch mean [deg]", f"{pitch['mean']:.1f} +- {pitch['std']:.1f}"),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}s}  {value}")


def cmd_eval(args: argparse.Namespace, run: RunDirectory) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    env_config = _env_config(args)
    report = ppo.evaluate(ckpt.policy, ckpt.normalizer, env_config, args.episodes, seed=args.seed)
    report.to_table().to_csv(run.file("episodes.csv"), index=False)
    summary = report.summary()
    with open(run.file("summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    print_eval_summary(summary)
    return EXIT_SUCCESS


def cmd_trace(args: argparse.Namespace, run: RunDirectory) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    env_config = _env_config(args)
    table, episode = ppo.trace_episode(ckpt.policy, ckpt.normalizer, env_config, seed=args.seed)
    path = run.file("trace.csv")
    table.to_csv(path, index=False)
    print(f"wrote {episode.steps} steps ({episode.stunts_completed} stunts) to '{path}'")
    return EXIT_SUCCESS


COMMANDS = {
    "guideline": cmd_guideline,
    "trajopt": cmd_trajopt,
    "train": cmd_train,
    "eval": cmd_eval,
    "trace": cmd_trace,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-o", "--output-dir", required=True, help="run directory, must not exist")
    parser.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    parser.add_argument("--seed", type=int, default=12345, help="random seed")
    parser.add_argument("-v", "--verbose", default="info", help="lowest log level to print")


def _add_env(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--guideline", default="mini-hop", help="guideline file or preset name")
    parser.add_argument("--env-config", help="YAML environment configuration")
    parser.add_argument("--landing-key-deg", type=float, help="add a landing pitch key-orientation")
    parser.add_argument("--no-randomize", action="store_true", help="disable domain randomisation")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lineride", description="Line-guided stunt laboratory for a planar bicycle robot.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("guideline", help="author a guideline from control points or a preset")
    _add_common(p)
    source = p.add_mutually_exclusive_group()
    source.add_argument("--preset", default="mini-hop", help=f"one of {presets.available_presets()}")
    source.add_argument("--points", help="Hermite control points 'x,y,z;x,y,z;...'")
    p.add_argument("--tangents", help="tangents at the control points, same format as --points")
    p.add_argument("-k", "--num-waypoints", type=int, help="number of waypoints")
    p.add_argument("--margin", type=float, help="waypoint reach margin [m]")
    p.add_argument("--name", default="guideline", help="name stored in the guideline file")
    p.add_argument("--landing-key-deg", type=float, help="add a landing pitch key-orientation")

    p = sub.add_parser("trajopt", help="optimise a stunt trajectory and export its guideline")
    _add_common(p)
    source = p.add_mutually_exclusive_group()
    source.add_argument("--preset", default="backflip", help=f"one of {sorted(presets.TRAJOPT_PRESETS)}")
    source.add_argument("--config", help="YAML problem configuration")
    p.add_argument("--max-iters", type=int, default=50, help="outer iterations")
    p.add_argument("-k", "--num-waypoints", type=int, default=20, help="waypoints of the export")
    p.add_argument("--margin", type=float, default=0.3, help="waypoint reach margin [m]")

    p = sub.add_parser("train", help="train a policy with PPO")
    _add_common(p)
    _add_env(p)
    p.add_argument("--ppo-config", help="YAML file with PPO hyperparameters")
    p.add_argument("--total-steps", type=int, help="environment steps")
    p.add_argument("--num-envs", type=int, help="parallel environments")
    p.add_argument("--horizon", type=int, help="rollout length per environment")

    for name, text in (("eval", "evaluate a checkpoint"), ("trace", "record an episode trace")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_env(p)
        p.add_argument("--checkpoint", required=True, help="checkpoint file")
        if name == "eval":
            p.add_argument("--episodes", type=int, default=100, help="number of episodes")

    p = sub.add_parser("rerun", help="repeat the command recorded in a run manifest")
    p.add_argument("manifest", help="path to manifest.json")
    p.add_argument("-o", "--output-dir", required=True, help="new run directory, must not exist")
    p.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    return parser


def _namespace_from_manifest(args: argparse.Namespace) -> argparse.Namespace:
    if not os.path.exists(args.manifest):
        raise UsageError(f"manifest not found: {args.manifest}")
    with open(args.manifest) as f:
        manifest = RunManifest.from_json(f.read())
    if manifest.command not in COMMANDS:
        raise UsageError(f"manifest records unknown command '{manifest.command}'")
    arguments = dict(manifest.arguments, output_dir=args.output_dir, overwrite=args.overwrite)
    return argparse.Namespace(command=manifest.command, **arguments)


def run_command(args: argparse.Namespace) -> int:
    if args.command == "rerun":
        args = _namespace_from_manifest(args)
    run = RunDirectory.create(args.output_dir, overwrite=args.overwrite)
    arguments = {k: v for k, v in vars(args).items() if k != "command"}
    config_paths = {
        key: arguments[key]
        for key in ("config", "env_config", "ppo_config", "checkpoint", "guideline")
        if arguments.get(key) is not None and os.path.exists(arguments[key])
    }
    run.write_manifest(
        RunManifest(args.command, arguments=arguments, config_paths=config_paths, seed=args.seed)
    )
    return COMMANDS[args.command](args, run)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the `lineride` console script, returns the exit code."""
    args = build_parser().parse_args(argv)
    log = init_logger(getattr(args, "verbose", "info"))
    try:
        return run_command(args)
    except (UsageError, ValueError, OSError) as err:
        print(f"lineride: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        remove_handlers(log)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
