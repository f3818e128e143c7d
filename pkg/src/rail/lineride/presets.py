"""
This file implements the shipped stunt presets.

Hop guidelines are authored as Hermite chains from the stunt's apex height
and span, the flip and the reference problems are trajectory optimisation
problems. Yaw-plane manoeuvres are listed but cannot be produced by the
planar model.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from rail.lineride import trajopt
from rail.lineride.geometry import hermite_chain, quat_from_pitch, sample_dense
from rail.lineride.guideline import (
    DEFAULT_THETA_THRES,
    KeyOrientationSet,
    PositionKeyOrientation,
    build_guideline,
    read_guideline,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike

    from rail.lineride.dynamics import PlanarBikeParams
    from rail.lineride.guideline import Guideline

__all__ = [
    "GUIDELINE_PRESETS",
    "TRAJOPT_PRESETS",
    "UNSUPPORTED_PRESETS",
    "UnsupportedPreset",
    "available_presets",
    "guideline_from_controls",
    "load_guideline",
    "preset_guideline",
    "preset_problem",
    "with_landing_key",
]

logger = logging.getLogger(__name__)

DEFAULT_LANDING_HEIGHT = 0.15
DEFAULT_MARGIN = 0.3
"""Waypoint reach margin (m) shared by all stunt presets."""


class UnsupportedPreset(ValueError):
    """Raised for stunts that require dynamics the planar model lacks."""


@dataclass(frozen=True)
class HopPreset:
    """Symmetric hop of given span and apex height, starting at the origin."""

    span: float
    apex: float
    k: int
    margin: float

    def controls(self) -> tuple[list[ArrayLike], list[ArrayLike]]:
        half = 0.5 * self.span
        points = [(0.0, 0.0, 0.0), (half, 0.0, self.apex), (self.span, 0.0, 0.0)]
        tangents = [
            (half, 0.0, 1.5 * self.apex),
            (half, 0.0, 0.0),
            (half, 0.0, -1.5 * self.apex),
        ]
        return points, tangents


GUIDELINE_PRESETS = {
    "mini-hop": HopPreset(span=0.5, apex=0.32, k=10, margin=DEFAULT_MARGIN),
    "large-hop": HopPreset(span=0.8, apex=0.56, k=12, margin=DEFAULT_MARGIN),
    "straight": HopPreset(span=1.0, apex=0.0, k=5, margin=DEFAULT_MARGIN),
}
"""Guidelines authored from control points."""

TRAJOPT_PRESETS = {
    "rest": trajopt.build_rest_problem,
    "flight": trajopt.build_flight_problem,
    "backflip": trajopt.build_backflip_problem,
}
"""Trajectory optimisation problems, built from model parameters."""

UNSUPPORTED_PRESETS = {
    "three-point-turn": "requires yaw dynamics, which the planar model does not have",
    "drift-turn": "requires yaw dynamics and lateral slip, which the planar model does not have",
}


def available_presets() -> list[str]:
    return sorted({*GUIDELINE_PRESETS, *TRAJOPT_PRESETS, *UNSUPPORTED_PRESETS})


def _check_supported(name: str) -> None:
    if name in UNSUPPORTED_PRESETS:
        raise UnsupportedPreset(f"preset '{name}' is not supported: {UNSUPPORTED_PRESETS[name]}")


def guideline_from_controls(
    points: Sequence[ArrayLike],
    tangents: Sequence[ArrayLike] | None = None,
    *,
    k: int,
    margin: float,
    name: str = "guideline",
    n_dense: int = 1000,
) -> Guideline:
    """
    Author a guideline from Hermite control points.

    Without explicit tangents, finite differences of the control points are
    used, which yields a straight line for two points.
    """
    points_arr = np.asarray(points, dtype=np.float64)
    if points_arr.ndim != 2 or points_arr.shape[1] != 3 or len(points_arr) < 2:
        raise ValueError("at least two control points of shape (3,) are required")
    if tangents is None:
        tangents = np.gradient(points_arr, axis=0)
    chain = hermite_chain(list(points_arr), list(tangents))
    return build_guideline(sample_dense(chain, n_dense), k, margin, name=name)


def preset_problem(name: str, params: PlanarBikeParams) -> trajopt.TrajOptProblem:
    """Trajectory optimisation problem of a preset."""
    _check_supported(name)
    try:
        builder = TRAJOPT_PRESETS[name]
    except KeyError as err:
        raise ValueError(f"no trajectory optimisation preset '{name}'") from err
    return builder(params)


def preset_guideline(
    name: str,
    k: int | None = None,
    margin: float | None = None,
    params: PlanarBikeParams | None = None,
) -> tuple[Guideline, KeyOrientationSet]:
    """
    Guideline and key-orientations of a preset.

    Trajectory optimisation presets are solved first, which requires
    `params`; their export carries the pitch sequence of flips.

    Raises
    ------
    UnsupportedPreset
        For yaw-plane stunts.
    ValueError
        For unknown names or if the optimisation does not converge.
    """
    _check_supported(name)
    if name in GUIDELINE_PRESETS:
        preset = GUIDELINE_PRESETS[name]
        points, tangents = preset.controls()
        gl = guideline_from_controls(
            points,
            tangents,
            k=preset.k if k is None else k,
            margin=preset.margin if margin is None else margin,
            name=name,
        )
        return gl, KeyOrientationSet()

    if params is None:
        from rail.lineride.dynamics import PlanarBikeParams  # pylint: disable=import-outside-toplevel

        params = PlanarBikeParams()
    problem = preset_problem(name, params)
    solution = trajopt.solve(problem)
    gl, seq = trajopt.export_guideline(solution, k or 20, margin or DEFAULT_MARGIN)
    keys = KeyOrientationSet(sequences=(seq,) if seq is not None else ())
    return replace(gl, name=name), keys


def load_guideline(
    source: str, margin: float | None = None
) -> tuple[Guideline, KeyOrientationSet]:
    """
    Load a guideline from a file or, if no such file exists, a preset.

    Parameters
    ----------
    source : str
        Path to a guideline file or a preset name.
    margin : float, optional
        Replaces the margin of the loaded guideline.
    """
    if os.path.exists(source):
        gl, keys = read_guideline(source)
        logger.debug("read guideline '%s' from '%s'", gl.name, source)
    elif source in available_presets():
        gl, keys = preset_guideline(source)
    else:
        raise FileNotFoundError(f"neither a guideline file nor a preset: {source}")
    if margin is not None:
        gl = replace(gl, margin=float(margin))
    return gl, keys


def with_landing_key(
    gl: Guideline,
    keys: KeyOrientationSet,
    pitch_deg: float,
    height: float = DEFAULT_LANDING_HEIGHT,
    theta_thres: float = DEFAULT_THETA_THRES,
) -> KeyOrientationSet:
    """
    Add a position key-orientation with the given landing pitch.

    The key is anchored at the waypoint after the apex whose height is
    closest to `height`.
    """
    apex = int(np.argmax(gl.points[:, 2]))
    descent = np.arange(apex + 1, len(gl)) if apex < gl.last_index else np.array([gl.last_index])
    anchor = int(descent[np.argmin(np.abs(gl.points[descent, 2] - height))])
    key = PositionKeyOrientation(anchor, quat_from_pitch(np.radians(pitch_deg)), theta_thres)
    return replace(keys, positions=keys.positions + (key,))
