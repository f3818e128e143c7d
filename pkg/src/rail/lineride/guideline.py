"""
This file implements the task description of a stunt: the guideline of
waypoints with cumulative arc-lengths, the reach margin, the traveled-distance
termination rule, and the position- and sequence-based key-orientations.

All positions are expressed in the robot frame at the moment the stunt is
triggered. Waypoint indices are zero-based.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from rail.lineride.geometry import UnitQuaternion, as_vec3, quat_angle

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from rail.lineride.geometry import DenseSampling

__all__ = [
    "FORMAT_VERSION",
    "Guideline",
    "GuidelineProgress",
    "GuidelineTracker",
    "KeyOrientationSet",
    "OrientationSequence",
    "PositionKeyOrientation",
    "ProgressEvent",
    "ProgressKind",
    "SequenceTolerances",
    "TerminationVerdict",
    "advance",
    "build_guideline",
    "check_termination",
    "key_is_active",
    "line_reward",
    "pos_key_reward",
    "read_guideline",
    "seq_key_reward",
    "write_guideline",
]

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
"""Schema version of the guideline file format."""

DEFAULT_THETA_THRES = 1.0
"""Default orientation error (radian) beyond which a position key terminates."""


class TerminationVerdict(Enum):
    CONTINUE = "continue"
    TERMINATE = "terminate"

    def __bool__(self) -> bool:
        return self is TerminationVerdict.TERMINATE


class ProgressKind(Enum):
    NO_CHANGE = "no_change"
    ADVANCED = "advanced"
    FINISHED = "finished"


class ProgressEvent(NamedTuple):
    """Outcome of `advance`; `count` is the number of waypoints passed."""

    kind: ProgressKind
    count: int = 0


@dataclass(frozen=True)
class Guideline:
    """
    Ordered waypoints with their cumulative arc-lengths and a reach margin.

    Parameters
    ----------
    points : array-like
        Waypoint positions, shape `(n, 3)`, `n >= 2`.
    distances : array-like
        Cumulative arc-length `d_i` of each waypoint, strictly increasing
        and non-negative.
    margin : float
        Distance below which a waypoint counts as reached.
    name : str, optional
        Descriptive name written to guideline files.
    """

    points: NDArray
    distances: NDArray
    margin: float
    name: str = "guideline"
    frame: str = "robot-local-at-trigger"

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64)
        distances = np.array(self.distances, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("waypoints must have shape (n, 3)")
        if len(points) < 2:
            raise ValueError("a guideline requires at least two waypoints")
        if distances.shape != (len(points),):
            raise ValueError("need exactly one cumulative distance per waypoint")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(distances))):
            raise ValueError("waypoints and distances must be finite")
        if distances[0] < 0.0:
            raise ValueError("cumulative distances must be non-negative")
        if np.any(np.diff(distances) <= 0.0):
            raise ValueError("cumulative distances must be strictly increasing")
        if not self.margin > 0.0:
            raise ValueError("margin must be positive")
        points.flags.writeable = False
        distances.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "distances", distances)
        object.__setattr__(self, "margin", float(self.margin))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def last_index(self) -> int:
        return len(self.points) - 1

    def distance_to(self, index: int, x: ArrayLike) -> float:
        """Euclidean distance between a position and waypoint `index`."""
        return float(np.linalg.norm(as_vec3(x) - self.points[index]))

    def nearest_index(self, x: ArrayLike) -> int:
        """Index of the waypoint closest to a position."""
        return int(np.argmin(np.linalg.norm(self.points - as_vec3(x), axis=1)))


@dataclass(frozen=True)
class PositionKeyOrientation:
    """
    Target orientation attached to a waypoint.

    Parameters
    ----------
    anchor_index : int
        Index of the waypoint the orientation is attached to.
    q : UnitQuaternion
        Target orientation.
    theta_thres : float, optional
        Orientation error (radian) in `(0, pi]` that terminates the episode.
    """

    anchor_index: int
    q: UnitQuaternion
    theta_thres: float = DEFAULT_THETA_THRES

    def __post_init__(self) -> None:
        if self.anchor_index < 0:
            raise ValueError("anchor index must be non-negative")
        if not 0.0 < self.theta_thres <= np.pi:
            raise ValueError("theta_thres must be in (0, pi]")
        object.__setattr__(self, "q", UnitQuaternion.normalized(self.q))


@dataclass(frozen=True)
class OrientationSequence:
    """
    Ordered target orientations between two anchored key-orientations.

    The intermediate targets carry no position; the robot is expected to
    approach them one after another, followed by the end key's orientation.
    """

    start: PositionKeyOrientation
    intermediates: tuple[UnitQuaternion, ...]
    end: PositionKeyOrientation

    def __post_init__(self) -> None:
        if self.start.anchor_index >= self.end.anchor_index:
            raise ValueError("sequence start anchor must precede its end anchor")
        if len(self.intermediates) == 0:
            raise ValueError("sequence requires at least one intermediate orientation")
        object.__setattr__(
            self,
            "intermediates",
            tuple(UnitQuaternion.normalized(q) for q in self.intermediates),
        )

    @property
    def targets(self) -> tuple[UnitQuaternion, ...]:
        """All orientations visited in order after the start anchor."""
        return self.intermediates + (self.end.q,)

    def is_active(self, active_index: int) -> bool:
        """Whether the sequence is tracked while `active_index` is the target."""
        return self.start.anchor_index < active_index <= self.end.anchor_index


@dataclass(frozen=True)
class KeyOrientationSet:
    """All key-orientations attached to one guideline."""

    positions: tuple[PositionKeyOrientation, ...] = ()
    sequences: tuple[OrientationSequence, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.positions) or bool(self.sequences)

    def validate(self, gl: Guideline) -> None:
        """Check that every anchor refers to a waypoint of the guideline."""
        anchors = [key.anchor_index for key in self.all_position_keys()]
        if any(a > gl.last_index for a in anchors):
            raise ValueError("key-orientation anchor exceeds the number of waypoints")

    def all_position_keys(self) -> list[PositionKeyOrientation]:
        """Stand-alone keys plus the start/end keys of every sequence."""
        keys = list(self.positions)
        for seq in self.sequences:
            keys.extend((seq.start, seq.end))
        return keys


@dataclass(frozen=True)
class SequenceTolerances:
    """
    Tolerances of the sequence-based key-orientation tracking.

    Parameters
    ----------
    capture : float
        Angle (radian) below which the current target counts as reached.
    hysteresis : float
        Allowed per-step increase (radian) of the orientation error before
        the monotonicity check terminates.
    """

    capture: float = 0.2
    hysteresis: float = 0.05

    def __post_init__(self) -> None:
        if self.capture <= 0.0 or self.hysteresis < 0.0:
            raise ValueError("capture must be positive and hysteresis non-negative")


@dataclass
class GuidelineProgress:
    """Mutable per-episode tracking state of one guideline."""

    active_index: int = 0
    traveled: float = 0.0
    prev_dist_to_goal: float = float("nan")
    active_seq_target: int | None = None
    prev_theta_diff: float | None = None
    finished: bool = False

    def reset(self) -> None:
        self.active_index = 0
        self.traveled = 0.0
        self.prev_dist_to_goal = float("nan")
        self.active_seq_target = None
        self.prev_theta_diff = None
        self.finished = False


def build_guideline(
    samples: DenseSampling, k: int, margin: float, name: str = "guideline"
) -> Guideline:
    """
    Resample a dense curve into `k` waypoints at equal arc-length spacing.

    The first and last dense samples are always included, every waypoint
    carries its cumulative arc-length as `d_i`.

    Parameters
    ----------
    samples : DenseSampling
        Densely sampled curve.
    k : int
        Number of waypoints, `2 <= k <= len(samples)`.
    margin : float
        Reach margin of the guideline.
    name : str, optional
        Name of the guideline.

    Returns
    -------
    Guideline
        The resampled guideline.

    Raises
    ------
    ValueError
        If `k` is out of range or the margin is not positive. Also raised for
        a curve of zero length.
    """
    cum = samples.cum_lengths
    if not 2 <= k <= len(samples):
        raise ValueError(f"number of waypoints must be in [2, {len(samples)}]")
    if not margin > 0.0:
        raise ValueError("margin must be positive")
    if cum[-1] <= 0.0:
        raise ValueError("cannot build a guideline from a curve of zero length")

    targets = np.linspace(0.0, cum[-1], k)
    upper = np.clip(np.searchsorted(cum, targets), 1, len(cum) - 1)
    lower = upper - 1
    index = np.where(targets - cum[lower] <= cum[upper] - targets, lower, upper)
    index[0], index[-1] = 0, len(cum) - 1

    # resolve collisions of coarse samplings so that d_i is strictly increasing
    selected = [int(index[0])]
    for i in index[1:]:
        candidate = max(int(i), selected[-1] + 1)
        while candidate < len(cum) - 1 and cum[candidate] <= cum[selected[-1]]:
            candidate += 1
        selected.append(min(candidate, len(cum) - 1))
    selected[-1] = len(cum) - 1
    selected = np.asarray(selected)

    logger.debug("resampled %d dense points into %d waypoints", len(cum), k)
    return Guideline(samples.points[selected], cum[selected], margin, name=name)


def line_reward(
    progress: GuidelineProgress, x_prev: ArrayLike, x_now: ArrayLike, gl: Guideline
) -> float:
    """
    Reward the reduction of the distance to the active waypoint.

    Returns `-(|x_now - p_goal| - |x_prev - p_goal|)`, which is positive when
    approaching the target and zero once the guideline is finished.
    """
    if progress.finished:
        return 0.0
    goal = gl.points[progress.active_index]
    dist_now = float(np.linalg.norm(as_vec3(x_now) - goal))
    dist_prev = float(np.linalg.norm(as_vec3(x_prev) - goal))
    return -(dist_now - dist_prev)


def advance(
    progress: GuidelineProgress, x_now: ArrayLike, step_displacement: float, gl: Guideline
) -> ProgressEvent:
    """
    Accumulate the traveled distance and move the active target forward.

    Every waypoint strictly inside the margin is passed in the same call.
    Reaching the last waypoint finishes the guideline, which is absorbing.

    Parameters
    ----------
    progress : GuidelineProgress
        Tracking state, modified in place.
    x_now : array-like
        Current base position.
    step_displacement : float
        Distance traveled by the base during the last step, non-negative.
    gl : Guideline
        The tracked guideline.

    Returns
    -------
    ProgressEvent
        Whether and by how many waypoints the target advanced.
    """
    if step_displacement < 0.0:
        raise ValueError("step displacement must be non-negative")
    progress.traveled += float(step_displacement)
    if progress.finished:
        return ProgressEvent(ProgressKind.NO_CHANGE)

    x_now = as_vec3(x_now)
    count = 0
    while gl.distance_to(progress.active_index, x_now) < gl.margin:
        count += 1
        if progress.active_index == gl.last_index:
            progress.finished = True
            return ProgressEvent(ProgressKind.FINISHED, count)
        progress.active_index += 1
    progress.prev_dist_to_goal = gl.distance_to(progress.active_index, x_now)

    if count > 0:
        return ProgressEvent(ProgressKind.ADVANCED, count)
    return ProgressEvent(ProgressKind.NO_CHANGE)


def check_termination(
    progress: GuidelineProgress, x_now: ArrayLike, gl: Guideline
) -> TerminationVerdict:
    """
    Terminate once the traveled distance exceeds the active waypoint's
    cumulative arc-length while the waypoint is still outside the margin.
    """
    if progress.finished:
        return TerminationVerdict.CONTINUE
    i = progress.active_index
    if progress.traveled > gl.distances[i] and gl.distance_to(i, x_now) >= gl.margin:
        return TerminationVerdict.TERMINATE
    return TerminationVerdict.CONTINUE


def key_is_active(key: PositionKeyOrientation, x_now: ArrayLike, gl: Guideline) -> bool:
    """A position key is evaluated while the base is within the margin of its anchor."""
    return gl.distance_to(key.anchor_index, x_now) < gl.margin


def pos_key_reward(
    q_now: ArrayLike, key: PositionKeyOrientation, x_now: ArrayLike, gl: Guideline
) -> tuple[float, TerminationVerdict]:
    """
    Reward `exp(-theta_diff)` for matching a position-based key-orientation.

    The caller is responsible for evaluating only active keys (see
    `key_is_active`); `x_now` and `gl` are accepted for that purpose and for
    symmetry with the other reward terms.

    Returns
    -------
    tuple
        Reward in `(0, 1]` and the termination verdict, which terminates if
        the orientation error exceeds the key's `theta_thres`.
    """
    del x_now, gl  # activation is decided by the caller
    theta = quat_angle(q_now, key.q)
    verdict = TerminationVerdict.TERMINATE if theta > key.theta_thres else TerminationVerdict.CONTINUE
    return float(np.exp(-theta)), verdict


def seq_key_reward(
    q_now: ArrayLike,
    q_prev: ArrayLike,
    seq: OrientationSequence,
    progress: GuidelineProgress,
    tolerances: SequenceTolerances | None = None,
) -> tuple[float, TerminationVerdict, int | None]:
    """
    Reward the angular progress towards the current target of a sequence.

    Parameters
    ----------
    q_now, q_prev : array-like
        Base orientation at the current and previous step.
    seq : OrientationSequence
        The active sequence.
    progress : GuidelineProgress
        Tracking state; `active_seq_target` is initialised to the first
        target if unset and advanced when the target is captured.
    tolerances : SequenceTolerances, optional
        Capture threshold and monotonicity hysteresis.

    Returns
    -------
    tuple
        Reward `-(theta_t - theta_{t-1})`, termination verdict (terminates if
        the error grows by more than the hysteresis) and the index of the new
        target if it was updated, else `None`.
    """
    if tolerances is None:
        tolerances = SequenceTolerances()
    targets = seq.targets
    if len(targets) == 0:
        raise ValueError("orientation sequence is empty")
    if progress.active_seq_target is None:
        progress.active_seq_target = 0

    target = targets[progress.active_seq_target]
    theta_now = quat_angle(q_now, target)
    theta_prev = quat_angle(q_prev, target)
    reward = -(theta_now - theta_prev)

    if theta_now > theta_prev + tolerances.hysteresis:
        verdict = TerminationVerdict.TERMINATE
    else:
        verdict = TerminationVerdict.CONTINUE

    update = None
    if theta_now < tolerances.capture and progress.active_seq_target < len(targets) - 1:
        progress.active_seq_target += 1
        update = progress.active_seq_target
    progress.prev_theta_diff = theta_now
    return reward, verdict, update


class TrackStep(NamedTuple):
    """Stunt-mode reward terms and verdict of one environment step."""

    line: float
    rotation: float
    event: ProgressEvent
    terminated: bool
    cause: str | None


@dataclass
class GuidelineTracker:
    """
    Evaluates a guideline and its key-orientations over one stunt.

    Each call to `step` computes the line reward towards the active target,
    advances the target, checks the traveled-distance termination, and adds
    the position- and sequence-based key-orientation rewards. Every sequence
    keeps its own target counter in `sequence_progress`.
    """

    guideline: Guideline
    keys: KeyOrientationSet = field(default_factory=KeyOrientationSet)
    tolerances: SequenceTolerances = field(default_factory=SequenceTolerances)
    progress: GuidelineProgress = field(default_factory=GuidelineProgress)
    sequence_progress: tuple[GuidelineProgress, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.keys.validate(self.guideline)
        self.sequence_progress = tuple(GuidelineProgress() for _ in self.keys.sequences)

    def reset(self) -> None:
        self.progress.reset()
        for seq_progress in self.sequence_progress:
            seq_progress.reset()

    @property
    def finished(self) -> bool:
        return self.progress.finished

    def step(
        self, x_prev: ArrayLike, x_now: ArrayLike, q_prev: ArrayLike, q_now: ArrayLike
    ) -> TrackStep:
        gl = self.guideline
        progress = self.progress
        x_prev = as_vec3(x_prev)
        x_now = as_vec3(x_now)
        active_before = progress.active_index

        r_line = line_reward(progress, x_prev, x_now, gl)
        event = advance(progress, x_now, float(np.linalg.norm(x_now - x_prev)), gl)
        if check_termination(progress, x_now, gl):
            return TrackStep(r_line, 0.0, event, True, "line_overrun")

        r_rot = 0.0
        for key in self.keys.all_position_keys():
            if key_is_active(key, x_now, gl):
                reward, verdict = pos_key_reward(q_now, key, x_now, gl)
                r_rot += reward
                if verdict:
                    return TrackStep(r_line, r_rot, event, True, "key_orientation")

        for seq, seq_progress in zip(self.keys.sequences, self.sequence_progress):
            if seq.is_active(active_before) and not progress.finished:
                reward, verdict, _ = seq_key_reward(
                    q_now, q_prev, seq, seq_progress, self.tolerances
                )
                r_rot += reward
                if verdict:
                    return TrackStep(r_line, r_rot, event, True, "sequence_monotonicity")

        return TrackStep(r_line, r_rot, event, False, None)


def _quat_list(q: UnitQuaternion) -> list[float]:
    return [float(v) for v in q]


def _key_to_dict(key: PositionKeyOrientation | OrientationSequence) -> dict[str, Any]:
    if isinstance(key, PositionKeyOrientation):
        return {
            "type": "position",
            "anchor": int(key.anchor_index),
            "quaternions": [_quat_list(key.q)],
            "theta_thres": float(key.theta_thres),
        }
    return {
        "type": "sequence",
        "anchors": [int(key.start.anchor_index), int(key.end.anchor_index)],
        "quaternions": [_quat_list(q) for q in (key.start.q, *key.intermediates, key.end.q)],
        "theta_thres": [float(key.start.theta_thres), float(key.end.theta_thres)],
    }


def _key_from_dict(data: dict[str, Any]) -> PositionKeyOrientation | OrientationSequence:
    kind = data.get("type")
    quats = [UnitQuaternion.normalized(q) for q in data["quaternions"]]
    if kind == "position":
        if len(quats) != 1:
            raise ValueError("position key-orientation requires exactly one quaternion")
        return PositionKeyOrientation(int(data["anchor"]), quats[0], float(data["theta_thres"]))
    if kind == "sequence":
        if len(quats) < 3:
            raise ValueError("sequence key-orientation requires at least three quaternions")
        start_thres, end_thres = data["theta_thres"]
        start_anchor, end_anchor = data["anchors"]
        return OrientationSequence(
            start=PositionKeyOrientation(int(start_anchor), quats[0], float(start_thres)),
            intermediates=tuple(quats[1:-1]),
            end=PositionKeyOrientation(int(end_anchor), quats[-1], float(end_thres)),
        )
    raise ValueError(f"unknown key-orientation type '{kind}'")


def guideline_to_dict(gl: Guideline, keys: KeyOrientationSet | None = None) -> dict[str, Any]:
    """Serialise a guideline and its key-orientations in file-format order."""
    keys = KeyOrientationSet() if keys is None else keys
    return {
        "version": FORMAT_VERSION,
        "name": gl.name,
        "waypoints": [
            {"p": [float(v) for v in p], "d": float(d)}
            for p, d in zip(gl.points, gl.distances)
        ],
        "margin": gl.margin,
        "key_orientations": [_key_to_dict(k) for k in (*keys.positions, *keys.sequences)],
    }


def guideline_from_dict(data: dict[str, Any]) -> tuple[Guideline, KeyOrientationSet]:
    """Inverse of `guideline_to_dict`."""
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported guideline format version: {version}")
    try:
        gl = Guideline(
            points=[wp["p"] for wp in data["waypoints"]],
            distances=[wp["d"] for wp in data["waypoints"]],
            margin=data["margin"],
            name=data.get("name", "guideline"),
        )
    except (KeyError, TypeError) as err:
        raise ValueError("invalid guideline file format or schema") from err

    positions, sequences = [], []
    for entry in data.get("key_orientations", []):
        key = _key_from_dict(entry)
        (positions if isinstance(key, PositionKeyOrientation) else sequences).append(key)
    keys = KeyOrientationSet(tuple(positions), tuple(sequences))
    keys.validate(gl)
    return gl, keys


def dumps_guideline(gl: Guideline, keys: KeyOrientationSet | None = None) -> str:
    """Render the guideline file content; stable under read/write round trips."""
    return json.dumps(guideline_to_dict(gl, keys), indent=2) + "\n"


def write_guideline(
    path: str, gl: Guideline, keys: KeyOrientationSet | None = None
) -> None:
    """Write a guideline file (JSON, schema version `FORMAT_VERSION`)."""
    with open(path, "w") as f:
        f.write(dumps_guideline(gl, keys))


def read_guideline(path: str) -> tuple[Guideline, KeyOrientationSet]:
    """
    Read a guideline file.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ValueError
        If the content does not follow the guideline schema.
    """
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as err:
            raise ValueError(f"guideline file is not valid JSON: {path}") from err
    return guideline_from_dict(data)
