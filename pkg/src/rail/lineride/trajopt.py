"""
This file implements the two-phase trajectory optimisation over the simplified
two-mass model that generates physically informed guidelines, e.g. for a
backflip.

The model reduces the robot to its centre of mass `(x_com, z_com)`, pitch
`phi` and the prismatic extension `h` with the state

    x = [x_com, z_com, xdot_com, zdot_com, phi, phidot, h, hdot]

and the controls `u = [hddot, tau, reaction]`, i.e. the prismatic
acceleration, the rear wheel torque and the normal ground reaction. The lower
mass sits at the wheel axle and the ground contact lies directly below it.
During contact the wheel torque transmits the tangential force `tau / r_w`;
in flight no external force acts and the angular momentum about the centre of
mass is conserved.

The problem is transcribed with trapezoidal direct collocation on a fixed
sequence of contact and flight phases with free durations, and solved by an
augmented Lagrangian method with a bound-constrained quasi-Newton inner loop
(`scipy.optimize.minimize`, L-BFGS-B).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any

import numpy as np
import yaml
from pandas import DataFrame
from scipy.optimize import minimize

from rail.lineride.geometry import hermite_chain, quat_from_pitch, sample_dense
from rail.lineride.guideline import (
    OrientationSequence,
    PositionKeyOrientation,
    build_guideline,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rail.lineride.dynamics import PlanarBikeParams
    from rail.lineride.guideline import Guideline

__all__ = [
    "CONTROL_NAMES",
    "STATE_NAMES",
    "Bounds",
    "EmptyPathError",
    "ExportError",
    "PhaseKind",
    "PhaseSpec",
    "PhaseTrajectory",
    "TrajOptProblem",
    "TrajOptSolution",
    "build_backflip_problem",
    "build_flight_problem",
    "build_rest_problem",
    "dynamics_defects",
    "export_guideline",
    "initial_guess",
    "problem_from_dict",
    "problem_from_yaml",
    "solve",
]

logger = logging.getLogger(__name__)

STATE_NAMES = ("x_com", "z_com", "xdot_com", "zdot_com", "phi", "phidot", "h", "hdot")
CONTROL_NAMES = ("hddot", "tau", "reaction")
NX = len(STATE_NAMES)
NU = len(CONTROL_NAMES)

DEFECT_TOLERANCE = 1e-6
STATIONARITY_TOLERANCE = 1e-4
FD_STEP = 1e-6
PENALTY_INIT = 10.0
PENALTY_GROWTH = 10.0
PENALTY_MAX = 1e9


class ExportError(ValueError):
    """Raised when a solution cannot be exported as guideline."""


class EmptyPathError(ExportError):
    """Raised when the exported base path has zero length, e.g. at rest."""


class PhaseKind(str, Enum):
    CONTACT = "contact"
    FLIGHT = "flight"


@dataclass(frozen=True)
class PhaseSpec:
    """A trajectory phase with its number of knots and duration bounds (s)."""

    kind: PhaseKind
    knots: int
    duration: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PhaseKind(self.kind))
        if self.knots < 3:
            raise ValueError("a phase requires at least three knots")
        lo, hi = (float(v) for v in self.duration)
        if not 0.0 < lo <= hi:
            raise ValueError("duration bounds must be positive and ordered")
        object.__setattr__(self, "duration", (lo, hi))

    @property
    def size(self) -> int:
        """Number of decision variables of the phase."""
        return self.knots * (NX + NU) + 1


@dataclass(frozen=True)
class Bounds:
    """Box bounds of states and controls, arrays of shape `(8,)` and `(3,)`."""

    state_lo: NDArray
    state_hi: NDArray
    control_lo: NDArray
    control_hi: NDArray

    def __post_init__(self) -> None:
        for name, size in (
            ("state_lo", NX),
            ("state_hi", NX),
            ("control_lo", NU),
            ("control_hi", NU),
        ):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != (size,):
                raise ValueError(f"'{name}' must have shape ({size},)")
            object.__setattr__(self, name, value)
        if np.any(self.state_lo > self.state_hi) or np.any(self.control_lo > self.control_hi):
            raise ValueError("inconsistent bounds, lower exceeds upper bound")

    @classmethod
    def default(cls, params: PlanarBikeParams) -> Bounds:
        weight = params.total_mass * params.gravity
        return cls(
            state_lo=[-5.0, 0.0, -10.0, -10.0, -2.5 * np.pi, -40.0, params.h_min, -8.0],
            state_hi=[5.0, 3.0, 10.0, 10.0, 0.5 * np.pi, 40.0, params.h_max, 8.0],
            control_lo=[-250.0, -60.0, 0.0],
            control_hi=[250.0, 60.0, 10.0 * weight],
        )

    def updated(self, state: dict[str, Sequence[float]] | None = None,
                control: dict[str, Sequence[float]] | None = None) -> Bounds:
        """Copy with individual entries replaced by `(lo, hi)` pairs."""
        arrays = [a.copy() for a in (self.state_lo, self.state_hi, self.control_lo, self.control_hi)]
        for names, items, (lo, hi) in (
            (STATE_NAMES, state or {}, (arrays[0], arrays[1])),
            (CONTROL_NAMES, control or {}, (arrays[2], arrays[3])),
        ):
            for key, (low, high) in items.items():
                try:
                    idx = names.index(key)
                except ValueError as err:
                    raise ValueError(f"unknown bound '{key}'") from err
                lo[idx], hi[idx] = low, high
        return Bounds(*arrays)


@dataclass(frozen=True)
class TrajOptProblem:
    """
    A multi-phase trajectory optimisation problem.

    Parameters
    ----------
    phases : tuple of PhaseSpec
        Ordered phases, must not be empty.
    initial, final : NDArray
        Boundary states of shape `(8,)`, entries set to `NaN` are free.
    bounds : Bounds
        State and control box bounds.
    params : PlanarBikeParams
        Model parameters.
    effort_weight, duration_weight : float
        Objective weights of the integrated squared controls and the total
        duration.
    apex_height_hint : float
        Height added to flight phases in the initial guess.
    name : str
        Descriptive name.
    """

    phases: tuple[PhaseSpec, ...]
    initial: NDArray
    final: NDArray
    bounds: Bounds
    params: PlanarBikeParams
    effort_weight: float = 1e-3
    duration_weight: float = 1e-2
    apex_height_hint: float = 0.0
    name: str = "trajopt"

    def __post_init__(self) -> None:
        if len(self.phases) == 0:
            raise ValueError("a problem requires at least one phase")
        object.__setattr__(self, "phases", tuple(self.phases))
        for name in ("initial", "final"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != (NX,):
                raise ValueError(f"'{name}' boundary must have shape ({NX},)")
            object.__setattr__(self, name, value)
        if self.effort_weight < 0.0 or self.duration_weight < 0.0:
            raise ValueError("objective weights must not be negative")

    @property
    def size(self) -> int:
        return sum(phase.size for phase in self.phases)

    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + [phase.size for phase in self.phases[:-1]]))


@dataclass(frozen=True)
class PhaseTrajectory:
    """Knots of a single phase."""

    kind: PhaseKind
    states: NDArray
    controls: NDArray
    duration: float

    @property
    def knots(self) -> int:
        return len(self.states)

    @property
    def times(self) -> NDArray:
        """Knot times relative to the start of the phase."""
        return np.linspace(0.0, self.duration, self.knots)


@dataclass
class TrajOptSolution:
    """
    Result of `solve`.

    Attributes
    ----------
    phases : list of PhaseTrajectory
        The per-phase state and control knots.
    defects : NDArray
        Equality constraint residuals (collocation defects, contact path and
        phase continuity).
    converged : bool
        Whether the defect and stationarity tolerances were met.
    """

    phases: list[PhaseTrajectory]
    defects: NDArray = field(default_factory=lambda: np.zeros(0))
    converged: bool = False
    iterations: int = 0
    objective: float = float("nan")
    stationarity: float = float("nan")
    merit_history: list[list[float]] = field(default_factory=list)

    @property
    def max_defect(self) -> float:
        return float(np.max(np.abs(self.defects))) if len(self.defects) else 0.0

    def knot_times(self) -> NDArray:
        """Absolute time of each knot, phase boundaries counted once."""
        times, offset = [], 0.0
        for i, phase in enumerate(self.phases):
            t = offset + phase.times
            times.append(t if i == 0 else t[1:])
            offset += phase.duration
        return np.concatenate(times)

    def trajectory(self) -> tuple[NDArray, NDArray]:
        """States at `knot_times` with duplicate phase-boundary knots removed."""
        states = [p.states if i == 0 else p.states[1:] for i, p in enumerate(self.phases)]
        return self.knot_times(), np.concatenate(states)

    def to_table(self) -> DataFrame:
        """Knots of all phases as table, including knot time and phase index."""
        rows = []
        offset = 0.0
        for index, phase in enumerate(self.phases):
            for t, x, u in zip(offset + phase.times, phase.states, phase.controls):
                row = dict(t=t, phase=index, kind=phase.kind.value)
                row.update(zip(STATE_NAMES, x))
                row.update(zip(CONTROL_NAMES, u))
                rows.append(row)
            offset += phase.duration
        return DataFrame(rows)

    def report(self) -> dict[str, Any]:
        """Summary of the solver outcome."""
        return dict(
            converged=self.converged,
            iterations=self.iterations,
            objective=self.objective,
            max_defect=self.max_defect,
            stationarity=self.stationarity,
            durations=[p.duration for p in self.phases],
        )


def contact_height(h: NDArray | float, phi: NDArray | float, params: PlanarBikeParams):
    """Height of the centre of mass with the wheel axle at wheel-radius height."""
    return params.wheel_radius + params.mass_ratio * h * np.cos(phi)


def state_derivative(
    states: NDArray, controls: NDArray, kind: PhaseKind, params: PlanarBikeParams
) -> NDArray:
    """Time derivative of the state for knots of shape `(K, 8)` and `(K, 3)`."""
    _, _, xd, zd, phi, phid, h, hd = states.T
    hdd, tau, reaction = controls.T
    mass = params.total_mass
    mu = params.reduced_mass
    beta = params.mass_ratio
    r_w = params.wheel_radius

    if kind is PhaseKind.CONTACT:
        tangential = tau / r_w
        normal = reaction
    else:
        tangential = np.zeros_like(tau)
        normal = np.zeros_like(reaction)

    torque = (-beta * h * np.cos(phi) - r_w) * tangential + beta * h * np.sin(phi) * normal
    inertia = params.pitch_inertia + mu * h * h
    phidd = (torque - 2.0 * mu * h * hd * phid) / inertia
    return np.stack(
        [xd, zd, tangential / mass, normal / mass - params.gravity, phid, phidd, hd, hdd],
        axis=1,
    )


def _phase_defects(phase: PhaseTrajectory, params: PlanarBikeParams) -> NDArray:
    step = phase.duration / (phase.knots - 1)
    deriv = state_derivative(phase.states, phase.controls, phase.kind, params)
    defects = (
        phase.states[1:] - phase.states[:-1] - 0.5 * step * (deriv[1:] + deriv[:-1])
    )
    return defects.ravel()


def _check_shapes(phases: Sequence[PhaseTrajectory], problem: TrajOptProblem) -> None:
    if len(phases) != len(problem.phases):
        raise ValueError("number of phases does not match the problem")
    for phase, spec in zip(phases, problem.phases):
        if phase.states.shape != (spec.knots, NX) or phase.controls.shape != (spec.knots, NU):
            raise ValueError("knot counts or dimensions do not match the problem")
        if phase.kind is not spec.kind:
            raise ValueError("phase kinds do not match the problem")


def dynamics_defects(
    solution: TrajOptSolution | Sequence[PhaseTrajectory], problem: TrajOptProblem
) -> NDArray:
    """
    Trapezoidal collocation residuals of all phases.

    Parameters
    ----------
    solution : TrajOptSolution or list of PhaseTrajectory
        The knots to evaluate.
    problem : TrajOptProblem
        The problem definition.

    Returns
    -------
    NDArray
        Residuals ordered by phase, interval and state dimension.

    Raises
    ------
    ValueError
        If the knots do not match the problem dimensions.
    """
    phases = solution.phases if isinstance(solution, TrajOptSolution) else list(solution)
    _check_shapes(phases, problem)
    return np.concatenate([_phase_defects(p, problem.params) for p in phases])


def _equality_constraints(phases: list[PhaseTrajectory], params: PlanarBikeParams) -> NDArray:
    parts = [_phase_defects(p, params) for p in phases]
    for phase in phases:
        if phase.kind is PhaseKind.CONTACT:
            _, z, _, _, phi, _, h, _ = phase.states.T
            parts.append(z - contact_height(h, phi, params))
    for prev, nxt in zip(phases[:-1], phases[1:]):
        parts.append(prev.states[-1] - nxt.states[0])
    return np.concatenate(parts)


def _inequality_constraints(phases: list[PhaseTrajectory], params: PlanarBikeParams) -> NDArray:
    """Constraints of the form `g >= 0`."""
    parts = [np.zeros(0)]
    beta = params.mass_ratio
    for phase in phases:
        _, z, _, _, phi, _, h, _ = phase.states.T
        if phase.kind is PhaseKind.CONTACT:
            _, tau, reaction = phase.controls.T
            friction = params.friction_mu * reaction
            parts.append(friction - tau / params.wheel_radius)
            parts.append(friction + tau / params.wheel_radius)
        else:
            parts.append(z - contact_height(h, phi, params))
            parts.append(z + (1.0 - beta) * h * np.cos(phi) - params.boing_radius)
    return np.concatenate(parts)


def _unpack(z: NDArray, problem: TrajOptProblem) -> list[PhaseTrajectory]:
    phases = []
    for spec, offset in zip(problem.phases, problem.offsets()):
        k = spec.knots
        states = z[offset : offset + k * NX].reshape(k, NX)
        controls = z[offset + k * NX : offset + k * (NX + NU)].reshape(k, NU)
        phases.append(PhaseTrajectory(spec.kind, states, controls, float(z[offset + spec.size - 1])))
    return phases


def _pack(phases: Sequence[PhaseTrajectory]) -> NDArray:
    return np.concatenate(
        [np.concatenate([p.states.ravel(), p.controls.ravel(), [p.duration]]) for p in phases]
    )


def _variable_bounds(problem: TrajOptProblem) -> tuple[NDArray, NDArray]:
    lo_parts, hi_parts = [], []
    bounds = problem.bounds
    last = len(problem.phases) - 1
    for index, spec in enumerate(problem.phases):
        state_lo = np.tile(bounds.state_lo, (spec.knots, 1))
        state_hi = np.tile(bounds.state_hi, (spec.knots, 1))
        if index == 0:
            fixed = np.isfinite(problem.initial)
            state_lo[0, fixed] = state_hi[0, fixed] = problem.initial[fixed]
        if index == last:
            fixed = np.isfinite(problem.final)
            state_lo[-1, fixed] = state_hi[-1, fixed] = problem.final[fixed]
        control_lo = np.tile(bounds.control_lo, (spec.knots, 1))
        control_hi = np.tile(bounds.control_hi, (spec.knots, 1))
        if spec.kind is PhaseKind.FLIGHT:
            control_lo[:, 1:] = control_hi[:, 1:] = 0.0  # no torque or reaction in flight
        lo_parts.extend([state_lo.ravel(), control_lo.ravel(), [spec.duration[0]]])
        hi_parts.extend([state_hi.ravel(), control_hi.ravel(), [spec.duration[1]]])
    return np.concatenate(lo_parts), np.concatenate(hi_parts)


def _variable_scales(problem: TrajOptProblem) -> NDArray:
    weight = problem.params.total_mass * problem.params.gravity
    control_scale = np.array([10.0, 10.0, weight])
    parts = []
    for spec in problem.phases:
        parts.extend([np.ones(spec.knots * NX), np.tile(control_scale, spec.knots), [1.0]])
    return np.concatenate(parts)


def _objective(z: NDArray, problem: TrajOptProblem) -> tuple[float, NDArray]:
    """Integrated squared prismatic acceleration and torque plus total duration."""
    value = 0.0
    grad = np.zeros_like(z)
    for spec, offset in zip(problem.phases, problem.offsets()):
        k = spec.knots
        duration = z[offset + spec.size - 1]
        step = duration / (k - 1)
        weights = np.ones(k)
        weights[[0, -1]] = 0.5
        controls = z[offset + k * NX : offset + k * (NX + NU)].reshape(k, NU)
        effort = weights @ (controls[:, 0] ** 2 + controls[:, 1] ** 2)

        value += problem.effort_weight * step * effort + problem.duration_weight * duration
        grad_u = np.zeros((k, NU))
        grad_u[:, 0] = 2.0 * problem.effort_weight * step * weights * controls[:, 0]
        grad_u[:, 1] = 2.0 * problem.effort_weight * step * weights * controls[:, 1]
        grad[offset + k * NX : offset + k * (NX + NU)] = grad_u.ravel()
        grad[offset + spec.size - 1] = problem.effort_weight * effort / (k - 1) + problem.duration_weight
    return float(value), grad


class _Transcription:
    """Constraint evaluation with a colored finite-difference Jacobian."""

    def __init__(self, problem: TrajOptProblem) -> None:
        self.problem = problem
        self.lo, self.hi = _variable_bounds(problem)
        z = self._generic_point()
        self.n_eq = len(self.equality(z))
        self.n_ineq = len(self.inequality(z))
        self.groups = self._color_groups()
        self.owner = self._ownership(z)

    def equality(self, z: NDArray) -> NDArray:
        return _equality_constraints(_unpack(z, self.problem), self.problem.params)

    def inequality(self, z: NDArray) -> NDArray:
        return _inequality_constraints(_unpack(z, self.problem), self.problem.params)

    def constraints(self, z: NDArray) -> NDArray:
        phases = _unpack(z, self.problem)
        params = self.problem.params
        return np.concatenate(
            [_equality_constraints(phases, params), _inequality_constraints(phases, params)]
        )

    def _generic_point(self) -> NDArray:
        rng = np.random.default_rng(0)
        lo = np.where(np.isfinite(self.lo), self.lo, -1.0)
        hi = np.where(np.isfinite(self.hi), self.hi, 1.0)
        return lo + rng.uniform(0.1, 0.9, size=len(lo)) * (hi - lo)

    def _color_groups(self) -> list[NDArray]:
        """
        Decision variables that never share a constraint row.

        Constraints couple at most two consecutive knots (collocation and
        phase continuity) plus the phase duration, hence the same component
        of all knots with equal global knot parity forms one group.
        """
        groups: dict[tuple[int, int], list[int]] = {}
        singles = []
        knot = 0
        for spec, offset in zip(self.problem.phases, self.problem.offsets()):
            for k in range(spec.knots):
                parity = (knot + k) % 2
                for j in range(NX):
                    groups.setdefault((parity, j), []).append(offset + k * NX + j)
                for j in range(NU):
                    groups.setdefault((parity, NX + j), []).append(
                        offset + spec.knots * NX + k * NU + j
                    )
            knot += spec.knots
            singles.append(offset + spec.size - 1)
        return [np.array(g) for g in groups.values()] + [np.array([s]) for s in singles]

    def _ownership(self, z: NDArray) -> list[NDArray]:
        """For each group and constraint row, the index of the influencing variable."""
        owners = []
        for group in self.groups:
            owner = np.full(self.n_eq + self.n_ineq, -1)
            for index in group:
                step = np.zeros_like(z)
                step[index] = FD_STEP
                diff = self.constraints(z + step) - self.constraints(z - step)
                owner[diff != 0.0] = index
            owners.append(owner)
        return owners

    def jacobian(self, z: NDArray) -> NDArray:
        """Central-difference Jacobian of all constraints, shape `(rows, vars)`."""
        jac = np.zeros((self.n_eq + self.n_ineq, len(z)))
        rows = np.arange(len(jac))
        for group, owner in zip(self.groups, self.owner):
            step = np.zeros_like(z)
            step[group] = FD_STEP
            diff = (self.constraints(z + step) - self.constraints(z - step)) / (2.0 * FD_STEP)
            mask = owner >= 0
            jac[rows[mask], owner[mask]] = diff[mask]
        return jac


def initial_guess(problem: TrajOptProblem) -> list[PhaseTrajectory]:
    """
    Deterministic initial guess.

    States are interpolated linearly between the boundary states (free
    entries of the final state copy the initial state) over the mid-range
    phase durations, flight phases receive a parabolic height bump of
    `apex_height_hint`, and contact phases start with the reaction carrying
    the total weight.
    """
    params = problem.params
    start = problem.initial.copy()
    defaults = np.array(
        [0.0, contact_height(params.h_mid, 0.0, params), 0.0, 0.0, 0.0, 0.0, params.h_mid, 0.0]
    )
    start = np.where(np.isfinite(start), start, defaults)
    end = np.where(np.isfinite(problem.final), problem.final, start)

    durations = [0.5 * (spec.duration[0] + spec.duration[1]) for spec in problem.phases]
    total = sum(durations)
    phases, offset = [], 0.0
    for spec, duration in zip(problem.phases, durations):
        local = np.linspace(0.0, 1.0, spec.knots)
        frac = (offset + local * duration) / total
        states = start + frac[:, None] * (end - start)
        controls = np.zeros((spec.knots, NU))
        if spec.kind is PhaseKind.FLIGHT:
            apex = problem.apex_height_hint
            states[:, 1] += 4.0 * apex * local * (1.0 - local)
            states[:, 3] += 4.0 * apex * (1.0 - 2.0 * local) / duration
        else:
            controls[:, 2] = params.total_mass * params.gravity
        phases.append(PhaseTrajectory(spec.kind, states, controls, duration))
        offset += duration
    return phases


def _projected_gradient(xi: NDArray, grad: NDArray, lo: NDArray, hi: NDArray) -> float:
    return float(np.max(np.abs(np.clip(xi - grad, lo, hi) - xi)))


def solve(
    problem: TrajOptProblem,
    init_guess: TrajOptSolution | Sequence[PhaseTrajectory] | None = None,
    max_iters: int = 50,
    *,
    defect_tol: float = DEFECT_TOLERANCE,
    stationarity_tol: float = STATIONARITY_TOLERANCE,
    inner_iters: int = 2000,
) -> TrajOptSolution:
    """
    Solve a trajectory optimisation problem with an augmented Lagrangian
    method.

    Each outer iteration minimises the augmented Lagrangian (equalities
    quadratic, inequalities with the Powell-Hestenes-Rockafellar shift) over
    the variable bounds with L-BFGS-B, then updates the multipliers and, if
    the constraint violation did not shrink sufficiently, the penalty.

    Parameters
    ----------
    problem : TrajOptProblem
        The problem to solve.
    init_guess : TrajOptSolution or list of PhaseTrajectory, optional
        Starting point, defaults to `initial_guess(problem)`.
    max_iters : int, optional
        Maximum number of outer iterations.
    defect_tol : float, optional
        Maximum constraint violation of a converged solution.
    stationarity_tol : float, optional
        Maximum projected gradient of the Lagrangian of a converged solution.
    inner_iters : int, optional
        Iteration limit of each inner L-BFGS-B solve.

    Returns
    -------
    TrajOptSolution
        The converged solution or the last iterate with `converged=False`.
    """
    if init_guess is None:
        init_guess = initial_guess(problem)
    phases = init_guess.phases if isinstance(init_guess, TrajOptSolution) else list(init_guess)
    _check_shapes(phases, problem)

    trans = _Transcription(problem)
    scales = _variable_scales(problem)
    lo, hi = trans.lo / scales, trans.hi / scales
    xi = np.clip(_pack(phases) / scales, lo, hi)

    lam = np.zeros(trans.n_eq)
    mu = np.zeros(trans.n_ineq)
    rho = PENALTY_INIT
    prev_violation = np.inf
    history: list[list[float]] = []
    converged = False
    stationarity = np.inf
    iteration = 0

    def merit(xi_: NDArray) -> tuple[float, NDArray]:
        z = xi_ * scales
        f, grad_f = _objective(z, problem)
        values = trans.constraints(z)
        jac = trans.jacobian(z)
        c, g = values[: trans.n_eq], values[trans.n_eq :]
        jac_c, jac_g = jac[: trans.n_eq], jac[trans.n_eq :]
        active = np.maximum(mu - rho * g, 0.0)
        value = f + lam @ c + 0.5 * rho * (c @ c) + (active @ active - mu @ mu) / (2.0 * rho)
        grad = grad_f + jac_c.T @ (lam + rho * c) - jac_g.T @ active
        return float(value), grad * scales

    for iteration in range(1, max_iters + 1):
        values: list[float] = []

        def record(intermediate_result) -> None:
            values.append(float(intermediate_result.fun))

        result = minimize(
            merit,
            xi,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            callback=record,
            options=dict(maxiter=inner_iters, ftol=1e-15, gtol=1e-9, maxcor=20),
        )
        xi = np.clip(result.x, lo, hi)
        history.append(values)

        z = xi * scales
        c, g = trans.equality(z), trans.inequality(z)
        violation = max(
            float(np.max(np.abs(c), initial=0.0)), float(np.max(-g, initial=0.0))
        )
        lam = lam + rho * c
        mu = np.maximum(mu - rho * g, 0.0)

        _, grad_f = _objective(z, problem)
        jac = trans.jacobian(z)
        grad_lagrangian = grad_f + jac[: trans.n_eq].T @ lam - jac[trans.n_eq :].T @ mu
        stationarity = _projected_gradient(xi, grad_lagrangian * scales, lo, hi)
        logger.debug(
            "iteration %d: violation=%.3e stationarity=%.3e penalty=%.1e",
            iteration, violation, stationarity, rho,
        )  # fmt: skip

        if violation <= defect_tol and stationarity <= stationarity_tol:
            converged = True
            break
        if violation > 0.25 * prev_violation:
            rho = min(rho * PENALTY_GROWTH, PENALTY_MAX)
        prev_violation = violation

    z = xi * scales
    phases = _unpack(z, problem)
    solution = TrajOptSolution(
        phases=[replace(p, states=p.states.copy(), controls=p.controls.copy()) for p in phases],
        defects=trans.equality(z),
        converged=converged,
        iterations=iteration,
        objective=_objective(z, problem)[0],
        stationarity=stationarity,
        merit_history=history,
    )
    if converged:
        logger.info("'%s' converged after %d iterations", problem.name, iteration)
    else:
        logger.warning(
            "'%s' did not converge after %d iterations (max defect %.3e)",
            problem.name, iteration, solution.max_defect,
        )  # fmt: skip
    return solution


def _boundary(values: dict[str, float] | None) -> NDArray:
    state = np.full(NX, np.nan)
    for key, value in (values or {}).items():
        try:
            state[STATE_NAMES.index(key)] = value
        except ValueError as err:
            raise ValueError(f"unknown state '{key}'") from err
    return state


def build_rest_problem(
    params: PlanarBikeParams, duration: float = 0.5, knots: int = 5
) -> TrajOptProblem:
    """Single contact phase that starts and ends at rest at mid extension."""
    h = params.h_mid
    rest = np.array([0.0, contact_height(h, 0.0, params), 0.0, 0.0, 0.0, 0.0, h, 0.0])
    return TrajOptProblem(
        phases=(PhaseSpec(PhaseKind.CONTACT, knots, (duration, duration)),),
        initial=rest,
        final=rest.copy(),
        bounds=Bounds.default(params),
        params=params,
        name="rest",
    )


def build_flight_problem(
    params: PlanarBikeParams,
    start: Sequence[float] = (0.0, 1.0),
    end: Sequence[float] = (0.6, 1.0),
    duration: float = 0.6,
    knots: int = 21,
    phi: float = 0.0,
) -> TrajOptProblem:
    """
    Single flight phase of fixed duration between two fixed positions
    `(x_com, z_com)` with free velocities.
    """
    h = params.h_mid
    initial = _boundary(dict(x_com=start[0], z_com=start[1], phi=phi, h=h))
    final = _boundary(dict(x_com=end[0], z_com=end[1], phi=phi, h=h))
    return TrajOptProblem(
        phases=(PhaseSpec(PhaseKind.FLIGHT, knots, (duration, duration)),),
        initial=initial,
        final=final,
        bounds=Bounds.default(params),
        params=params,
        apex_height_hint=0.0,
        name="flight",
    )


def build_backflip_problem(
    params: PlanarBikeParams,
    apex_height_hint: float = 0.3,
    *,
    landing: bool = False,
    contact_knots: int = 15,
    flight_knots: int = 25,
) -> TrajOptProblem:
    """
    Build the backflip problem: a launch contact phase followed by a flight
    phase (and optionally a landing contact phase).

    The robot starts at rest on the ground at mid extension and touches down
    at mid extension after a pitch sweep of `-2 pi`. With `landing`, the
    robot comes to rest again at the end of the landing phase.

    Parameters
    ----------
    params : PlanarBikeParams
        Model parameters.
    apex_height_hint : float, optional
        Height bump of the flight phase in the initial guess, does not
        constrain the solution.
    landing : bool, optional
        Whether to append a landing contact phase.
    contact_knots, flight_knots : int, optional
        Knots per phase.
    """
    if apex_height_hint < 0.0:
        raise ValueError("apex height hint must not be negative")
    h = params.h_mid
    z_ground = contact_height(h, 0.0, params)
    initial = np.array([0.0, z_ground, 0.0, 0.0, 0.0, 0.0, h, 0.0])
    sweep = -2.0 * np.pi
    if landing:
        final = np.array([np.nan, z_ground, 0.0, 0.0, sweep, 0.0, h, 0.0])
    else:
        final = _boundary(dict(z_com=z_ground, phi=sweep, h=h))

    phases = [
        PhaseSpec(PhaseKind.CONTACT, contact_knots, (0.2, 1.0)),
        PhaseSpec(PhaseKind.FLIGHT, flight_knots, (0.3, 1.5)),
    ]
    if landing:
        phases.append(PhaseSpec(PhaseKind.CONTACT, contact_knots, (0.2, 1.0)))
    return TrajOptProblem(
        phases=tuple(phases),
        initial=initial,
        final=final,
        bounds=Bounds.default(params),
        params=params,
        apex_height_hint=float(apex_height_hint),
        name="backflip",
    )


def problem_from_dict(data: dict[str, Any], params: PlanarBikeParams) -> TrajOptProblem:
    """
    Create a problem from a configuration mapping (e.g. parsed from YAML).

    Expected keys are `phases` (list of `kind`, `knots`, `duration: [lo,
    hi]`), `initial` and `final` (mappings of state names to values), and
    optionally `bounds` (`state`/`control` mappings of names to `[lo, hi]`),
    `effort_weight`, `duration_weight`, `apex_height_hint` and `name`.
    """
    try:
        phases = tuple(
            PhaseSpec(p["kind"], int(p["knots"]), tuple(p["duration"])) for p in data["phases"]
        )
    except (KeyError, TypeError) as err:
        raise ValueError("invalid phase specification") from err
    bounds = Bounds.default(params)
    if "bounds" in data:
        bounds = bounds.updated(data["bounds"].get("state"), data["bounds"].get("control"))
    return TrajOptProblem(
        phases=phases,
        initial=_boundary(data.get("initial")),
        final=_boundary(data.get("final")),
        bounds=bounds,
        params=params,
        effort_weight=float(data.get("effort_weight", 1e-3)),
        duration_weight=float(data.get("duration_weight", 1e-2)),
        apex_height_hint=float(data.get("apex_height_hint", 0.0)),
        name=str(data.get("name", "trajopt")),
    )


def problem_from_yaml(path: str, params: PlanarBikeParams) -> TrajOptProblem:
    """Read a problem configuration file, see `problem_from_dict`."""
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ValueError(f"invalid problem configuration file: {path}")
    return problem_from_dict(data, params)


def _pitch_sequence(phases: list[PhaseTrajectory]) -> list[float] | None:
    """Pitch targets at every quarter turn of the flight pitch sweep."""
    phi_start = phases[0].states[0, 4]
    phi_end = phases[-1].states[-1, 4]
    sweep = phi_end - phi_start
    turns = int(np.floor(abs(sweep) / (0.5 * np.pi) + 1e-9))
    if turns == 0:
        return None
    sign = np.sign(sweep)
    return [phi_start + sign * 0.5 * np.pi * j for j in range(1, turns + 1)]


def export_guideline(
    solution: TrajOptSolution,
    k: int,
    margin: float,
    *,
    n_dense: int = 1000,
    theta_thres: float = 1.0,
) -> tuple[Guideline, OrientationSequence | None]:
    """
    Convert the base path of a converged solution into a guideline.

    The knots of `(x_com, z_com)` relative to the starting position are
    joined by Hermite segments whose tangents are the knot velocities scaled
    by the knot spacing, densely sampled and resampled into `k` waypoints.
    If the pitch sweeps at least a quarter turn, an orientation sequence with
    one target per quarter turn is anchored between the waypoints closest to
    launch and touchdown.

    Raises
    ------
    ExportError
        If the solution did not converge.
    EmptyPathError
        If the path has zero length.
    """
    if not solution.converged:
        raise ExportError("cannot export a non-converged solution")

    points, tangents = [], []
    for index, phase in enumerate(solution.phases):
        step = phase.duration / (phase.knots - 1)
        for j, state in enumerate(phase.states):
            if index > 0 and j == 0:
                continue
            points.append(np.array([state[0], 0.0, state[1]]))
            tangents.append(np.array([state[2], 0.0, state[3]]) * step)
    origin = points[0].copy()
    points = [p - origin for p in points]

    samples = sample_dense(hermite_chain(points, tangents), n=n_dense)
    if samples.total_length <= 0.0:
        raise EmptyPathError("cannot export a path of zero length")
    try:
        gl = build_guideline(samples, k, margin, name="trajopt")
    except ValueError as err:
        raise ExportError(f"guideline export failed: {err}") from err

    pitches = _pitch_sequence(solution.phases)
    if pitches is None:
        return gl, None

    flights = [p for p in solution.phases if p.kind is PhaseKind.FLIGHT]
    launch_state = flights[0].states[0] if flights else solution.phases[0].states[0]
    land_state = flights[-1].states[-1] if flights else solution.phases[-1].states[-1]
    launch = gl.nearest_index(np.array([launch_state[0], 0.0, launch_state[1]]) - origin)
    land = gl.nearest_index(np.array([land_state[0], 0.0, land_state[1]]) - origin)
    launch = min(launch, gl.last_index - 1)
    land = max(land, launch + 1)

    targets = [quat_from_pitch(phi) for phi in pitches]
    sequence = OrientationSequence(
        start=PositionKeyOrientation(launch, quat_from_pitch(launch_state[4]), theta_thres),
        intermediates=tuple(targets[:-1]) if len(targets) > 1 else (targets[0],),
        end=PositionKeyOrientation(land, targets[-1], theta_thres),
    )
    return gl, sequence
