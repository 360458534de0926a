"""Per-vehicle receding-horizon planning against broadcast moment plans.

One vehicle plans its next T controls by minimizing the expected squared
terminal distance to its destination plus a control-magnitude penalty,
subject to box bounds, speed/climb rate limits, and, for every other
vehicle and every horizon step, three safety constraints derived from the
clearance variable f (squared inter-vehicle distance minus d_min^2):

    concentration bound:   (4/9) Var[f] <= eps_eff E[f]^2   (scaled)
    mean floor:            E[f] >= floor                    (scaled)
    moment-ratio validity: E[f]^2 >= (5/8) E[f^2]           (scaled)

The concentration constraint is enforced in multiplied form (free of the
division by E[f]^2) with a slightly tightened eps_eff and a positive mean
floor, sized so that a solution feasible within the solver tolerance
satisfies the true bound (4/9)Var[f]/E[f]^2 <= eps.  Control magnitudes
|u| in the objective are replaced by slack variables with linear rows
s >= u and s >= -u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from uavplan import kernels
from uavplan.moments.basis import build_basis
from uavplan.moments.dynamics import MomentVector, PackedExpansion
from uavplan.nlp import (
    LinearConstraint,
    NlpProblem,
    SolveReport,
    SolverOptions,
    multi_start_solve,
)
from uavplan.safety import clearance_gradients, clearance_profile

FEASIBILITY_TOL = 1e-6


class ProtocolError(RuntimeError):
    """Another vehicle's plan is missing or misaligned with the horizon."""


@dataclass(frozen=True)
class PlannerParams:
    """Horizon, weights, limits, and chance-constraint level for one solve."""

    horizon: int
    delta: float
    smoothness_weight: float
    d_min: float
    epsilon: float
    v_bounds: Tuple[float, float]
    z_bounds: Tuple[float, float]
    psi_bounds: Tuple[float, float]
    v_rate: float
    z_rate: float
    previous_control: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.d_min <= 0.0:
            raise ValueError(f"d_min must be positive, got {self.d_min}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name, (lo, hi) in (
            ("v_bounds", self.v_bounds),
            ("z_bounds", self.z_bounds),
            ("psi_bounds", self.psi_bounds),
        ):
            if not lo < hi:
                raise ValueError(f"{name} must be ordered, got [{lo}, {hi}]")
        if self.v_rate <= 0.0 or self.z_rate <= 0.0:
            raise ValueError("rate limits must be positive")

    @property
    def epsilon_effective(self) -> float:
        """Tightened level used inside the multiplied-form constraint."""
        return 0.98 * self.epsilon

    @property
    def mean_floor(self) -> float:
        """Lower bound on E[f] (m^2) making the multiplied form sound.

        Feasibility within tol of the (0.1 eps d_min^4)-scaled multiplied
        constraint allows a bound excess of 0.1 eps tol d_min^4 / E[f]^2;
        the floor keeps that excess within the (eps - eps_eff) = 0.02 eps
        slack: E[f] >= d_min^2 (sqrt(5 tol) + tol), the tol term covering
        the mean row's own tolerance.
        """
        coefficient = max(
            0.01, math.sqrt(5.0 * FEASIBILITY_TOL) + FEASIBILITY_TOL
        )
        return coefficient * self.d_min * self.d_min


@dataclass(frozen=True)
class HorizonPlan:
    """A solved horizon: controls, slacks, and broadcast moments.

    moments[0] is the exact current state; moments[k] the propagated
    moments after applying controls[k-1].
    """

    controls: np.ndarray
    slacks: np.ndarray
    moments: Tuple[MomentVector, ...]
    owner: int
    planned_at: int
    fallback: bool = False
    converged: bool = True
    objective_value: float = float("nan")

    def __post_init__(self) -> None:
        controls = np.asarray(self.controls, dtype=np.float64).copy()
        slacks = np.asarray(self.slacks, dtype=np.float64).copy()
        if controls.ndim != 2 or controls.shape[1] != 3:
            raise ValueError(f"controls must have shape (T, 3), got {controls.shape}")
        if slacks.shape != controls.shape:
            raise ValueError("slacks must match controls shape")
        if len(self.moments) != controls.shape[0] + 1:
            raise ValueError(
                f"expected {controls.shape[0] + 1} moment vectors, got {len(self.moments)}"
            )
        controls.flags.writeable = False
        slacks.flags.writeable = False
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "slacks", slacks)
        object.__setattr__(self, "moments", tuple(self.moments))

    @property
    def horizon(self) -> int:
        return int(self.controls.shape[0])

    def moment_values(self) -> np.ndarray:
        """Moments rows 0..T stacked, shape (T+1, basis)."""
        return np.stack([m.values for m in self.moments])


def aligned_moment_rows(plan: HorizonPlan, horizon: int) -> np.ndarray:
    """Rows 1..T of another vehicle's broadcast moments.

    Raises:
        ProtocolError: If the plan's horizon does not match.
    """
    if plan.horizon != horizon:
        raise ProtocolError(
            f"plan of vehicle {plan.owner} covers {plan.horizon} steps, expected {horizon}"
        )
    return plan.moment_values()[1:]


class _HorizonEvaluator:
    """Caches one rollout per probe point, shared by all callbacks.

    The decision vector is x = [controls (3T), slacks (3T)], step-major.
    """

    def __init__(
        self,
        packed: PackedExpansion,
        m0_values: np.ndarray,
        destination: Tuple[float, float, float],
        other_rows: Sequence[np.ndarray],
        params: PlannerParams,
    ):
        self._packed = packed
        self._m0 = m0_values
        self._params = params
        self._T = params.horizon
        self._n = packed.basis_size
        basis = build_basis()
        self._obj_row = np.zeros(self._n)
        cx, cy, cz = destination
        self._obj_row[basis.index((2, 0, 0, 0, 0))] = 1.0
        self._obj_row[basis.index((0, 2, 0, 0, 0))] = 1.0
        self._obj_row[basis.index((0, 0, 2, 0, 0))] = 1.0
        self._obj_row[basis.index((1, 0, 0, 0, 0))] = -2.0 * cx
        self._obj_row[basis.index((0, 1, 0, 0, 0))] = -2.0 * cy
        self._obj_row[basis.index((0, 0, 1, 0, 0))] = -2.0 * cz
        self._obj_row[0] = cx * cx + cy * cy + cz * cz

        self._other_rows = [np.asarray(rows) for rows in other_rows]
        d_min = params.d_min
        self._grad_rows = [
            clearance_gradients(rows, d_min, self._n) for rows in self._other_rows
        ]
        self._d2 = d_min * d_min
        self._d4 = self._d2 * self._d2
        # one decade below the natural eps * d^4 magnitude of the
        # multiplied-form row, making its gradient commensurate with the
        # unit-scale slack and rate rows (keeps the merit well conditioned
        # and the multipliers O(1..100))
        self._vp_scale = 0.1 * params.epsilon * self._d4
        self.n_constraints = 3 * self._T * len(self._other_rows)

        self._cached_x: Optional[np.ndarray] = None
        self._objective = 0.0
        self._objective_grad = np.zeros(6 * self._T)
        self._g = np.zeros(self.n_constraints)
        self._g_jac = np.zeros((self.n_constraints, 6 * self._T))
        self._d_ef = np.zeros((len(self._other_rows), self._T, 3 * self._T))

    def _ensure(self, x: np.ndarray) -> None:
        if self._cached_x is not None and np.array_equal(self._cached_x, x):
            return
        T = self._T
        params = self._params
        controls = x[: 3 * T].reshape(T, 3)
        moments, jac = kernels.rollout(self._packed, self._m0, controls, want_jacobian=True)

        self._objective = float(self._obj_row @ moments[T]) + params.smoothness_weight * float(
            x[3 * T :].sum()
        )
        grad = np.zeros(6 * T)
        grad[: 3 * T] = self._obj_row @ jac[T - 1]
        grad[3 * T :] = params.smoothness_weight
        self._objective_grad = grad

        eps_eff = params.epsilon_effective
        floor = params.mean_floor
        for o, (rows, (grad_f_rows, grad_f2_rows)) in enumerate(
            zip(self._other_rows, self._grad_rows)
        ):
            e_f, e_f2 = clearance_profile(moments[1:], rows, params.d_min)
            # chain rule through the moment rollout, all steps at once
            d_ef = np.einsum("kn,knm->km", grad_f_rows, jac)
            d_ef2 = np.einsum("kn,knm->km", grad_f2_rows, jac)
            ef_col = e_f[:, None]
            mean_sq = e_f * e_f
            d_mean_sq = 2.0 * ef_col * d_ef
            block = np.empty((T, 3))
            block[:, 0] = ((4.0 / 9.0) * (e_f2 - mean_sq) - eps_eff * mean_sq) / self._vp_scale
            block[:, 1] = (floor - e_f) / self._d2
            block[:, 2] = ((5.0 / 8.0) * e_f2 - mean_sq) / self._d4
            jac_block = np.empty((T, 3, 3 * T))
            jac_block[:, 0] = ((4.0 / 9.0) * (d_ef2 - d_mean_sq) - eps_eff * d_mean_sq) / self._vp_scale
            jac_block[:, 1] = -d_ef / self._d2
            jac_block[:, 2] = ((5.0 / 8.0) * d_ef2 - d_mean_sq) / self._d4
            lo, hi = 3 * T * o, 3 * T * (o + 1)
            self._g[lo:hi] = block.reshape(-1)
            self._g_jac[lo:hi, : 3 * T] = jac_block.reshape(3 * T, 3 * T)
            self._d_ef[o] = d_ef
        self._cached_x = x.copy()

    def objective(self, x: np.ndarray) -> float:
        self._ensure(x)
        return self._objective

    def objective_gradient(self, x: np.ndarray) -> np.ndarray:
        self._ensure(x)
        return self._objective_grad.copy()

    def constraint_block(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        self._ensure(x)
        return self._g.copy(), self._g_jac.copy()

    def constraint_component(self, index: int):
        def component(x: np.ndarray) -> float:
            self._ensure(x)
            return float(self._g[index])

        return component

    def constraint_curvature(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Weighted sum of approximate constraint Hessians.

        Every nonlinear row is affine in (E[f], E[f^2], E[f]^2); the
        dominant curvature is the 2 grad(E[f]) grad(E[f])^T outer product
        of the squared-mean term, with the rollout's own second
        derivatives dropped.  Used only as a quasi-Newton model; feasibility
        and descent are always checked against exact values.
        """
        self._ensure(x)
        T = self._T
        n = 6 * T
        eps_eff = self._params.epsilon_effective
        hessian = np.zeros((n, n))
        for o in range(len(self._other_rows)):
            lo = 3 * T * o
            w_vp = weights[lo : lo + 3 * T : 3]
            w_ratio = weights[lo + 2 : lo + 3 * T : 3]
            coef = -2.0 * (
                (4.0 / 9.0 + eps_eff) * w_vp / self._vp_scale + w_ratio / self._d4
            )
            rows = self._d_ef[o]
            hessian[: 3 * T, : 3 * T] += (rows * coef[:, None]).T @ rows
        return hessian


def _variable_bounds(params: PlannerParams) -> np.ndarray:
    T = params.horizon
    bounds = np.empty((6 * T, 2))
    per_channel = [params.v_bounds, params.z_bounds, params.psi_bounds]
    for t in range(T):
        for c, (lo, hi) in enumerate(per_channel):
            bounds[3 * t + c] = (lo, hi)
    for t in range(T):
        for c, (lo, hi) in enumerate(per_channel):
            bounds[3 * T + 3 * t + c] = (0.0, max(abs(lo), abs(hi)))
    return bounds


def _linear_rows(params: PlannerParams) -> list:
    T = params.horizon
    rows = []
    # slack absolute-value rows: u - s <= 0 and -u - s <= 0
    for t in range(T):
        for c in range(3):
            u_idx, s_idx = 3 * t + c, 3 * T + 3 * t + c
            rows.append(
                LinearConstraint(
                    np.array([u_idx, s_idx]), np.array([1.0, -1.0]), -np.inf, 0.0
                )
            )
            rows.append(
                LinearConstraint(
                    np.array([u_idx, s_idx]), np.array([-1.0, -1.0]), -np.inf, 0.0
                )
            )
    # rate limits on speed and climb, anchored at the previously applied control
    for c, rate in ((0, params.v_rate), (1, params.z_rate)):
        prev = params.previous_control[c]
        rows.append(
            LinearConstraint(np.array([c]), np.array([1.0]), prev - rate, prev + rate)
        )
        for t in range(1, T):
            rows.append(
                LinearConstraint(
                    np.array([3 * t + c, 3 * (t - 1) + c]),
                    np.array([1.0, -1.0]),
                    -rate,
                    rate,
                )
            )
    return rows


def assemble_problem(
    state: Tuple[float, float, float, float],
    destination: Tuple[float, float, float],
    others: Sequence[HorizonPlan],
    params: PlannerParams,
    packed: PackedExpansion,
) -> NlpProblem:
    """Build the NLP for one vehicle's horizon.

    Args:
        state: Exact current (x, y, z, psi).
        destination: Target position (c_x, c_y, c_z).
        others: Other vehicles' plans, already aligned to this horizon.
        params: Horizon parameters.
        packed: Noise-resolved dynamics expansion.

    Returns:
        The assembled problem; its nonlinear constraints follow the fixed
        ordering (other vehicle, step, family=(bound, mean, ratio)).

    Raises:
        ProtocolError: On misaligned other-vehicle plans.
    """
    from uavplan.moments.dynamics import moments_from_point_state

    m0 = moments_from_point_state(*state)
    other_rows = [aligned_moment_rows(p, params.horizon) for p in others]
    evaluator = _HorizonEvaluator(packed, m0.values, destination, other_rows, params)
    T = params.horizon
    return NlpProblem(
        dimension=6 * T,
        objective=evaluator.objective,
        objective_gradient=evaluator.objective_gradient,
        inequality_constraints=[
            evaluator.constraint_component(i) for i in range(evaluator.n_constraints)
        ],
        constraint_block=evaluator.constraint_block if evaluator.n_constraints else None,
        constraint_curvature=(
            evaluator.constraint_curvature if evaluator.n_constraints else None
        ),
        linear_constraints=_linear_rows(params),
        variable_bounds=_variable_bounds(params),
    )


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _ramped(target: float, previous: float, rate: float, lo: float, hi: float, steps: int):
    values = np.empty(steps)
    current = previous
    for t in range(steps):
        current = float(np.clip(target, current - rate, current + rate))
        current = float(np.clip(current, lo, hi))
        values[t] = current
    return values


def heuristic_controls(
    state: Tuple[float, float, float, float],
    destination: Tuple[float, float, float],
    params: PlannerParams,
) -> np.ndarray:
    """Rate-feasible ramp toward the destination, used as a start point."""
    T = params.horizon
    x, y, z, psi = state
    dx, dy = destination[0] - x, destination[1] - y
    dz = destination[2] - z
    dist_xy = math.hypot(dx, dy)
    horizon_time = T * params.delta
    controls = np.zeros((T, 3))
    controls[:, 0] = _ramped(
        min(dist_xy / horizon_time, params.v_bounds[1]),
        params.previous_control[0],
        params.v_rate,
        params.v_bounds[0],
        params.v_bounds[1],
        T,
    )
    controls[:, 1] = _ramped(
        float(np.clip(dz / horizon_time, params.z_bounds[0], params.z_bounds[1])),
        params.previous_control[1],
        params.z_rate,
        params.z_bounds[0],
        params.z_bounds[1],
        T,
    )
    if dist_xy > 1e-9:
        heading_error = _wrap_angle(math.atan2(dy, dx) - psi)
        turn_steps = max(1, min(T, 3))
        turn_rate = heading_error / (turn_steps * params.delta)
        turn_rate = float(np.clip(turn_rate, params.psi_bounds[0], params.psi_bounds[1]))
        controls[:turn_steps, 2] = turn_rate
    return controls


def _start_vector(controls: np.ndarray, T: int) -> np.ndarray:
    x = np.zeros(6 * T)
    x[: 3 * T] = controls.reshape(-1)
    x[3 * T :] = np.abs(controls).reshape(-1)
    return x


def start_menu(
    state: Tuple[float, float, float, float],
    destination: Tuple[float, float, float],
    params: PlannerParams,
    previous_plan: Optional[HorizonPlan],
    starts: int,
    seed: int,
    extra_starts: Sequence[np.ndarray] = (),
) -> list:
    """Deterministic start set: shifted previous plan, zeros, goal ramp,
    then seeded random perturbations of the ramp, truncated to `starts`."""
    T = params.horizon
    menu = []
    if previous_plan is not None:
        shifted = np.vstack([previous_plan.controls[1:], previous_plan.controls[-1:]])
        menu.append(_start_vector(shifted, T))
    menu.append(_start_vector(np.zeros((T, 3)), T))
    heuristic = heuristic_controls(state, destination, params)
    menu.append(_start_vector(heuristic, T))
    rng = np.random.default_rng(seed)
    while len(menu) < max(starts, 1):
        noise = rng.normal(size=(T, 3)) * np.array([0.5, 0.5, 0.2])
        perturbed = heuristic + noise
        perturbed[:, 0] = np.clip(perturbed[:, 0], *params.v_bounds)
        perturbed[:, 1] = np.clip(perturbed[:, 1], *params.z_bounds)
        perturbed[:, 2] = np.clip(perturbed[:, 2], *params.psi_bounds)
        menu.append(_start_vector(perturbed, T))
    menu = menu[: max(starts, 1)]
    menu.extend(np.asarray(s, dtype=np.float64) for s in extra_starts)
    return menu


def plan_from_controls(
    controls: np.ndarray,
    state: Tuple[float, float, float, float],
    params: PlannerParams,
    packed: PackedExpansion,
    owner: int = 0,
    planned_at: int = 0,
    fallback: bool = False,
    converged: bool = True,
    objective_value: float = float("nan"),
) -> HorizonPlan:
    """Build a plan with exactly propagated moments for given controls.

    No feasibility checking is performed; the caller owns any guarantees.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.shape != (params.horizon, 3):
        raise ValueError(
            f"controls must have shape ({params.horizon}, 3), got {controls.shape}"
        )
    return _plan_from_solution(
        _start_vector(controls, params.horizon),
        state,
        params,
        packed,
        owner=owner,
        planned_at=planned_at,
        fallback=fallback,
        converged=converged,
        objective_value=objective_value,
    )


def _plan_from_solution(
    solution: np.ndarray,
    state: Tuple[float, float, float, float],
    params: PlannerParams,
    packed: PackedExpansion,
    owner: int,
    planned_at: int,
    fallback: bool,
    converged: bool,
    objective_value: float,
) -> HorizonPlan:
    from uavplan.moments.dynamics import moments_from_point_state

    T = params.horizon
    controls = solution[: 3 * T].reshape(T, 3).copy()
    slacks = np.abs(controls)
    m0 = moments_from_point_state(*state)
    moments, _ = kernels.rollout(packed, m0.values, controls)
    vectors = [m0]
    for k in range(1, T + 1):
        vectors.append(MomentVector(values=moments[k], time_step=k))
    return HorizonPlan(
        controls=controls,
        slacks=slacks,
        moments=tuple(vectors),
        owner=owner,
        planned_at=planned_at,
        fallback=fallback,
        converged=converged,
        objective_value=objective_value,
    )


def fallback_plan(
    previous_plan: Optional[HorizonPlan],
    state: Tuple[float, float, float, float],
    params: PlannerParams,
    packed: PackedExpansion,
    owner: int = 0,
    planned_at: int = 0,
) -> HorizonPlan:
    """Shift-and-hold of the previous plan, or an emergency braking plan.

    Used when the solver finds no feasible plan; flagged so the caller
    can see that no fresh feasibility guarantee is attached.
    """
    T = params.horizon
    if previous_plan is not None:
        controls = np.vstack([previous_plan.controls[1:], previous_plan.controls[-1:]])
    else:
        controls = np.zeros((T, 3))
        v, z = params.previous_control[0], params.previous_control[1]
        for t in range(T):
            v = max(0.0, v - params.v_rate)
            z = (
                max(0.0, z - params.z_rate)
                if z > 0
                else min(0.0, z + params.z_rate)
            )
            controls[t, 0] = v
            controls[t, 1] = z
    solution = _start_vector(controls, T)
    return _plan_from_solution(
        solution,
        state,
        params,
        packed,
        owner=owner,
        planned_at=planned_at,
        fallback=True,
        converged=False,
        objective_value=float("nan"),
    )


def plan(
    state: Tuple[float, float, float, float],
    destination: Tuple[float, float, float],
    others: Sequence[HorizonPlan],
    params: PlannerParams,
    packed: PackedExpansion,
    previous_plan: Optional[HorizonPlan] = None,
    starts: int = 4,
    seed: int = 0,
    owner: int = 0,
    planned_at: int = 0,
    extra_starts: Sequence[np.ndarray] = (),
    solver_options: Optional[SolverOptions] = None,
) -> HorizonPlan:
    """Plan one vehicle's horizon against the others' broadcast moments.

    Returns the best feasible plan found by the multi-start solve, or a
    flagged fallback plan when every start is infeasible.
    """
    problem = assemble_problem(state, destination, others, params, packed)
    menu = start_menu(state, destination, params, previous_plan, starts, seed, extra_starts)
    if solver_options is None:
        solver_options = SolverOptions()
    report: SolveReport = multi_start_solve(problem, menu, seed=seed, options=solver_options)
    if not report.converged:
        fb = fallback_plan(previous_plan, state, params, packed, owner, planned_at)
        return fb
    solution = report.solution.copy()
    T = params.horizon
    # slack polish: the objective uses s only through w * sum(s), so
    # setting s = |u| preserves feasibility and never increases the cost
    solution[3 * T :] = np.abs(solution[: 3 * T])
    objective = problem.objective(solution)
    return _plan_from_solution(
        solution,
        state,
        params,
        packed,
        owner=owner,
        planned_at=planned_at,
        fallback=False,
        converged=True,
        objective_value=float(objective),
    )
