"""Constrained nonlinear programming via an augmented Lagrangian.

Solves
    min f(x)   s.t.   g_i(x) <= 0,  lo_j <= a_j.x <= hi_j,  x in box

with an outer augmented-Lagrangian loop over the inequality constraints
(linear rows are folded into the same machinery as one-sided inequalities)
and a projected quasi-Newton minimizer on the box inside: a damped
Gauss-Newton iteration whose Hessian model is the penalty block
rho J_a^T J_a of the merit (J_a the active-row jacobian), which carries
all of the large curvature the penalty introduces.  The merit function
for one-sided constraints is

    Psi(x) = f(x) + 1/(2 rho) * sum_i [max(0, lambda_i + rho g_i(x))^2 - lambda_i^2]

with multiplier update lambda_i <- max(0, lambda_i + rho g_i(x*)) after
each inner solve and penalty growth when feasibility stalls.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

Vector = np.ndarray


class SolverFailure(RuntimeError):
    """A callback returned a non-finite value; carries the offending point."""

    def __init__(self, message: str, point: Vector):
        super().__init__(message)
        self.point = np.array(point)


@dataclass(frozen=True)
class LinearConstraint:
    """Sparse row lo <= sum_k coefficients[k] * x[indices[k]] <= hi."""

    indices: np.ndarray
    coefficients: np.ndarray
    lower: float
    upper: float

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        coef = np.asarray(self.coefficients, dtype=np.float64)
        if idx.shape != coef.shape or idx.ndim != 1:
            raise ValueError("indices and coefficients must be 1-d and same length")
        if not self.lower <= self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coefficients", coef)


@dataclass
class NlpProblem:
    """Smooth inequality-constrained problem on a box.

    Attributes:
        dimension: Number of decision variables.
        objective: Callback x -> real.
        objective_gradient: Optional callback x -> vector; central finite
            differences are used when absent.
        inequality_constraints: Nonlinear callbacks with g(x) <= 0 feasible.
        inequality_gradients: Optional per-constraint gradient callbacks.
        constraint_block: Optional vectorized evaluator returning
            (values, jacobian) for all nonlinear inequality constraints at
            once; preferred over the per-constraint callbacks when present
            (they must agree, and remain the source of truth for counting).
        constraint_curvature: Optional callback (x, weights) -> (n, n)
            matrix approximating sum_i weights_i * hess(g_i)(x) for the
            nonlinear constraints; used only to sharpen the inner
            quasi-Newton model, never for feasibility or descent checks.
        linear_constraints: Sparse bounded rows.
        variable_bounds: Array (dimension, 2) of [lo, hi] per coordinate.
    """

    dimension: int
    objective: Callable[[Vector], float]
    objective_gradient: Optional[Callable[[Vector], Vector]] = None
    inequality_constraints: Sequence[Callable[[Vector], float]] = ()
    inequality_gradients: Optional[Sequence[Callable[[Vector], Vector]]] = None
    constraint_block: Optional[Callable[[Vector], Tuple[Vector, np.ndarray]]] = None
    constraint_curvature: Optional[Callable[[Vector, Vector], np.ndarray]] = None
    linear_constraints: Sequence[LinearConstraint] = ()
    variable_bounds: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.variable_bounds is None:
            self.variable_bounds = np.column_stack(
                [np.full(self.dimension, -np.inf), np.full(self.dimension, np.inf)]
            )
        self.variable_bounds = np.asarray(self.variable_bounds, dtype=np.float64)
        if self.variable_bounds.shape != (self.dimension, 2):
            raise ValueError(
                f"variable_bounds must have shape ({self.dimension}, 2), "
                f"got {self.variable_bounds.shape}"
            )
        if self.inequality_gradients is not None and len(self.inequality_gradients) != len(
            self.inequality_constraints
        ):
            raise ValueError("one gradient callback per inequality constraint required")


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solve."""

    solution: Vector
    objective_value: float
    max_constraint_violation: float
    converged: bool
    iterations: int
    wall_time: float

    def __post_init__(self) -> None:
        sol = np.asarray(self.solution, dtype=np.float64).copy()
        sol.flags.writeable = False
        object.__setattr__(self, "solution", sol)


@dataclass(frozen=True)
class SolverOptions:
    feasibility_tol: float = 1e-6
    kkt_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    initial_penalty: float = 1000.0
    penalty_growth: float = 10.0
    fd_step: float = 1e-6


# rows with shifted multiplier lam + rho g above minus this margin join the
# inner Hessian model (tapered); in multiplier units
NEAR_ACTIVE_MARGIN = 1.0


def _fd_gradient(fun: Callable[[Vector], float], x: Vector, base_step: float) -> Vector:
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        h = max(base_step, 1e-7 * abs(x[i]))
        plus = x.copy()
        minus = x.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (fun(plus) - fun(minus)) / (2.0 * h)
    return grad


class _ConstraintSet:
    """All one-sided inequalities (nonlinear + split linear rows) as one block."""

    def __init__(self, problem: NlpProblem, options: SolverOptions):
        self._problem = problem
        self._options = options
        self.n_nonlinear = len(problem.inequality_constraints)
        # each linear row contributes its finite sides as one-sided rows,
        # assembled once into a dense matrix g_lin(x) = L x - b <= 0
        rows: List[Tuple[np.ndarray, np.ndarray, float]] = []
        for row in problem.linear_constraints:
            if np.isfinite(row.upper):
                rows.append((row.indices, row.coefficients, row.upper))
            if np.isfinite(row.lower):
                rows.append((row.indices, -row.coefficients, -row.lower))
        self.n_linear = len(rows)
        self._lin_matrix = np.zeros((self.n_linear, problem.dimension))
        self._lin_limit = np.empty(self.n_linear)
        for j, (idx, coef, limit) in enumerate(rows):
            self._lin_matrix[j, idx] = coef
            self._lin_limit[j] = limit
        self.size = self.n_nonlinear + self.n_linear

    def values(self, x: Vector) -> Vector:
        out = np.empty(self.size)
        if self.n_nonlinear:
            if self._problem.constraint_block is not None:
                out[: self.n_nonlinear] = self._problem.constraint_block(x)[0]
            else:
                for i, g in enumerate(self._problem.inequality_constraints):
                    out[i] = g(x)
        if self.n_linear:
            out[self.n_nonlinear :] = self._lin_matrix @ x - self._lin_limit
        return out

    def values_and_jacobian(self, x: Vector) -> Tuple[Vector, np.ndarray]:
        values = np.empty(self.size)
        jac = np.zeros((self.size, x.shape[0]))
        if self.n_nonlinear:
            if self._problem.constraint_block is not None:
                values[: self.n_nonlinear], jac[: self.n_nonlinear] = (
                    self._problem.constraint_block(x)
                )
            else:
                grads = self._problem.inequality_gradients
                for i, g in enumerate(self._problem.inequality_constraints):
                    values[i] = g(x)
                    if grads is not None:
                        jac[i] = grads[i](x)
                    else:
                        jac[i] = _fd_gradient(g, x, self._options.fd_step)
        if self.n_linear:
            values[self.n_nonlinear :] = self._lin_matrix @ x - self._lin_limit
            jac[self.n_nonlinear :] = self._lin_matrix
        return values, jac


def _check_finite(name: str, value, x: Vector) -> None:
    if not np.all(np.isfinite(value)):
        raise SolverFailure(f"{name} is non-finite at probe point", x)


def _minimize_box_gauss_newton(
    merit: Callable[[Vector], Tuple[float, Vector, np.ndarray, Optional[np.ndarray]]],
    x0: Vector,
    bounds: np.ndarray,
    gtol: float,
    ftol: float,
    maxiter: int,
) -> Tuple[Vector, float, float, int, bool]:
    """Projected damped Gauss-Newton on an augmented-Lagrangian merit.

    merit(x) must return (value, gradient, rows, curvature) where rows
    stacks the sqrt-penalty-weighted jacobian of the active and
    near-active constraint residuals (rows.T @ rows is the penalty block
    of the merit Hessian) and curvature is an optional extra Hessian term
    carrying the multiplier-weighted constraint curvature.  Steps solve
    (I + mu I + rows.T rows + curvature) p = -grad on the coordinates not
    pinned at an active bound, with a projected Armijo backtracking line
    search on the true merit; the Levenberg shift mu grows whenever the
    model yields a non-descent direction or a rejected step.

    Returns (x, value, projected_gradient_norm, iterations, converged);
    converged requires the projected gradient to meet gtol.  Merit-value
    stagnation below ftol on two consecutive accepted steps also stops
    the iteration, but reports converged=False so the caller can judge
    stationarity from the returned projected gradient.
    """
    lo, hi = bounds[:, 0], bounds[:, 1]
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    value, grad, rows, curvature = merit(x)
    n = x.shape[0]
    mu = 1e-3
    stall = 0
    for iteration in range(1, maxiter + 1):
        pg = x - np.clip(x - grad, lo, hi)
        pg_norm = float(np.abs(pg).max(initial=0.0))
        if pg_norm <= gtol:
            return x, value, pg_norm, iteration - 1, True
        if rows.size:
            base = rows.T @ rows
        else:
            base = np.zeros((n, n))
        if curvature is not None:
            base = base + curvature
        free = ~(
            ((x <= lo + 1e-12) & (grad > 0.0)) | ((x >= hi - 1e-12) & (grad < 0.0))
        )
        direction = np.zeros(n)
        sub = np.ix_(free, free)
        g_free = grad[free]
        while True:
            hessian = base[sub].copy()
            hessian[np.diag_indices_from(hessian)] += 1.0 + mu
            try:
                candidate = np.linalg.solve(hessian, -g_free)
            except np.linalg.LinAlgError:
                candidate = -g_free / (1.0 + mu)
            if float(candidate @ g_free) < 0.0 or not g_free.size:
                break
            mu *= 10.0
            if mu > 1e14:
                return x, value, pg_norm, iteration, False
        direction[free] = candidate
        accepted = False
        alpha = 1.0
        for _ in range(20):
            x_try = np.clip(x + alpha * direction, lo, hi)
            dx = x_try - x
            if not dx.any():
                break
            v_try, g_try, r_try, c_try = merit(x_try)
            if v_try <= value + 1e-4 * float(grad @ dx):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            mu *= 100.0
            if mu > 1e14:
                return x, value, pg_norm, iteration, False
            continue
        decrease = value - v_try
        x, value, grad, rows, curvature = x_try, v_try, g_try, r_try, c_try
        if alpha == 1.0:
            mu = max(mu / 3.0, 1e-12)
        elif alpha < 0.25:
            mu = min(mu * 10.0, 1e14)
        if decrease <= ftol * (1.0 + abs(value)):
            stall += 1
            if stall >= 2:
                pg = x - np.clip(x - grad, lo, hi)
                return x, value, float(np.abs(pg).max(initial=0.0)), iteration, False
        else:
            stall = 0
    pg = x - np.clip(x - grad, lo, hi)
    return x, value, float(np.abs(pg).max(initial=0.0)), maxiter, False


def solve(
    problem: NlpProblem, start: Vector, options: Optional[SolverOptions] = None
) -> SolveReport:
    """Solve the problem from one start point.

    The start is projected onto the box.  Convergence requires feasibility
    within tolerance and a small projected gradient of the Lagrangian (or
    stagnation of both the iterate and the multipliers).

    Raises:
        SolverFailure: If any callback produces a non-finite value.
    """
    options = options or SolverOptions()
    t_start = time.perf_counter()
    bounds = problem.variable_bounds
    x = np.clip(np.asarray(start, dtype=np.float64), bounds[:, 0], bounds[:, 1])

    constraints = _ConstraintSet(problem, options)

    def objective_with_grad(xv: Vector) -> Tuple[float, Vector]:
        value = problem.objective(xv)
        _check_finite("objective", value, xv)
        if problem.objective_gradient is not None:
            grad = problem.objective_gradient(xv)
        else:
            grad = _fd_gradient(problem.objective, xv, options.fd_step)
        _check_finite("objective gradient", grad, xv)
        return float(value), np.asarray(grad, dtype=np.float64)

    lam = np.zeros(constraints.size)
    rho = options.initial_penalty
    previous_violation = np.inf
    converged = False
    outer_used = options.max_outer

    # stopping tolerances are relative to the objective magnitude so that
    # meter^2-scale objectives do not force full inner iteration budgets
    f_start, _ = objective_with_grad(x)
    scale = max(1.0, abs(f_start))

    if constraints.size == 0:
        result = minimize(
            objective_with_grad,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={
                "maxiter": options.max_inner,
                "gtol": options.kkt_tol * scale,
                "ftol": 1e-12,
            },
        )
        solution = np.clip(result.x, bounds[:, 0], bounds[:, 1])
        return SolveReport(
            solution=solution,
            objective_value=float(problem.objective(solution)),
            max_constraint_violation=0.0,
            converged=bool(
                result.success
                or np.linalg.norm(result.jac, np.inf) <= 1e2 * options.kkt_tol * scale
            ),
            iterations=1,
            wall_time=time.perf_counter() - t_start,
        )

    # safeguarded schedule: solve inner problems loosely at first and
    # tighten as the penalty grows; update multipliers only when the
    # violation has met the round's gate, otherwise raise the penalty
    omega = 1.0 / rho
    eta = 1.0 / rho**0.1

    for outer in range(1, options.max_outer + 1):
        sqrt_rho = float(np.sqrt(rho))

        def merit(
            xv: Vector,
        ) -> Tuple[float, Vector, np.ndarray, Optional[np.ndarray]]:
            value, grad = objective_with_grad(xv)
            g_values, g_jac = constraints.values_and_jacobian(xv)
            _check_finite("constraints", g_values, xv)
            shifted = lam + rho * g_values
            clipped = np.maximum(0.0, shifted)
            value += float(clipped @ clipped - lam @ lam) / (2.0 * rho)
            grad = grad + clipped @ g_jac
            curvature = None
            if problem.constraint_curvature is not None and constraints.n_nonlinear:
                curvature = problem.constraint_curvature(
                    xv, clipped[: constraints.n_nonlinear]
                )
            # near-active rows enter the Hessian model with a weight that
            # tapers to zero at shifted = -NEAR_ACTIVE_MARGIN, so the model
            # stays continuous while steps that activate new rows still see
            # their stiffness coming
            weight = np.clip(1.0 + shifted / NEAR_ACTIVE_MARGIN, 0.0, 1.0)
            keep = weight > 0.0
            rows = (sqrt_rho * np.sqrt(weight[keep]))[:, None] * g_jac[keep]
            return value, grad, rows, curvature

        x_new, merit_value, pg_norm, _, inner_ok = _minimize_box_gauss_newton(
            merit,
            x,
            bounds,
            gtol=max(0.1 * options.kkt_tol, omega) * scale,
            # keep ftol well below the gtol target so the gradient
            # criterion governs and multiplier updates see an
            # accurately minimized merit
            ftol=float(np.clip(omega * 1e-4, 1e-12, 1e-9)),
            maxiter=options.max_inner,
        )
        scale = max(1.0, abs(merit_value))
        g_values = constraints.values(x_new)
        violation = float(np.maximum(0.0, g_values).max(initial=0.0))
        step = float(np.abs(x_new - x).max(initial=0.0))
        x = x_new

        if violation <= max(options.feasibility_tol, eta):
            lam = np.maximum(0.0, lam + rho * g_values)
            if violation <= options.feasibility_tol:
                grad_ok = inner_ok or pg_norm <= 10.0 * options.kkt_tol * scale
                if (grad_ok and omega <= options.kkt_tol * 10.0) or step <= 1e-10:
                    converged = True
                    outer_used = outer
                    break
            omega = max(omega / 10.0, 0.01 * options.kkt_tol)
            eta = max(eta / rho**0.9, 0.1 * options.feasibility_tol)
        else:
            rho = min(rho * options.penalty_growth, 1e12)
            omega = max(1.0 / rho, 0.01 * options.kkt_tol)
            eta = max(1.0 / rho**0.1, 0.1 * options.feasibility_tol)
        previous_violation = min(previous_violation, violation)

    g_final = constraints.values(x)
    final_violation = float(np.maximum(0.0, g_final).max(initial=0.0))
    if final_violation > options.feasibility_tol:
        converged = False
    return SolveReport(
        solution=x,
        objective_value=float(problem.objective(x)),
        max_constraint_violation=final_violation,
        converged=converged,
        iterations=outer_used,
        wall_time=time.perf_counter() - t_start,
    )


def multi_start_solve(
    problem: NlpProblem,
    starts: Sequence[Vector],
    seed: int = 0,
    options: Optional[SolverOptions] = None,
) -> SolveReport:
    """Solve from every start and return the best report.

    Feasible (converged) reports win by lowest objective with ties going
    to the lowest start index; if no start converges, the report with the
    smallest violation is returned with converged=False.  Per-start solver
    failures are recorded and skipped.

    Args:
        problem: The problem instance.
        starts: One or more start vectors.
        seed: Reserved for start-generation reproducibility bookkeeping;
            the solve itself is deterministic.
        options: Solver options shared by all starts.

    Raises:
        ValueError: If no start is given.
        SolverFailure: Only if every start fails with non-finite values.
    """
    if len(starts) == 0:
        raise ValueError("multi_start_solve needs at least one start")
    del seed  # determinism comes from the fixed start order
    best_feasible: Optional[SolveReport] = None
    best_infeasible: Optional[SolveReport] = None
    failures: List[SolverFailure] = []
    for start in starts:
        try:
            report = solve(problem, start, options)
        except SolverFailure as exc:
            failures.append(exc)
            continue
        if report.converged:
            if best_feasible is None or report.objective_value < best_feasible.objective_value:
                best_feasible = report
        else:
            if (
                best_infeasible is None
                or report.max_constraint_violation < best_infeasible.max_constraint_violation
            ):
                best_infeasible = report
    if best_feasible is not None:
        return best_feasible
    if best_infeasible is not None:
        return best_infeasible
    raise failures[0]
