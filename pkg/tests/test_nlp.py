"""Tests for the augmented-Lagrangian NLP solver."""

import math

import numpy as np
import pytest

from uavplan.nlp import (
    LinearConstraint,
    NlpProblem,
    SolverFailure,
    SolverOptions,
    multi_start_solve,
    solve,
)


def box(*pairs):
    return np.array(pairs, dtype=float)


class TestSolve:
    def test_clipped_quadratic(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: (x[0] - 3.0) ** 2,
            objective_gradient=lambda x: np.array([2.0 * (x[0] - 3.0)]),
            inequality_constraints=[lambda x: x[0] - 2.0],
            inequality_gradients=[lambda x: np.array([1.0])],
            variable_bounds=box([0.0, 10.0]),
        )
        report = solve(problem, np.array([7.0]))
        assert report.converged
        assert report.solution[0] == pytest.approx(2.0, abs=1e-5)
        assert report.max_constraint_violation <= 1e-6

    def test_linear_objective_on_disc(self):
        problem = NlpProblem(
            dimension=2,
            objective=lambda x: x[0] + x[1],
            objective_gradient=lambda x: np.array([1.0, 1.0]),
            inequality_constraints=[lambda x: x[0] ** 2 + x[1] ** 2 - 1.0],
            inequality_gradients=[lambda x: 2.0 * x],
            variable_bounds=box([-5.0, 5.0], [-5.0, 5.0]),
        )
        report = solve(problem, np.array([0.3, -0.2]))
        assert report.converged
        assert report.objective_value == pytest.approx(-math.sqrt(2.0), abs=1e-5)
        assert report.solution == pytest.approx(
            np.array([-math.sqrt(0.5), -math.sqrt(0.5)]), abs=1e-5
        )

    def test_infeasible_reports_violation(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: x[0] ** 2,
            inequality_constraints=[lambda x: x[0] + 1.0],
            variable_bounds=box([0.0, 1.0]),
        )
        report = solve(problem, np.array([0.5]))
        assert not report.converged
        assert report.max_constraint_violation == pytest.approx(1.0, abs=1e-9)

    def test_bounds_respected_exactly(self):
        problem = NlpProblem(
            dimension=2,
            objective=lambda x: (x[0] + 4.0) ** 2 + (x[1] - 9.0) ** 2,
            variable_bounds=box([-1.0, 1.0], [0.0, 2.0]),
        )
        report = solve(problem, np.array([0.0, 1.0]))
        assert report.converged
        assert report.solution[0] >= -1.0 and report.solution[0] <= 1.0
        assert report.solution[1] >= 0.0 and report.solution[1] <= 2.0
        assert report.solution == pytest.approx(np.array([-1.0, 2.0]), abs=1e-8)

    def test_start_outside_box_is_projected(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: x[0] ** 2,
            variable_bounds=box([1.0, 5.0]),
        )
        report = solve(problem, np.array([100.0]))
        assert report.solution[0] == pytest.approx(1.0, abs=1e-9)

    def test_linear_row_both_sides(self):
        problem = NlpProblem(
            dimension=2,
            objective=lambda x: (x[0] - 1.0) ** 2 + (x[1] + 2.0) ** 2,
            linear_constraints=[
                LinearConstraint(np.array([0, 1]), np.array([1.0, 1.0]), -0.5, 0.5)
            ],
            variable_bounds=box([-3.0, 3.0], [-3.0, 3.0]),
        )
        report = solve(problem, np.zeros(2))
        assert report.converged
        assert report.solution.sum() == pytest.approx(-0.5, abs=1e-5)

    def test_fd_gradients_used_when_absent(self):
        problem = NlpProblem(
            dimension=2,
            objective=lambda x: (x[0] - 2.0) ** 2 + 3.0 * (x[1] - 1.0) ** 2,
            variable_bounds=box([-10.0, 10.0], [-10.0, 10.0]),
        )
        report = solve(problem, np.array([5.0, -5.0]))
        assert report.converged
        assert report.solution == pytest.approx(np.array([2.0, 1.0]), abs=1e-5)

    def test_non_finite_objective_raises_with_point(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: float("nan"),
            variable_bounds=box([0.0, 1.0]),
        )
        with pytest.raises(SolverFailure) as info:
            solve(problem, np.array([0.5]))
        assert info.value.point.shape == (1,)

    def test_converged_implies_feasible(self):
        # tight quadratic pushed against two constraints
        problem = NlpProblem(
            dimension=2,
            objective=lambda x: (x[0] - 5.0) ** 2 + (x[1] - 5.0) ** 2,
            inequality_constraints=[
                lambda x: x[0] + x[1] - 2.0,
                lambda x: x[0] - 2.0 * x[1],
            ],
            variable_bounds=box([-10.0, 10.0], [-10.0, 10.0]),
        )
        report = solve(problem, np.zeros(2))
        if report.converged:
            assert report.max_constraint_violation <= 1e-6

    def test_report_solution_immutable(self):
        problem = NlpProblem(
            dimension=1, objective=lambda x: x[0] ** 2, variable_bounds=box([-1.0, 1.0])
        )
        report = solve(problem, np.array([0.5]))
        with pytest.raises(ValueError):
            report.solution[0] = 3.0


class TestConstraintBlock:
    def test_block_equals_callback_route(self):
        def g0(x):
            return x[0] ** 2 + x[1] ** 2 - 1.0

        def g1(x):
            return -x[0] + 0.2

        def block(x):
            values = np.array([g0(x), g1(x)])
            jac = np.array([[2.0 * x[0], 2.0 * x[1]], [-1.0, 0.0]])
            return values, jac

        common = dict(
            dimension=2,
            objective=lambda x: x[1],
            objective_gradient=lambda x: np.array([0.0, 1.0]),
            variable_bounds=box([-2.0, 2.0], [-2.0, 2.0]),
        )
        with_block = NlpProblem(
            inequality_constraints=[g0, g1], constraint_block=block, **common
        )
        without_block = NlpProblem(
            inequality_constraints=[g0, g1],
            inequality_gradients=[lambda x: 2.0 * x, lambda x: np.array([-1.0, 0.0])],
            **common,
        )
        r_block = solve(with_block, np.array([0.5, 0.5]))
        r_plain = solve(without_block, np.array([0.5, 0.5]))
        assert r_block.converged and r_plain.converged
        assert r_block.solution == pytest.approx(r_plain.solution, abs=1e-5)
        # feasible optimum: x0 = 0.2, x1 = -sqrt(1 - 0.04)
        assert r_block.solution[1] == pytest.approx(-math.sqrt(0.96), abs=1e-5)


class TestMultiStart:
    def two_well_problem(self):
        return NlpProblem(
            dimension=1,
            objective=lambda x: (x[0] ** 2 - 1.0) ** 2 + 0.1 * (x[0] - 0.5) ** 2,
            variable_bounds=box([-2.0, 2.0]),
        )

    def test_single_start_equals_solve(self):
        problem = self.two_well_problem()
        direct = solve(problem, np.array([1.5]))
        multi = multi_start_solve(problem, [np.array([1.5])])
        assert np.array_equal(direct.solution, multi.solution)
        assert direct.objective_value == multi.objective_value

    def test_lower_basin_wins(self):
        problem = self.two_well_problem()
        report = multi_start_solve(problem, [np.array([-1.5]), np.array([1.5])])
        assert report.solution[0] > 0.5

    def test_all_infeasible_returns_least_violation(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: 0.0,
            inequality_constraints=[lambda x: x[0] + 1.0],
            variable_bounds=box([0.0, 1.0]),
        )
        report = multi_start_solve(problem, [np.array([0.9]), np.array([0.1])])
        assert not report.converged
        assert report.max_constraint_violation == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        problem = self.two_well_problem()
        starts = [np.array([-1.5]), np.array([0.1]), np.array([1.7])]
        first = multi_start_solve(problem, starts, seed=3)
        second = multi_start_solve(problem, starts, seed=3)
        assert np.array_equal(first.solution, second.solution)
        assert first.objective_value == second.objective_value
        assert first.iterations == second.iterations

    def test_no_starts_rejected(self):
        with pytest.raises(ValueError):
            multi_start_solve(self.two_well_problem(), [])

    def test_failing_start_skipped(self):
        calls = {"n": 0}

        def objective(x):
            # first start probes near 10 where the surrogate blows up
            if x[0] > 5.0:
                return float("nan")
            return (x[0] - 1.0) ** 2

        problem = NlpProblem(
            dimension=1, objective=objective, variable_bounds=box([-20.0, 20.0])
        )
        report = multi_start_solve(problem, [np.array([10.0]), np.array([0.0])])
        assert report.converged
        assert report.solution[0] == pytest.approx(1.0, abs=1e-5)


class TestOptions:
    def test_outer_iteration_cap_respected(self):
        problem = NlpProblem(
            dimension=1,
            objective=lambda x: x[0] ** 2,
            inequality_constraints=[lambda x: x[0] + 1.0],
            variable_bounds=box([0.0, 1.0]),
        )
        options = SolverOptions(max_outer=3)
        report = solve(problem, np.array([0.5]), options)
        assert report.iterations <= 3
        assert not report.converged
