import math

import numpy as np
import pytest

from symplane.optimizer import (
    Bounds,
    ObjectiveError,
    OptimizerConfig,
    OptimizerTrace,
    TERM_MAX_ITERATIONS,
    TERM_STEP_TOLERANCE,
    minimize,
)


def quadratic(x):
    return float((x[0] - 1.3) ** 2 + 2.0 * (x[1] + 0.4) ** 2 + 0.7)


def rosenbrock(x):
    return float((1 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


def test_bounds_validation():
    with pytest.raises(ValueError):
        Bounds(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        Bounds(np.array([0.0]), np.array([1.0, 2.0]))
    b = Bounds(np.array([-1.0, -1.0]), np.array([2.0, 2.0]))
    assert b.n == 2
    assert b.contains([0.0, 0.0]) and not b.contains([3.0, 0.0])


def test_minimizes_smooth_quadratic():
    bounds = Bounds(np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    tr = minimize(quadratic, np.array([4.0, 4.0]), bounds,
                  OptimizerConfig(max_iterations=200))
    assert tr.best_f == pytest.approx(0.7, abs=1e-6)
    np.testing.assert_allclose(tr.best_x, [1.3, -0.4], atol=1e-3)


def test_every_evaluation_respects_bounds():
    bounds = Bounds(np.array([0.0, -0.5]), np.array([1.0, 0.5]))
    seen = []

    def f(x):
        seen.append(np.array(x))
        return rosenbrock(x)

    minimize(f, np.array([0.2, -0.2]), bounds, OptimizerConfig(max_iterations=120))
    pts = np.array(seen)
    assert (pts[:, 0] >= 0.0).all() and (pts[:, 0] <= 1.0).all()
    assert (pts[:, 1] >= -0.5).all() and (pts[:, 1] <= 0.5).all()


def test_constrained_minimum_lands_on_bound():
    # unconstrained minimum at (1.3, -0.4); box keeps x0 below 1
    bounds = Bounds(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    tr = minimize(quadratic, np.array([0.0, 0.0]), bounds,
                  OptimizerConfig(max_iterations=300))
    assert tr.best_x[0] == pytest.approx(1.0, abs=1e-5)
    assert tr.best_x[1] == pytest.approx(-0.4, abs=1e-3)


def test_trace_and_termination_reasons():
    bounds = Bounds(np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    tr = minimize(quadratic, np.array([4.0, 4.0]), bounds,
                  OptimizerConfig(max_iterations=400, step_tol=1e-6))
    assert tr.termination in (TERM_STEP_TOLERANCE, "value_tolerance")
    best_seen = min(f for _, _, f in tr.rows)
    assert tr.best_f == best_seen

    short = minimize(rosenbrock, np.array([-0.5, 2.0]), bounds,
                     OptimizerConfig(max_iterations=8))
    assert short.termination == TERM_MAX_ITERATIONS
    # never reports a point worse than the start
    assert short.best_f <= rosenbrock(np.array([-0.5, 2.0]))


def test_deterministic_reruns_are_identical():
    bounds = Bounds(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
    a = minimize(rosenbrock, np.array([-1.2, 1.0]), bounds,
                 OptimizerConfig(max_iterations=150))
    b = minimize(rosenbrock, np.array([-1.2, 1.0]), bounds,
                 OptimizerConfig(max_iterations=150))
    assert a.rows == b.rows
    assert a.best_f == b.best_f


def test_objective_errors_are_contained():
    bounds = Bounds(np.array([-2.0]), np.array([2.0]))
    calls = []

    def spiky(x):
        calls.append(float(x[0]))
        if x[0] > 0.5:
            raise ObjectiveError("infeasible region")
        return float((x[0] - 0.4) ** 2)

    tr = minimize(spiky, np.array([-1.0]), bounds,
                  OptimizerConfig(max_iterations=120))
    assert tr.best_x[0] == pytest.approx(0.4, abs=1e-3)
    assert math.isfinite(tr.best_f)


def test_nonfinite_values_are_rejected():
    bounds = Bounds(np.array([-2.0]), np.array([2.0]))

    def holey(x):
        if abs(x[0] - 0.3) < 0.02:
            return math.nan
        return float((x[0] - 0.6) ** 2)

    tr = minimize(holey, np.array([-1.5]), bounds,
                  OptimizerConfig(max_iterations=150))
    assert math.isfinite(tr.best_f)
    assert tr.best_f == pytest.approx(0.0, abs=1e-5)


def test_trace_csv_roundtrips_exact_floats(tmp_path):
    tr = OptimizerTrace()
    tr.record(0, np.array([0.1, 0.2]), 1.23456789012345678)
    tr.record(1, np.array([1.0 / 3.0, 2.0 / 3.0]), math.pi)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,x0,x1,value"
    _, x0, _, val = lines[2].split(",")
    assert float(x0) == 1.0 / 3.0  # repr round-trips exactly
    assert float(val) == math.pi
