"""Constrained least-squares solver against grid-search oracles."""

import numpy as np
import pytest

from shiftstack.exceptions import InfeasibleProblemError
from shiftstack.qp import QpProblem, solve, solve_simplex_ls

KKT_TOL = 1e-6


def simplex_grid(k: int, step: float) -> np.ndarray:
    """All simplex points on a regular grid (k <= 3)."""
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    if k == 1:
        return np.array([[1.0]])
    if k == 2:
        return np.column_stack([ticks, 1.0 - ticks])
    pts = []
    for a in ticks:
        rest = ticks[ticks <= 1.0 - a + 1e-12]
        for b in rest:
            pts.append((a, b, 1.0 - a - b))
    return np.asarray(pts)


def box_grid(lo, hi, d, step):
    axes = [np.arange(lo[i], hi[i] + step / 2, step) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def grid_objective(problem: QpProblem, points: np.ndarray) -> float:
    residual = points @ problem.a.T - problem.b
    vals = np.sum(residual**2, axis=1) + problem.ridge * np.sum(points**2, axis=1)
    return float(np.min(vals))


class TestSolve:
    def test_interior_optimum_already_feasible(self):
        problem = QpProblem(
            a=np.eye(2), b=np.array([0.3, 0.7]),
            g=np.eye(2), h=np.zeros(2),
            e=np.ones((1, 2)), f=np.array([1.0]),
        )
        sol = solve(problem)
        np.testing.assert_allclose(sol.z, [0.3, 0.7], atol=1e-9)
        assert sol.report.max_residual < KKT_TOL

    def test_vertex_optimum_matches_simplex_grid(self):
        problem = QpProblem(
            a=np.eye(2), b=np.array([-1.0, 2.0]),
            g=np.eye(2), h=np.zeros(2),
            e=np.ones((1, 2)), f=np.array([1.0]),
        )
        sol = solve(problem)
        grid = simplex_grid(2, 1e-4)
        best = grid[np.argmin(np.sum((grid - problem.b) ** 2, axis=1))]
        np.testing.assert_allclose(sol.z, best, atol=1e-3)
        np.testing.assert_allclose(sol.z, [0.0, 1.0], atol=1e-9)

    def test_box_constrained_matches_grid(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=5)
        lo = np.full(3, -1.0)
        hi = np.full(3, 1.0)
        problem = QpProblem(
            a=a, b=b,
            g=np.vstack([np.eye(3), -np.eye(3)]),
            h=np.concatenate([lo, -hi]),
        )
        sol = solve(problem)
        pts = box_grid(lo, hi, 3, 0.02)
        grid_best = grid_objective(problem, pts)
        assert problem.objective(sol.z) <= grid_best + 1e-3
        # refined local grid around the solution pins it within 1e-3
        local = box_grid(np.maximum(sol.z - 0.05, lo), np.minimum(sol.z + 0.05, hi), 3, 0.001)
        best_local = local[np.argmin(
            np.sum((local @ a.T - b) ** 2, axis=1)
        )]
        assert np.max(np.abs(best_local - sol.z)) <= 2e-3

    def test_randomized_instances_beat_grid_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(200):
            d = int(rng.integers(1, 5))
            m = int(rng.integers(d, d + 4))
            a = rng.normal(size=(m, d))
            b = rng.normal(size=m)
            kind = trial % 3
            if kind == 0:  # box
                problem = QpProblem(
                    a=a, b=b,
                    g=np.vstack([np.eye(d), -np.eye(d)]),
                    h=np.concatenate([np.full(d, -1.0), np.full(d, -1.0)]),
                )
                pts = box_grid(np.full(d, -1.0), np.full(d, 1.0), d, 0.05 if d < 4 else 0.1)
            elif kind == 1:  # non-negativity plus a sum cap
                problem = QpProblem(
                    a=a, b=b,
                    g=np.vstack([np.eye(d), -np.ones((1, d))]),
                    h=np.concatenate([np.zeros(d), [-2.0]]),
                )
                pts = box_grid(np.zeros(d), np.full(d, 2.0), d, 0.05 if d < 4 else 0.1)
                pts = pts[pts.sum(axis=1) <= 2.0 + 1e-12]
            else:  # ridge + box
                problem = QpProblem(
                    a=a, b=b, ridge=0.1,
                    g=np.vstack([np.eye(d), -np.eye(d)]),
                    h=np.concatenate([np.full(d, -1.0), np.full(d, -1.0)]),
                )
                pts = box_grid(np.full(d, -1.0), np.full(d, 1.0), d, 0.05 if d < 4 else 0.1)
            sol = solve(problem)
            assert sol.report.max_residual < KKT_TOL, f"trial {trial}"
            assert problem.objective(sol.z) <= grid_objective(problem, pts) + 1e-6, (
                f"trial {trial}"
            )

    def test_infeasible_detected(self):
        problem = QpProblem(
            a=np.eye(2), b=np.zeros(2),
            g=np.array([[1.0, 0.0], [-1.0, 0.0]]),
            h=np.array([1.0, 0.0]),  # z0 >= 1 and z0 <= 0
        )
        with pytest.raises(InfeasibleProblemError):
            solve(problem)

    def test_inconsistent_equalities_detected(self):
        problem = QpProblem(
            a=np.eye(2), b=np.zeros(2),
            e=np.array([[1.0, 1.0], [1.0, 1.0]]), f=np.array([1.0, 2.0]),
        )
        with pytest.raises(InfeasibleProblemError):
            solve(problem)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(6, 4))
        b = rng.normal(size=6)
        problem = QpProblem(
            a=a, b=b,
            g=np.eye(4), h=np.zeros(4),
            e=np.ones((1, 4)), f=np.array([1.0]),
        )
        z1 = solve(problem).z
        z2 = solve(problem).z
        assert np.array_equal(z1, z2)

    def test_dimension_cap(self):
        a = np.eye(65)
        with pytest.raises(ValueError, match="cap"):
            solve(QpProblem(a=a, b=np.zeros(65)))


class TestSimplexLs:
    def test_single_column(self):
        w = solve_simplex_ls(np.ones((5, 1)), np.zeros(5))
        np.testing.assert_array_equal(w, [1.0])

    def test_matching_column_takes_all_weight(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=80)
        noise = rng.normal(size=(80, 2))
        noise -= noise.mean(axis=0)
        # orthogonalize the noise columns against y
        for j in range(2):
            noise[:, j] -= (noise[:, j] @ y) / (y @ y) * y
        P = np.column_stack([y, noise])
        w = solve_simplex_ls(P, y)
        grid = simplex_grid(3, 1e-3)
        grid_best = grid[np.argmin(np.sum((grid @ P.T - y) ** 2, axis=1))]
        assert w[0] > 0.99
        np.testing.assert_allclose(w, grid_best, atol=5e-3)

    def test_duplicate_columns_objective_matches_single(self):
        rng = np.random.default_rng(4)
        col = rng.normal(size=50)
        y = col + rng.normal(size=50) * 0.1
        P2 = np.column_stack([col, col])
        w = solve_simplex_ls(P2, y)
        assert np.all(w >= -1e-12)
        assert abs(w.sum() - 1.0) < 1e-8
        obj_dup = np.sum((P2 @ w - y) ** 2)
        w1 = solve_simplex_ls(col.reshape(-1, 1), y)
        obj_single = np.sum((col * w1[0] - y) ** 2)
        assert obj_dup == pytest.approx(obj_single, abs=1e-9)

    def test_on_simplex_for_random_instances(self):
        rng = np.random.default_rng(5)
        for k in (2, 3, 5, 8):
            P = rng.normal(size=(40, k))
            y = rng.normal(size=40)
            w = solve_simplex_ls(P, y)
            assert np.all(w >= -1e-12)
            assert abs(w.sum() - 1.0) < 1e-8
