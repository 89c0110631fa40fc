"""Small dense constrained least-squares / quadratic programming solver.

Minimizes ``||A z - b||^2 + ridge * ||z||^2`` subject to ``G z >= h`` and
``E z = f`` with a primal active-set method on the normal equations:

* Phase 1 finds a feasible start by solving a slack-variable QP (one slack
  per inequality) whose own feasible start is trivial; a positive residual
  slack proves infeasibility.
* Phase 2 iterates equality-constrained subproblems over a working set,
  entering the lowest-index blocking constraint on ties and dropping the
  most negative multiplier (lowest index on ties), so the solve is
  deterministic.

Every solution ships with a KKT report (stationarity, feasibility,
complementary slackness).  Problems here are tiny (dimension capped at 64
by default); the subproblem solves use ``lstsq`` so rank-deficient
objectives pick the minimum-norm step and stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError, InfeasibleProblemError, IterationLimitError

DEFAULT_DIM_CAP = 64
_FEAS_TOL = 1e-9
_STEP_TOL = 1e-11
_MULT_TOL = 1e-9


@dataclass(frozen=True)
class QpProblem:
    """Least-squares objective with linear inequality/equality constraints."""

    a: np.ndarray
    b: np.ndarray
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    e: np.ndarray | None = None
    f: np.ndarray | None = None
    ridge: float = 0.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape[0] != b.shape[0]:
            raise DimensionMismatchError("a rows and b length differ")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        d = a.shape[1]
        for mat_name, vec_name in (("g", "h"), ("e", "f")):
            mat = getattr(self, mat_name)
            vec = getattr(self, vec_name)
            if (mat is None) != (vec is None):
                raise DimensionMismatchError(f"{mat_name} and {vec_name} must come together")
            if mat is not None:
                mat = np.atleast_2d(np.asarray(mat, dtype=float))
                vec = np.asarray(vec, dtype=float).ravel()
                if mat.shape[1] != d or mat.shape[0] != vec.shape[0]:
                    raise DimensionMismatchError(f"{mat_name}/{vec_name} shapes inconsistent")
                object.__setattr__(self, mat_name, mat)
                object.__setattr__(self, vec_name, vec)
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def objective(self, z: np.ndarray) -> float:
        r = self.a @ z - self.b
        return float(r @ r + self.ridge * (z @ z))


@dataclass
class KktReport:
    stationarity: float
    max_violation: float
    comp_slackness: float
    objective: float
    iterations: int
    phase1_iterations: int = 0

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.max_violation, self.comp_slackness)


@dataclass
class QpSolution:
    z: np.ndarray
    report: KktReport
    multipliers_ineq: np.ndarray = field(default_factory=lambda: np.empty(0))
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.empty(0))


def _active_set(H, c, G, h, E, f, z0, max_iter):
    """Core primal active-set loop for min 1/2 z'Hz + c'z, Gz >= h, Ez = f.

    Assumes z0 is feasible.  Returns (z, lambda_ineq, nu_eq, iterations).
    """
    d = H.shape[0]
    mi = G.shape[0]
    me = E.shape[0]
    z = z0.astype(float).copy()
    working = [i for i in range(mi) if G[i] @ z - h[i] <= _FEAS_TOL]
    lam_full = np.zeros(mi)
    nu = np.zeros(me)

    for it in range(1, max_iter + 1):
        gw = G[working] if working else np.zeros((0, d))
        k = len(working)
        # KKT system for the equality-constrained subproblem
        kkt = np.zeros((d + me + k, d + me + k))
        kkt[:d, :d] = H
        if me:
            kkt[:d, d : d + me] = -E.T
            kkt[d : d + me, :d] = E
        if k:
            kkt[:d, d + me :] = -gw.T
            kkt[d + me :, :d] = gw
        rhs = np.concatenate([-(H @ z + c), np.zeros(me + k)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p = sol[:d]
        nu = sol[d : d + me]
        lam_w = sol[d + me :]

        step_scale = 1.0 + np.max(np.abs(z), initial=0.0)
        if np.max(np.abs(p), initial=0.0) <= _STEP_TOL * step_scale:
            lam_full[:] = 0.0
            lam_full[working] = lam_w
            if k == 0 or np.min(lam_w) >= -_MULT_TOL:
                return z, lam_full, nu, it
            # drop the most negative multiplier (lowest index on ties)
            worst = min(
                range(k), key=lambda j: (lam_w[j], working[j])
            )
            working.pop(worst)
            continue

        # step length limited by inactive constraints
        alpha = 1.0
        blocker = -1
        for i in range(mi):
            if i in working:
                continue
            gp = G[i] @ p
            if gp < -1e-13:
                slack = G[i] @ z - h[i]
                a_i = max(slack, 0.0) / (-gp)
                if a_i < alpha - 1e-13:
                    alpha = a_i
                    blocker = i
        z = z + alpha * p
        if blocker >= 0:
            working.append(blocker)
            working.sort()

    raise IterationLimitError(
        f"active-set solver exceeded {max_iter} iterations", best_iterate=z
    )


def _phase1(G, h, E, f, max_iter):
    """Feasibility start via a slack QP; raises on infeasibility."""
    d = G.shape[1]
    mi = G.shape[0]
    me = E.shape[0]
    if me:
        z0, *_ = np.linalg.lstsq(E, f, rcond=None)
        if np.max(np.abs(E @ z0 - f), initial=0.0) > 1e-8:
            raise InfeasibleProblemError("equality constraints are inconsistent")
    else:
        z0 = np.zeros(d)
    if mi == 0:
        return z0, 0
    viol = h - G @ z0
    if np.max(viol, initial=0.0) <= _FEAS_TOL:
        return z0, 0
    s0 = np.maximum(viol, 0.0)

    # variables (z, s): min ||s||^2 s.t. Gz + s >= h, s >= 0, Ez = f; the
    # flat z directions are handled by the minimum-norm subproblem solves
    H = np.diag(np.concatenate([np.zeros(d), np.full(mi, 2.0)]))
    c = np.zeros(d + mi)
    G_ext = np.block([[G, np.eye(mi)], [np.zeros((mi, d)), np.eye(mi)]])
    h_ext = np.concatenate([h, np.zeros(mi)])
    if me:
        E_ext = np.hstack([E, np.zeros((me, mi))])
    else:
        E_ext = np.zeros((0, d + mi))
    start = np.concatenate([z0, s0])
    zs, _, _, iters = _active_set(H, c, G_ext, h_ext, E_ext, f, start, max_iter)
    z = zs[:d]
    residual = np.max(h - G @ z, initial=0.0)
    if residual > 1e-7:
        raise InfeasibleProblemError(
            f"no feasible point found (best remaining violation {residual:.3e})"
        )
    return z, iters


def solve(problem: QpProblem, z0: np.ndarray | None = None,
          dim_cap: int = DEFAULT_DIM_CAP, max_iter: int | None = None) -> QpSolution:
    """Solve the constrained least-squares problem.

    ``z0`` may supply a known feasible start (skips phase 1 when it checks
    out).  Raises :class:`InfeasibleProblemError` for empty feasible sets
    and :class:`IterationLimitError` (with the best iterate attached) if the
    active-set loop fails to terminate.
    """
    d = problem.dim
    if d > dim_cap:
        raise ValueError(f"problem dimension {d} exceeds cap {dim_cap}")
    G = problem.g if problem.g is not None else np.zeros((0, d))
    h = problem.h if problem.h is not None else np.zeros(0)
    E = problem.e if problem.e is not None else np.zeros((0, d))
    f = problem.f if problem.f is not None else np.zeros(0)
    if max_iter is None:
        max_iter = 50 * (d + G.shape[0] + E.shape[0] + 2)

    H = 2.0 * (problem.a.T @ problem.a + problem.ridge * np.eye(d))
    c = -2.0 * (problem.a.T @ problem.b)

    phase1_iters = 0
    start = None
    if z0 is not None:
        z0 = np.asarray(z0, dtype=float).ravel()
        if z0.shape[0] != d:
            raise DimensionMismatchError("z0 has wrong dimension")
        feasible = (
            np.max(h - G @ z0, initial=0.0) <= _FEAS_TOL
            and np.max(np.abs(E @ z0 - f), initial=0.0) <= _FEAS_TOL
        )
        if feasible:
            start = z0
    if start is None:
        start, phase1_iters = _phase1(G, h, E, f, max_iter)

    z, lam, nu, iters = _active_set(H, c, G, h, E, f, start, max_iter)

    grad = H @ z + c
    stationarity = float(
        np.max(np.abs(grad - E.T @ nu - G.T @ lam), initial=0.0)
    )
    viol_ineq = np.max(h - G @ z, initial=0.0)
    viol_eq = np.max(np.abs(E @ z - f), initial=0.0)
    slacks = G @ z - h
    comp = float(np.max(np.abs(lam * slacks), initial=0.0))
    report = KktReport(
        stationarity=stationarity,
        max_violation=float(max(viol_ineq, viol_eq, 0.0)),
        comp_slackness=comp,
        objective=problem.objective(z),
        iterations=iters,
        phase1_iterations=phase1_iters,
    )
    return QpSolution(z=z, report=report, multipliers_ineq=lam, multipliers_eq=nu)


def solve_simplex_ls(P: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Least-squares combination weights constrained to the simplex.

    Solves ``min ||y - P w||^2`` over ``w >= 0, sum(w) = 1``; the uniform
    vector is always feasible, so no phase 1 is needed.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    k = P.shape[1]
    if k < 1:
        raise ValueError("need at least one column")
    if k == 1:
        return np.array([1.0])
    problem = QpProblem(
        a=P,
        b=y,
        g=np.eye(k),
        h=np.zeros(k),
        e=np.ones((1, k)),
        f=np.array([1.0]),
        ridge=ridge,
    )
    return solve(problem, z0=np.full(k, 1.0 / k)).z
