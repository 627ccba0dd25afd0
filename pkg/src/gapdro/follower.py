"""Exact worst-case margin distributions over a 1-D Wasserstein ball.

Given an empirical margin sample, a radius epsilon and a piecewise-linear
under-approximation of the logistic loss, the adversary's problem

    sup { E_alpha[surrogate] : W1(alpha, empirical) <= epsilon,
                               support(alpha) within the window }

collapses to a finite LP.  Per sample i and piece k the variables are a
mass split s_ik and a signed displacement budget q_ik (split into q+ and
q- so the transport cost is linear):

    maximize (1/N) sum_ik [ s_ik (a_k m_i + b_k) - a_k q_ik ]
    s.t.     sum_k s_ik = 1                  for every i
             (1/N) sum_ik |q_ik| <= epsilon
             lo * s_ik <= s_ik m_i - q_ik <= hi * s_ik
             s_ik >= 0

The maximizer is read back as a discrete distribution with atoms
z_ik = m_i - q_ik / s_ik and weights s_ik / N.  An infinite window drops
the corresponding perspective rows, in which case the optimum equals the
Lipschitz closed form mean(surrogate) + epsilon * max |slope| exactly (the
budget rides the steepest piece; no maximizing measure exists, and the
returned extremal keeps only the finite-mass atoms).

Verification routes kept deliberately separate from the simplex path:
closed_form_value (analytic) and the transport LP on a discretized grid
(solved by scipy's HiGHS backend), so the two sides never share solver code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .gapspace import (
    DiscreteGapDistribution,
    SupportWindow,
    logistic_loss,
    push_forward,
    push_forward_weighted,
    validate_margins,
    w1_distance,
)
from .lp import LinearProgram, solve_lp
from .pwl import TangentSet, eval_surrogate

DEFAULT_EPSILON = 0.01
DEFAULT_K = 6

# Mass below this is dropped when extracting the extremal distribution.
DROP_TOL = 1e-9
# Residual slack allowed on the solution invariants.
SOLUTION_TOL = 1e-7
# Dense-program size guard, in matrix entries of the standard form.
MAX_DENSE_ENTRIES = 20_000_000
# The grid oracle is exponential in spirit; keep it to toy sizes.
BRUTE_FORCE_MAX_N = 8


@dataclass(frozen=True)
class FollowerProblem:
    margins: np.ndarray
    tangents: TangentSet
    epsilon: float
    window: SupportWindow

    def __post_init__(self):
        object.__setattr__(self, "margins", validate_margins(self.margins))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.tangents.space != "margin":
            raise ValueError("worst-case solver needs a margin-space tangent set")
        if not np.all((self.margins >= self.window.lo) & (self.margins <= self.window.hi)):
            raise ValueError("margins must lie inside the support window")

    @property
    def n(self) -> int:
        return int(self.margins.size)

    @property
    def k(self) -> int:
        return self.tangents.k


@dataclass(frozen=True)
class AssembledProgram:
    """LP data plus the index layout needed to unpack a solution vector."""

    lp: LinearProgram
    n: int
    k: int

    def unpack(self, x: np.ndarray):
        nk = self.n * self.k
        s = x[:nk].reshape(self.n, self.k)
        q = (x[nk: 2 * nk] - x[2 * nk: 3 * nk]).reshape(self.n, self.k)
        return s, q


@dataclass(frozen=True)
class FollowerSolution:
    """Worst-case solve output: mass split, displacements and the extremal measure."""

    margins: np.ndarray
    epsilon: float
    window: SupportWindow
    tangents: TangentSet
    s: np.ndarray
    q: np.ndarray
    value: float
    extremal: DiscreteGapDistribution

    @property
    def n(self) -> int:
        return int(self.margins.size)

    @property
    def piece_weights(self) -> np.ndarray:
        """Per-sample mass split over pieces; rows sum to one."""
        return self.s

    @property
    def slope_weights(self) -> np.ndarray:
        """Per-sample aggregated piece slope, sum_k s_ik a_k (negative)."""
        return self.s @ self.tangents.slopes

    def transport_shifts(self) -> np.ndarray:
        """Per (i, k) displacement q_ik / s_ik of the surviving atoms, else 0."""
        shifts = np.zeros_like(self.s)
        live = self.s > DROP_TOL
        shifts[live] = self.q[live] / self.s[live]
        return shifts

    def feasibility_report(self) -> dict:
        n = self.n
        row_sum_err = float(np.max(np.abs(self.s.sum(axis=1) - 1.0)))
        min_s = float(self.s.min())
        budget = float(np.abs(self.q).sum() / n)
        live = self.s > DROP_TOL
        atoms = np.where(live, self.margins[:, None] - self.transport_shifts(), self.margins[:, None])
        lo_viol = float(np.max(np.clip(self.window.lo - atoms[live], 0, None), initial=0.0))
        hi_viol = float(np.max(np.clip(atoms[live] - self.window.hi, 0, None), initial=0.0))
        w1 = w1_distance(self.extremal, push_forward(self.margins))
        weight_drift = float(abs(1.0 - self.s[live].sum() / n))
        return {
            "row_sum_err": row_sum_err,
            "min_s": min_s,
            "budget_used": budget,
            "window_violation": max(lo_viol, hi_viol),
            "w1_to_center": w1,
            "weight_drift": weight_drift,
        }


def assemble_program(problem: FollowerProblem) -> AssembledProgram:
    """Lay out the finite worst-case LP for the revised simplex solver.

    Variable order: s (N*K, sample-major), then q+ (N*K), then q- (N*K).
    Row order: N simplex equalities, one budget row, then the lo-side and
    hi-side window rows for each finite window side.
    """
    m = problem.margins
    ts = problem.tangents
    n, k = problem.n, problem.k
    nk = n * k
    lo_rows = nk if np.isfinite(problem.window.lo) else 0
    hi_rows = nk if np.isfinite(problem.window.hi) else 0
    n_rows = n + 1 + lo_rows + hi_rows
    n_cols = 3 * nk
    if (n_rows + 2) * (n_cols + n_rows + 2) > MAX_DENSE_ENTRIES:
        raise ValueError("worst-case program too large for a dense solve; use grouping")

    a = ts.slopes
    b = ts.intercepts

    obj = np.empty(n_cols)
    obj[:nk] = ((a[None, :] * m[:, None] + b[None, :]) / n).reshape(-1)
    obj[nk: 2 * nk] = np.tile(-a / n, n)
    obj[2 * nk:] = np.tile(a / n, n)

    lhs = np.zeros((n_rows, n_cols))
    relations = []
    rhs = np.zeros(n_rows)

    for i in range(n):
        lhs[i, i * k: (i + 1) * k] = 1.0
        relations.append("=")
        rhs[i] = 1.0

    r = n
    lhs[r, nk: 3 * nk] = 1.0 / n
    relations.append("<=")
    rhs[r] = problem.epsilon
    r += 1

    idx = np.arange(nk)
    sample = idx // k
    if lo_rows:
        # s_ik m_i - q_ik >= lo s_ik  becomes  -(m_i - lo) s_ik + q+ - q- <= 0
        rows = r + idx
        lhs[rows, idx] = -(m[sample] - problem.window.lo)
        lhs[rows, nk + idx] = 1.0
        lhs[rows, 2 * nk + idx] = -1.0
        relations.extend(["<="] * nk)
        r += nk
    if hi_rows:
        # s_ik m_i - q_ik <= hi s_ik  becomes  (m_i - hi) s_ik - q+ + q- <= 0
        rows = r + idx
        lhs[rows, idx] = m[sample] - problem.window.hi
        lhs[rows, nk + idx] = -1.0
        lhs[rows, 2 * nk + idx] = 1.0
        relations.extend(["<="] * nk)
        r += nk

    lp = LinearProgram(objective=obj, lhs=lhs, relations=tuple(relations), rhs=rhs)
    return AssembledProgram(lp=lp, n=n, k=k)


def solve_worst_case(
    margins,
    tangents: TangentSet,
    epsilon: float = DEFAULT_EPSILON,
    window: SupportWindow | None = None,
) -> FollowerSolution:
    """Solve the worst-case program exactly and extract the extremal measure.

    window=None derives the data window [min - tau, max + tau] with the
    default pad.  Atoms whose mass is at most 1e-9 are dropped and the
    remaining weights renormalized; the drift this introduces stays below
    the solution tolerance because mass splits sum to one per sample.
    """
    m = validate_margins(margins)
    if window is None:
        window = SupportWindow.from_margins(m)
    problem = FollowerProblem(m, tangents, float(epsilon), window)
    assembled = assemble_program(problem)
    sol = solve_lp(assembled.lp)
    if sol.status != "optimal":
        raise RuntimeError(f"worst-case program unexpectedly {sol.status}")
    s, q = assembled.unpack(sol.x)

    report_rows = np.abs(s.sum(axis=1) - 1.0)
    if float(report_rows.max()) > 1e-5:
        raise RuntimeError("simplex returned an infeasible mass split")

    live = s > DROP_TOL
    shifts = np.zeros_like(s)
    shifts[live] = q[live] / s[live]
    atoms = (m[:, None] - shifts)[live]
    weights = (s / problem.n)[live]
    atoms = np.clip(atoms, window.lo, window.hi)
    weights = weights / weights.sum()
    extremal = push_forward_weighted(atoms, weights)

    return FollowerSolution(
        margins=m,
        epsilon=float(epsilon),
        window=window,
        tangents=tangents,
        s=s,
        q=q,
        value=float(sol.value),
        extremal=extremal,
    )


def closed_form_value(margins, epsilon: float) -> float:
    """Worst-case expectation of the true logistic loss with unbounded support.

    For a 1-Lipschitz loss whose slope is attained in the tail, the
    supremum over the W1 ball is the empirical mean plus epsilon.
    """
    m = validate_margins(margins)
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return float(np.mean(logistic_loss(m)) + epsilon)


def surrogate_closed_form_value(margins, tangents: TangentSet, epsilon: float) -> float:
    """Closed form for the surrogate with no active window: mean + epsilon * max |slope|."""
    m = validate_margins(margins)
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return float(np.mean(eval_surrogate(tangents, m)) + epsilon * tangents.max_abs_slope)


def _piece_crossings(ts: TangentSet) -> np.ndarray:
    a, b = ts.slopes, ts.intercepts
    if a.size < 2:
        return np.zeros(0)
    return (b[1:] - b[:-1]) / (a[:-1] - a[1:])


def _transport_grid_value(
    margins: np.ndarray,
    loss_at,
    epsilon: float,
    window: SupportWindow,
    grid_step: float,
    extra_candidates: np.ndarray,
) -> float:
    """Independent oracle: the same sup as a transport LP over grid candidates.

    Mass x_ij flows from sample i to candidate z_j, paying |m_i - z_j| of
    the shared budget and collecting loss_at(z_j).  Solved with scipy's LP
    so the oracle shares no code with the simplex route.
    """
    if not window.finite:
        raise ValueError("grid oracle needs a finite window")
    if margins.size > BRUTE_FORCE_MAX_N:
        raise ValueError(f"grid oracle limited to N <= {BRUTE_FORCE_MAX_N}")
    if grid_step <= 0:
        raise ValueError("grid step must be > 0")
    n_grid = int(np.ceil((window.hi - window.lo) / grid_step)) + 1
    grid = np.linspace(window.lo, window.hi, n_grid)
    cand = np.concatenate([grid, margins, extra_candidates])
    cand = np.unique(np.clip(cand, window.lo, window.hi))
    n, j = margins.size, cand.size

    # maximize sum_ij x_ij loss(z_j): linprog minimizes, so negate.
    cost = -np.tile(loss_at(cand), n)
    rows = np.repeat(np.arange(n), j)
    cols = np.arange(n * j)
    a_eq = sp.csr_matrix((np.ones(n * j), (rows, cols)), shape=(n, n * j))
    b_eq = np.full(n, 1.0 / n)
    # Row masses already sum to 1/n each, so the move cost needs no rescale.
    move = np.abs(margins[:, None] - cand[None, :]).reshape(1, -1)
    a_ub = sp.csr_matrix(move)
    res = linprog(cost, A_ub=a_ub, b_ub=[epsilon], A_eq=a_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport oracle failed: {res.message}")
    return float(-res.fun)


def brute_force_value(
    margins,
    tangents: TangentSet,
    epsilon: float,
    window: SupportWindow,
    grid_step: float = 1e-3,
) -> float:
    """Grid-transport oracle for the surrogate objective (small N only)."""
    m = validate_margins(margins)
    kinks = _piece_crossings(tangents)
    return _transport_grid_value(m, lambda z: eval_surrogate(tangents, z),
                                 epsilon, window, grid_step, kinks)


def true_loss_grid_value(
    margins,
    epsilon: float,
    window: SupportWindow,
    grid_step: float = 1e-3,
) -> float:
    """Grid-transport oracle for the untouched logistic loss (small N only)."""
    m = validate_margins(margins)
    return _transport_grid_value(m, logistic_loss, epsilon, window, grid_step,
                                 np.zeros(0))
