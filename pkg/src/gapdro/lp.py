"""Dense linear programming via two-phase revised simplex.

Self-contained on purpose: the worst-case solver needs bit-reproducible
pivoting across runs and platforms, which rules out delegating to an
external solver with its own presolve heuristics.  Problems are small and
dense (a few hundred rows, a couple thousand columns), so an explicit basis
inverse with periodic refactorization is fast enough and easy to audit.

Maximization canonical form.  Rows may be '<=', '=' or '>='; variables have
finite lower bounds (default 0) and optional upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Constraint feasibility tolerance (absolute, on residuals).
FEAS_TOL = 1e-7
# Reduced-cost optimality tolerance.
OPT_TOL = 1e-7
# Pivot magnitude floor; anything smaller is treated as zero.
PIVOT_TOL = 1e-9
# Consecutive degenerate pivots before switching to Bland's rule.
DEGEN_SWITCH = 40
# Basis inverse refactorization cadence, in pivots.
REFACTOR_EVERY = 100

RELATIONS = ("<=", "=", ">=")


@dataclass
class LinearProgram:
    """max objective . x  subject to  lhs x (rel) rhs, lower <= x <= upper."""

    objective: np.ndarray
    lhs: np.ndarray
    relations: tuple
    rhs: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64).reshape(-1)
        n = self.objective.size
        if n == 0:
            raise ValueError("program needs at least one variable")
        self.lhs = (np.asarray(self.lhs, dtype=np.float64).reshape(-1, n)
                    if np.size(self.lhs) else np.zeros((0, n)))
        self.rhs = np.asarray(self.rhs, dtype=np.float64).reshape(-1)
        self.relations = tuple(self.relations)
        if self.lhs.shape[0] != self.rhs.size or self.lhs.shape[0] != len(self.relations):
            raise ValueError("row count mismatch between lhs, relations and rhs")
        for rel in self.relations:
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=np.float64).reshape(-1)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bound length mismatch")
        if not np.all(np.isfinite(self.lower)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.upper < self.lower):
            raise ValueError("upper bound below lower bound")
        if (not np.all(np.isfinite(self.lhs)) or not np.all(np.isfinite(self.rhs))
                or not np.all(np.isfinite(self.objective))):
            raise ValueError("program coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.lhs.shape[0]


@dataclass
class LpSolution:
    status: str  # 'optimal' | 'infeasible' | 'unbounded'
    x: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class SimplexStall(RuntimeError):
    """Iteration limit exceeded; indicates a solver bug or a pathological program."""


def _standard_form(prog: LinearProgram):
    """Rewrite as max c.y, Ay = b, y >= 0 with b >= 0.

    The first n_real columns map back to the original variables through
    x = prog.lower + y[:n_real]; the rest are slacks.
    """
    n = prog.n_vars
    rows = [prog.lhs]
    rels = list(prog.relations)
    rhs = [prog.rhs - prog.lhs @ prog.lower]

    span = prog.upper - prog.lower
    finite_ub = np.where(np.isfinite(span))[0]
    if finite_ub.size:
        ub_rows = np.zeros((finite_ub.size, n))
        ub_rows[np.arange(finite_ub.size), finite_ub] = 1.0
        rows.append(ub_rows)
        rels.extend(["<="] * finite_ub.size)
        rhs.append(span[finite_ub])

    A = np.vstack(rows)
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    m = A.shape[0]

    for i, rel in enumerate(rels):
        if rel == ">=":
            A[i] *= -1.0
            b[i] *= -1.0
            rels[i] = "<="

    slack_rows = [i for i, rel in enumerate(rels) if rel == "<="]
    n_slack = len(slack_rows)
    full = np.zeros((m, n + n_slack))
    full[:, :n] = A
    for j, i in enumerate(slack_rows):
        full[i, n + j] = 1.0

    neg = b < 0
    full[neg] *= -1.0
    b = np.where(neg, -b, b)

    c_full = np.zeros(n + n_slack)
    c_full[:n] = prog.objective
    return np.ascontiguousarray(full), b, c_full, n


class _RevisedSimplex:
    """Pivot engine over max c.y, Ay = b (b >= 0), y >= 0 with explicit basis inverse."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.n_art = 0
        self.basis = None
        self.b_inv = None
        self.xb = None
        self.iterations = 0
        self._since_refactor = 0

    def _refactor(self):
        B = self.A[:, self.basis]
        self.b_inv = np.linalg.solve(B, np.eye(self.m))
        self.xb = self.b_inv @ self.b
        np.clip(self.xb, 0.0, None, out=self.xb)
        self._since_refactor = 0

    def install_starting_basis(self):
        """Slack columns where the row has one, artificial columns elsewhere."""
        basis = np.full(self.m, -1, dtype=np.intp)
        used = set()
        for i in range(self.m):
            row = self.A[i]
            chosen = -1
            for j in np.where(row == 1.0)[0][::-1]:
                if int(j) not in used and np.count_nonzero(self.A[:, j]) == 1:
                    chosen = int(j)
                    break
            if chosen >= 0:
                basis[i] = chosen
                used.add(chosen)
        need = np.where(basis < 0)[0]
        self.n_art = need.size
        if self.n_art:
            art = np.zeros((self.m, self.n_art))
            for k, i in enumerate(need):
                art[i, k] = 1.0
                basis[i] = self.n + k
            self.A = np.ascontiguousarray(np.hstack([self.A, art]))
        self.basis = basis
        self._refactor()

    def _pivot(self, enter: int, leave_row: int, direction: np.ndarray, step: float):
        piv = direction[leave_row]
        new_row = self.b_inv[leave_row] / piv
        d = direction.copy()
        d[leave_row] = 0.0
        self.b_inv -= np.outer(d, new_row)
        self.b_inv[leave_row] = new_row
        self.xb -= step * direction
        self.xb[leave_row] = step
        np.clip(self.xb, 0.0, None, out=self.xb)
        self.basis[leave_row] = enter
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def run(self, c: np.ndarray, allowed: np.ndarray, max_iter: int) -> str:
        """Pivot to optimality or detect unboundedness.  allowed masks enterable columns."""
        bland = False
        degen_streak = 0
        n_total = self.A.shape[1]
        c_ext = np.zeros(n_total)
        c_ext[: c.size] = c
        basic_mask = np.zeros(n_total, dtype=bool)
        while True:
            if self.iterations >= max_iter:
                raise SimplexStall(f"simplex exceeded {max_iter} iterations")
            self.iterations += 1

            y = c_ext[self.basis] @ self.b_inv
            reduced = c_ext - y @ self.A
            basic_mask[:] = False
            basic_mask[self.basis] = True
            reduced[basic_mask] = -np.inf
            reduced[~allowed] = -np.inf

            if bland:
                improving = np.where(reduced > OPT_TOL)[0]
                if improving.size == 0:
                    return "optimal"
                enter = int(improving[0])
            else:
                enter = int(np.argmax(reduced))
                if reduced[enter] <= OPT_TOL:
                    return "optimal"

            direction = self.b_inv @ self.A[:, enter]
            pos = direction > PIVOT_TOL
            if not np.any(pos):
                return "unbounded"
            ratios = np.full(self.m, np.inf)
            ratios[pos] = self.xb[pos] / direction[pos]
            step = float(ratios.min())
            # Lowest basis-column index among ties keeps the pivot path
            # deterministic and matches Bland's leaving rule.
            tied = np.where(ratios <= step + 1e-12)[0]
            leave_row = int(tied[np.argmin(self.basis[tied])])

            if step <= 1e-12:
                degen_streak += 1
                if degen_streak >= DEGEN_SWITCH:
                    bland = True
            else:
                degen_streak = 0
                bland = False

            self._pivot(enter, leave_row, direction, step)

    def drive_out_artificials(self, n_real_cols: int):
        """Swap any basic artificial (at value 0) for a real column when possible."""
        for i in range(self.m):
            if self.basis[i] < n_real_cols:
                continue
            row = self.b_inv[i] @ self.A[:, :n_real_cols]
            row[self.basis[self.basis < n_real_cols]] = 0.0
            candidates = np.where(np.abs(row) > PIVOT_TOL)[0]
            if candidates.size == 0:
                continue  # redundant row: artificial stays basic, pinned at zero
            self.basis[i] = int(candidates[0])
            self._refactor()


def solve_lp(prog: LinearProgram, max_iter: int | None = None) -> LpSolution:
    """Two-phase revised simplex.  Returns status 'optimal', 'infeasible' or 'unbounded'.

    Deterministic by construction: Dantzig pricing with lowest-index tie
    breaking, switching to Bland's rule after a degenerate streak, so
    repeated solves of one program always take the same pivot path.
    """
    A, b, c, n_real = _standard_form(prog)
    m, n_cols = A.shape
    if max_iter is None:
        max_iter = 20000 + 50 * (m + n_cols)

    if m == 0:
        if np.any(c[:n_real] > OPT_TOL):
            return LpSolution(status="unbounded")
        x = prog.lower.copy()
        return LpSolution(status="optimal", x=x, value=float(prog.objective @ x))

    core = _RevisedSimplex(A, b)
    core.install_starting_basis()

    if core.n_art:
        phase1 = np.concatenate([np.zeros(n_cols), -np.ones(core.n_art)])
        allowed = np.ones(core.A.shape[1], dtype=bool)
        status = core.run(phase1, allowed, max_iter)
        if status != "optimal":
            raise SimplexStall("phase 1 cannot be unbounded; solver invariant broken")
        art_mass = float(core.xb[core.basis >= n_cols].sum())
        if art_mass > FEAS_TOL:
            return LpSolution(status="infeasible", iterations=core.iterations)
        core.drive_out_artificials(n_cols)

    allowed = np.zeros(core.A.shape[1], dtype=bool)
    allowed[:n_cols] = True
    status = core.run(c, allowed, max_iter)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=core.iterations)

    core._refactor()
    x_full = np.zeros(core.A.shape[1])
    x_full[core.basis] = core.xb
    x = prog.lower + x_full[:n_real]
    value = float(prog.objective @ x)
    return LpSolution(status="optimal", x=x, value=value, iterations=core.iterations)
