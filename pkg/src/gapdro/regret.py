"""Preference performance, gap-space regret, and the robustness checks.

Performance of a policy under a gap distribution is the expected
log-sigmoid of the gaps.  Evaluating a *different* policy under a fixed
distribution needs a convention, since gaps are policy-dependent: each atom
is re-centered by the margin difference of the comparator and the policy
the distribution is anchored to, per originating pair.  Under that
convention a distribution built by shifting the anchor policy's own
margins evaluates every comparator at the same shift, so comparisons are
provenance-free.

Regret of a policy under a distribution is the best comparator performance
on a finite policy grid minus the policy's own.  The checks verify, on
solved instances, that the worst-case performance drop is within the
transport budget plus the surrogate gap, that trained-policy regret stays
bounded over sampled adversaries, and that a plain baseline's regret grows
with the shift while the robust run's does not.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .follower import DROP_TOL, FollowerSolution, closed_form_value
from .gapspace import DiscreteGapDistribution, log_sigmoid, logistic_loss, push_forward, w1_distance
from .grouping import thread_cap
from .leader import LOGIT_CLAMP, PolicyParams, ToyWorld, margins_of

# LP optimality tolerance carried into the approximation budget.
ETA_DEFAULT = 1e-7

GRID_POINTS_DEFAULT = 41


@dataclass(frozen=True)
class ApproxBudget:
    """Additive approximation terms entering the regret bound."""

    delta_pl: float
    d_h_proxy: float = 0.0
    eta: float = ETA_DEFAULT

    def __post_init__(self):
        if self.delta_pl < 0 or self.d_h_proxy < 0 or self.eta < 0:
            raise ValueError("approximation budget terms must be >= 0")

    def regret_bound(self, epsilon: float) -> float:
        return 2.0 * epsilon + 2.0 * (self.delta_pl + self.d_h_proxy + self.eta)


@dataclass(frozen=True)
class PolicyGrid:
    """Finite comparator family: logit tables scaled along the true-reward direction."""

    policies: tuple
    scales: tuple

    def __post_init__(self):
        if len(self.policies) == 0:
            raise ValueError("policy grid must be nonempty")

    def __len__(self) -> int:
        return len(self.policies)

    @staticmethod
    def build(
        world: ToyWorld,
        beta: float,
        n_points: int = GRID_POINTS_DEFAULT,
        lo: float = -2.0,
        hi: float | None = None,
    ) -> "PolicyGrid":
        """Sweep theta = c * true_reward for c on a shared grid.

        The top of the sweep touches the logit clamp so the family contains
        the strongest representable reward-aligned policy.
        """
        if n_points < 1:
            raise ValueError("grid needs at least one point")
        rmax = max(float(np.max(np.abs(world.true_reward[p]))) for p in range(world.n_prompts))
        if hi is None:
            hi = LOGIT_CLAMP / rmax if rmax > 0 else 1.0
        if not hi > lo:
            raise ValueError("grid range must satisfy hi > lo")
        scales = np.linspace(lo, hi, n_points) if n_points > 1 else np.array([hi])
        policies = tuple(
            PolicyParams(
                tuple(
                    np.clip(c * world.true_reward[p], -LOGIT_CLAMP, LOGIT_CLAMP)
                    for p in range(world.n_prompts)
                ),
                beta,
            )
            for c in scales
        )
        return PolicyGrid(policies, tuple(float(c) for c in scales))


def _check_alignment(alpha: DiscreteGapDistribution, n_pairs: int, pair_index) -> np.ndarray:
    if pair_index is None:
        if len(alpha.atoms) != n_pairs:
            raise ValueError(
                f"distribution has {len(alpha.atoms)} atoms but {n_pairs} pairs; "
                "pass pair_index to align them"
            )
        return np.arange(n_pairs)
    idx = np.asarray(pair_index, dtype=np.intp)
    if idx.shape != alpha.atoms.shape:
        raise ValueError("pair_index must align one pair to each atom")
    if idx.size and (idx.min() < 0 or idx.max() >= n_pairs):
        raise ValueError("pair_index out of range")
    return idx


def preference_value(
    policy: PolicyParams,
    alpha: DiscreteGapDistribution,
    world: ToyWorld,
    pairs,
    anchor_margins: np.ndarray,
    pair_index=None,
) -> float:
    """Expected log-sigmoid gap of `policy` under `alpha` anchored elsewhere.

    Atom j, which originated from pair pair_index[j] under the anchor
    policy, is re-centered by the comparator-minus-anchor margin of that
    pair before scoring.
    """
    idx = _check_alignment(alpha, len(pairs), pair_index)
    own = margins_of(policy, world, pairs)
    recentered = alpha.atoms + own[idx] - np.asarray(anchor_margins)[idx]
    return float(np.sum(alpha.weights * log_sigmoid(recentered)))


def regret(
    policy: PolicyParams,
    alpha: DiscreteGapDistribution,
    grid: PolicyGrid,
    world: ToyWorld,
    pairs,
    pair_index=None,
) -> float:
    """Best comparator performance under alpha minus the policy's own.

    Nonnegative whenever the policy itself belongs to the grid.  The
    distribution is anchored at `policy`: its atoms are that policy's
    (possibly transported) margins on the given pairs.
    """
    idx = _check_alignment(alpha, len(pairs), pair_index)
    own_value = float(np.sum(alpha.weights * log_sigmoid(alpha.atoms)))
    anchor = margins_of(policy, world, pairs)

    def comparator_value(member: PolicyParams) -> float:
        other = margins_of(member, world, pairs)
        return float(np.sum(alpha.weights * log_sigmoid(alpha.atoms + other[idx] - anchor[idx])))

    workers = min(thread_cap(), len(grid))
    if workers > 1 and len(grid) >= 8:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(comparator_value, grid.policies))
    else:
        values = [comparator_value(member) for member in grid.policies]
    return max(values) - own_value


def shifted_center_regret(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    grid: PolicyGrid,
    delta: float,
) -> float:
    """Regret against the policy's own margin distribution shifted left by delta.

    Under the anchoring convention every comparator is then scored at the
    common shift, mean log-sigmoid(margin - delta), so this is the regret
    of facing an adversary that degrades every comparison by delta.
    """
    if delta < 0:
        raise ValueError("shift must be >= 0")
    center = margins_of(policy, world, pairs)
    alpha = push_forward(center - delta)
    return regret(policy, alpha, grid, world, pairs)


def solution_distribution(solution: FollowerSolution) -> tuple[DiscreteGapDistribution, np.ndarray]:
    """Worst-case distribution of a follower solve, with atom-to-pair provenance.

    Unlike the solution's extremal field this keeps one atom per live cell
    without merging, so each atom can be re-centered by its own pair.
    """
    live = solution.s > DROP_TOL
    pair_idx, _piece_idx = np.nonzero(live)
    n = solution.s.shape[0]
    atoms = solution.margins[pair_idx] - solution.q[live] / solution.s[live]
    atoms = solution.window.clip(atoms)
    weights = solution.s[live] / n
    weights = weights / weights.sum()
    return DiscreteGapDistribution(atoms, weights), pair_idx


def solution_performance(solution: FollowerSolution) -> float:
    """Anchor-policy performance under the solved worst-case distribution."""
    dist, pair_idx = solution_distribution(solution)
    return float(np.sum(dist.weights * log_sigmoid(dist.atoms)))


def check_worstcase_drop(
    solution: FollowerSolution,
    budget: ApproxBudget,
    epsilon: float | None = None,
    tol: float = 1e-6,
) -> dict:
    """Verify the worst-case performance drop on one solved instance.

    p_star is the exact worst-case performance over the transport ball
    (center performance minus epsilon); p_hat is the performance under the
    solver's distribution.  The solved adversary may overshoot the exact
    worst case by at most the surrogate gap, so
    p_star >= p_hat - epsilon - delta_pl - tol must hold; the drop from the
    center is itself within epsilon + delta_pl + tol.
    """
    eps = solution.epsilon if epsilon is None else float(epsilon)
    p_center = -float(np.mean(logistic_loss(solution.margins)))
    p_star = -closed_form_value(solution.margins, eps)
    p_hat = solution_performance(solution)
    drop = p_center - p_hat
    slack = p_star - (p_hat - eps - budget.delta_pl - tol)
    passed = slack >= 0 and drop <= eps + budget.delta_pl + tol
    return {
        "p_center": p_center,
        "p_star": p_star,
        "p_hat": p_hat,
        "drop": drop,
        "slack": slack,
        "passed": bool(passed),
    }


def feasible_perturbations(
    margins: np.ndarray,
    epsilon: float,
    count: int,
    rng: np.random.Generator,
) -> list[DiscreteGapDistribution]:
    """Random members of the transport ball around the empirical margins.

    Each draws signed atom shifts and rescales them so the average absolute
    shift is at most epsilon, which bounds the transport cost directly.
    """
    margins = np.asarray(margins, dtype=np.float64)
    out = []
    for _ in range(count):
        shifts = rng.uniform(-1.0, 1.0, size=margins.size)
        mean_abs = float(np.mean(np.abs(shifts)))
        if mean_abs > 0:
            shifts = shifts * (epsilon * rng.uniform(0.0, 1.0) / mean_abs)
        out.append(push_forward(margins + shifts))
    return out


def check_sgpo_bound(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    solution: FollowerSolution,
    grid: PolicyGrid,
    budget: ApproxBudget,
    epsilon: float,
    n_perturbations: int = 50,
    rng_seed: int = 0,
    slack_tol: float = 1e-3,
) -> dict:
    """Sup of trained-policy regret over sampled adversaries vs the bound.

    The sample contains the solved worst-case distribution and random
    feasible perturbations of the policy's empirical margins; the bound is
    2*epsilon + 2*(delta_pl + d_h_proxy + eta) + slack_tol.
    """
    center = margins_of(policy, world, pairs)
    regrets = []

    dist, pair_idx = solution_distribution(solution)
    regrets.append(regret(policy, dist, grid, world, pairs, pair_index=pair_idx))

    rng = np.random.default_rng(rng_seed)
    for alpha in feasible_perturbations(center, epsilon, n_perturbations, rng):
        regrets.append(regret(policy, alpha, grid, world, pairs))

    sup_regret = float(np.max(regrets))
    bound = budget.regret_bound(epsilon) + slack_tol
    return {
        "sup_regret": sup_regret,
        "bound": bound,
        "passed": bool(sup_regret <= bound),
        "n_alphas": len(regrets),
        "regrets": regrets,
    }


def annotation_divergence(policy: PolicyParams, world: ToyWorld, dataset_pairs, reference_pairs) -> float:
    """Transport distance between the policy's margins on two pair sets.

    Used as the measurable stand-in for the annotation-error term of the
    regret bound: how far the training comparisons sit from the
    true-labeled ones, in gap space, under the trained policy.
    """
    a = push_forward(margins_of(policy, world, dataset_pairs))
    b = push_forward(margins_of(policy, world, reference_pairs))
    return w1_distance(a, b)


@dataclass(frozen=True)
class RegretPoint:
    delta: float
    dpo_regret: float
    sgpo_regret: float
    ratio: float
    w1_check: float


def dpo_regret_curve(
    world: ToyWorld,
    grid: PolicyGrid,
    deltas,
    plain_policy: PolicyParams,
    robust_policy: PolicyParams,
    pairs,
    epsilon: float,
) -> list[RegretPoint]:
    """Regret of both trained policies against targets drifting by delta.

    For each delta the target is the evaluated policy's own margins shifted
    left by delta (exact transport distance delta).  The ratio column is
    the theoretical comparison (delta - 2 eps) / (2 eps).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0 for the ratio column")
    points = []
    for delta in deltas:
        d = float(delta)
        if d < 0:
            raise ValueError("shift values must be >= 0")
        plain_center = margins_of(plain_policy, world, pairs)
        alpha = push_forward(plain_center - d)
        w1_check = w1_distance(alpha, push_forward(plain_center))
        points.append(
            RegretPoint(
                delta=d,
                dpo_regret=shifted_center_regret(plain_policy, world, pairs, grid, d),
                sgpo_regret=shifted_center_regret(robust_policy, world, pairs, grid, d),
                ratio=(d - 2.0 * epsilon) / (2.0 * epsilon),
                w1_check=float(w1_check),
            )
        )
    return points


def regret_curve_csv(points) -> str:
    lines = ["delta,dpo_regret,sgpo_regret,ratio"]
    for p in points:
        lines.append(f"{p.delta:.9g},{p.dpo_regret:.9g},{p.sgpo_regret:.9g},{p.ratio:.9g}")
    return "\n".join(lines) + "\n"


def ols_slope(xs, ys) -> float:
    """Least-squares slope of ys against xs."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 2:
        raise ValueError("need at least two points")
    xc = xs - xs.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0:
        raise ValueError("degenerate abscissae")
    return float(np.dot(xc, ys - ys.mean()) / denom)
