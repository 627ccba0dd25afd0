"""Distributionally robust preference optimization over 1-D gap distributions.

The package solves exact worst-case expectations of a piecewise-linear
lower bound of the pairwise logistic loss over Wasserstein balls of margin
distributions, runs self-annotation training loops on finite toy worlds
against that adversary, and checks the resulting regret guarantees against
a plain preference-fitting baseline.
"""

from .follower import (
    DEFAULT_EPSILON,
    DEFAULT_K,
    FollowerProblem,
    FollowerSolution,
    brute_force_value,
    closed_form_value,
    solve_worst_case,
    surrogate_closed_form_value,
    true_loss_grid_value,
)
from .gapspace import (
    DiscreteGapDistribution,
    SupportWindow,
    log_sigmoid,
    logistic_loss,
    push_forward,
    push_forward_weighted,
    read_margins_file,
    sigmoid,
    w1_distance,
    write_margins_file,
)
from .grouping import GroupingConfig, partition, restriction_gap_proxy, solve_grouped, thread_cap
from .leader import (
    LeaderConfig,
    PolicyParams,
    PreferencePair,
    ToyWorld,
    dpo_loss,
    enumerate_true_pairs,
    finite_difference_grad,
    gradient_check,
    implicit_reward,
    implicit_reward_table,
    load_checkpoint,
    load_world,
    margins_of,
    proximal_update,
    reweighted_loss,
    reweighted_loss_grad,
    save_checkpoint,
    save_world,
)
from .lp import LinearProgram, LpSolution, SimplexStall, solve_lp
from .pwl import (
    TangentSet,
    build_tangents_margin,
    build_tangents_prob,
    eval_surrogate,
    nested_tangent_sets,
    surrogate_gap,
    tangent_at,
    tangents_from_knots,
)
from .regret import (
    ApproxBudget,
    PolicyGrid,
    RegretPoint,
    annotation_divergence,
    check_sgpo_bound,
    check_worstcase_drop,
    dpo_regret_curve,
    feasible_perturbations,
    ols_slope,
    preference_value,
    regret,
    shifted_center_regret,
    solution_distribution,
)
from .simulator import (
    IterationReport,
    RunResult,
    SimulationConfig,
    desk_world,
    flip_labels,
    generate_seed_prefs,
    run_dpo_baseline,
    run_robust_loop,
    self_annotate,
    true_preference_value,
    write_reports_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
