"""Group decomposition of the worst-case solve.

Large samples are split into groups, each group solves its own worst-case
program against its own sub-sample, and the group extrema are merged back
in proportion to group size.  The merged measure is itself feasible for the
global ball (each group spends at most the same per-sample budget), so the
merged value can only undershoot the global optimum.  For sorted bins the
undershoot is bounded by how wide the bins are, which restriction_gap_proxy
reports as the average within-group atom range.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .follower import FollowerSolution, solve_worst_case
from .gapspace import SupportWindow, push_forward_weighted, validate_margins
from .pwl import TangentSet

DEFAULT_GROUP_SIZE = 100

STRATEGIES = ("sorted", "random")
BUDGET_MODES = ("full", "split")


@dataclass(frozen=True)
class GroupingConfig:
    group_size: int = DEFAULT_GROUP_SIZE
    strategy: str = "sorted"
    budget: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group size must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown grouping strategy {self.strategy!r}")
        if self.budget not in BUDGET_MODES:
            raise ValueError(f"unknown budget mode {self.budget!r}")


def thread_cap() -> int:
    """Worker concurrency cap from GAPDRO_THREADS (default: machine parallelism)."""
    raw = os.environ.get("GAPDRO_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"GAPDRO_THREADS must be an integer, got {raw!r}") from exc
    return max(1, cap)


def partition(margins, cfg: GroupingConfig) -> list[np.ndarray]:
    """Split sample indices into contiguous groups of cfg.group_size.

    'sorted' chunks the sample in margin order (bins of neighbors);
    'random' chunks a seeded shuffle.  The returned index arrays cover
    every sample exactly once; the trailing group may be smaller.
    """
    m = validate_margins(margins)
    n = m.size
    if cfg.strategy == "sorted":
        order = np.argsort(m, kind="stable")
    else:
        order = np.random.default_rng(cfg.seed).permutation(n)
    return [order[i: i + cfg.group_size] for i in range(0, n, cfg.group_size)]


def restriction_gap_proxy(groups) -> float:
    """Average within-group atom range for sorted-bin groups of margin values.

    Serves as the computable stand-in for the distance between the full
    ball and its group-restricted subset.  Random groupings interleave
    values across groups, for which the proxy is meaningless, so
    non-contiguous input is rejected.
    """
    arrays = [np.asarray(g, dtype=np.float64).reshape(-1) for g in groups]
    if not arrays or any(a.size == 0 for a in arrays):
        raise ValueError("empty sample set")
    arrays = sorted(arrays, key=lambda a: float(a.min()))
    for prev, nxt in zip(arrays, arrays[1:]):
        if float(prev.max()) > float(nxt.min()) + 1e-12:
            raise ValueError("restriction gap proxy requires sorted-bin groups")
    spans = [float(a.max() - a.min()) for a in arrays]
    return float(np.mean(spans))


def solve_grouped(
    margins,
    tangents: TangentSet,
    epsilon: float,
    window: SupportWindow,
    cfg: GroupingConfig,
) -> tuple[FollowerSolution, list[FollowerSolution]]:
    """Per-group worst-case solves merged back into one sample-aligned solution.

    Budget 'full' gives every group the whole radius on its own center
    (the merged measure still sits within the global ball); 'split' divides
    the radius evenly across groups.  Groups solve independently, so the
    solve parallelizes over threads up to the GAPDRO_THREADS cap; results
    are merged in group order regardless of completion order.
    """
    m = validate_margins(margins)
    groups = partition(m, cfg)
    n_groups = len(groups)
    eps_g = epsilon if cfg.budget == "full" else epsilon / n_groups

    def solve_one(idx: np.ndarray) -> FollowerSolution:
        return solve_worst_case(m[idx], tangents, eps_g, window)

    workers = min(thread_cap(), n_groups)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solutions = list(pool.map(solve_one, groups))
    else:
        solutions = [solve_one(idx) for idx in groups]

    n, k = m.size, tangents.k
    s_full = np.zeros((n, k))
    q_full = np.zeros((n, k))
    atom_blocks = []
    weight_blocks = []
    value = 0.0
    for idx, sol in zip(groups, solutions):
        share = idx.size / n
        s_full[idx] = sol.s
        q_full[idx] = sol.q
        atom_blocks.append(sol.extremal.atoms)
        weight_blocks.append(sol.extremal.weights * share)
        value += share * sol.value

    weights = np.concatenate(weight_blocks)
    weights = weights / weights.sum()
    merged = push_forward_weighted(np.concatenate(atom_blocks), weights)
    full_solution = FollowerSolution(
        margins=m,
        epsilon=float(epsilon),
        window=window,
        tangents=tangents,
        s=s_full,
        q=q_full,
        value=float(value),
        extremal=merged,
    )
    return full_solution, solutions
