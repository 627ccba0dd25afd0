"""Self-annotation training loops on toy worlds.

A run starts from a small seed set of noisily labeled comparisons, fits the
policy, then alternates: the policy annotates fresh comparisons drawn from
itself, the follower finds the worst-case margin distribution within the
transport budget, and the leader takes proximal steps against it.  A plain
baseline bypasses the follower and trains on the same stream with uniform
weights, which is exactly what the robust loop degenerates to at epsilon 0.

Each round appends one report row; the CSV layout is a stable contract:

    t,N,value_hat,value_star,delta_w1,regret_sgpo,regret_dpo,wall_ms
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .follower import closed_form_value, solve_worst_case
from .gapspace import SupportWindow, log_sigmoid, logistic_loss, push_forward, w1_distance
from .grouping import GroupingConfig, solve_grouped
from .leader import (
    LeaderConfig,
    PolicyParams,
    PreferencePair,
    ToyWorld,
    enumerate_true_pairs,
    margins_of,
    proximal_update,
    save_checkpoint,
)
from .pwl import build_tangents_margin
from .regret import PolicyGrid, shifted_center_regret

REPORT_HEADER = "t,N,value_hat,value_star,delta_w1,regret_sgpo,regret_dpo,wall_ms"

# Attempts at drawing two distinct responses before skipping an annotation.
RESAMPLE_ATTEMPTS = 20


@dataclass(frozen=True)
class SimulationConfig:
    """Knobs of one training run; defaults give the desk-scale experiment."""

    seed_count: int = 20
    round_sizes: tuple = (80, 200, 300)
    epsilon: float = 0.01
    k_tangents: int = 6
    tau: float = 1.0
    rng_seed: int = 0
    seed_flip_fraction: float = 0.0
    annotate_flip_fraction: float = 0.0
    grouping: GroupingConfig = field(default_factory=lambda: GroupingConfig(group_size=50))
    leader: LeaderConfig = field(default_factory=LeaderConfig)

    def __post_init__(self):
        if self.seed_count < 1:
            raise ValueError("need at least one seed comparison")
        if len(self.round_sizes) == 0 or any(int(r) < 0 for r in self.round_sizes):
            raise ValueError("round sizes must be non-negative")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (0 <= self.seed_flip_fraction <= 1 and 0 <= self.annotate_flip_fraction <= 1):
            raise ValueError("flip fractions must lie in [0, 1]")
        if self.k_tangents < 1 or self.tau <= 0:
            raise ValueError("bad surrogate settings")
        object.__setattr__(self, "round_sizes", tuple(int(r) for r in self.round_sizes))

    @property
    def pool_size(self) -> int:
        return self.seed_count + sum(self.round_sizes)


@dataclass(frozen=True)
class IterationReport:
    """One CSV row; field names mirror the header exactly."""

    t: int
    N: int
    value_hat: float
    value_star: float
    delta_w1: float
    regret_sgpo: float
    regret_dpo: float
    wall_ms: float

    def to_csv_row(self) -> str:
        cells = [
            str(self.t),
            str(self.N),
            f"{self.value_hat:.9g}",
            f"{self.value_star:.9g}",
            f"{self.delta_w1:.9g}",
            f"{self.regret_sgpo:.9g}",
            f"{self.regret_dpo:.9g}",
            f"{self.wall_ms:.3f}",
        ]
        return ",".join(cells)


@dataclass(frozen=True)
class RunResult:
    policy: PolicyParams
    shadow_policy: PolicyParams
    reports: tuple
    dataset: tuple
    config: SimulationConfig


def write_reports_csv(path, reports) -> None:
    lines = [REPORT_HEADER] + [r.to_csv_row() for r in reports]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_reports_csv(path) -> list[IterationReport]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"{path}: unexpected report header")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 8:
            raise ValueError(f"{path}: malformed row {ln!r}")
        out.append(
            IterationReport(
                t=int(cells[0]),
                N=int(cells[1]),
                value_hat=float(cells[2]),
                value_star=float(cells[3]),
                delta_w1=float(cells[4]),
                regret_sgpo=float(cells[5]),
                regret_dpo=float(cells[6]),
                wall_ms=float(cells[7]),
            )
        )
    return out


def desk_world() -> tuple[ToyWorld, float]:
    """Fixed five-prompt, four-response world used by the bundled experiments.

    Rewards span roughly [0, 6.5] with varied gaps, so Bradley-Terry labels
    are near-deterministic on the wide pairs and noisy on the narrow ones.
    """
    rewards = (
        (0.0, 2.2, 3.6, 6.0),
        (0.4, 1.6, 4.4, 6.4),
        (0.9, 2.8, 4.0, 5.2),
        (0.2, 1.9, 3.2, 5.6),
        (0.7, 1.6, 4.2, 6.2),
    )
    prompts = tuple(f"p{i}" for i in range(len(rewards)))
    responses = tuple(tuple(f"r{j}" for j in range(4)) for _ in rewards)
    refs = tuple(np.zeros(4) for _ in rewards)
    world = ToyWorld(prompts, responses, tuple(np.asarray(r) for r in rewards), refs)
    return world, 0.1


def _candidate_pairs(world: ToyWorld) -> list[tuple[int, int, int, float]]:
    cands = []
    for p in range(world.n_prompts):
        rw = world.true_reward[p]
        for a in range(world.n_responses(p)):
            for b in range(a + 1, world.n_responses(p)):
                cands.append((p, a, b, float(abs(rw[a] - rw[b]))))
    return cands


def generate_seed_prefs(world: ToyWorld, n: int, rng: np.random.Generator) -> list[PreferencePair]:
    """Seed comparisons spread over the true-gap range, labeled by Bradley-Terry.

    Pairs are chosen by farthest-point sampling on the absolute true-reward
    gap, so the seed set covers easy and hard comparisons.  The winner is
    the higher-reward response with probability sigmoid(gap).
    """
    cands = _candidate_pairs(world)
    if n > len(cands):
        raise ValueError(f"asked for {n} seed pairs but the world only has {len(cands)}")
    gaps = np.array([c[3] for c in cands])
    chosen = [int(np.argmax(gaps))]
    dist = np.abs(gaps - gaps[chosen[0]])
    while len(chosen) < n:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.abs(gaps - gaps[nxt]))
    pairs = []
    for c in chosen:
        p, a, b, _gap = cands[c]
        rw = world.true_reward[p]
        hi, lo = (a, b) if rw[a] >= rw[b] else (b, a)
        p_true = 1.0 / (1.0 + np.exp(-(rw[hi] - rw[lo])))
        if rng.random() < p_true:
            pairs.append(PreferencePair(p, hi, lo, source="seed"))
        else:
            pairs.append(PreferencePair(p, lo, hi, source="seed"))
    return pairs


def flip_labels(pairs, fraction: float, rng: np.random.Generator) -> list[PreferencePair]:
    """Swap winner and loser on exactly floor(fraction * n) pairs, without replacement."""
    if not (0 <= fraction <= 1):
        raise ValueError("flip fraction must lie in [0, 1]")
    out = list(pairs)
    m = int(np.floor(fraction * len(out)))
    if m == 0:
        return out
    idx = rng.choice(len(out), size=m, replace=False)
    for i in idx:
        out[i] = out[i].swapped()
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def self_annotate(
    policy: PolicyParams,
    world: ToyWorld,
    n: int,
    rng: np.random.Generator,
    flip_fraction: float = 0.0,
) -> list[PreferencePair]:
    """Draw comparisons from the policy and label them with its own reward.

    Each annotation samples a prompt uniformly, two distinct responses from
    the policy's softmax, and crowns the one with the larger implicit
    reward; with probability flip_fraction the label is swapped.  A prompt
    whose policy has collapsed onto a single response is skipped after a
    bounded number of resampling attempts, with a warning.
    """
    pairs = []
    for _ in range(n):
        p = int(rng.integers(world.n_prompts))
        probs = _softmax(np.asarray(policy.theta[p]))
        y1 = y2 = -1
        for _attempt in range(RESAMPLE_ATTEMPTS):
            y1 = int(rng.choice(world.n_responses(p), p=probs))
            y2 = int(rng.choice(world.n_responses(p), p=probs))
            if y1 != y2:
                break
        if y1 == y2:
            warnings.warn(
                f"prompt {world.prompts[p]!r}: policy nearly deterministic, "
                f"no distinct response pair in {RESAMPLE_ATTEMPTS} attempts; skipping",
                stacklevel=2,
            )
            continue
        # The implicit-reward argmax reduces to comparing shifted logits.
        t = policy.theta[p]
        r = world.ref_logits[p]
        s1, s2 = t[y1] - r[y1], t[y2] - r[y2]
        if s1 > s2:
            w, l = y1, y2
        elif s2 > s1:
            w, l = y2, y1
        else:
            w, l = min(y1, y2), max(y1, y2)
        pair = PreferencePair(p, w, l, source="self")
        if rng.random() < flip_fraction:
            pair = pair.swapped()
        pairs.append(pair)
    return pairs


def true_preference_value(policy: PolicyParams, world: ToyWorld) -> float:
    """Mean log-sigmoid margin over every true-labeled pair; higher is better."""
    pairs = enumerate_true_pairs(world)
    return float(np.mean(log_sigmoid(margins_of(policy, world, pairs))))


def save_dataset(path, pairs, world: ToyWorld) -> None:
    rows = [
        {
            "prompt": world.prompts[pr.prompt],
            "winner": world.responses[pr.prompt][pr.winner],
            "loser": world.responses[pr.prompt][pr.loser],
            "source": pr.source,
            "flipped": pr.flipped,
        }
        for pr in pairs
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def load_dataset(path, world: ToyWorld) -> list[PreferencePair]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    pairs = []
    for row in rows:
        p = world.prompt_index(row["prompt"])
        pairs.append(
            PreferencePair(
                p,
                world.response_index(p, row["winner"]),
                world.response_index(p, row["loser"]),
                source=row.get("source", "seed"),
                flipped=bool(row.get("flipped", False)),
            )
        )
    return pairs


def run_robust_loop(
    world: ToyWorld,
    beta: float,
    cfg: SimulationConfig,
    out_dir=None,
    bypass_follower: bool = False,
    seed_only: bool = False,
) -> RunResult:
    """Full training loop: seed fit, then annotate / solve / update rounds.

    Round zero fits the seed comparisons with uniform weights and no
    transport budget.  Each later round annotates fresh pairs (unless
    seed_only), finds the worst-case margin distribution group by group,
    and takes proximal steps on the chosen reweighted loss.  A shadow
    policy trained on the identical stream with uniform weights and no
    budget rides along as the plain baseline column.

    With bypass_follower the main policy is trained exactly like the
    shadow, which makes the run a baseline run.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    policy = PolicyParams.zeros(world, beta)

    seed_pairs = generate_seed_prefs(world, cfg.seed_count, rng)
    if cfg.seed_flip_fraction > 0:
        seed_pairs = flip_labels(seed_pairs, cfg.seed_flip_fraction, rng)
    dataset = list(seed_pairs)

    plain_cfg = replace(cfg.leader, mode="uniform")
    policy = proximal_update(policy, world, dataset, None, plain_cfg)
    shadow = policy

    grid = PolicyGrid.build(world, beta)
    eval_pairs = enumerate_true_pairs(world)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "policy_round_0.json", policy, world)

    reports = []
    for t, batch in enumerate(cfg.round_sizes, start=1):
        tic = time.perf_counter()
        if not seed_only and batch > 0:
            dataset.extend(self_annotate(policy, world, batch, rng, cfg.annotate_flip_fraction))

        raw = margins_of(policy, world, dataset)
        window = SupportWindow.from_margins(raw, tau=cfg.tau)
        margins = window.clip(raw)
        tangents = build_tangents_margin(cfg.k_tangents, window)

        if bypass_follower:
            solution = None
            value_hat = float(np.mean(logistic_loss(margins)))
            value_star = closed_form_value(margins, 0.0)
            delta_w1 = 0.0
            leader_cfg = plain_cfg
        else:
            if len(margins) <= cfg.grouping.group_size:
                solution = solve_worst_case(margins, tangents, cfg.epsilon, window)
            else:
                solution, _parts = solve_grouped(margins, tangents, cfg.epsilon, window, cfg.grouping)
            value_hat = solution.value
            value_star = closed_form_value(margins, cfg.epsilon)
            delta_w1 = w1_distance(solution.extremal, push_forward(margins))
            leader_cfg = cfg.leader

        policy = proximal_update(policy, world, dataset, solution, leader_cfg, window)
        shadow = proximal_update(shadow, world, dataset, None, plain_cfg, window)

        regret_eps = 0.0 if bypass_follower else cfg.epsilon
        regret_sgpo = shifted_center_regret(policy, world, eval_pairs, grid, regret_eps)
        regret_dpo = shifted_center_regret(shadow, world, eval_pairs, grid, regret_eps)
        wall_ms = (time.perf_counter() - tic) * 1000.0

        reports.append(
            IterationReport(
                t=t,
                N=len(dataset),
                value_hat=value_hat,
                value_star=value_star,
                delta_w1=delta_w1,
                regret_sgpo=regret_sgpo,
                regret_dpo=regret_dpo,
                wall_ms=wall_ms,
            )
        )
        if out is not None:
            save_checkpoint(out / f"policy_round_{t}.json", policy, world)

    if out is not None:
        write_reports_csv(out / "reports.csv", reports)
        save_dataset(out / "pairs.json", dataset, world)
        save_checkpoint(out / "policy_final.json", policy, world)

    return RunResult(policy, shadow, tuple(reports), tuple(dataset), cfg)


def run_dpo_baseline(
    world: ToyWorld,
    beta: float,
    cfg: SimulationConfig,
    out_dir=None,
    seed_only: bool = False,
) -> RunResult:
    """Plain self-training baseline: no follower, uniform weights throughout.

    With seed_only the annotation rounds are skipped and every round refits
    the seed comparisons.
    """
    return run_robust_loop(world, beta, cfg, out_dir=out_dir, bypass_follower=True, seed_only=seed_only)
