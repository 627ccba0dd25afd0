"""Command-line interface.

Subcommands: solve-follower, tangents, simulate, regret, oracle, selfcheck.
Exit codes: 0 success, 1 input or configuration error, 2 internal error.
All primary outputs are deterministic for a fixed argv, config, and seed;
wall-clock columns are excluded from that contract.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .follower import (
    brute_force_value,
    closed_form_value,
    solve_worst_case,
    surrogate_closed_form_value,
)
from .gapspace import SupportWindow, read_margins_file
from .grouping import GroupingConfig, solve_grouped
from .leader import (
    LeaderConfig,
    PolicyParams,
    PreferencePair,
    ToyWorld,
    enumerate_true_pairs,
    gradient_check,
    load_checkpoint,
    load_world,
    margins_of,
)
from .pwl import build_tangents_margin
from .regret import PolicyGrid, dpo_regret_curve, regret_curve_csv
from .simulator import SimulationConfig, desk_world, run_dpo_baseline, run_robust_loop


def _parse_window(text: str) -> SupportWindow:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"window must be LO,HI, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ValueError(f"window bounds must be numbers, got {text!r}") from exc
    return SupportWindow(lo, hi)


def _parse_deltas(text: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"deltas must be comma-separated numbers, got {text!r}") from exc
    if not values:
        raise ValueError("deltas list is empty")
    return values


def _emit(text: str, out_path) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _cmd_solve_follower(args) -> int:
    margins = read_margins_file(args.margins)
    window = _parse_window(args.window) if args.window else SupportWindow.from_margins(margins)
    tangents = build_tangents_margin(args.k, window, knot_rule=args.knots, margins=margins)
    if args.group_size is not None:
        cfg = GroupingConfig(
            group_size=args.group_size,
            strategy=args.strategy,
            budget=args.budget,
            seed=args.seed,
        )
        solution, _parts = solve_grouped(margins, tangents, args.epsilon, window, cfg)
    else:
        solution = solve_worst_case(margins, tangents, args.epsilon, window)
    payload = {
        "value": solution.value,
        "atoms": solution.extremal.atoms.tolist(),
        "weights": solution.extremal.weights.tolist(),
        "piece_weights": solution.piece_weights.tolist(),
        "slope_weights": solution.slope_weights.tolist(),
    }
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return 0


def _cmd_tangents(args) -> int:
    window = _parse_window(args.window)
    margins = read_margins_file(args.margins) if args.margins else None
    tangents = build_tangents_margin(args.k, window, knot_rule=args.knots, margins=margins)
    _emit(json.dumps(tangents.to_json_dict(), indent=2) + "\n", args.out)
    return 0


def _cmd_oracle(args) -> int:
    margins = read_margins_file(args.margins)
    value = closed_form_value(margins, args.epsilon)
    _emit(f"{value:.9f}\n", args.out)
    return 0


_SIM_KEYS = {
    "world",
    "beta",
    "baseline",
    "seed_only",
    "seed_count",
    "round_sizes",
    "epsilon",
    "k_tangents",
    "tau",
    "rng_seed",
    "seed_flip_fraction",
    "annotate_flip_fraction",
    "grouping",
    "leader",
}
_GROUPING_KEYS = {"group_size", "strategy", "budget", "seed"}
_LEADER_KEYS = {"learning_rate", "steps", "lam", "mode"}


def _load_sim_config(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config {path} must be a JSON object")
    for key in raw:
        if key not in _SIM_KEYS:
            raise ValueError(f"config {path}: unknown key {key!r}")
    for key in raw.get("grouping", {}):
        if key not in _GROUPING_KEYS:
            raise ValueError(f"config {path}: unknown grouping key {key!r}")
    for key in raw.get("leader", {}):
        if key not in _LEADER_KEYS:
            raise ValueError(f"config {path}: unknown leader key {key!r}")

    world_ref = raw.get("world", "desk")
    if world_ref == "desk":
        world, beta = desk_world()
    else:
        world_path = Path(world_ref)
        if not world_path.exists():
            raise ValueError(f"world file {world_ref} does not exist")
        world, beta = load_world(world_path)
    beta = float(raw.get("beta", beta))

    kwargs = {
        k: raw[k]
        for k in (
            "seed_count",
            "epsilon",
            "k_tangents",
            "tau",
            "rng_seed",
            "seed_flip_fraction",
            "annotate_flip_fraction",
        )
        if k in raw
    }
    if "round_sizes" in raw:
        kwargs["round_sizes"] = tuple(raw["round_sizes"])
    if "grouping" in raw:
        kwargs["grouping"] = GroupingConfig(**raw["grouping"])
    if "leader" in raw:
        kwargs["leader"] = LeaderConfig(**raw["leader"])
    cfg = SimulationConfig(**kwargs)
    return world, beta, cfg, bool(raw.get("baseline", False)), bool(raw.get("seed_only", False))


def _cmd_simulate(args) -> int:
    world, beta, cfg, baseline, seed_only = _load_sim_config(args.config)
    if baseline:
        result = run_dpo_baseline(world, beta, cfg, out_dir=args.out, seed_only=seed_only)
    else:
        result = run_robust_loop(world, beta, cfg, out_dir=args.out, seed_only=seed_only)
    last = result.reports[-1]
    sys.stdout.write(
        f"rounds={len(result.reports)} N={last.N} "
        f"value_hat={last.value_hat:.9g} regret_sgpo={last.regret_sgpo:.9g}\n"
    )
    return 0


def _cmd_regret(args) -> int:
    world_path = Path(args.world)
    if not world_path.exists():
        raise ValueError(f"world file {args.world} does not exist")
    world, beta = load_world(world_path)
    plain = load_checkpoint(args.checkpoint, world)
    robust = load_checkpoint(args.robust_checkpoint, world) if args.robust_checkpoint else plain
    deltas = _parse_deltas(args.deltas)
    grid = PolicyGrid.build(world, plain.beta if plain.beta else beta)
    pairs = enumerate_true_pairs(world)
    points = dpo_regret_curve(world, grid, deltas, plain, robust, pairs, args.epsilon)
    _emit(regret_curve_csv(points), args.out)
    return 0


def _selfcheck_closed_form(rng) -> tuple[int, int]:
    window = SupportWindow(-np.inf, np.inf)
    passes = 0
    total = 12
    for _ in range(total):
        n = int(rng.integers(2, 25))
        margins = rng.uniform(-5, 5, size=n)
        k = int(rng.integers(1, 7))
        eps = float(rng.uniform(0.0, 0.05))
        tangents = build_tangents_margin(k, SupportWindow(-6.0, 6.0)).with_window(window)
        sol = solve_worst_case(margins, tangents, eps, window)
        target = surrogate_closed_form_value(margins, tangents, eps)
        if abs(sol.value - target) <= 1e-6:
            passes += 1
    return passes, total


def _selfcheck_brute_force(rng) -> tuple[int, int]:
    passes = 0
    total = 6
    for _ in range(total):
        n = int(rng.integers(1, 5))
        margins = rng.uniform(-2, 2, size=n)
        window = SupportWindow.from_margins(margins, tau=1.0)
        k = int(rng.integers(1, 4))
        eps = float(rng.uniform(0.0, 0.05))
        tangents = build_tangents_margin(k, window)
        sol = solve_worst_case(margins, tangents, eps, window)
        target = brute_force_value(margins, tangents, eps, window, grid_step=1e-3)
        if abs(sol.value - target) <= 5e-3:
            passes += 1
    return passes, total


def random_world(rng) -> tuple:
    """Small random world, policy, and pair list for gradient suites."""
    n_prompts = int(rng.integers(1, 4))
    prompts = tuple(f"p{i}" for i in range(n_prompts))
    responses = []
    rewards = []
    refs = []
    for _p in range(n_prompts):
        m = int(rng.integers(2, 5))
        responses.append(tuple(f"r{j}" for j in range(m)))
        rewards.append(rng.uniform(0, 3, size=m))
        refs.append(rng.uniform(-0.5, 0.5, size=m))
    world = ToyWorld(prompts, tuple(responses), tuple(rewards), tuple(refs))
    policy = PolicyParams(
        tuple(rng.uniform(-1, 1, size=world.n_responses(p)) for p in range(n_prompts)), 0.5
    )
    pairs = []
    for p in range(n_prompts):
        for a in range(world.n_responses(p)):
            for b in range(a + 1, world.n_responses(p)):
                if rng.random() < 0.7:
                    pairs.append(PreferencePair(p, a, b))
    if not pairs:
        pairs = [PreferencePair(0, 0, 1)]
    return world, policy, pairs


def _selfcheck_gradients(rng) -> tuple[int, int]:
    passes = 0
    total = 0
    for _ in range(5):
        world, policy, pairs = random_world(rng)
        margins = margins_of(policy, world, pairs)
        window = SupportWindow.from_margins(margins, tau=1.0)
        tangents = build_tangents_margin(4, window)
        sol = solve_worst_case(margins, tangents, 0.05, window)
        for mode in ("uniform", "piece", "slope", "transported"):
            total += 1
            err = gradient_check(policy, world, pairs, sol, mode, window=None)
            if err <= 1e-5:
                passes += 1
    return passes, total


def _cmd_selfcheck(args) -> int:
    rng = np.random.default_rng(0)
    results = [
        ("closed-form oracle", _selfcheck_closed_form(rng)),
        ("brute-force oracle", _selfcheck_brute_force(rng)),
        ("gradient checks", _selfcheck_gradients(rng)),
    ]
    all_ok = True
    for name, (passes, total) in results:
        ok = passes == total
        all_ok = all_ok and ok
        sys.stdout.write(f"{name}: {'PASS' if ok else 'FAIL'} ({passes}/{total})\n")
    return 0 if all_ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gapdro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-follower", help="solve the worst-case margin distribution")
    p.add_argument("--margins", required=True, help="text file, one margin per line")
    p.add_argument("--epsilon", type=float, required=True, help="transport budget")
    p.add_argument("--k", type=int, required=True, help="number of tangent pieces")
    p.add_argument("--window", default=None, help="support window LO,HI (default: margins +- 1)")
    p.add_argument("--knots", choices=("uniform", "quantile"), default="uniform")
    p.add_argument("--group-size", type=int, default=None, help="solve in groups of this size")
    p.add_argument("--strategy", choices=("sorted", "random"), default="sorted")
    p.add_argument("--budget", choices=("full", "split"), default="full")
    p.add_argument("--seed", type=int, default=0, help="grouping shuffle seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_solve_follower)

    p = sub.add_parser("tangents", help="emit a tangent under-approximation as JSON")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--window", required=True, help="support window LO,HI")
    p.add_argument("--knots", choices=("uniform", "quantile"), default="uniform")
    p.add_argument("--margins", default=None, help="margins file (needed for quantile knots)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_tangents)

    p = sub.add_parser("oracle", help="closed-form worst-case value of the true loss")
    p.add_argument("--margins", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("simulate", help="run a training loop from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("regret", help="regret curve of checkpoints against drifting targets")
    p.add_argument("--world", required=True)
    p.add_argument("--checkpoint", required=True, help="plain policy checkpoint")
    p.add_argument("--robust-checkpoint", default=None, help="robust policy checkpoint (default: same)")
    p.add_argument("--deltas", required=True, help="comma-separated shifts")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_regret)

    p = sub.add_parser("selfcheck", help="run the built-in oracle and gradient suites")
    p.set_defaults(func=_cmd_selfcheck)

    return parser


def _normalize_argv(argv) -> list:
    """Fold values starting with a dash into their flag (--window -6,6).

    argparse only recognizes lone negative numbers as values, so tokens
    like -6,6 would otherwise be read as option strings.
    """
    merged = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok in ("--window", "--deltas") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            merged.append(f"{tok}={argv[i + 1]}")
            skip = True
        else:
            merged.append(tok)
    return merged


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(_normalize_argv(sys.argv[1:] if argv is None else list(argv)))
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are input errors here.
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # solver failures and bugs
        sys.stderr.write(f"internal error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
