"""Self-annotation loop tests: seeding, labeling, rounds, reports, determinism."""

import math
from dataclasses import replace

import numpy as np
import pytest

from gapdro import (
    PolicyParams,
    PreferencePair,
    SimulationConfig,
    ToyWorld,
    desk_world,
    flip_labels,
    generate_seed_prefs,
    run_dpo_baseline,
    run_robust_loop,
    self_annotate,
    true_preference_value,
    write_reports_csv,
)
from gapdro.simulator import (
    REPORT_HEADER,
    IterationReport,
    load_dataset,
    read_reports_csv,
    save_dataset,
)


def small_cfg(**overrides) -> SimulationConfig:
    base = dict(seed_count=10, round_sizes=(20, 30), epsilon=0.01, k_tangents=4)
    base.update(overrides)
    return SimulationConfig(**base)


@pytest.fixture(scope="module")
def small_run():
    world, beta = desk_world()
    return run_robust_loop(world, beta, small_cfg()), world, beta


# ---------------------------------------------------------------- world and seeding


def test_desk_world_shape():
    world, beta = desk_world()
    assert beta == 0.1
    assert world.n_prompts == 5
    assert all(world.n_responses(p) == 4 for p in range(world.n_prompts))
    assert all(np.array_equal(world.ref_logits[p], np.zeros(4)) for p in range(5))
    assert SimulationConfig().pool_size == 600


def test_seed_labels_follow_bradley_terry_at_extreme_gap():
    # A reward gap of 50 makes the favored label all but certain.
    world = ToyWorld(("p",), (("a", "b"),), ((50.0, 0.0),), ((0.0, 0.0),))
    rng = np.random.default_rng(0)
    wins = sum(generate_seed_prefs(world, 1, rng)[0].winner == 0 for _ in range(10_000))
    assert wins >= 9990


def test_seed_labels_are_coin_flips_at_zero_gap():
    world = ToyWorld(("p",), (("a", "b"),), ((1.0, 1.0),), ((0.0, 0.0),))
    rng = np.random.default_rng(1)
    winners = {generate_seed_prefs(world, 1, rng)[0].winner for _ in range(200)}
    assert winners == {0, 1}


def test_seed_request_capped_by_candidate_count():
    world, _ = desk_world()
    rng = np.random.default_rng(2)
    assert len(generate_seed_prefs(world, 30, rng)) == 30
    with pytest.raises(ValueError, match="seed pairs"):
        generate_seed_prefs(world, 31, rng)


def test_flip_labels_exact_count():
    pairs = [PreferencePair(0, 0, 1) for _ in range(2000)]
    rng = np.random.default_rng(3)
    flipped = flip_labels(pairs, 0.25, rng)
    assert sum(pr.flipped for pr in flipped) == 500
    assert sum(pr.winner == 1 for pr in flipped) == 500
    # The input list is left untouched.
    assert not any(pr.flipped for pr in pairs)


def test_flip_labels_identity_and_total():
    pairs = [PreferencePair(0, 0, 1), PreferencePair(0, 1, 0)]
    rng = np.random.default_rng(4)
    assert flip_labels(pairs, 0.0, rng) == pairs
    everything = flip_labels(pairs, 1.0, rng)
    assert [pr.swapped() for pr in everything] == pairs
    with pytest.raises(ValueError, match="flip fraction"):
        flip_labels(pairs, 1.5, rng)


# ---------------------------------------------------------------- self annotation


def annotation_agrees_with_policy(world, policy, pair) -> bool:
    t = policy.theta[pair.prompt]
    r = world.ref_logits[pair.prompt]
    sw = t[pair.winner] - r[pair.winner]
    sl = t[pair.loser] - r[pair.loser]
    return sw > sl or (sw == sl and pair.winner < pair.loser)


def test_self_annotation_labels_match_implicit_reward():
    rng = np.random.default_rng(5)
    world, beta = desk_world()
    theta = tuple(rng.normal(size=4) for _ in range(5))
    policy = PolicyParams(theta, beta)
    pairs = self_annotate(policy, world, 200, rng, flip_fraction=0.0)
    assert len(pairs) == 200
    assert all(pr.source == "self" for pr in pairs)
    assert all(annotation_agrees_with_policy(world, policy, pr) for pr in pairs)


def test_self_annotation_flip_one_inverts_every_label():
    rng = np.random.default_rng(6)
    world, beta = desk_world()
    policy = PolicyParams.zeros(world, beta)
    pairs = self_annotate(policy, world, 100, rng, flip_fraction=1.0)
    assert all(pr.flipped for pr in pairs)
    assert all(annotation_agrees_with_policy(world, policy, pr.swapped()) for pr in pairs)


def test_collapsed_policy_skips_with_warning():
    world = ToyWorld(("p",), (("a", "b"),), ((1.0, 0.0),), ((0.0, 0.0),))
    policy = PolicyParams((np.array([50.0, -50.0]),), 1.0)
    rng = np.random.default_rng(7)
    with pytest.warns(UserWarning, match="skipping"):
        pairs = self_annotate(policy, world, 5, rng)
    assert pairs == []


def test_true_preference_value_zero_policy():
    world, beta = desk_world()
    base = true_preference_value(PolicyParams.zeros(world, beta), world)
    assert base == pytest.approx(math.log(0.5), abs=1e-12)
    # Any policy aligned with the true rewards beats the blank start.
    aligned = PolicyParams(tuple(np.asarray(r, dtype=float) for r in world.true_reward), beta)
    assert true_preference_value(aligned, world) > base


# ---------------------------------------------------------------- the loop


def test_loop_report_structure(small_run):
    result, _world, _beta = small_run
    cfg = result.config
    assert [r.t for r in result.reports] == [1, 2]
    ns = [r.N for r in result.reports]
    assert ns == sorted(ns)
    assert ns[-1] == cfg.pool_size == len(result.dataset)
    for rep in result.reports:
        assert rep.value_hat <= rep.value_star + 1e-9
        assert 0.0 <= rep.delta_w1 <= cfg.epsilon + 1e-6
        assert rep.wall_ms > 0.0


def test_loop_improves_true_preference_value(small_run):
    result, world, beta = small_run
    blank = true_preference_value(PolicyParams.zeros(world, beta), world)
    assert true_preference_value(result.policy, world) > blank


def test_loop_is_deterministic_modulo_wall_time(small_run):
    result, world, beta = small_run
    again = run_robust_loop(world, beta, small_cfg())
    for a, b in zip(result.reports, again.reports):
        assert (a.t, a.N) == (b.t, b.N)
        for name in ("value_hat", "value_star", "delta_w1", "regret_sgpo", "regret_dpo"):
            assert getattr(a, name) == getattr(b, name), name
    assert result.dataset == again.dataset
    for x, y in zip(result.policy.theta, again.policy.theta):
        assert np.array_equal(x, y)


def test_seed_change_actually_moves_the_run(small_run):
    result, world, beta = small_run
    other = run_robust_loop(world, beta, small_cfg(rng_seed=1))
    assert other.dataset != result.dataset


def test_zero_budget_uniform_loop_equals_baseline():
    # With epsilon 0 and uniform weights the follower is a no-op, so the
    # robust loop must reproduce the plain baseline exactly.
    world, beta = desk_world()
    cfg = small_cfg(epsilon=0.0, leader=replace(SimulationConfig().leader, mode="uniform"))
    robust = run_robust_loop(world, beta, cfg)
    plain = run_dpo_baseline(world, beta, cfg)
    assert robust.dataset == plain.dataset
    for a, b in zip(robust.policy.theta, plain.policy.theta):
        assert np.array_equal(a, b)
    for a, b in zip(robust.policy.theta, robust.shadow_policy.theta):
        assert np.array_equal(a, b)


def test_zero_round_sizes_match_seed_only_baseline():
    world, beta = desk_world()
    cfg = small_cfg(round_sizes=(0,))
    looped = run_robust_loop(world, beta, cfg)
    assert looped.reports[-1].N == cfg.seed_count
    assert all(pr.source == "seed" for pr in looped.dataset)
    seeded = run_dpo_baseline(world, beta, cfg, seed_only=True)
    assert seeded.dataset == looped.dataset


def test_baseline_trains_policy_and_shadow_identically():
    world, beta = desk_world()
    base = run_dpo_baseline(world, beta, small_cfg())
    for a, b in zip(base.policy.theta, base.shadow_policy.theta):
        assert np.array_equal(a, b)
    for rep in base.reports:
        assert rep.delta_w1 == 0.0
        assert rep.regret_sgpo == rep.regret_dpo


# ---------------------------------------------------------------- reports and files


def test_report_header_literal():
    assert REPORT_HEADER == "t,N,value_hat,value_star,delta_w1,regret_sgpo,regret_dpo,wall_ms"


def test_report_row_has_eight_cells():
    rep = IterationReport(1, 600, 0.1, 0.2, 0.01, -0.5, -0.4, 12.3456)
    cells = rep.to_csv_row().split(",")
    assert len(cells) == 8
    assert cells[0] == "1" and cells[1] == "600"
    assert cells[-1] == "12.346"


def test_reports_csv_round_trip(tmp_path, small_run):
    result, _world, _beta = small_run
    path = tmp_path / "reports.csv"
    write_reports_csv(path, result.reports)
    assert path.read_text(encoding="utf-8").splitlines()[0] == REPORT_HEADER
    back = read_reports_csv(path)
    assert len(back) == len(result.reports)
    for a, b in zip(back, result.reports):
        assert (a.t, a.N) == (b.t, b.N)
        for name in ("value_hat", "value_star", "delta_w1", "regret_sgpo", "regret_dpo"):
            assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-8, abs=1e-12)


def test_reports_csv_rejects_bad_files(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("nope\n", encoding="utf-8")
    with pytest.raises(ValueError, match="unexpected report header"):
        read_reports_csv(bad_header)
    bad_row = tmp_path / "r.csv"
    bad_row.write_text(REPORT_HEADER + "\n1,2,3\n", encoding="utf-8")
    with pytest.raises(ValueError, match="malformed row"):
        read_reports_csv(bad_row)


def test_out_dir_writes_full_artifact_set(tmp_path):
    world, beta = desk_world()
    cfg = small_cfg(round_sizes=(15,))
    run_robust_loop(world, beta, cfg, out_dir=tmp_path)
    for name in ("reports.csv", "pairs.json", "policy_round_0.json", "policy_round_1.json", "policy_final.json"):
        assert (tmp_path / name).exists(), name
    rows = read_reports_csv(tmp_path / "reports.csv")
    assert len(rows) == 1
    pairs = load_dataset(tmp_path / "pairs.json", world)
    assert len(pairs) == rows[-1].N


def test_dataset_round_trip(tmp_path):
    world, _ = desk_world()
    pairs = [
        PreferencePair(0, 2, 1, source="seed"),
        PreferencePair(3, 0, 3, source="self", flipped=True),
    ]
    path = tmp_path / "pairs.json"
    save_dataset(path, pairs, world)
    assert load_dataset(path, world) == pairs


def test_config_validation():
    for bad in (
        dict(seed_count=0),
        dict(round_sizes=()),
        dict(round_sizes=(10, -1)),
        dict(epsilon=-0.1),
        dict(seed_flip_fraction=1.5),
        dict(annotate_flip_fraction=-0.2),
        dict(k_tangents=0),
        dict(tau=0.0),
    ):
        with pytest.raises(ValueError):
            SimulationConfig(**bad)


def test_golden_reports_seed_42(tmp_path):
    """Default desk experiment, fixed seed, frozen numeric trace.

    Guards every column except wall time against silent drift anywhere in
    the stack: seeding, annotation, grouping, the LP, and the updates.
    """
    import pathlib

    golden = pathlib.Path(__file__).parent / "data" / "golden_reports_seed42.csv"
    world, beta = desk_world()
    result = run_robust_loop(world, beta, SimulationConfig(rng_seed=42))
    write_reports_csv(tmp_path / "got.csv", result.reports)
    want = read_reports_csv(golden)
    got = read_reports_csv(tmp_path / "got.csv")
    assert len(got) == len(want)
    for a, b in zip(got, want):
        assert (a.t, a.N) == (b.t, b.N)
        for name in ("value_hat", "value_star", "delta_w1", "regret_sgpo", "regret_dpo"):
            assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-9, abs=1e-12), name
