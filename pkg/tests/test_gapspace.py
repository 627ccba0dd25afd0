"""Margin-space primitives: distributions, windows, W1, stable expectations.

The W1 implementation sweeps sorted CDFs.  The oracle here solves the
transport problem as an explicit linear program instead, so the two routes
share no code.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from gapdro.gapspace import (
    DiscreteGapDistribution,
    SupportWindow,
    expect_logsigma,
    log_sigmoid,
    logistic_loss,
    push_forward,
    read_distribution_json,
    read_margins_file,
    w1_distance,
    write_distribution_json,
    write_margins_file,
)


def transport_w1(a, b):
    """Min-cost transport between two discrete distributions, as a dense LP."""
    na, nb = len(a.atoms), len(b.atoms)
    cost = np.abs(np.subtract.outer(np.asarray(a.atoms), np.asarray(b.atoms))).reshape(-1)
    rows = []
    rhs = []
    for i in range(na):
        r = np.zeros(na * nb)
        r[i * nb : (i + 1) * nb] = 1.0
        rows.append(r)
        rhs.append(a.weights[i])
    for j in range(nb):
        r = np.zeros(na * nb)
        r[j::nb] = 1.0
        rows.append(r)
        rhs.append(b.weights[j])
    res = linprog(cost, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def dist(atoms, weights=None):
    atoms = list(atoms)
    if weights is None:
        weights = [1.0 / len(atoms)] * len(atoms)
    return DiscreteGapDistribution(atoms=tuple(atoms), weights=tuple(weights))


finite_floats = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@st.composite
def distributions(draw, max_atoms=6):
    n = draw(st.integers(min_value=1, max_value=max_atoms))
    atoms = draw(st.lists(finite_floats, min_size=n, max_size=n))
    raw = draw(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=n, max_size=n))
    total = sum(raw)
    return dist(atoms, [w / total for w in raw])


# ---------------------------------------------------------------- push_forward


def test_push_forward_single():
    d = push_forward([0.0])
    assert list(d.atoms) == [0.0]
    assert list(d.weights) == [1.0]


def test_push_forward_uniform_law():
    d = push_forward([1.0, -1.0])
    assert list(d.weights) == [0.5, 0.5]


def test_push_forward_keeps_duplicates():
    # Multiset semantics: duplicate margins stay separate atoms so sample
    # indices keep meaning downstream.
    d = push_forward([2.0, 2.0, -1.0])
    assert list(d.atoms) == [2.0, 2.0, -1.0]
    np.testing.assert_allclose(d.weights, [1 / 3, 1 / 3, 1 / 3])


def test_push_forward_rejects_empty():
    with pytest.raises(ValueError, match="empty sample set"):
        push_forward([])


def test_push_forward_rejects_nan():
    with pytest.raises(ValueError):
        push_forward([0.0, float("nan")])


# ---------------------------------------------------------------- w1_distance


def test_w1_identity():
    d = dist([0.0])
    assert w1_distance(d, d) == 0.0


def test_w1_point_mass_translation():
    assert w1_distance(dist([0.0]), dist([1.0])) == pytest.approx(1.0, abs=1e-12)


def test_w1_reweighted_pair():
    # Moving 0.25 of the mass from atom 0 to atom 1 costs 0.25; frozen from
    # the transport-LP oracle below.
    a = dist([0.0, 1.0], [0.5, 0.5])
    b = dist([0.0, 1.0], [0.25, 0.75])
    got = w1_distance(a, b)
    assert got == pytest.approx(0.25, abs=1e-12)
    assert got == pytest.approx(transport_w1(a, b), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(distributions(), distributions())
def test_w1_matches_transport_lp(a, b):
    assert w1_distance(a, b) == pytest.approx(transport_w1(a, b), abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(distributions(), distributions())
def test_w1_symmetric_nonnegative(a, b):
    d = w1_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(w1_distance(b, a), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(distributions(), distributions(), distributions())
def test_w1_triangle_inequality(a, b, c):
    assert w1_distance(a, c) <= w1_distance(a, b) + w1_distance(b, c) + 1e-9


@settings(max_examples=60, deadline=None)
@given(distributions(), st.floats(min_value=-20, max_value=20, allow_nan=False))
def test_w1_translation_is_shift_size(a, shift):
    shifted = dist([x + shift for x in a.atoms], list(a.weights))
    assert w1_distance(a, shifted) == pytest.approx(abs(shift), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite_floats, min_size=1, max_size=8))
def test_push_forward_self_distance_zero(margins):
    d = push_forward(margins)
    assert w1_distance(d, d) <= 1e-12


# -------------------------------------------------------------- expectations


def test_expect_logsigma_at_zero():
    assert expect_logsigma(dist([0.0])) == pytest.approx(math.log(0.5), abs=1e-12)


def test_expect_logsigma_large_positive_is_stable():
    # log sigma(20) = -log1p(exp(-20)); the naive form would round to 0.
    got = expect_logsigma(dist([20.0]))
    assert got == pytest.approx(-math.log1p(math.exp(-20.0)), rel=1e-12)
    assert got == pytest.approx(-2.0611536181902037e-09, rel=1e-9)


def test_expect_logsigma_no_overflow_far_out():
    assert np.isfinite(expect_logsigma(dist([800.0])))
    assert np.isfinite(expect_logsigma(dist([-800.0])))
    assert expect_logsigma(dist([-800.0])) == pytest.approx(-800.0, rel=1e-12)


def test_expect_logsigma_constant_atom():
    assert expect_logsigma(dist([0.0, 0.0], [0.3, 0.7])) == pytest.approx(math.log(0.5), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(distributions())
def test_expect_logsigma_nonpositive(d):
    assert expect_logsigma(d) <= 0.0


@settings(max_examples=60, deadline=None)
@given(distributions(), distributions())
def test_kantorovich_rubinstein_inequality(a, b):
    # log sigma is 1-Lipschitz, so expectation differences are dominated by W1.
    gap = abs(expect_logsigma(a) - expect_logsigma(b))
    assert gap <= w1_distance(a, b) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-700, max_value=700, allow_nan=False))
def test_log_sigmoid_logaddexp_agreement(x):
    # Independent stable formulation of the same quantity.
    assert log_sigmoid(x) == pytest.approx(-np.logaddexp(0.0, -x), rel=1e-12, abs=1e-300)
    assert logistic_loss(x) == pytest.approx(np.logaddexp(0.0, -x), rel=1e-12, abs=1e-300)


# ------------------------------------------------------------------ validation


def test_distribution_weight_sum_enforced():
    with pytest.raises(ValueError, match="sum to 1"):
        DiscreteGapDistribution(atoms=(0.0, 1.0), weights=(0.6, 0.6))


def test_distribution_negative_weight_rejected():
    with pytest.raises(ValueError, match="nonnegative"):
        DiscreteGapDistribution(atoms=(0.0, 1.0), weights=(-0.2, 1.2))


def test_distribution_length_mismatch():
    with pytest.raises(ValueError, match="matching length"):
        DiscreteGapDistribution(atoms=(0.0, 1.0), weights=(1.0,))


def test_distribution_rejects_infinite_atom():
    with pytest.raises(ValueError):
        DiscreteGapDistribution(atoms=(float("inf"),), weights=(1.0,))


def test_window_requires_lo_below_hi():
    with pytest.raises(ValueError, match="lo must be < hi"):
        SupportWindow(lo=1.0, hi=1.0)


def test_window_rejects_nan():
    with pytest.raises(ValueError, match="NaN"):
        SupportWindow(lo=float("nan"), hi=1.0)


def test_window_clip_and_contains():
    w = SupportWindow(lo=-1.0, hi=2.0)
    assert w.contains(0.0)
    assert not w.contains(2.5)
    np.testing.assert_allclose(w.clip(np.array([-3.0, 0.5, 9.0])), [-1.0, 0.5, 2.0])


def test_window_from_margins_pads_by_tau():
    w = SupportWindow.from_margins([-1.0, 3.0], tau=0.5)
    assert w.lo == pytest.approx(-1.5)
    assert w.hi == pytest.approx(3.5)
    assert w.tau == pytest.approx(0.5)


def test_window_infinite_sides_allowed():
    w = SupportWindow(lo=float("-inf"), hi=float("inf"))
    assert not w.finite
    assert w.contains(1e12)


# ------------------------------------------------------------------- file I/O


def test_margins_file_round_trip(tmp_path):
    path = tmp_path / "margins.txt"
    values = [0.25, -3.5, 1e-3, 42.0]
    write_margins_file(path, values)
    np.testing.assert_allclose(read_margins_file(path), values)


def test_margins_file_comments_and_blanks(tmp_path):
    path = tmp_path / "margins.txt"
    path.write_text("# header\n1.5\n\n# mid comment\n-2.0\n")
    np.testing.assert_allclose(read_margins_file(path), [1.5, -2.0])


def test_margins_file_reports_bad_line(tmp_path):
    path = tmp_path / "margins.txt"
    path.write_text("1.0\nbogus\n")
    with pytest.raises(ValueError, match=r"margins\.txt:2: not a number"):
        read_margins_file(path)


def test_distribution_json_round_trip(tmp_path):
    path = tmp_path / "dist.json"
    d = dist([0.5, -1.0], [0.25, 0.75])
    write_distribution_json(path, d)
    back = read_distribution_json(path)
    np.testing.assert_allclose(back.atoms, d.atoms)
    np.testing.assert_allclose(back.weights, d.weights)


def test_distribution_json_missing_keys(tmp_path):
    path = tmp_path / "dist.json"
    path.write_text('{"atoms": [0.0]}')
    with pytest.raises(ValueError, match="atoms.*weights"):
        read_distribution_json(path)
