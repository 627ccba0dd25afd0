"""Convex piecewise-linear under-approximations of the pairwise logistic loss.

The surrogate is a max of tangent lines to the convex loss l(xi) =
-log(sigmoid(xi)).  A tangent at knot t has slope l'(t) = -sigmoid(-t) and
intercept l(t) - slope * t, so the surrogate never exceeds l and touches it
at every knot.  Adding knots only tightens the approximation, which is what
makes the worst-case solver's value sequence monotone.

Two families are provided.  The margin-space family (the default, and the
only one the worst-case solver consumes) places knots directly in margin
space.  The probability-space family places tangents on -log(x) at the
K-equipartition of (0, 1] and is exposed for comparison only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gapspace import SupportWindow, logistic_loss, sigmoid, validate_margins

# Default pad added around the data range when deriving a knot window.
DEFAULT_TAU = 1.0

# Strictly-increasing slope check tolerance.
SLOPE_TOL = 1e-12


@dataclass(frozen=True)
class TangentSet:
    """A finite bundle of affine minorants: surrogate(x) = max_k slopes[k]*x + intercepts[k].

    space is 'margin' for tangents of -log(sigmoid(x)) in margin space, or
    'prob' for tangents of -log(x) over (0, 1].  window is the knot window
    the set was built on, used for gap evaluation and serialization.
    """

    slopes: np.ndarray
    intercepts: np.ndarray
    knots: np.ndarray
    window: SupportWindow
    space: str = "margin"

    def __post_init__(self):
        slopes = np.asarray(self.slopes, dtype=np.float64)
        intercepts = np.asarray(self.intercepts, dtype=np.float64)
        knots = np.asarray(self.knots, dtype=np.float64)
        if slopes.size == 0:
            raise ValueError("tangent set needs at least one piece")
        if slopes.shape != intercepts.shape or slopes.shape != knots.shape:
            raise ValueError("slopes, intercepts and knots must have matching length")
        if self.space not in ("margin", "prob"):
            raise ValueError(f"unknown tangent space {self.space!r}")
        order = np.argsort(knots, kind="stable")
        slopes, intercepts, knots = slopes[order], intercepts[order], knots[order]
        if self.space == "margin":
            if np.any(slopes <= -1.0) or np.any(slopes >= 0.0):
                raise ValueError("margin-space slopes must lie in (-1, 0)")
        if np.any(np.diff(slopes) <= SLOPE_TOL):
            raise ValueError("slopes must be strictly increasing in knot order")
        for arr in (slopes, intercepts, knots):
            arr.setflags(write=False)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "knots", knots)

    @property
    def k(self) -> int:
        return int(self.slopes.size)

    @property
    def max_abs_slope(self) -> float:
        return float(np.max(np.abs(self.slopes)))

    def to_json_dict(self) -> dict:
        return {
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
            "knots": self.knots.tolist(),
            "window": {"lo": self.window.lo, "hi": self.window.hi},
            "space": self.space,
        }

    @staticmethod
    def from_json_dict(payload: dict) -> "TangentSet":
        try:
            window = SupportWindow(float(payload["window"]["lo"]), float(payload["window"]["hi"]))
            return TangentSet(
                np.asarray(payload["slopes"], dtype=np.float64),
                np.asarray(payload["intercepts"], dtype=np.float64),
                np.asarray(payload["knots"], dtype=np.float64),
                window,
                payload.get("space", "margin"),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError("tangent-set JSON missing required keys") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def with_window(self, window: SupportWindow) -> "TangentSet":
        """Same pieces under a different (typically wider) support window."""
        if np.any(self.knots < window.lo) or np.any(self.knots > window.hi):
            raise ValueError("knots fall outside the new window")
        return TangentSet(self.slopes, self.intercepts, self.knots, window, self.space)


def tangent_at(knot: float) -> tuple[float, float]:
    """Slope and intercept of the logistic-loss tangent at one margin knot."""
    slope = float(-sigmoid(-knot))
    intercept = float(logistic_loss(knot) - slope * knot)
    return slope, intercept


def _uniform_knots(k: int, window: SupportWindow) -> np.ndarray:
    if not window.finite:
        raise ValueError("uniform knots need a finite window")
    if k == 1:
        return np.array([0.5 * (window.lo + window.hi)])
    return np.linspace(window.lo, window.hi, k)


def _quantile_knots(k: int, margins: np.ndarray) -> np.ndarray:
    levels = np.linspace(0.0, 1.0, k) if k > 1 else np.array([0.5])
    knots = np.quantile(margins, levels)
    return np.unique(knots)


def tangents_from_knots(knots, window: SupportWindow) -> TangentSet:
    """Margin-space tangent set touching the loss at the given knots."""
    knots = np.asarray(knots, dtype=np.float64)
    slopes = -sigmoid(-knots)
    intercepts = logistic_loss(knots) - slopes * knots
    # Distinct knots give strictly increasing slopes since the loss is strictly convex.
    return TangentSet(slopes, intercepts, knots, window, space="margin")


def build_tangents_margin(
    k: int,
    window: SupportWindow,
    knot_rule: str = "uniform",
    margins=None,
) -> TangentSet:
    """Build the margin-space surrogate with k tangents on the given knot window.

    knot_rule 'uniform' spreads knots evenly over the window;
    'quantile' places them at empirical quantiles of the margins
    (duplicates collapse, so the realized piece count may be smaller).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if knot_rule == "uniform":
        knots = _uniform_knots(k, window)
    elif knot_rule == "quantile":
        if margins is None:
            raise ValueError("quantile knots need margins")
        knots = _quantile_knots(k, validate_margins(margins))
    else:
        raise ValueError(f"unknown knot rule {knot_rule!r}")
    return tangents_from_knots(knots, window)


def nested_tangent_sets(max_k: int, window: SupportWindow, ks) -> dict[int, TangentSet]:
    """Nested family for monotonicity probes: knots of each k subsample one max_k grid.

    Every k in ks must divide max_k so that the knot sets are genuinely nested.
    """
    grid = np.linspace(window.lo, window.hi, max_k)
    out = {}
    for k in ks:
        if max_k % k != 0:
            raise ValueError("each k must divide max_k for nested knots")
        out[k] = tangents_from_knots(grid[:: max_k // k][:k], window)
    return out


def build_tangents_prob(k: int) -> TangentSet:
    """Probability-space family: tangents of -log(x) at x = j/k for j = 1..k.

    Piece j is l_j(x) = -(k/j) * (x - j/k) - log(j/k) over x in (0, 1].
    Slopes are -k/j, so this family does not satisfy the margin-space slope
    range and is marked space='prob'.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    j = np.arange(1, k + 1, dtype=np.float64)
    knots = j / k
    slopes = -k / j
    intercepts = -np.log(knots) - slopes * knots
    window = SupportWindow(np.finfo(float).tiny, 1.0)
    return TangentSet(slopes, intercepts, knots, window, space="prob")


def eval_surrogate(ts: TangentSet, x) -> np.ndarray:
    """Pointwise max over the tangent pieces."""
    x = np.asarray(x, dtype=np.float64)
    vals = ts.slopes[:, None] * x.reshape(1, -1) + ts.intercepts[:, None]
    return np.max(vals, axis=0).reshape(x.shape)


def active_piece(ts: TangentSet, x) -> np.ndarray:
    """Index of the maximizing piece at each point (lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    vals = ts.slopes[:, None] * x.reshape(1, -1) + ts.intercepts[:, None]
    return np.argmax(vals, axis=0).reshape(x.shape)


def surrogate_gap(ts: TangentSet, grid_step: float = 1e-3) -> float:
    """Max of true loss minus surrogate over the knot window, by grid scan.

    This is the planarization slack used in the robustness budgets.  Only
    meaningful for margin-space sets; the true curve there is the logistic
    loss.
    """
    if ts.space != "margin":
        raise ValueError("surrogate gap is defined for margin-space tangent sets")
    if not ts.window.finite:
        raise ValueError("surrogate gap needs a finite window")
    if grid_step <= 0:
        raise ValueError("grid step must be > 0")
    n = max(2, int(np.ceil((ts.window.hi - ts.window.lo) / grid_step)) + 1)
    grid = np.linspace(ts.window.lo, ts.window.hi, n)
    gap = logistic_loss(grid) - eval_surrogate(ts, grid)
    return float(np.max(gap))
