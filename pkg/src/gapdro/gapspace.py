"""Discrete distributions of preference margins and exact 1-D Wasserstein geometry.

A preference margin is the implicit-reward gap between the preferred and the
rejected response of one comparison.  Everything downstream (the adversary,
the surrogate loss, the regret harness) lives in this 1-D space, so the
primitives here are deliberately small: finite atom/weight distributions,
support windows, exact W1 via the quantile coupling, and numerically stable
log-sigmoid expectations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Weight normalization slack for a valid discrete distribution.
WEIGHT_TOL = 1e-9


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def validate_margins(margins) -> np.ndarray:
    """Return margins as a finite 1-D float64 array, rejecting NaN/Inf and empty input."""
    return _as_float_array(margins, "margins")


@dataclass(frozen=True)
class SupportWindow:
    """Closed interval [lo, hi] that the adversary's atoms must stay inside.

    lo = -inf / hi = +inf disable the corresponding side.  tau records the
    pad used when the window was derived from data (zero otherwise).
    """

    lo: float
    hi: float
    tau: float = 0.0

    def __post_init__(self):
        if np.isnan(self.lo) or np.isnan(self.hi):
            raise ValueError("window bounds must not be NaN")
        if not self.lo < self.hi:
            raise ValueError("degenerate window: lo must be < hi")
        if self.tau < 0:
            raise ValueError("window pad must be >= 0")

    @property
    def finite(self) -> bool:
        return np.isfinite(self.lo) and np.isfinite(self.hi)

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lo, self.hi)

    def contains(self, values: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(values)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    @staticmethod
    def from_margins(margins, tau: float = 1.0) -> "SupportWindow":
        """Data-driven window [min - tau, max + tau]."""
        m = validate_margins(margins)
        if tau <= 0:
            raise ValueError("window pad must be > 0 for a data-driven window")
        return SupportWindow(float(m.min() - tau), float(m.max() + tau), tau=tau)


@dataclass(frozen=True)
class DiscreteGapDistribution:
    """Finite distribution over margin atoms. Weights are positive and sum to one."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_float_array(self.atoms, "atoms")
        weights = _as_float_array(self.weights, "weights")
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have matching length")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {WEIGHT_TOL}, got {total!r}")
        atoms = atoms.copy()
        weights = weights.copy()
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.atoms.size)

    def sorted(self) -> "DiscreteGapDistribution":
        order = np.argsort(self.atoms, kind="stable")
        return DiscreteGapDistribution(self.atoms[order], self.weights[order])

    def to_json_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_json_dict(payload: dict) -> "DiscreteGapDistribution":
        try:
            atoms = payload["atoms"]
            weights = payload["weights"]
        except (KeyError, TypeError) as exc:
            raise ValueError("distribution JSON must contain 'atoms' and 'weights'") from exc
        return DiscreteGapDistribution(np.asarray(atoms, dtype=np.float64),
                                       np.asarray(weights, dtype=np.float64))


def push_forward(margins) -> DiscreteGapDistribution:
    """Empirical distribution of a margin sample: one atom per value, uniform weight.

    Duplicates are kept as separate atoms; W1 and expectations are unaffected.
    """
    m = validate_margins(margins)
    w = np.full(m.size, 1.0 / m.size)
    return push_forward_weighted(m, w)


def push_forward_weighted(atoms, weights) -> DiscreteGapDistribution:
    return DiscreteGapDistribution(np.asarray(atoms, dtype=np.float64),
                                   np.asarray(weights, dtype=np.float64))


def w1_distance(a: DiscreteGapDistribution, b: DiscreteGapDistribution) -> float:
    """Exact 1-D Wasserstein-1 distance via the CDF (quantile coupling) integral.

    W1(a, b) = integral over t of |F_a(t) - F_b(t)| dt, which for finite
    support reduces to a sweep over the merged atom positions.
    """
    pts = np.union1d(a.atoms, b.atoms)
    if pts.size == 1:
        return 0.0
    a_sorted = a.sorted()
    b_sorted = b.sorted()
    # CDF of each distribution evaluated at every merged support point.
    cdf_a = np.cumsum(a_sorted.weights)[np.searchsorted(a_sorted.atoms, pts, side="right") - 1]
    cdf_b = np.cumsum(b_sorted.weights)[np.searchsorted(b_sorted.atoms, pts, side="right") - 1]
    # searchsorted yields -1 for points left of the first atom: CDF is 0 there.
    cdf_a = np.where(np.searchsorted(a_sorted.atoms, pts, side="right") == 0, 0.0, cdf_a)
    cdf_b = np.where(np.searchsorted(b_sorted.atoms, pts, side="right") == 0, 0.0, cdf_b)
    gaps = np.diff(pts)
    return float(np.sum(np.abs(cdf_a[:-1] - cdf_b[:-1]) * gaps))


def log_sigmoid(x) -> np.ndarray:
    """log(sigmoid(x)) without overflow on either tail."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    return out


def logistic_loss(x) -> np.ndarray:
    """-log(sigmoid(x)), the pairwise preference loss. Convex, 1-Lipschitz."""
    return -log_sigmoid(x)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    pos = 1.0 / (1.0 + np.exp(-np.clip(x, 0, None)))
    ex = np.exp(np.clip(x, None, 0))
    neg = ex / (1.0 + ex)
    return np.where(x >= 0, pos, neg)


def expect_logsigma(dist: DiscreteGapDistribution) -> float:
    """E[log sigmoid(xi)] under a discrete gap distribution."""
    return float(np.dot(dist.weights, log_sigmoid(dist.atoms)))


def read_margins_file(path) -> np.ndarray:
    """Parse a margins text file: one float per line, '#' starts a comment."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from exc
    if not values:
        raise ValueError("empty sample set")
    return validate_margins(values)


def write_margins_file(path, margins) -> None:
    m = validate_margins(margins)
    with open(path, "w", encoding="utf-8") as fh:
        for v in m:
            # repr of a Python float round-trips exactly; numpy scalars do not.
            fh.write(f"{float(v)!r}\n")


def read_distribution_json(path) -> DiscreteGapDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return DiscreteGapDistribution.from_json_dict(payload)


def write_distribution_json(path, dist: DiscreteGapDistribution) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dist.to_json_dict(), fh, indent=2)
        fh.write("\n")
