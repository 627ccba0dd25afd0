"""Tabular policies over toy preference worlds, and the leader-side updates.

A world is a finite prompt set, each with a handful of responses, a ground
truth reward table and a reference policy (uniform unless stated).  The
policy is a per-(prompt, response) logit table with softmax sampling; its
implicit reward is beta * log(policy / reference), so a preference margin
is the implicit-reward gap of a comparison and the log-normalizers cancel.

The leader minimizes a reweighted pairwise logistic loss plus a proximal
anchor (lam/2)||theta - theta_t||^2.  Updates use forward-backward proximal
gradient steps, which stay stable for any anchor strength: the anchor is
applied through its exact prox map rather than through its gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .gapspace import SupportWindow, logistic_loss, sigmoid

REWEIGHT_MODES = ("uniform", "piece", "slope", "transported")

# Logit clamp keeping the policy class compact.
LOGIT_CLAMP = 50.0

# Mass threshold below which a transported term is skipped.
MASS_TOL = 1e-9


@dataclass(frozen=True)
class ToyWorld:
    """Finite prompt/response universe with ground-truth rewards.

    prompts: prompt ids.  responses[p]: response ids of prompt p.
    true_reward[p]: reward of each response.  ref_logits[p]: reference
    policy logits (zeros give the uniform reference).
    """

    prompts: tuple
    responses: tuple
    true_reward: tuple
    ref_logits: tuple

    def __post_init__(self):
        if len(self.prompts) == 0:
            raise ValueError("world needs at least one prompt")
        if not (len(self.prompts) == len(self.responses) == len(self.true_reward) == len(self.ref_logits)):
            raise ValueError("per-prompt field lengths disagree")
        frozen_rewards = []
        frozen_refs = []
        for p, (rs, rw, rf) in enumerate(zip(self.responses, self.true_reward, self.ref_logits)):
            if len(rs) < 2:
                raise ValueError(f"prompt {self.prompts[p]!r} needs at least two responses")
            rw = np.asarray(rw, dtype=np.float64)
            rf = np.asarray(rf, dtype=np.float64)
            if rw.size != len(rs) or rf.size != len(rs):
                raise ValueError(f"prompt {self.prompts[p]!r}: table sizes disagree")
            if not (np.all(np.isfinite(rw)) and np.all(np.isfinite(rf))):
                raise ValueError("reward and reference tables must be finite")
            rw.setflags(write=False)
            rf.setflags(write=False)
            frozen_rewards.append(rw)
            frozen_refs.append(rf)
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "responses", tuple(tuple(r) for r in self.responses))
        object.__setattr__(self, "true_reward", tuple(frozen_rewards))
        object.__setattr__(self, "ref_logits", tuple(frozen_refs))

    @property
    def n_prompts(self) -> int:
        return len(self.prompts)

    def n_responses(self, p: int) -> int:
        return len(self.responses[p])

    def prompt_index(self, prompt_id: str) -> int:
        try:
            return self.prompts.index(prompt_id)
        except ValueError as exc:
            raise ValueError(f"unknown prompt id {prompt_id!r}") from exc

    def response_index(self, p: int, response_id: str) -> int:
        try:
            return self.responses[p].index(response_id)
        except ValueError as exc:
            raise ValueError(f"unknown response id {response_id!r} for prompt {self.prompts[p]!r}") from exc


@dataclass(frozen=True)
class PolicyParams:
    """Per-prompt logit tables plus the implicit-reward temperature beta."""

    theta: tuple
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        frozen = []
        for t in self.theta:
            arr = np.asarray(t, dtype=np.float64).copy()
            if not np.all(np.isfinite(arr)):
                raise ValueError("policy logits must be finite")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "theta", tuple(frozen))

    @staticmethod
    def zeros(world: ToyWorld, beta: float) -> "PolicyParams":
        return PolicyParams(tuple(np.zeros(world.n_responses(p)) for p in range(world.n_prompts)), beta)

    def with_theta(self, theta) -> "PolicyParams":
        return PolicyParams(tuple(theta), self.beta)


@dataclass(frozen=True)
class PreferencePair:
    prompt: int
    winner: int
    loser: int
    source: str = "seed"
    flipped: bool = False

    def swapped(self) -> "PreferencePair":
        return replace(self, winner=self.loser, loser=self.winner, flipped=not self.flipped)


@dataclass(frozen=True)
class LeaderConfig:
    learning_rate: float = 1.0
    steps: int = 100
    lam: float = 1e-3
    mode: str = "slope"

    def __post_init__(self):
        if self.mode not in REWEIGHT_MODES:
            raise ValueError(f"unknown reweight mode {self.mode!r}")
        if self.learning_rate <= 0 or self.steps < 1 or self.lam < 0:
            raise ValueError("bad leader configuration")


def log_probs(policy: PolicyParams, world: ToyWorld, p: int) -> np.ndarray:
    t = policy.theta[p]
    return t - _logsumexp(t)


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def implicit_reward(policy: PolicyParams, world: ToyWorld, p: int, y: int) -> float:
    """beta * (log policy(y|p) - log reference(y|p))."""
    if not (0 <= p < world.n_prompts):
        raise ValueError(f"prompt index {p} out of range")
    if not (0 <= y < world.n_responses(p)):
        raise ValueError(f"response index {y} out of range for prompt {p}")
    ref = world.ref_logits[p]
    ref_lp = ref[y] - _logsumexp(ref)
    return float(policy.beta * (log_probs(policy, world, p)[y] - ref_lp))


def implicit_reward_table(policy: PolicyParams, world: ToyWorld) -> list[np.ndarray]:
    out = []
    for p in range(world.n_prompts):
        ref = world.ref_logits[p]
        out.append(policy.beta * (log_probs(policy, world, p) - (ref - _logsumexp(ref))))
    return out


def _pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        raise ValueError("empty sample set")
    ps = np.fromiter((pr.prompt for pr in pairs), dtype=np.intp, count=len(pairs))
    ws = np.fromiter((pr.winner for pr in pairs), dtype=np.intp, count=len(pairs))
    ls = np.fromiter((pr.loser for pr in pairs), dtype=np.intp, count=len(pairs))
    return ps, ws, ls


def margins_of(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    window: SupportWindow | None = None,
) -> np.ndarray:
    """Implicit-reward gaps winner minus loser, optionally clipped to a window.

    Both responses share the prompt, so the softmax and reference
    normalizers cancel and the margin reduces to
    beta * ((theta_w - theta_l) - (ref_w - ref_l)).
    """
    ps, ws, ls = _pair_arrays(pairs)
    raw = np.empty(len(pairs))
    for i in range(len(pairs)):
        p = ps[i]
        if p < 0 or p >= world.n_prompts:
            raise ValueError(f"pair {i}: prompt index {p} out of range")
        nr = world.n_responses(p)
        if ws[i] == ls[i] or not (0 <= ws[i] < nr) or not (0 <= ls[i] < nr):
            raise ValueError(f"pair {i}: bad response indices ({ws[i]}, {ls[i]})")
        t = policy.theta[p]
        r = world.ref_logits[p]
        raw[i] = policy.beta * ((t[ws[i]] - t[ls[i]]) - (r[ws[i]] - r[ls[i]]))
    if window is None:
        return raw
    return window.clip(raw)


def dpo_loss(policy: PolicyParams, world: ToyWorld, pairs, window: SupportWindow | None = None) -> float:
    """Plain pairwise logistic loss, mean over pairs."""
    return float(np.mean(logistic_loss(margins_of(policy, world, pairs, window))))


def _term_layout(pairs, solution, mode: str):
    """Flatten a reweight mode into (pair_index, weight, shift) triples.

    Every mode is a weighted sum of logistic losses of shifted margins;
    expressing them in one layout keeps the loss and its gradient in a
    single code path.
    """
    n = len(pairs)
    if mode == "uniform" or solution is None:
        if mode != "uniform" and solution is None:
            raise ValueError(f"mode {mode!r} needs a follower solution")
        return np.arange(n), np.full(n, 1.0 / n), np.zeros(n)
    if mode == "piece":
        w = solution.s.sum(axis=1) / n
        return np.arange(n), w, np.zeros(n)
    if mode == "slope":
        omega = np.abs(solution.slope_weights)
        z_bar = float(np.mean(omega))
        if z_bar <= 0:
            raise ValueError("slope weights vanished; surrogate has no usable pieces")
        return np.arange(n), omega / (z_bar * n), np.zeros(n)
    if mode == "transported":
        live = solution.s > MASS_TOL
        pair_idx, piece_idx = np.nonzero(live)
        weights = solution.s[live] / n
        shifts = solution.q[live] / solution.s[live]
        return pair_idx, weights, shifts
    raise ValueError(f"unknown reweight mode {mode!r}")


def reweighted_loss(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    solution,
    mode: str,
    window: SupportWindow | None = None,
) -> float:
    """Leader objective under a worst-case solve.

    uniform ignores the solution; piece applies the per-sample mass split
    (summing to the plain loss); slope scales samples by their aggregated
    piece slope, normalized to mean one; transported evaluates the loss at
    the adversarially shifted margins.
    """
    idx, w, shift = _term_layout(pairs, solution, mode)
    xi = margins_of(policy, world, pairs, window)
    return float(np.sum(w * logistic_loss(xi[idx] - shift)))


def reweighted_loss_grad(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    solution,
    mode: str,
    window: SupportWindow | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Loss value and its exact gradient with respect to every logit table.

    d loss / d margin_i collects the per-term logistic derivatives; the
    chain rule through the margin puts +beta on the winner logit and -beta
    on the loser logit.  Margins clipped by the window propagate zero
    gradient, matching the piecewise definition.
    """
    idx, w, shift = _term_layout(pairs, solution, mode)
    ps, ws, ls = _pair_arrays(pairs)
    raw = margins_of(policy, world, pairs, None)
    if window is None:
        xi = raw
        interior = np.ones(len(pairs))
    else:
        xi = window.clip(raw)
        interior = ((raw > window.lo) & (raw < window.hi)).astype(np.float64)

    value = float(np.sum(w * logistic_loss(xi[idx] - shift)))
    # l'(x) = -sigmoid(-x)
    dldxi_terms = w * (-sigmoid(-(xi[idx] - shift)))
    dldxi = np.zeros(len(pairs))
    np.add.at(dldxi, idx, dldxi_terms)
    dldxi *= interior

    grads = [np.zeros(world.n_responses(p)) for p in range(world.n_prompts)]
    coef = policy.beta * dldxi
    for i in range(len(pairs)):
        g = grads[ps[i]]
        g[ws[i]] += coef[i]
        g[ls[i]] -= coef[i]
    return value, grads


def proximal_update(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    solution,
    cfg: LeaderConfig,
    window: SupportWindow | None = None,
) -> PolicyParams:
    """Minimize reweighted loss + (lam/2)||theta - theta_t||^2 by proximal gradient.

    Each step takes a gradient step on the loss and then applies the exact
    prox of the anchor, theta <- (theta' + lr*lam*theta_t) / (1 + lr*lam),
    followed by the logit clamp.  With lam = 0 this is plain gradient
    descent on the reweighted loss.
    """
    anchor = [t.copy() for t in policy.theta]
    theta = [t.copy() for t in policy.theta]
    lr = cfg.learning_rate
    denom = 1.0 + lr * cfg.lam
    current = policy
    for _ in range(cfg.steps):
        _, grads = reweighted_loss_grad(current, world, pairs, solution, cfg.mode, window)
        for p in range(world.n_prompts):
            stepped = theta[p] - lr * grads[p]
            if cfg.lam > 0:
                stepped = (stepped + lr * cfg.lam * anchor[p]) / denom
            theta[p] = np.clip(stepped, -LOGIT_CLAMP, LOGIT_CLAMP)
        current = current.with_theta([t.copy() for t in theta])
    return current


def finite_difference_grad(policy: PolicyParams, world: ToyWorld, objective, step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of objective(policy) over every logit."""
    grads = []
    for p in range(world.n_prompts):
        g = np.zeros(world.n_responses(p))
        for y in range(world.n_responses(p)):
            hi = [t.copy() for t in policy.theta]
            lo = [t.copy() for t in policy.theta]
            hi[p][y] += step
            lo[p][y] -= step
            g[y] = (objective(policy.with_theta(hi)) - objective(policy.with_theta(lo))) / (2 * step)
        grads.append(g)
    return grads


def gradient_check(
    policy: PolicyParams,
    world: ToyWorld,
    pairs,
    solution,
    mode: str,
    window: SupportWindow | None = None,
    step: float = 1e-5,
) -> float:
    """Relative error between analytic and central-difference gradients."""
    _, analytic = reweighted_loss_grad(policy, world, pairs, solution, mode, window)
    numeric = finite_difference_grad(
        policy, world, lambda pol: reweighted_loss(pol, world, pairs, solution, mode, window), step
    )
    num = 0.0
    den = 0.0
    for a, b in zip(analytic, numeric):
        num += float(np.sum((a - b) ** 2))
        den += float(np.sum(b**2))
    if den == 0:
        return float(np.sqrt(num))
    return float(np.sqrt(num / den))


def enumerate_true_pairs(world: ToyWorld) -> list[PreferencePair]:
    """Every unordered response pair of every prompt, winner by true reward.

    Ties go to the lower response index, deterministically.
    """
    pairs = []
    for p in range(world.n_prompts):
        rw = world.true_reward[p]
        n = world.n_responses(p)
        for a in range(n):
            for b in range(a + 1, n):
                if rw[b] > rw[a]:
                    pairs.append(PreferencePair(p, b, a, source="true"))
                else:
                    pairs.append(PreferencePair(p, a, b, source="true"))
    return pairs


def load_world(path) -> tuple[ToyWorld, float]:
    """Read a world JSON file; returns the world and its beta."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        beta = float(payload["beta"])
        entries = payload["prompts"]
        prompts = tuple(e["id"] for e in entries)
        responses = tuple(tuple(e["responses"]) for e in entries)
        rewards = tuple(np.asarray(e["true_reward"], dtype=np.float64) for e in entries)
        refs = tuple(
            np.asarray(e.get("ref_logits", np.zeros(len(e["responses"]))), dtype=np.float64)
            for e in entries
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"world file {path} is malformed") from exc
    return ToyWorld(prompts, responses, rewards, refs), beta


def save_world(path, world: ToyWorld, beta: float) -> None:
    payload = {
        "beta": beta,
        "prompts": [
            {
                "id": world.prompts[p],
                "responses": list(world.responses[p]),
                "true_reward": world.true_reward[p].tolist(),
                "ref_logits": world.ref_logits[p].tolist(),
            }
            for p in range(world.n_prompts)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def save_checkpoint(path, policy: PolicyParams, world: ToyWorld) -> None:
    """Policy checkpoint: logits keyed by prompt and response id."""
    logits = {
        world.prompts[p]: {
            world.responses[p][y]: float(policy.theta[p][y])
            for y in range(world.n_responses(p))
        }
        for p in range(world.n_prompts)
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"beta": policy.beta, "logits": logits}, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path, world: ToyWorld) -> PolicyParams:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        beta = float(payload["beta"])
        table = payload["logits"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"checkpoint {path} is malformed") from exc
    theta = []
    for p in range(world.n_prompts):
        pid = world.prompts[p]
        if pid not in table:
            raise ValueError(f"checkpoint missing prompt {pid!r}")
        row = np.zeros(world.n_responses(p))
        for rid, val in table[pid].items():
            row[world.response_index(p, rid)] = float(val)
        theta.append(row)
    return PolicyParams(tuple(theta), beta)
