"""Replay simulation on logged panels and off-policy value estimation.

Replay walks the panel in order; at each row the agent's action distribution
is recorded, the agent samples an action, and it learns from the row only
when its action matches the logged one. Policy values come from
self-normalized importance sampling (SNIPS) or a doubly robust estimator
with a 2-fold cross-fitted per-arm ridge outcome model; uncertainty from a
user-level cluster bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import LoggedPanel
from .mcmc import DrawPool

__all__ = [
    "ReplayResult",
    "replay_run",
    "estimate_policy_dist",
    "snips",
    "ess",
    "dr_estimate",
    "cluster_bootstrap",
]


@dataclass
class ReplayResult:
    """Per-row replay records plus the match rate and update count."""

    policy_dists: np.ndarray  # (n, K) target distribution before each row
    weights: np.ndarray  # (n,) pi_e(a_i|x_i) / pi_b(a_i|x_i)
    matched: np.ndarray  # (n,) bool
    actions: np.ndarray  # logged actions
    rewards: np.ndarray  # logged rewards
    match_rate: float
    n_updates: int


def replay_run(agent, panel: LoggedPanel) -> ReplayResult:
    """Sequentially simulate the agent on the logged panel.

    The target distribution at each row is the agent's current action
    distribution before seeing the row. The agent's own action draw happens
    on every row (consuming its randomness) but the agent is updated only on
    matched rows. A logged action with zero behavior propensity is an error.
    """
    n = len(panel)
    dists = np.empty((n, panel.K))
    weights = np.empty(n)
    matched = np.zeros(n, dtype=bool)
    for i in range(n):
        x = panel.contexts[i]
        a = int(panel.actions[i])
        prop = panel.propensities[i, a]
        pi_e = agent.action_distribution(x)
        if prop <= 0.0:
            raise ValueError(f"positivity violation: logged action {a} at row {i} has zero propensity")
        dists[i] = pi_e
        weights[i] = pi_e[a] / prop
        chosen = agent.select(x)
        if chosen == a:
            matched[i] = True
            agent.update(x, a, float(panel.rewards[i]))
    n_upd = int(matched.sum())
    return ReplayResult(
        policy_dists=dists,
        weights=weights,
        matched=matched,
        actions=panel.actions.copy(),
        rewards=panel.rewards.copy(),
        match_rate=n_upd / n if n else 0.0,
        n_updates=n_upd,
    )


def estimate_policy_dist(pools: list[DrawPool], x) -> np.ndarray:
    """Optimal-arm vote distribution across aligned per-arm draw pools.

    pi(a|x) is the fraction of pooled draw positions whose argmax arm at x is
    a, attributing exact ties to the lowest arm index.
    """
    if not pools or any(p is None for p in pools):
        raise ValueError("need one pool per arm")
    sizes = {p.size for p in pools}
    if len(sizes) != 1:
        raise ValueError("pools are not aligned (unequal sizes)")
    preds = np.stack([p.predict_row(x) for p in pools], axis=1)  # (n_draws, K)
    votes = np.bincount(np.argmax(preds, axis=1), minlength=len(pools))
    return votes / votes.sum()


def snips(weights, rewards) -> float:
    """Self-normalized importance sampling: sum(w r) / sum(w)."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(rewards, dtype=float)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("all importance weights are zero")
    return float((w * r).sum() / total)


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    denom = (w**2).sum()
    if denom <= 0.0:
        raise ValueError("all importance weights are zero")
    return float(w.sum() ** 2 / denom)


def _ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Ridge with an unpenalized intercept; returns (p+1,) coefficients."""
    Z = np.column_stack([X, np.ones(len(X))])
    P = lam * np.eye(Z.shape[1])
    P[-1, -1] = 0.0
    return np.linalg.solve(Z.T @ Z + P, Z.T @ y)


def _ridge_predict(beta: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ beta[:-1] + beta[-1]


def _fit_outcome_model(panel: LoggedPanel, lam: float) -> np.ndarray:
    """2-fold cross-fitted per-arm ridge; folds by row parity.

    An arm with logged rows in only one fold falls back to a fold-pooled fit;
    an arm never logged predicts 0.
    """
    n = len(panel)
    q = np.zeros((n, panel.K))
    parity = np.arange(n) % 2
    for a in range(panel.K):
        arm_rows = panel.actions == a
        if not arm_rows.any():
            continue  # q stays 0 for never-logged arms
        for fold in (0, 1):
            predict_rows = parity == fold
            train = arm_rows & (parity != fold)
            if not train.any():
                train = arm_rows  # fold-pooled fallback
            beta = _ridge_fit(panel.contexts[train], panel.rewards[train], lam)
            q[predict_rows, a] = _ridge_predict(beta, panel.contexts[predict_rows])
    return q


def dr_estimate(panel: LoggedPanel, policy_dists: np.ndarray, outcome_model_spec=None) -> float:
    """Doubly robust policy value with a cross-fitted outcome model.

    V = mean_i [ sum_a pi_e(a|x_i) q(x_i,a) + w_i (r_i - q(x_i, a_i)) ] with
    w_i = pi_e(a_i|x_i) / pi_b(a_i|x_i). ``outcome_model_spec`` defaults to
    {"kind": "ridge", "lam": 1.0}; {"kind": "given", "q": (n,K)} injects an
    outcome model directly and {"kind": "zero"} forces q = 0.
    """
    spec = dict(outcome_model_spec or {"kind": "ridge"})
    kind = spec.get("kind", "ridge")
    n = len(panel)
    if n < 4:
        raise ValueError("need at least 4 rows for cross-fitting")
    policy_dists = np.asarray(policy_dists, dtype=float)
    if policy_dists.shape != (n, panel.K):
        raise ValueError("policy_dists shape must be (n, K)")

    if kind == "ridge":
        q = _fit_outcome_model(panel, float(spec.get("lam", 1.0)))
    elif kind == "given":
        q = np.asarray(spec["q"], dtype=float)
        if q.shape != (n, panel.K):
            raise ValueError("given q must have shape (n, K)")
    elif kind == "zero":
        q = np.zeros((n, panel.K))
    else:
        raise ValueError(f"unknown outcome model kind {kind!r}")

    idx = np.arange(n)
    logged_prop = panel.propensities[idx, panel.actions]
    if np.any(logged_prop <= 0.0):
        raise ValueError("positivity violation in logged propensities")
    w = policy_dists[idx, panel.actions] / logged_prop
    plug_in = (policy_dists * q).sum(axis=1)
    correction = w * (panel.rewards - q[idx, panel.actions])
    return float(np.mean(plug_in + correction))


def cluster_bootstrap(panel: LoggedPanel, B: int, statistic, rng: np.random.Generator) -> np.ndarray:
    """Resample whole clusters with replacement and evaluate the statistic B times.

    Each replicate draws n_clusters cluster ids and concatenates their rows
    preserving within-cluster order.
    """
    clusters = panel.cluster_order()
    if len(clusters) < 2:
        raise ValueError("need at least 2 clusters for the cluster bootstrap")
    out = np.empty(B)
    for b in range(B):
        picks = [clusters[i] for i in rng.integers(len(clusters), size=len(clusters))]
        out[b] = statistic(panel.take_clusters(picks))
    return out
