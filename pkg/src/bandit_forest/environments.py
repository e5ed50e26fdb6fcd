"""Bandit environments: synthetic reward surfaces, tabular classification, logged panels.

Synthetic scenarios draw contexts iid Uniform([0,1]^P) and expose the exact
per-arm mean-reward vector for regret accounting. Classification datasets
turn each class label into an arm with 0/1 reward. Logged panels hold
(context, action, reward, behavior propensities, cluster id, step) rows for
replay-based off-policy evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .forest import DirichletSparse, Forest, PriorConfig, build_split_grid, sample_axis_probs, sample_tree_from_prior

__all__ = [
    "friedman1",
    "friedman2",
    "friedman3",
    "SyntheticEnv",
    "ScenarioSpec",
    "SCENARIOS",
    "make_scenario",
    "ClassificationBanditEnv",
    "EnvironmentExhausted",
    "classification_step",
    "load_tabular_csv",
    "LoggedPanel",
    "load_logged_panel",
    "save_logged_panel",
    "make_synthetic_panel",
]


# ---------------------------------------------------------------------------
# Scenario reward functions


def friedman1(x) -> np.ndarray | float:
    """10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 on the last axis."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    X = np.atleast_2d(x)
    out = (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )
    return float(out[0]) if scalar else out


def _rescaled_coords(X: np.ndarray):
    x1 = 100.0 * X[:, 0]
    x2 = 40.0 * np.pi + 520.0 * np.pi * X[:, 1]
    x3 = X[:, 2]
    x4 = 1.0 + 10.0 * X[:, 3]
    return x1, x2, x3, x4


def friedman2(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    X = np.atleast_2d(x)
    x1, x2, x3, x4 = _rescaled_coords(X)
    out = np.sqrt(x1**2 + (x2 * x3 - 1.0 / (x2 * x4)) ** 2) / 125.0
    return float(out[0]) if scalar else out


def friedman3(x) -> np.ndarray | float:
    """arctan of the ratio term over 0.1; x1' = 0 resolves to +-pi/2 by numerator sign."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    X = np.atleast_2d(x)
    x1, x2, x3, x4 = _rescaled_coords(X)
    num = x2 * x3 - 1.0 / (x2 * x4)
    # arctan2 realizes the limit convention: arctan2(num, 0) = sign(num) pi/2, arctan2(0, 0) = 0
    out = np.arctan2(num, x1) / 0.1
    return float(out[0]) if scalar else out


_SCENARIO_FNS = {"f1": friedman1, "f2": friedman2, "f3": friedman3}


# ---------------------------------------------------------------------------
# Synthetic environments


@dataclass(frozen=True)
class ScenarioSpec:
    """Static description of a synthetic scenario; replicate() freezes the randomness."""

    name: str
    kind: str  # linear | friedman | synbart
    P: int
    K: int
    noise_sd: float = 1.0
    fn: str = "f1"  # friedman scenario function
    arm2: str = "shared"  # shared | disjoint
    heteroscedastic: bool = False
    linear_sparsity: int | None = None  # active leading coefficients; None = all

    def replicate(self, seed: int) -> "SyntheticEnv":
        return SyntheticEnv(self, seed)


class SyntheticEnv:
    """One replication of a synthetic scenario with its sampled parameters frozen."""

    def __init__(self, spec: ScenarioSpec, seed: int):
        self.spec = spec
        self.P = spec.P
        self.K = spec.K
        rng = np.random.default_rng(seed)
        self._betas = None
        self._forests: list[Forest] | None = None
        if spec.kind == "linear":
            d = spec.linear_sparsity if spec.linear_sparsity is not None else spec.P
            betas = np.zeros((spec.K, spec.P))
            betas[:, :d] = rng.normal(size=(spec.K, d))
            self._betas = betas
        elif spec.kind == "synbart":
            prior = PriorConfig(
                m=100,
                kappa=2.0,
                n_max=100,
                split_axis=DirichletSparse(zeta=1.0, xi=1.0),
            )
            grid = build_split_grid(rng.random((10_000, spec.P)), prior.n_max)
            forests = []
            for _ in range(spec.K):
                s = sample_axis_probs(prior.split_axis, spec.P, rng)
                forests.append(Forest([sample_tree_from_prior(prior, grid, s, rng) for _ in range(prior.m)]))
            self._forests = forests
        elif spec.kind != "friedman":
            raise ValueError(f"unknown scenario kind {spec.kind!r}")
        if spec.heteroscedastic:
            self.arm_noise_sd = np.sqrt(10.0 ** rng.uniform(-1.0, 1.0, size=spec.K))
        else:
            self.arm_noise_sd = np.full(spec.K, spec.noise_sd)

    def sample_contexts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((n, self.P))

    def arm_means_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        spec = self.spec
        if spec.kind == "linear":
            return X @ self._betas.T
        if spec.kind == "synbart":
            return np.column_stack([f.predict_matrix(X) for f in self._forests])
        fn = _SCENARIO_FNS[spec.fn]
        mu1 = fn(X)
        if spec.arm2 == "disjoint":
            mu2 = fn(X[:, ::-1])
        else:
            mu2 = fn(X) + 5.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        return np.column_stack([mu1, mu2])

    def arm_means(self, x) -> np.ndarray:
        return self.arm_means_matrix(np.atleast_2d(x))[0]


SCENARIOS: dict[str, ScenarioSpec] = {
    "linear": ScenarioSpec("linear", "linear", P=10, K=3),
    "friedman": ScenarioSpec("friedman", "friedman", P=5, K=2, fn="f1", arm2="shared"),
    "friedman2": ScenarioSpec("friedman2", "friedman", P=5, K=2, fn="f2", arm2="shared"),
    "friedman3": ScenarioSpec("friedman3", "friedman", P=5, K=2, fn="f3", arm2="shared"),
    "friedman_sparse": ScenarioSpec("friedman_sparse", "friedman", P=20, K=2, fn="f1", arm2="shared"),
    "friedman_sparse_disjoint": ScenarioSpec(
        "friedman_sparse_disjoint", "friedman", P=20, K=2, fn="f1", arm2="disjoint"
    ),
    "friedman_heteroscedastic": ScenarioSpec(
        "friedman_heteroscedastic", "friedman", P=5, K=2, fn="f1", arm2="shared", heteroscedastic=True
    ),
    "synbart": ScenarioSpec("synbart", "synbart", P=4, K=3, noise_sd=0.1),
}


def make_scenario(name: str, **overrides) -> ScenarioSpec:
    """Look up a named scenario, optionally overriding its fields (P, K, noise_sd...)."""
    try:
        base = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
    if overrides:
        from dataclasses import replace

        base = replace(base, **overrides)
    return base


# ---------------------------------------------------------------------------
# Classification-to-bandit


class EnvironmentExhausted(Exception):
    """Raised when a dataset-backed environment runs past its last row."""


class ClassificationBanditEnv:
    """Feature rows with integer labels; each label is an arm, reward is 1{a == label}."""

    def __init__(self, X: np.ndarray, labels: np.ndarray, label_names: list | None = None):
        self.X = np.asarray(X, dtype=float)
        self.labels = np.asarray(labels, dtype=int)
        if self.X.shape[0] != self.labels.shape[0]:
            raise ValueError("feature/label length mismatch")
        self.K = int(self.labels.max()) + 1 if len(self.labels) else 0
        if self.K < 2:
            raise ValueError("need at least 2 classes")
        self.label_names = label_names

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    def shuffled(self, seed: int) -> "ClassificationBanditEnv":
        order = np.random.default_rng(seed).permutation(len(self))
        out = ClassificationBanditEnv.__new__(ClassificationBanditEnv)
        out.X = self.X[order]
        out.labels = self.labels[order]
        out.K = self.K
        out.label_names = self.label_names
        return out


def classification_step(env: ClassificationBanditEnv, t: int, action: int) -> tuple[float, float]:
    """Reward and regret increment for playing ``action`` on row ``t``."""
    if t >= len(env):
        raise EnvironmentExhausted(f"round {t} beyond dataset of {len(env)} rows")
    reward = 1.0 if action == env.labels[t] else 0.0
    return reward, 1.0 - reward


def load_tabular_csv(path, label_column: str, categorical: list[str] | None = None) -> ClassificationBanditEnv:
    """Build a classification bandit from a CSV with a header row.

    Numeric columns are min-max scaled to [0,1] (constant columns map to 0);
    categorical columns are one-hot expanded; labels are factorized to
    0..K-1 in sorted order. Columns listed in ``categorical`` are always
    one-hot; otherwise a column is numeric iff its first cell parses as a
    float, and a later unparseable cell in a numeric column is an error
    naming the row and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty CSV")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError("CSV has no data rows")
    if label_column not in header:
        raise ValueError(f"label column {label_column!r} not in header")
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    labels_raw = cols.pop(label_column)
    categorical = set(categorical or [])

    blocks = []
    for name, values in cols.items():
        if name in categorical or not _parses(values[0]):
            blocks.append(_one_hot(values))
            continue
        parsed = np.empty(len(values))
        for i, v in enumerate(values):
            try:
                parsed[i] = float(v)
            except ValueError:
                raise ValueError(
                    f"unparseable cell at row {i + 2}, column {name!r}: {v!r}"
                ) from None
        blocks.append(_min_max(parsed)[:, None])

    levels = sorted(set(labels_raw))
    if len(levels) < 2:
        raise ValueError("label column has a single class")
    lut = {v: i for i, v in enumerate(levels)}
    labels = np.array([lut[v] for v in labels_raw], dtype=int)
    X = np.hstack(blocks) if blocks else np.zeros((len(labels), 0))
    return ClassificationBanditEnv(X, labels, label_names=levels)


def _parses(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def _min_max(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.zeros_like(col)
    return (col - lo) / (hi - lo)


def _one_hot(values: list[str]) -> np.ndarray:
    levels = sorted(set(values))
    out = np.zeros((len(values), len(levels)))
    lut = {v: i for i, v in enumerate(levels)}
    for i, v in enumerate(values):
        out[i, lut[v]] = 1.0
    return out


# ---------------------------------------------------------------------------
# Logged panels (replay OPE input)

PANEL_PROPENSITY_TOL = 1e-6


@dataclass
class LoggedPanel:
    """Ordered logged-interaction rows with static or logged behavior propensities."""

    contexts: np.ndarray  # (n, p)
    actions: np.ndarray  # (n,) int
    rewards: np.ndarray  # (n,)
    propensities: np.ndarray  # (n, K)
    cluster_ids: np.ndarray  # (n,)
    steps: np.ndarray  # (n,) within-cluster order
    K: int = field(init=False)

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=float)
        self.actions = np.asarray(self.actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.propensities = np.asarray(self.propensities, dtype=float)
        self.cluster_ids = np.asarray(self.cluster_ids)
        self.steps = np.asarray(self.steps, dtype=int)
        n = len(self.actions)
        if not (len(self.contexts) == len(self.rewards) == len(self.propensities) == len(self.cluster_ids) == len(self.steps) == n):
            raise ValueError("panel column lengths differ")
        self.K = self.propensities.shape[1]
        if np.any(self.propensities < 0):
            raise ValueError("negative behavior propensity")
        sums = self.propensities.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PANEL_PROPENSITY_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"propensities at row {bad} sum to {sums[bad]:.8f}, not 1")
        if self.actions.min() < 0 or self.actions.max() >= self.K:
            raise ValueError("logged action outside propensity columns")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def p(self) -> int:
        return self.contexts.shape[1]

    def cluster_order(self) -> list:
        seen, order = set(), []
        for c in self.cluster_ids:
            key = c.item() if hasattr(c, "item") else c
            if key not in seen:
                seen.add(key)
                order.append(key)
        return order

    def take_clusters(self, clusters) -> "LoggedPanel":
        """Concatenate the given clusters' rows (with repetition), preserving
        within-cluster order."""
        parts = []
        for c in clusters:
            parts.append(np.nonzero(self.cluster_ids == c)[0])
        idx = np.concatenate(parts) if parts else np.empty(0, dtype=int)
        return LoggedPanel(
            self.contexts[idx],
            self.actions[idx],
            self.rewards[idx],
            self.propensities[idx],
            self.cluster_ids[idx],
            self.steps[idx],
        )


def load_logged_panel(path) -> LoggedPanel:
    """Read a panel CSV with columns context_0..context_{p-1}, action, reward,
    prop_0..prop_{K-1}, cluster_id, step."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty CSV")
        rows = [row for row in reader if row]
    ctx_cols = [h for h in header if h.startswith("context_")]
    prop_cols = [h for h in header if h.startswith("prop_")]
    required = {"action", "reward", "cluster_id", "step"}
    if not ctx_cols or not prop_cols or not required.issubset(header):
        raise ValueError("panel CSV must have context_*, action, reward, prop_*, cluster_id, step columns")
    ctx_cols.sort(key=lambda h: int(h.split("_")[1]))
    prop_cols.sort(key=lambda h: int(h.split("_")[1]))
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    contexts = np.array([[float(r[pos[c]]) for c in ctx_cols] for r in rows])
    props = np.array([[float(r[pos[c]]) for c in prop_cols] for r in rows])
    actions = np.array([int(float(r[pos["action"]])) for r in rows])
    rewards = np.array([float(r[pos["reward"]]) for r in rows])
    clusters = np.array([r[pos["cluster_id"]] for r in rows])
    steps = np.array([int(float(r[pos["step"]])) for r in rows])
    return LoggedPanel(contexts, actions, rewards, props, clusters, steps)


def save_logged_panel(panel: LoggedPanel, path) -> None:
    header = (
        [f"context_{j}" for j in range(panel.p)]
        + ["action", "reward"]
        + [f"prop_{a}" for a in range(panel.K)]
        + ["cluster_id", "step"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(panel)):
            w.writerow(
                [repr(v) for v in panel.contexts[i]]
                + [int(panel.actions[i]), repr(float(panel.rewards[i]))]
                + [repr(v) for v in panel.propensities[i]]
                + [panel.cluster_ids[i], int(panel.steps[i])]
            )


def make_synthetic_panel(
    n: int,
    seed: int,
    K: int = 3,
    p: int = 3,
    behavior=(0.4, 0.3, 0.3),
    n_clusters: int = 30,
    noise_sd: float = 0.1,
) -> tuple[LoggedPanel, np.ndarray, np.ndarray]:
    """Deterministic synthetic logged panel with known linear arm means.

    Returns (panel, beta, mean_matrix): rewards are x . beta_a plus Gaussian
    noise, actions logged from the static behavior policy. Used by the OPE
    oracle tests and the make-panel CLI subcommand.
    """
    behavior = np.asarray(behavior, dtype=float)
    if len(behavior) != K:
        raise ValueError("behavior length must equal K")
    rng = np.random.default_rng(seed)
    X = rng.random((n, p))
    beta = rng.normal(size=(K, p))
    means = X @ beta.T
    actions = rng.choice(K, size=n, p=behavior)
    rewards = means[np.arange(n), actions] + noise_sd * rng.normal(size=n)
    clusters = np.repeat(np.arange(n_clusters), math.ceil(n / n_clusters))[:n]
    steps = np.concatenate([np.arange((clusters == c).sum()) for c in range(n_clusters)])
    props = np.tile(behavior, (n, 1))
    panel = LoggedPanel(X, actions, rewards, props, clusters, steps)
    return panel, beta, means
