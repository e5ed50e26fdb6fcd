"""Bandit agents: forest Thompson sampling, its feel-good variant, linear baselines.

The forest agent runs an initial round-robin phase of ``tau`` rounds per arm,
then acts greedily under posterior draws consumed without replacement from a
shuffled pool queue. The pool is rebuilt by a cold-start MCMC refresh
whenever the refresh index increases (or at the end of round-robin). The
feel-good variant reweights which pooled draw is used by exponentially
tilting per-draw optimism scores; with tilt strength zero it reduces exactly
to the standard agent.

Linear baselines keep ridge accumulators per model and support the same
arm-encoding schemes (separate per-arm models, one-hot arm indicator, or
block-positional "multi" encoding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mcmc import DrawPool, SamplerConfig, run_refresh
from .seeding import derive_seed

__all__ = [
    "Logarithmic",
    "SquareRoot",
    "EveryN",
    "refresh_index",
    "refresh_rounds",
    "ENCODINGS",
    "encode_context",
    "encoded_dim",
    "FeelGoodConfig",
    "softmax_tilt_probs",
    "BftsAgent",
    "LinTSAgent",
    "LinUCBAgent",
]


# ---------------------------------------------------------------------------
# Refresh schedules


@dataclass(frozen=True)
class Logarithmic:
    c: float = 8.0


@dataclass(frozen=True)
class SquareRoot:
    c: float = 1.0


@dataclass(frozen=True)
class EveryN:
    n: int = 100


def refresh_index(t: int, schedule) -> int:
    """Value of the refresh index r(t); a refresh fires when r(t) > r(t-1)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if isinstance(schedule, Logarithmic):
        return math.ceil(schedule.c * math.log(t))
    if isinstance(schedule, SquareRoot):
        return math.ceil(schedule.c * math.sqrt(t))
    if isinstance(schedule, EveryN):
        return t // schedule.n
    raise TypeError(f"unknown schedule {schedule!r}")


def refresh_rounds(T: int, schedule, tau_k: int | None = None) -> list[int]:
    """Rounds at which a refresh fires over t in [1, T] (data-independent)."""
    out = []
    prev = refresh_index(1, schedule)
    for t in range(2, T + 1):
        cur = refresh_index(t, schedule)
        if cur > prev or (tau_k is not None and t == tau_k):
            out.append(t)
        prev = cur
    return out


# ---------------------------------------------------------------------------
# Arm encodings

ENCODINGS = ("separate", "onehot", "multi")


def encoded_dim(scheme: str, p: int, K: int) -> int:
    if scheme == "separate":
        return p
    if scheme == "onehot":
        return K + p
    if scheme == "multi":
        return K * p
    raise ValueError(f"unknown encoding {scheme!r}")


def encode_context(scheme: str, x: np.ndarray, arm: int, K: int) -> np.ndarray:
    """Embed (context, arm) for a single joint model; separate returns x unchanged."""
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    if scheme == "separate":
        return x
    if scheme == "onehot":
        out = np.zeros(K + p)
        out[arm] = 1.0
        out[K:] = x
        return out
    if scheme == "multi":
        out = np.zeros(K * p)
        out[arm * p : (arm + 1) * p] = x
        return out
    raise ValueError(f"unknown encoding {scheme!r}")


# ---------------------------------------------------------------------------
# Forest Thompson sampling


@dataclass(frozen=True)
class FeelGoodConfig:
    """Exponential-tilt optimism: scores track capped best-arm predictions.

    With lam == 0 the agent is exactly the standard one (uniform draw use and
    the usual noise-variance Gibbs step); with lam > 0 draw selection tilts
    by exp(lam * score) and the sampler holds the noise variance fixed at
    1 / (2 * eta).
    """

    eta: float = 1.0
    lam: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.b <= 0:
            raise ValueError("b must be positive")


def softmax_tilt_probs(scores: np.ndarray, lam: float) -> np.ndarray:
    """Pr(j) proportional to exp(lam * scores[j]), max-shifted for overflow safety."""
    z = lam * np.asarray(scores, dtype=float)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


class BftsAgent:
    """Thompson sampling with independent forest posteriors per arm (or one
    joint posterior over encoded contexts).

    Rounds 1..tau*K are round-robin; afterwards each round pops one pooled
    draw index (shared across arms) from a shuffled queue and plays the
    argmax arm of that draw, ties to the lowest index. The posterior pool
    refreshes whenever the refresh index increases or at the end of
    round-robin, each model refitted from scratch on its own data.
    """

    def __init__(
        self,
        K: int,
        sampler: SamplerConfig | None = None,
        schedule=None,
        tau: int = 5,
        encoding: str = "separate",
        seed: int = 0,
        fg: FeelGoodConfig | None = None,
    ):
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        self.K = K
        self.sampler = sampler if sampler is not None else SamplerConfig()
        self.schedule = schedule if schedule is not None else Logarithmic(8.0)
        self.tau = tau
        self.encoding = encoding
        self.seed = seed
        self.fg = fg
        self.n_models = K if encoding == "separate" else 1
        self._xs: list[list[np.ndarray]] = [[] for _ in range(self.n_models)]
        self._ys: list[list[float]] = [[] for _ in range(self.n_models)]
        self.pools: list[DrawPool | None] = [None] * self.n_models
        self.t = 0
        self.n_refreshes = 0
        self._queue: np.ndarray | None = None
        self._cursor = 0
        self._queue_rng = np.random.default_rng(derive_seed(seed, "queue"))
        self._tilt_rng = np.random.default_rng(derive_seed(seed, "tilt"))
        self._history: list[np.ndarray] = []
        self.scores: np.ndarray | None = None
        self.refresh_history: list[dict] = []  # (t, acceptance counters) per refresh

    # -- selection ---------------------------------------------------------

    @property
    def in_round_robin(self) -> bool:
        return self.t < self.tau * self.K

    def pool_size(self) -> int:
        return self.sampler.n_chains * self.sampler.n_post

    def _fixed_sigma2(self) -> float | None:
        if self.fg is not None and self.fg.lam > 0:
            return 1.0 / (2.0 * self.fg.eta)
        return None

    def _pop_draw_index(self) -> int:
        size = self.pool_size()
        if self._queue is None or self._cursor >= len(self._queue):
            self._queue = self._queue_rng.permutation(size)
            self._cursor = 0
        idx = int(self._queue[self._cursor])
        self._cursor += 1
        return idx

    def arm_predictions(self, draw_index: int, x) -> np.ndarray:
        """Original-scale prediction of one pooled draw for every arm."""
        if self.encoding == "separate":
            return np.array([self.pools[a].predict_draw_row(draw_index, x) for a in range(self.K)])
        pool = self.pools[0]
        return np.array(
            [pool.predict_draw_row(draw_index, encode_context(self.encoding, x, a, self.K)) for a in range(self.K)]
        )

    def select(self, x) -> int:
        if self.in_round_robin:
            return self.t % self.K
        if any(pool is None for pool in self.pools):
            raise RuntimeError("refresh never ran")
        if self.fg is not None and self.fg.lam > 0:
            probs = softmax_tilt_probs(self.scores, self.fg.lam)
            j = int(self._tilt_rng.choice(len(probs), p=probs))
        else:
            j = self._pop_draw_index()
        return int(np.argmax(self.arm_predictions(j, x)))

    def action_distribution(self, x) -> np.ndarray:
        """Optimal-arm vote distribution over pooled draws (one-hot in round-robin)."""
        if self.in_round_robin or any(pool is None for pool in self.pools):
            out = np.zeros(self.K)
            out[self.t % self.K] = 1.0
            return out
        votes = np.bincount(np.argmax(self._pool_matrix_at(np.atleast_2d(x))[:, 0, :], axis=1), minlength=self.K)
        return votes / votes.sum()

    def _pool_matrix_at(self, X: np.ndarray) -> np.ndarray:
        """(n_draws, n_rows, K) original-scale predictions of the whole pool."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.encoding == "separate":
            per_arm = [self.pools[a].predict_matrix(X) for a in range(self.K)]
        else:
            pool = self.pools[0]
            per_arm = [
                pool.predict_matrix(np.stack([encode_context(self.encoding, x, a, self.K) for x in X]))
                for a in range(self.K)
            ]
        return np.stack(per_arm, axis=-1)

    # -- learning ----------------------------------------------------------

    def update(self, x, a: int, r: float) -> None:
        x = np.asarray(x, dtype=float)
        self.t += 1
        self._history.append(x)
        if self.encoding == "separate":
            self._xs[a].append(x)
            self._ys[a].append(float(r))
        else:
            self._xs[0].append(encode_context(self.encoding, x, a, self.K))
            self._ys[0].append(float(r))
        if self._should_refresh():
            self._refresh()
        elif self.fg is not None and self.pools[0] is not None:
            self._fg_increment(x)

    def _should_refresh(self) -> bool:
        # fires when the refresh index increases, plus once at the end of
        # round-robin; rounds where some model still has no data defer
        t = self.t
        fire = t == self.tau * self.K
        if t >= 2:
            fire = fire or refresh_index(t, self.schedule) > refresh_index(t - 1, self.schedule)
        if not fire:
            return False
        return all(len(ys) > 0 for ys in self._ys)

    def _refresh(self) -> None:
        self.n_refreshes += 1
        accept_tally: dict = {}
        for i in range(self.n_models):
            rng = np.random.default_rng(derive_seed(self.seed, "refresh", self.n_refreshes, i))
            X = np.stack(self._xs[i])
            y = np.asarray(self._ys[i])
            pool = run_refresh(
                X, y, self.sampler, rng, fixed_sigma2=self._fixed_sigma2(), refresh_round=self.t
            )
            self.pools[i] = pool
            for kind, (att, acc) in pool.acceptance.items():
                tally = accept_tally.setdefault(kind, [0, 0])
                tally[0] += att
                tally[1] += acc
        self.refresh_history.append({"t": self.t, "acceptance": accept_tally})
        self._queue = self._queue_rng.permutation(self.pool_size())
        self._cursor = 0
        if self.fg is not None:
            self._fg_recompute()

    # -- feel-good score maintenance ----------------------------------------

    def _fg_increment(self, x: np.ndarray) -> None:
        preds = self._pool_matrix_at(x[None, :])[:, 0, :]
        self.scores += np.minimum(self.fg.b, preds.max(axis=1))

    def _fg_recompute(self) -> None:
        if not self._history:
            self.scores = np.zeros(self.pool_size())
            return
        H = np.stack(self._history)
        preds = self._pool_matrix_at(H)  # (n_draws, t, K)
        self.scores = np.minimum(self.fg.b, preds.max(axis=2)).sum(axis=1)


# ---------------------------------------------------------------------------
# Linear baselines


class _LinearBase:
    """Ridge accumulators A = lam*I + sum z z', b = sum r z, per model."""

    def __init__(self, K: int, p: int, encoding: str = "multi", ridge: float = 1.0, seed: int = 0):
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        self.K = K
        self.p = p
        self.encoding = encoding
        self.ridge = ridge
        self.n_models = K if encoding == "separate" else 1
        d = p if encoding == "separate" else encoded_dim(encoding, p, K)
        self.d = d
        self.A = [ridge * np.eye(d) for _ in range(self.n_models)]
        self.b = [np.zeros(d) for _ in range(self.n_models)]
        self.t = 0
        self.rng = np.random.default_rng(derive_seed(seed, "linear"))
        self._vote_rng = np.random.default_rng(derive_seed(seed, "votes"))

    def _arm_vectors(self, x) -> list[tuple[int, np.ndarray]]:
        """(model index, encoded vector) per arm."""
        x = np.asarray(x, dtype=float)
        if self.encoding == "separate":
            return [(a, x) for a in range(self.K)]
        return [(0, encode_context(self.encoding, x, a, self.K)) for a in range(self.K)]

    def update(self, x, a: int, r: float) -> None:
        self.t += 1
        mi, z = self._arm_vectors(x)[a]
        self.A[mi] += np.outer(z, z)
        self.b[mi] += float(r) * z


class LinTSAgent(_LinearBase):
    """Linear Thompson sampling: weights sampled from N(mean, nu^2 A^-1)."""

    def __init__(self, K, p, nu: float = 1.0, encoding: str = "multi", ridge: float = 1.0, seed: int = 0, n_votes: int = 100):
        super().__init__(K, p, encoding, ridge, seed)
        self.nu = nu
        self.n_votes = n_votes

    def _sample_weights(self, mi: int, rng) -> np.ndarray:
        L = np.linalg.cholesky(self.A[mi])
        mean = np.linalg.solve(self.A[mi], self.b[mi])
        # w = mean + nu * A^{-1/2} z, realized via a triangular solve against L'
        z = rng.standard_normal(self.d)
        return mean + self.nu * np.linalg.solve(L.T, z)

    def _scores(self, x, rng) -> np.ndarray:
        vecs = self._arm_vectors(x)
        weights = {mi: self._sample_weights(mi, rng) for mi in {mi for mi, _ in vecs}}
        return np.array([weights[mi] @ z for mi, z in vecs])

    def select(self, x) -> int:
        return int(np.argmax(self._scores(x, self.rng)))

    def action_distribution(self, x) -> np.ndarray:
        votes = np.bincount(
            [int(np.argmax(self._scores(x, self._vote_rng))) for _ in range(self.n_votes)],
            minlength=self.K,
        )
        return votes / votes.sum()


class LinUCBAgent(_LinearBase):
    """Deterministic optimism: mean score plus alpha * posterior-width bonus."""

    def __init__(self, K, p, alpha: float = 1.0, encoding: str = "multi", ridge: float = 1.0, seed: int = 0):
        super().__init__(K, p, encoding, ridge, seed)
        self.alpha = alpha

    def select(self, x) -> int:
        scores = []
        for mi, z in self._arm_vectors(x):
            mean = np.linalg.solve(self.A[mi], self.b[mi])
            width = math.sqrt(float(z @ np.linalg.solve(self.A[mi], z)))
            scores.append(mean @ z + self.alpha * width)
        return int(np.argmax(scores))

    def action_distribution(self, x) -> np.ndarray:
        out = np.zeros(self.K)
        out[self.select(x)] = 1.0
        return out
