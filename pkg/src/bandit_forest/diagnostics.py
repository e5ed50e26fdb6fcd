"""Posterior and decision diagnostics: credible intervals, coverage, calibration,
chain convergence, policy stability, and feature-inclusion profiles."""

from __future__ import annotations

import math

import numpy as np

from .mcmc import DrawPool
from .seeding import derive_seed

__all__ = [
    "credible_interval",
    "empirical_quantile",
    "coverage_and_length",
    "ece",
    "r_hat",
    "rhat_summary",
    "policy_delta_tv",
    "feature_inclusion",
    "inclusion_frontier",
    "probe_contexts",
    "acceptance_rates",
]

DEFAULT_EVAL_ROUNDS = (200, 500, 1000, 2000, 5000, 10000)
ECE_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def empirical_quantile(draws: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th order statistic (1-indexed)."""
    v = np.sort(np.asarray(draws, dtype=float))
    n = len(v)
    rank = min(max(int(math.ceil(q * n)), 1), n)
    return float(v[rank - 1])


def credible_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Central credible interval from empirical quantiles at (1 +- level)/2."""
    draws = np.asarray(draws, dtype=float)
    if draws.size < 2:
        raise ValueError("need at least 2 draws")
    alpha = (1.0 - level) / 2.0
    return empirical_quantile(draws, alpha), empirical_quantile(draws, 1.0 - alpha)


def coverage_and_length(lo: np.ndarray, hi: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Unweighted mean coverage indicator and mean interval length.

    Inputs are aligned arrays over whatever cells are being averaged
    (replications x probes x arms flattened by the caller).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    truth = np.asarray(truth, dtype=float)
    cover = (lo <= truth) & (truth <= hi)
    return float(cover.mean()), float((hi - lo).mean())


def ece(draws: np.ndarray, truth: np.ndarray, levels=ECE_LEVELS) -> float:
    """Expected calibration error over central-interval levels.

    For each nominal level gamma, the empirical coverage c(gamma) of the
    central gamma-interval is computed over all (probe, arm) cells; the ECE is
    the mean absolute gap |c(gamma) - gamma|.
    """
    draws = np.asarray(draws, dtype=float)  # (n_draws, cells...)
    truth = np.asarray(truth, dtype=float)
    flat = draws.reshape(draws.shape[0], -1)
    tflat = truth.reshape(-1)
    gaps = []
    for gamma in levels:
        alpha = (1.0 - gamma) / 2.0
        cover = 0
        for c in range(flat.shape[1]):
            lo = empirical_quantile(flat[:, c], alpha)
            hi = empirical_quantile(flat[:, c], 1.0 - alpha)
            cover += int(lo <= tflat[c] <= hi)
        gaps.append(abs(cover / flat.shape[1] - gamma))
    return float(np.mean(gaps))


def r_hat(chains) -> float:
    """Gelman-Rubin potential scale reduction for one scalar.

    Identical constant chains return 1.0 by convention; a vanishing
    within-chain variance is floored at 1e-12, which yields a large finite
    value instead of infinity.
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    if len(chains) < 2:
        raise ValueError("need at least 2 chains")
    length = len(chains[0])
    if length < 4 or any(len(c) != length for c in chains):
        raise ValueError("chains must have equal lengths >= 4")
    arr = np.stack(chains)
    W = float(np.mean(np.var(arr, axis=1, ddof=1)))
    B = length * float(np.var(np.mean(arr, axis=1), ddof=1))
    if W == 0.0 and B == 0.0:
        return 1.0
    W = max(W, 1e-12)
    var_hat = (length - 1) / length * W + B / length
    return float(math.sqrt(var_hat / W))


def rhat_summary(pool: DrawPool, probes: np.ndarray) -> tuple[float, float]:
    """Median and mean R-hat across scalar summaries of one pool.

    Scalars are the noise variance and the forest prediction at each probe
    context, each split into this refresh's chains.
    """
    chain_ids = pool.chain_ids
    uniq = np.unique(chain_ids)
    values = []
    sig_chains = pool.sigma2_by_chain()
    values.append(r_hat(sig_chains))
    preds = pool.predict_matrix(np.atleast_2d(probes))  # (n_draws, J)
    for j in range(preds.shape[1]):
        values.append(r_hat([preds[chain_ids == c, j] for c in uniq]))
    return float(np.median(values)), float(np.mean(values))


def policy_delta_tv(pi_now, pi_prev) -> float:
    """Half-L1 distance between two action distributions."""
    p = np.asarray(pi_now, dtype=float)
    q = np.asarray(pi_prev, dtype=float)
    if abs(p.sum() - 1.0) > 1e-6 or abs(q.sum() - 1.0) > 1e-6:
        raise ValueError("inputs must sum to 1")
    return float(0.5 * np.abs(p - q).sum())


def feature_inclusion(pools: DrawPool | list[DrawPool], p: int) -> np.ndarray:
    """Fraction of internal split rules per feature across draws, trees, arms.

    Pools with no internal nodes at all return the uniform vector.
    """
    if isinstance(pools, DrawPool):
        pools = [pools]
    counts = np.zeros(p)
    for pool in pools:
        counts += pool.split_counts(p)
    total = counts.sum()
    if total == 0.0:
        return np.full(p, 1.0 / p)
    return counts / total


def inclusion_frontier(inclusion: np.ndarray) -> np.ndarray:
    """Cumulative splitting mass with features ranked by descending inclusion."""
    return np.cumsum(np.sort(np.asarray(inclusion, dtype=float))[::-1])


def probe_contexts(sampler, scenario_name: str, global_seed: int, J: int = 40) -> np.ndarray:
    """Fixed probe set, identical across replications of a scenario + seed.

    ``sampler(n, rng)`` draws contexts from the scenario's context
    distribution; the RNG is seeded from (global_seed, scenario name) only.
    """
    rng = np.random.default_rng(derive_seed(global_seed, "probes", scenario_name))
    return sampler(J, rng)


def acceptance_rates(counters: dict) -> dict:
    """Per-kind and pooled acceptance rates from (attempts, accepts) counters.

    Infeasible and auto-rejected attempts are in the denominator. Move kinds
    never attempted report a rate of 0.0.
    """
    out = {}
    tot_att = tot_acc = 0
    for kind, (att, acc) in counters.items():
        out[kind] = acc / att if att else 0.0
        tot_att += att
        tot_acc += acc
    out["all"] = tot_acc / tot_att if tot_att else 0.0
    return out
