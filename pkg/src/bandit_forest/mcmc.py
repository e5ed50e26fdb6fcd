"""Metropolis-within-Gibbs sampler for the sum-of-trees regression posterior.

One sweep updates, in order: every tree (a structural Metropolis-Hastings
move followed by a conjugate Gaussian redraw of its leaf values), then the
noise variance from its inverse-gamma full conditional, then (under the
Dirichlet-sparse axis prior) the split-axis probability vector from its
conjugate Dirichlet full conditional.

Structural moves are GROW (split a leaf), PRUNE (collapse a leaf pair),
CHANGE (redraw an internal rule) and SWAP (exchange parent/child rules).
Proposals whose newly formed leaves contain no data rows are rejected
outright; infeasible moves count as rejected attempts of their kind.

A refresh runs ``n_chains`` cold-started chains (forest, noise variance and
axis probabilities drawn from the prior) on the same rescaled response and
pools the last ``n_post`` states of each chain into an immutable draw pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import invgamma

from .forest import (
    NEG_INF,
    POS_INF,
    DirichletSparse,
    Forest,
    Node,
    PriorConfig,
    SplitGrid,
    Tree,
    build_split_grid,
    sample_axis_probs,
    sample_tree_from_prior,
    split_prob,
    subtree_log_prior,
)

__all__ = [
    "SamplerConfig",
    "RescaleMap",
    "DrawPool",
    "ChainState",
    "Proposal",
    "rescale_response",
    "calibrate_lambda_sigma",
    "leaf_marginal_loglik",
    "gibbs_leaf_update",
    "gibbs_sigma_update",
    "gibbs_split_axis_update",
    "propose_structure",
    "mh_step",
    "run_chain",
    "run_refresh",
    "posterior_predict",
]

MOVE_KINDS = ("grow", "prune", "change", "swap")


@dataclass(frozen=True)
class SamplerConfig:
    """Burn-in / retained iterations per chain, chain count, and the prior."""

    n_burn: int = 500
    n_post: int = 500
    n_chains: int = 4
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.n_burn < 0 or self.n_post < 1 or self.n_chains < 1:
            raise ValueError("need n_burn >= 0, n_post >= 1, n_chains >= 1")


@dataclass(frozen=True)
class RescaleMap:
    """Affine response map: scaled = (y - center) / (2 * half_range)."""

    center: float
    half_range: float

    def scale(self, y):
        return (np.asarray(y, dtype=float) - self.center) / (2.0 * self.half_range)

    def inverse(self, v):
        return np.asarray(v, dtype=float) * (2.0 * self.half_range) + self.center


def rescale_response(y) -> tuple[np.ndarray, RescaleMap]:
    """Map the response onto [-0.5, 0.5] (degenerate data maps to all zeros)."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty response")
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        m = RescaleMap(center=lo, half_range=1.0)
    else:
        m = RescaleMap(center=(lo + hi) / 2.0, half_range=(hi - lo) / 2.0)
    return m.scale(y), m


def calibrate_lambda_sigma(sigma_hat: float, nu: float, q: float) -> float:
    """Scale of the inverse-chi-square noise prior.

    Solves Pr(sigma < sigma_hat) = q under sigma^2 ~ nu*lam/chisq_nu, i.e.
    InvGamma(nu/2, nu*lam/2), by monotone root-finding on the inverse-gamma
    CDF (relative tolerance 1e-10).
    """
    if sigma_hat <= 0 or nu <= 0 or not 0.0 < q < 1.0:
        raise ValueError("need sigma_hat > 0, nu > 0, q in (0,1)")
    target = sigma_hat**2
    a = nu / 2.0

    def f(lam):
        return invgamma.cdf(target, a, scale=nu * lam / 2.0) - q

    lo = hi = target
    for _ in range(200):
        if f(lo) > 0:
            break
        lo /= 8.0
    for _ in range(200):
        if f(hi) < 0:
            break
        hi *= 8.0
    return float(brentq(f, lo, hi, rtol=1e-10))


def leaf_marginal_loglik(n, S, SS, sigma2: float, sigma_mu2: float):
    """Log marginal likelihood of a leaf's residuals with the mean integrated out.

    log Int prod_i N(r_i | mu, sigma2) N(mu | 0, sigma_mu2) dmu
      = -(n/2) log(2 pi sigma2) + (1/2) log(sigma2 / (sigma2 + n sigma_mu2))
        - SS / (2 sigma2) + sigma_mu2 S^2 / (2 sigma2 (sigma2 + n sigma_mu2))

    where S and SS are the sum and sum of squares of the residuals. Accepts
    scalars or aligned arrays (one entry per leaf).
    """
    n = np.asarray(n, dtype=float)
    S = np.asarray(S, dtype=float)
    SS = np.asarray(SS, dtype=float)
    t = sigma2 + n * sigma_mu2
    out = (
        -0.5 * n * math.log(2.0 * math.pi * sigma2)
        + 0.5 * np.log(sigma2 / t)
        - SS / (2.0 * sigma2)
        + sigma_mu2 * S**2 / (2.0 * sigma2 * t)
    )
    return out if out.ndim else float(out)


def gibbs_leaf_update(n, S, sigma2: float, sigma_mu2: float, rng: np.random.Generator) -> np.ndarray:
    """Conjugate Gaussian redraw of leaf values given per-leaf counts and residual sums.

    Each leaf is drawn from N(S / (n + sigma2/sigma_mu2), sigma2 / (n + sigma2/sigma_mu2));
    an empty leaf (n = 0) reduces to the N(0, sigma_mu2) prior.
    """
    n = np.asarray(n, dtype=float)
    S = np.asarray(S, dtype=float)
    denom = n + sigma2 / sigma_mu2
    return rng.normal(S / denom, np.sqrt(sigma2 / denom))


def gibbs_sigma_update(n: int, SSE: float, nu: float, lambda_sigma: float, rng: np.random.Generator) -> float:
    """Draw the noise variance from InvGamma((nu+n)/2, (nu*lambda + SSE)/2)."""
    a = (nu + n) / 2.0
    b = (nu * lambda_sigma + SSE) / 2.0
    return b / rng.gamma(a, 1.0)


def gibbs_split_axis_update(forest: Forest, zeta: float, xi: float, p: int, rng: np.random.Generator) -> np.ndarray:
    """Conjugate Dirichlet redraw of the split-axis probabilities.

    The full conditional is Dir(zeta/p**xi + c_1, ..., zeta/p**xi + c_p) where
    c_u counts internal nodes splitting on axis u across the whole forest.
    """
    counts = np.zeros(p)
    for tree in forest.trees:
        for node in tree.internal_nodes():
            counts[node.feature] += 1.0
    alpha = zeta / p**xi + counts
    g = rng.gamma(alpha, 1.0)
    total = g.sum()
    if total <= 0.0:
        return alpha / alpha.sum()
    return g / total


# ---------------------------------------------------------------------------
# Chain state


class _TreeState:
    __slots__ = ("tree", "leaves", "rows", "pred")

    def __init__(self, tree: Tree, X: np.ndarray):
        self.tree = tree
        self.leaves, self.rows = tree.route(X)
        self.pred = np.empty(X.shape[0])
        for leaf, rows in zip(self.leaves, self.rows):
            self.pred[rows] = leaf.value


class ChainState:
    """Mutable state of one MCMC chain: forest, noise variance, axis probabilities.

    Caches per-tree leaf membership (row indices per leaf) and the running
    sum-of-trees fit so partial residuals are O(n) per tree update.
    """

    def __init__(
        self,
        X: np.ndarray,
        y_scaled: np.ndarray,
        grid: SplitGrid,
        prior: PriorConfig,
        rng: np.random.Generator,
        lambda_sigma: float | None = None,
        fixed_sigma2: float | None = None,
    ):
        self.X = X
        self.y = y_scaled
        self.n = X.shape[0]
        self.p = X.shape[1]
        self.grid = grid
        self.prior = prior
        self.sigma_mu2 = prior.sigma_mu**2
        self.lambda_sigma = lambda_sigma
        self.fixed_sigma2 = fixed_sigma2
        if isinstance(prior.split_axis, DirichletSparse):
            self.s = sample_axis_probs(prior.split_axis, self.p, rng)
        else:
            self.s = np.full(self.p, 1.0 / self.p)
        if fixed_sigma2 is not None:
            self.sigma2 = float(fixed_sigma2)
        else:
            self.sigma2 = gibbs_sigma_update(0, 0.0, prior.nu, lambda_sigma, rng)
        self.tree_states = [
            _TreeState(sample_tree_from_prior(prior, grid, self.s, rng), X) for _ in range(prior.m)
        ]
        self.fit = np.zeros(self.n)
        for ts in self.tree_states:
            self.fit += ts.pred
        self.counters = {k: [0, 0] for k in MOVE_KINDS}  # attempts, accepts

    @property
    def forest(self) -> Forest:
        return Forest([ts.tree for ts in self.tree_states])

    def recompute_fit(self) -> np.ndarray:
        """Sum of per-tree predictions from scratch (consistency checks)."""
        return sum(ts.tree.predict_matrix(self.X) for ts in self.tree_states)

    def residual(self, tree_index: int) -> np.ndarray:
        ts = self.tree_states[tree_index]
        return self.y - self.fit + ts.pred

    def sweep(self, rng: np.random.Generator) -> None:
        for j in range(self.prior.m):
            mh_step(self, j, rng)
            self._leaf_gibbs(j, rng)
        if self.fixed_sigma2 is None:
            sse = float(((self.y - self.fit) ** 2).sum())
            self.sigma2 = gibbs_sigma_update(self.n, sse, self.prior.nu, self.lambda_sigma, rng)
        if isinstance(self.prior.split_axis, DirichletSparse):
            sp = self.prior.split_axis
            self.s = gibbs_split_axis_update(self.forest, sp.zeta, sp.xi, self.p, rng)

    def _leaf_gibbs(self, tree_index: int, rng: np.random.Generator) -> None:
        ts = self.tree_states[tree_index]
        r = self.y - self.fit + ts.pred
        ns = np.array([len(rows) for rows in ts.rows], dtype=float)
        Ss = np.array([r[rows].sum() for rows in ts.rows])
        values = gibbs_leaf_update(ns, Ss, self.sigma2, self.sigma_mu2, rng)
        new_pred = np.empty(self.n)
        for leaf, rows, v in zip(ts.leaves, ts.rows, values):
            leaf.value = float(v)
            new_pred[rows] = v
        self.fit += new_pred - ts.pred
        ts.pred = new_pred

    def snapshot(self) -> tuple[Forest, float, np.ndarray]:
        return self.forest.copy(), self.sigma2, self.s.copy()


# ---------------------------------------------------------------------------
# Structural proposals


@dataclass
class Proposal:
    kind: str
    log_transition_ratio: float
    log_prior_ratio: float
    log_lik_ratio: float
    auto_reject: bool
    apply: object  # 0-arg callable mutating the chain on acceptance
    revert: object | None = None  # set when the live tree was touched during evaluation
    log_q_fwd: float = math.nan  # log q(T'|T), including the move-kind probability


def _cells_with_parents(tree: Tree, p: int):
    """All nodes with their cells (lo, hi] and parent pointers, in one walk."""
    out = []
    stack = [(tree.root, np.full(p, NEG_INF), np.full(p, POS_INF), None)]
    while stack:
        node, lo, hi, parent = stack.pop()
        out.append((node, lo, hi, parent))
        if not node.is_leaf:
            hi_l = hi.copy()
            hi_l[node.feature] = node.threshold
            lo_r = lo.copy()
            lo_r[node.feature] = node.threshold
            stack.append((node.left, lo, hi_l, node))
            stack.append((node.right, lo_r, hi, node))
    return out


def _axis_weights(s: np.ndarray, counts: np.ndarray):
    w = np.where(counts > 0, s, 0.0)
    return w, float(w.sum())


def _log_rule_prob(w: np.ndarray, wsum: float, axis: int, n_cand: int) -> float:
    """log of (axis prob x uniform threshold prob); -inf when unreachable."""
    if wsum <= 0.0 or w[axis] <= 0.0 or n_cand < 1:
        return NEG_INF
    return math.log(w[axis] / wsum) - math.log(n_cand)


def _suff(r: np.ndarray, rows_list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ns = np.array([len(rows) for rows in rows_list], dtype=float)
    Ss = np.array([r[rows].sum() for rows in rows_list])
    SSs = np.array([(r[rows] ** 2).sum() for rows in rows_list])
    return ns, Ss, SSs


def _loglik(r, rows_list, sigma2, sigma_mu2) -> float:
    ns, Ss, SSs = _suff(r, rows_list)
    return float(np.sum(leaf_marginal_loglik(ns, Ss, SSs, sigma2, sigma_mu2)))


def _grid_feasible(chain: ChainState, lo, hi):
    counts = chain.grid.candidate_counts(lo, hi)
    counts = np.where(chain.s > 0.0, counts, 0)
    return counts


def _propose_grow(chain: ChainState, tree_index: int, r: np.ndarray, rng) -> Proposal | None:
    ts = chain.tree_states[tree_index]
    cells = _cells_with_parents(ts.tree, chain.p)
    growable = []
    for node, lo, hi, parent in cells:
        if node.is_leaf:
            counts = _grid_feasible(chain, lo, hi)
            if counts.any():
                growable.append((node, lo, hi, parent, counts))
    if not growable:
        return None
    node, lo, hi, parent, counts = growable[rng.integers(len(growable))]
    w, wsum = _axis_weights(chain.s, counts)
    axis = int(np.searchsorted(np.cumsum(w), rng.random() * wsum))
    cand = chain.grid.candidates(axis, lo[axis], hi[axis])
    thr = float(cand[rng.integers(len(cand))])

    li = next(i for i, lf in enumerate(ts.leaves) if lf is node)
    rows = ts.rows[li]
    mask = chain.X[rows, axis] <= thr
    left_rows, right_rows = rows[mask], rows[~mask]
    auto = len(left_rows) == 0 or len(right_rows) == 0

    sibling_is_leaf = parent is not None and (
        (parent.left if parent.right is node else parent.right).is_leaf
    )
    n_prunable = sum(
        1 for nd, *_ in cells if not nd.is_leaf and nd.left.is_leaf and nd.right.is_leaf
    )
    n_prunable_after = n_prunable + 1 - (1 if sibling_is_leaf else 0)

    log_q_fwd = (
        math.log(chain.prior.proposal_probs[0])
        - math.log(len(growable))
        + _log_rule_prob(w, wsum, axis, int(counts[axis]))
    )
    log_q_rev = math.log(chain.prior.proposal_probs[1]) - math.log(n_prunable_after)

    structure = chain.prior.structure
    lp_before = _leaf_log_prior_term(node.depth, True, structure)
    grown = Node(node.depth)
    grown.split(axis, thr)
    lp_after = subtree_log_prior(grown, lo, hi, structure, chain.s, chain.grid)
    d_prior = lp_after - lp_before

    d_lik = _loglik(r, [left_rows, right_rows], chain.sigma2, chain.sigma_mu2) - _loglik(
        r, [rows], chain.sigma2, chain.sigma_mu2
    )

    def apply():
        node.split(axis, thr)
        ts.leaves[li : li + 1] = [node.left, node.right]
        ts.rows[li : li + 1] = [left_rows, right_rows]

    return Proposal("grow", log_q_rev - log_q_fwd, d_prior, d_lik, auto, apply, log_q_fwd=log_q_fwd)


def _leaf_log_prior_term(depth: int, splittable: bool, structure) -> float:
    if not splittable:
        return 0.0
    ps = split_prob(depth, structure)
    return NEG_INF if ps >= 1.0 else math.log1p(-ps)


def _propose_prune(chain: ChainState, tree_index: int, r: np.ndarray, rng) -> Proposal | None:
    ts = chain.tree_states[tree_index]
    cells = _cells_with_parents(ts.tree, chain.p)
    prunable = [
        (node, lo, hi)
        for node, lo, hi, _ in cells
        if not node.is_leaf and node.left.is_leaf and node.right.is_leaf
    ]
    if not prunable:
        return None
    node, lo, hi = prunable[rng.integers(len(prunable))]

    li = next(i for i, lf in enumerate(ts.leaves) if lf is node.left)
    ri = next(i for i, lf in enumerate(ts.leaves) if lf is node.right)
    merged_rows = np.concatenate([ts.rows[li], ts.rows[ri]])

    # reverse GROW bookkeeping: growable leaves of the pruned tree
    counts = _grid_feasible(chain, lo, hi)
    w, wsum = _axis_weights(chain.s, counts)
    n_growable = 0
    for lf, llo, lhi, _ in cells:
        if lf.is_leaf and _grid_feasible(chain, llo, lhi).any():
            n_growable += 1
    hi_l = hi.copy()
    hi_l[node.feature] = node.threshold
    lo_r = lo.copy()
    lo_r[node.feature] = node.threshold
    child_growable = int(_grid_feasible(chain, lo, hi_l).any()) + int(
        _grid_feasible(chain, lo_r, hi).any()
    )
    n_growable_after = n_growable - child_growable + 1

    cand = chain.grid.candidates(node.feature, lo[node.feature], hi[node.feature])
    log_q_fwd = math.log(chain.prior.proposal_probs[1]) - math.log(len(prunable))
    log_q_rev = (
        math.log(chain.prior.proposal_probs[0])
        - math.log(n_growable_after)
        + _log_rule_prob(w, wsum, node.feature, len(cand))
    )

    structure = chain.prior.structure
    lp_before = subtree_log_prior(node, lo, hi, structure, chain.s, chain.grid)
    lp_after = _leaf_log_prior_term(node.depth, True, structure)
    d_prior = lp_after - lp_before

    d_lik = _loglik(r, [merged_rows], chain.sigma2, chain.sigma_mu2) - _loglik(
        r, [ts.rows[li], ts.rows[ri]], chain.sigma2, chain.sigma_mu2
    )

    def apply():
        node.feature = -1
        node.left = None
        node.right = None
        node.value = 0.0
        i0, i1 = sorted((li, ri))
        del ts.leaves[i1], ts.rows[i1]
        del ts.leaves[i0], ts.rows[i0]
        ts.leaves.append(node)
        ts.rows.append(merged_rows)

    return Proposal("prune", log_q_rev - log_q_fwd, d_prior, d_lik, False, apply, log_q_fwd=log_q_fwd)


def _subtree_leaf_indices(ts: _TreeState, node: Node) -> list[int]:
    under = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur.is_leaf:
            under.add(id(cur))
        else:
            stack.append(cur.left)
            stack.append(cur.right)
    return [i for i, lf in enumerate(ts.leaves) if id(lf) in under]


def _reroute_proposal(chain, ts, node, lo, hi, r, kind, log_trans, lp_before, set_rule, unset_rule):
    """Shared CHANGE/SWAP tail: evaluate prior and likelihood after a rule edit.

    ``set_rule`` mutates the live tree to the proposed rules, ``unset_rule``
    restores the current ones. The proposal's apply/revert close over them.
    """
    structure = chain.prior.structure
    idxs = _subtree_leaf_indices(ts, node)
    sub_rows = (
        np.concatenate([ts.rows[i] for i in idxs]) if idxs else np.empty(0, dtype=int)
    )
    before_rows = [ts.rows[i] for i in idxs]

    set_rule()
    lp_after = subtree_log_prior(node, lo, hi, structure, chain.s, chain.grid)
    new_leaves, new_rows = ts.tree.route(chain.X, idx=sub_rows, node=node)
    auto = any(len(rows) == 0 for rows in new_rows)
    d_lik = _loglik(r, new_rows, chain.sigma2, chain.sigma_mu2) - _loglik(
        r, before_rows, chain.sigma2, chain.sigma_mu2
    )

    def apply():
        for i in sorted(idxs, reverse=True):
            del ts.leaves[i], ts.rows[i]
        ts.leaves.extend(new_leaves)
        ts.rows.extend(new_rows)

    return Proposal(kind, log_trans, lp_after - lp_before, d_lik, auto, apply, revert=unset_rule)


def _propose_change(chain: ChainState, tree_index: int, r: np.ndarray, rng) -> Proposal | None:
    ts = chain.tree_states[tree_index]
    cells = _cells_with_parents(ts.tree, chain.p)
    internal = [(node, lo, hi) for node, lo, hi, _ in cells if not node.is_leaf]
    if not internal:
        return None
    node, lo, hi = internal[rng.integers(len(internal))]
    counts = _grid_feasible(chain, lo, hi)
    if not counts.any():
        return None
    w, wsum = _axis_weights(chain.s, counts)
    new_axis = int(np.searchsorted(np.cumsum(w), rng.random() * wsum))
    cand = chain.grid.candidates(new_axis, lo[new_axis], hi[new_axis])
    new_thr = float(cand[rng.integers(len(cand))])
    old_axis, old_thr = node.feature, node.threshold

    # same cell both ways, so the internal-node count and cell terms cancel
    log_trans = _log_rule_prob(w, wsum, old_axis, int(counts[old_axis])) - _log_rule_prob(
        w, wsum, new_axis, int(counts[new_axis])
    )

    lp_before = subtree_log_prior(node, lo, hi, chain.prior.structure, chain.s, chain.grid)

    def set_rule():
        node.feature, node.threshold = new_axis, new_thr

    def unset_rule():
        node.feature, node.threshold = old_axis, old_thr

    return _reroute_proposal(chain, ts, node, lo, hi, r, "change", log_trans, lp_before, set_rule, unset_rule)


def _propose_swap(chain: ChainState, tree_index: int, r: np.ndarray, rng) -> Proposal | None:
    ts = chain.tree_states[tree_index]
    cells = _cells_with_parents(ts.tree, chain.p)
    pairs = []
    for node, lo, hi, _ in cells:
        if node.is_leaf:
            continue
        for child in (node.left, node.right):
            if not child.is_leaf:
                pairs.append((node, child, lo, hi))
    if not pairs:
        return None
    parent, child, lo, hi = pairs[rng.integers(len(pairs))]

    lp_before = subtree_log_prior(parent, lo, hi, chain.prior.structure, chain.s, chain.grid)
    pf, pt, cf, ct = parent.feature, parent.threshold, child.feature, child.threshold

    def set_rule():
        parent.feature, parent.threshold = cf, ct
        child.feature, child.threshold = pf, pt

    def unset_rule():
        parent.feature, parent.threshold = pf, pt
        child.feature, child.threshold = cf, ct

    # the (parent, internal child) pair count is structure-only, so symmetric
    return _reroute_proposal(chain, ts, parent, lo, hi, r, "swap", 0.0, lp_before, set_rule, unset_rule)


_PROPOSERS = {
    "grow": _propose_grow,
    "prune": _propose_prune,
    "change": _propose_change,
    "swap": _propose_swap,
}


def propose_structure(chain: ChainState, tree_index: int, rng: np.random.Generator) -> Proposal | None:
    """Draw a move kind from the configured mix and build its proposal.

    Returns None when the drawn move is infeasible in the current tree
    (callers count that as a rejected attempt of the drawn kind). The
    returned proposal carries the log transition ratio q(T|T')/q(T'|T), the
    log prior ratio pi(T')/pi(T) conditional on the current axis
    probabilities, and the marginal-likelihood log ratio.
    """
    u = rng.random()
    cum = 0.0
    kind = MOVE_KINDS[-1]
    for k, pk in zip(MOVE_KINDS, chain.prior.proposal_probs):
        cum += pk
        if u < cum:
            kind = k
            break
    r = chain.residual(tree_index)
    prop = _PROPOSERS[kind](chain, tree_index, r, rng)
    if prop is None:
        chain.counters[kind][0] += 1
        return None
    return prop


def mh_step(chain: ChainState, tree_index: int, rng: np.random.Generator) -> bool:
    """One structural Metropolis-Hastings attempt on the given tree.

    Accepts with probability min{1, prior ratio x likelihood ratio x
    transition ratio}; auto-rejected and infeasible proposals count as
    attempts. Leaf values are redrawn separately by the sweep.
    """
    prop = propose_structure(chain, tree_index, rng)
    if prop is None:
        return False
    chain.counters[prop.kind][0] += 1
    accept = False
    if not prop.auto_reject:
        log_alpha = prop.log_lik_ratio + prop.log_prior_ratio + prop.log_transition_ratio
        if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
            accept = True
    if accept:
        prop.apply()
        chain.counters[prop.kind][1] += 1
    elif prop.revert is not None:
        prop.revert()
    return accept


# ---------------------------------------------------------------------------
# Refresh driver and draw pool


@dataclass
class DrawPool:
    """Pooled post-burn-in posterior draws from one refresh (immutable).

    Each draw is (forest, sigma2, axis probabilities) on the internal scaled
    response; ``rescale`` maps forest predictions back to the original scale.
    """

    draws: list[tuple[Forest, float, np.ndarray]]
    chain_ids: np.ndarray
    rescale: RescaleMap
    refresh_round: int
    acceptance: dict

    @property
    def size(self) -> int:
        return len(self.draws)

    def predict_row(self, x) -> np.ndarray:
        scaled = np.array([f.predict_row(x) for f, _, _ in self.draws])
        return self.rescale.inverse(scaled)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        scaled = np.stack([f.predict_matrix(X) for f, _, _ in self.draws])
        return self.rescale.inverse(scaled)

    def predict_draw_row(self, draw_index: int, x) -> float:
        f = self.draws[draw_index][0]
        return float(self.rescale.inverse(f.predict_row(x)))

    def sigma2_by_chain(self) -> list[np.ndarray]:
        sig = np.array([d[1] for d in self.draws])
        return [sig[self.chain_ids == c] for c in np.unique(self.chain_ids)]

    def split_counts(self, p: int) -> np.ndarray:
        counts = np.zeros(p)
        for f, _, _ in self.draws:
            for tree in f.trees:
                for node in tree.internal_nodes():
                    counts[node.feature] += 1.0
        return counts


def run_chain(
    X: np.ndarray,
    y_scaled: np.ndarray,
    grid: SplitGrid,
    config: SamplerConfig,
    seed: int,
    lambda_sigma: float | None,
    fixed_sigma2: float | None = None,
):
    """Run one cold-started chain; returns (draws, counters).

    Self-contained so callers may dispatch chains across workers; the chain
    is fully determined by its seed.
    """
    rng = np.random.default_rng(seed)
    chain = ChainState(X, y_scaled, grid, config.prior, rng, lambda_sigma, fixed_sigma2)
    draws = []
    for it in range(config.n_burn + config.n_post):
        chain.sweep(rng)
        if it >= config.n_burn:
            draws.append(chain.snapshot())
    return draws, chain.counters


def run_refresh(
    X: np.ndarray,
    y: np.ndarray,
    config: SamplerConfig,
    rng: np.random.Generator,
    fixed_sigma2: float | None = None,
    refresh_round: int = 0,
) -> DrawPool:
    """Rescale the response, rebuild the split grid, and pool n_chains cold chains.

    The noise-prior scale is recalibrated from the scaled response at every
    refresh (reference SD 0.1 when fewer than 2 observations). A degenerate
    response (all values equal) skips MCMC entirely: the pool holds the
    root-only zero forest with prior noise draws.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("need at least one (x, y) observation with matching shapes")
    prior = config.prior
    n_draws = config.n_chains * config.n_post
    chain_ids = np.repeat(np.arange(config.n_chains), config.n_post)

    y_scaled, remap = rescale_response(y)
    if y.max() == y.min():
        zero_forest = Forest([Tree() for _ in range(prior.m)])
        lam = calibrate_lambda_sigma(0.1, prior.nu, prior.q)
        s = np.full(X.shape[1], 1.0 / X.shape[1])
        draws = []
        for _ in range(n_draws):
            sig2 = fixed_sigma2 if fixed_sigma2 is not None else gibbs_sigma_update(0, 0.0, prior.nu, lam, rng)
            draws.append((zero_forest, sig2, s))
        counters = {k: [0, 0] for k in MOVE_KINDS}
        return DrawPool(draws, chain_ids, remap, refresh_round, counters)

    grid = build_split_grid(X, prior.n_max)
    if fixed_sigma2 is not None:
        lam = None
    else:
        sigma_hat = float(np.std(y_scaled, ddof=1)) if len(y_scaled) >= 2 else 0.1
        if sigma_hat <= 0.0:
            sigma_hat = 0.1
        lam = calibrate_lambda_sigma(sigma_hat, prior.nu, prior.q)

    seeds = rng.integers(np.iinfo(np.int64).max, size=config.n_chains)
    draws = []
    counters = {k: [0, 0] for k in MOVE_KINDS}
    for c in range(config.n_chains):
        chain_draws, chain_counters = run_chain(
            X, y_scaled, grid, config, int(seeds[c]), lam, fixed_sigma2
        )
        draws.extend(chain_draws)
        for k in MOVE_KINDS:
            counters[k][0] += chain_counters[k][0]
            counters[k][1] += chain_counters[k][1]
    return DrawPool(draws, chain_ids, remap, refresh_round, counters)


def posterior_predict(pool: DrawPool, x) -> np.ndarray:
    """One original-scale prediction per pooled draw at the given context."""
    if pool.size == 0:
        raise ValueError("empty draw pool")
    return pool.predict_row(x)
