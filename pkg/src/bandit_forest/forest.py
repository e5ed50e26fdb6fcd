"""Sum-of-trees reward models: tree structures, priors, split grids, prediction.

A regression tree is a binary tree of axis-aligned split rules with scalar
leaf values; a forest is an ordered list of ``m`` trees whose predictions
add. Trees are grown from a Galton-Watson branching prior whose split
probability decays with depth, with split axes drawn from a (possibly
Dirichlet-sparse) probability vector and cut-points drawn uniformly from a
per-feature empirical-quantile grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DepthGeometric",
    "OriginalStructure",
    "UniformAxes",
    "DirichletSparse",
    "PriorConfig",
    "SplitGrid",
    "Node",
    "Tree",
    "Forest",
    "build_split_grid",
    "split_prob",
    "leaf_prior_sd",
    "sample_axis_probs",
    "sample_tree_from_prior",
    "sample_forest_from_prior",
    "tree_log_prior",
    "subtree_log_prior",
    "forest_to_text",
    "forest_from_text",
]

NEG_INF = float("-inf")
POS_INF = float("inf")


# ---------------------------------------------------------------------------
# Prior configuration


@dataclass(frozen=True)
class DepthGeometric:
    """Depth-geometric splitting prior: a depth-d node splits w.p. alpha**d.

    Requires 0 < alpha < 1/2 for quick decay; note alpha**0 == 1, so a
    splittable root always splits under this prior.
    """

    alpha: float = 0.45

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"depth-geometric alpha must be in (0, 1/2), got {self.alpha}")


@dataclass(frozen=True)
class OriginalStructure:
    """Classic splitting prior: a depth-d node splits w.p. alpha * (1+d)**-beta."""

    alpha: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class UniformAxes:
    """Split axes equally likely a priori (s_j = 1/p, held fixed)."""


@dataclass(frozen=True)
class DirichletSparse:
    """Sparse split-axis prior s ~ Dir(zeta/p**xi, ..., zeta/p**xi)."""

    zeta: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the forest prior.

    Defaults: 100 trees, depth-geometric structure prior with alpha 0.45,
    leaf shrinkage kappa=2, split-grid cap 100, noise prior (nu, q) = (3, 0.90),
    proposal mix (grow, prune, change, swap) = (0.25, 0.25, 0.4, 0.1).
    """

    m: int = 100
    structure: DepthGeometric | OriginalStructure = field(default_factory=DepthGeometric)
    kappa: float = 2.0
    n_max: int = 100
    nu: float = 3.0
    q: float = 0.90
    split_axis: UniformAxes | DirichletSparse = field(default_factory=UniformAxes)
    proposal_probs: tuple[float, float, float, float] = (0.25, 0.25, 0.4, 0.1)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must be in (0,1)")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        pp = self.proposal_probs
        if len(pp) != 4 or any(p < 0 for p in pp) or abs(sum(pp) - 1.0) > 1e-12:
            raise ValueError(f"proposal_probs must be 4 nonnegative values summing to 1, got {pp}")

    @property
    def sigma_mu(self) -> float:
        return leaf_prior_sd(self.kappa, self.m)


def split_prob(depth: int, structure: DepthGeometric | OriginalStructure) -> float:
    """Prior probability that a splittable node at the given depth splits."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if isinstance(structure, DepthGeometric):
        return structure.alpha**depth
    return structure.alpha * (1.0 + depth) ** (-structure.beta)


def leaf_prior_sd(kappa: float, m: int) -> float:
    """Prior SD of a single leaf value, 0.5 / (kappa * sqrt(m))."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    return 0.5 / (kappa * math.sqrt(m))


# ---------------------------------------------------------------------------
# Split grid


class SplitGrid:
    """Per-feature sorted candidate thresholds (empirical quantiles, deduplicated).

    Candidate validity within a covariate cell ``(lo_j, hi_j]``: a grid value
    ``c`` is a usable threshold iff ``c > lo_j`` and the next grid value after
    ``c`` is ``<= hi_j``, so both children contain at least one grid value.
    """

    def __init__(self, thresholds: list[np.ndarray]):
        self.thresholds = [np.asarray(t, dtype=float) for t in thresholds]
        self.p = len(self.thresholds)
        lmax = max((len(t) for t in self.thresholds), default=0)
        self._lengths = np.array([len(t) for t in self.thresholds])
        self._padded = np.full((self.p, max(lmax, 1)), POS_INF)
        for j, t in enumerate(self.thresholds):
            self._padded[j, : len(t)] = t

    def _count_le(self, x: np.ndarray) -> np.ndarray:
        # pads are +inf: never counted for finite x; clip handles x = +inf
        return np.minimum((self._padded <= x[:, None]).sum(axis=1), self._lengths)

    def candidate_counts(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Number of valid thresholds per axis for the cell (lo, hi]."""
        return np.maximum(self._count_le(hi) - 1 - self._count_le(lo), 0)

    def candidates(self, axis: int, lo: float, hi: float) -> np.ndarray:
        g = self.thresholds[axis]
        a = int(np.searchsorted(g, lo, side="right"))
        b = int(np.searchsorted(g, hi, side="right")) - 1
        return g[a : max(b, a)]


def build_split_grid(X: np.ndarray, n_max: int) -> SplitGrid:
    """Empirical-quantile candidate grid: n_max evenly spaced levels in [0,1).

    The quantile at level q of a sorted column v of length n is v[floor(q*n)]
    (nearest rank, no interpolation), so every threshold is an observed value.
    Duplicates are removed; each feature ends up with at most n_max candidates.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("no data")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = X.shape[0]
    # floor((k / n_max) * n) computed in exact integer arithmetic
    ranks = (np.arange(n_max) * n) // n_max
    cols = []
    for j in range(X.shape[1]):
        v = np.sort(X[:, j])
        cols.append(np.unique(v[ranks]))
    return SplitGrid(cols)


def sample_axis_probs(prior: UniformAxes | DirichletSparse, p: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the split-axis probability vector s (length p)."""
    if isinstance(prior, UniformAxes):
        return np.full(p, 1.0 / p)
    conc = prior.zeta / p**prior.xi
    g = rng.gamma(conc, 1.0, size=p)
    total = g.sum()
    if total <= 0.0:  # all-zero underflow at very small concentrations
        return np.full(p, 1.0 / p)
    return g / total


# ---------------------------------------------------------------------------
# Trees and forests


class Node:
    """Binary tree node; a leaf has feature == -1, an internal node two children."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "depth")

    def __init__(self, depth: int, value: float = 0.0):
        self.feature = -1
        self.threshold = 0.0
        self.left: Node | None = None
        self.right: Node | None = None
        self.value = value
        self.depth = depth

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def split(self, feature: int, threshold: float) -> None:
        self.feature = feature
        self.threshold = threshold
        self.left = Node(self.depth + 1)
        self.right = Node(self.depth + 1)

    def copy(self) -> "Node":
        out = Node(self.depth, self.value)
        out.feature = self.feature
        out.threshold = self.threshold
        if not self.is_leaf:
            out.left = self.left.copy()
            out.right = self.right.copy()
        return out


class Tree:
    """A single regression tree. Points route left iff x[feature] <= threshold."""

    def __init__(self, root: Node | None = None):
        self.root = root if root is not None else Node(0)

    def copy(self) -> "Tree":
        return Tree(self.root.copy())

    def nodes(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes() if n.is_leaf]

    def internal_nodes(self) -> list[Node]:
        return [n for n in self.nodes() if not n.is_leaf]

    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes() if n.is_leaf)

    def predict_row(self, x) -> float:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.value
                continue
            mask = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
        return out

    def route(self, X: np.ndarray, idx: np.ndarray | None = None, node: Node | None = None):
        """Partition row indices by leaf; returns aligned (leaves, index arrays)."""
        if node is None:
            node = self.root
        if idx is None:
            idx = np.arange(np.asarray(X).shape[0])
        leaves: list[Node] = []
        rows: list[np.ndarray] = []
        stack = [(node, idx)]
        while stack:
            cur, cur_idx = stack.pop()
            if cur.is_leaf:
                leaves.append(cur)
                rows.append(cur_idx)
                continue
            mask = X[cur_idx, cur.feature] <= cur.threshold
            stack.append((cur.right, cur_idx[~mask]))
            stack.append((cur.left, cur_idx[mask]))
        return leaves, rows

    def cell_of(self, target: Node, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Covariate cell (lo, hi] of ``target``, found by walking from the root."""
        lo = np.full(p, NEG_INF)
        hi = np.full(p, POS_INF)
        node = self.root
        while node is not target:
            f, t = node.feature, node.threshold
            if f < 0:
                raise ValueError("target node not in tree")
            # target is under exactly one child; locate by identity search
            if _contains(node.left, target):
                hi[f] = min(hi[f], t)
                node = node.left
            else:
                lo[f] = max(lo[f], t)
                node = node.right
        return lo, hi


def _contains(node: Node, target: Node) -> bool:
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur is target:
            return True
        if not cur.is_leaf:
            stack.append(cur.left)
            stack.append(cur.right)
    return False


@dataclass
class Forest:
    """Ordered list of trees; the forest prediction is the sum over trees."""

    trees: list[Tree]

    @property
    def m(self) -> int:
        return len(self.trees)

    def copy(self) -> "Forest":
        return Forest([t.copy() for t in self.trees])

    def predict_row(self, x) -> float:
        return sum(t.predict_row(x) for t in self.trees)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict_matrix(X)
        return out


def predict(forest: Forest, x) -> float:
    """Sum of per-tree predictions at a single context."""
    return forest.predict_row(x)


# ---------------------------------------------------------------------------
# Prior sampling and evaluation


def _feasible_axes(grid: SplitGrid, s: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    counts = grid.candidate_counts(lo, hi)
    feasible = (counts > 0) & (s > 0.0)
    return counts, feasible


def sample_tree_from_prior(
    prior: PriorConfig,
    grid: SplitGrid,
    s: np.ndarray,
    rng: np.random.Generator,
) -> Tree:
    """Grow one tree from the branching prior over the given grid.

    A node with no usable (axis, threshold) pair is a leaf with probability 1;
    otherwise it splits with the depth-dependent probability, the axis drawn
    from s restricted to usable axes, the threshold uniform over the usable
    candidates of that axis in the node's cell. Leaf values are iid
    N(0, sigma_mu^2).
    """
    sigma_mu = prior.sigma_mu
    tree = Tree()
    stack = [(tree.root, np.full(grid.p, NEG_INF), np.full(grid.p, POS_INF))]
    while stack:
        node, lo, hi = stack.pop()
        counts, feasible = _feasible_axes(grid, s, lo, hi)
        p_s = split_prob(node.depth, prior.structure)
        if feasible.any() and rng.random() < p_s:
            w = np.where(feasible, s, 0.0)
            axis = int(rng.choice(grid.p, p=w / w.sum()))
            cand = grid.candidates(axis, lo[axis], hi[axis])
            thr = float(cand[rng.integers(len(cand))])
            node.split(axis, thr)
            hi_l = hi.copy()
            hi_l[axis] = thr
            lo_r = lo.copy()
            lo_r[axis] = thr
            stack.append((node.left, lo, hi_l))
            stack.append((node.right, lo_r, hi))
        else:
            node.value = rng.normal(0.0, sigma_mu)
    return tree


def sample_forest_from_prior(
    prior: PriorConfig,
    grid: SplitGrid,
    s: np.ndarray,
    rng: np.random.Generator,
) -> Forest:
    return Forest([sample_tree_from_prior(prior, grid, s, rng) for _ in range(prior.m)])


def _log1m(p: float) -> float:
    return NEG_INF if p >= 1.0 else math.log1p(-p)


def subtree_log_prior(
    node: Node,
    lo: np.ndarray,
    hi: np.ndarray,
    structure: DepthGeometric | OriginalStructure,
    s: np.ndarray,
    grid: SplitGrid,
) -> float:
    """Log prior probability of the subtree rooted at ``node`` with cell (lo, hi].

    Returns -inf for structurally impossible subtrees (rule outside the cell's
    candidate set, or an internal node in an unsplittable cell).
    """
    total = 0.0
    stack = [(node, lo.copy(), hi.copy())]
    while stack:
        cur, clo, chi = stack.pop()
        counts, feasible = _feasible_axes(grid, s, clo, chi)
        splittable = bool(feasible.any())
        p_s = split_prob(cur.depth, structure)
        if cur.is_leaf:
            if splittable:
                total += _log1m(p_s)
                if total == NEG_INF:
                    return NEG_INF
            continue
        f = cur.feature
        if not splittable or not feasible[f]:
            return NEG_INF
        cand = grid.candidates(f, clo[f], chi[f])
        pos = int(np.searchsorted(cand, cur.threshold))
        if pos >= len(cand) or cand[pos] != cur.threshold:
            return NEG_INF
        w_total = float(np.where(feasible, s, 0.0).sum())
        total += math.log(p_s) + math.log(s[f] / w_total) - math.log(counts[f])
        hi_l = chi.copy()
        hi_l[f] = cur.threshold
        lo_r = clo.copy()
        lo_r[f] = cur.threshold
        stack.append((cur.left, clo, hi_l))
        stack.append((cur.right, lo_r, chi))
    return total


def tree_log_prior(
    tree: Tree,
    structure: DepthGeometric | OriginalStructure,
    s: np.ndarray,
    grid: SplitGrid,
) -> float:
    p = grid.p
    return subtree_log_prior(tree.root, np.full(p, NEG_INF), np.full(p, POS_INF), structure, s, grid)


# ---------------------------------------------------------------------------
# Plain-text serialization (one node per line)
#
# Field order per line:
#   node_id parent_id side kind feature threshold leaf_value
# side is one of {root, L, R}; kind is {split, leaf}. Internal nodes carry
# feature/threshold and leaf_value "nan"; leaves carry feature -1,
# threshold "nan" and their value. Trees within a forest are separated by
# "tree <index>" header lines, forests start with "forest <n_trees>".


def forest_to_text(forest: Forest) -> str:
    lines = [f"forest {forest.m}"]
    for ti, tree in enumerate(forest.trees):
        lines.append(f"tree {ti}")
        next_id = [0]

        def emit(node: Node, parent: int, side: str):
            nid = next_id[0]
            next_id[0] += 1
            if node.is_leaf:
                lines.append(f"{nid} {parent} {side} leaf -1 nan {node.value!r}")
            else:
                lines.append(f"{nid} {parent} {side} split {node.feature} {node.threshold!r} nan")
                emit(node.left, nid, "L")
                emit(node.right, nid, "R")

        emit(tree.root, -1, "root")
    return "\n".join(lines) + "\n"


def forest_from_text(text: str) -> Forest:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("forest "):
        raise ValueError("not a forest dump")
    trees: list[Tree] = []
    nodes: dict[int, Node] = {}

    def flush():
        if nodes:
            trees.append(Tree(nodes[0]))
            nodes.clear()

    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "tree":
            flush()
            continue
        nid, parent, side, kind = int(parts[0]), int(parts[1]), parts[2], parts[3]
        depth = 0 if parent < 0 else nodes[parent].depth + 1
        node = Node(depth)
        if kind == "split":
            node.feature = int(parts[4])
            node.threshold = float(parts[5])
        else:
            node.value = float(parts[6])
        nodes[nid] = node
        if parent >= 0:
            if side == "L":
                nodes[parent].left = node
            else:
                nodes[parent].right = node
    flush()
    expected = int(lines[0].split()[1])
    if len(trees) != expected:
        raise ValueError(f"forest dump declared {expected} trees, found {len(trees)}")
    return Forest(trees)
