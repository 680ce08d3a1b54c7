"""Dasgupta's hierarchical-clustering cost, the exact recursive sparsest-cut
builder and small-instance optimal-tree oracles."""

from __future__ import annotations

import itertools
import math
from typing import Iterator, Sequence

import numpy as np

from .spectral import recursive_tree
from .trees import HierTree, TreeError

EXACT_MAX_N = 20
_CHUNK = 1 << 16


class InstanceTooLarge(ValueError):
    pass


def _check_leaves(tree: HierTree, w: np.ndarray) -> None:
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("affinity matrix must be square")
    if sorted(tree.leaves) != list(range(n)):
        raise TreeError(f"tree leaves {tree.leaves} do not index the {n}x{n} affinity matrix")


def dasgupta_cost(tree: HierTree, w: np.ndarray) -> float:
    """``sum_{a<b} W_ab |Leaf(LCA(a, b))|``, accumulated node by node.

    Every pair meets at exactly one internal vertex, where it lies in two
    different child subtrees.
    """
    w = np.asarray(w, dtype=np.float64)
    _check_leaves(tree, w)
    terms = []
    for v in tree.internal:
        size = tree.leaf_count(v)
        kids = [sorted(tree.leaf_set(ch)) for ch in tree.children[v]]
        for x, y in itertools.combinations(range(len(kids)), 2):
            block = w[np.ix_(kids[x], kids[y])]
            terms.extend((block * size).ravel().tolist())
    return math.fsum(terms)


def normalized_dasgupta_cost(tree: HierTree, w: np.ndarray) -> float:
    """Cost divided by ``n * sum_{a<b} W_ab`` (the cost of a star tree), in [0, 1]."""
    w = np.asarray(w, dtype=np.float64)
    total = math.fsum(w[np.triu_indices(w.shape[0], 1)].tolist())
    if total == 0:
        return 0.0
    return dasgupta_cost(tree, w) / (w.shape[0] * total)


def sparsest_cut(w: np.ndarray, members: Sequence[int]) -> tuple[list[int], list[int]]:
    """Exhaustive minimizer of ``cut(S, S') / (|S| |S'|)`` over all bipartitions
    of ``members``; ties go to the lexicographically smallest side ``S``
    containing the smallest member."""
    members = sorted(int(m) for m in members)
    k = len(members)
    if k < 2:
        raise ValueError("need at least two vertices to cut")
    ws = np.asarray(w, dtype=np.float64)[np.ix_(members, members)]
    # bit j of code (j < k-1) puts member j+1 on the far side; member 0 stays in S
    n_codes = (1 << (k - 1)) - 1
    shifts = np.arange(k - 1, dtype=np.int64)
    best_val = np.inf
    best: list[tuple[int, ...]] = []
    for lo in range(1, n_codes + 1, _CHUNK):
        codes = np.arange(lo, min(lo + _CHUNK, n_codes + 1), dtype=np.int64)
        far = np.zeros((codes.size, k))
        far[:, 1:] = (codes[:, None] >> shifts[None, :]) & 1
        near = 1.0 - far
        cut = np.einsum("mi,ij,mj->m", near, ws, far)
        n_far = far.sum(axis=1)
        ratio = cut / ((k - n_far) * n_far)
        chunk_min = ratio.min()
        if chunk_min > best_val * (1 + 1e-12) + 1e-15:
            continue
        if chunk_min < best_val * (1 - 1e-12) - 1e-15:
            best = []
            best_val = chunk_min
        tie = np.nonzero(ratio <= best_val * (1 + 1e-12) + 1e-15)[0]
        best.extend(tuple(members[i] for i in range(k) if near[m, i]) for m in tie)
        best_val = min(best_val, chunk_min)
    side = min(best)
    other = [m for m in members if m not in side]
    return list(side), other


def exact_sparsest_cut_tree(w: np.ndarray, max_n: int = EXACT_MAX_N) -> HierTree:
    """Top-down tree from exact sparsest cuts at every level."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] > max_n:
        raise InstanceTooLarge(f"instance too large for exact oracle: n={w.shape[0]} > {max_n}")
    return recursive_tree(w, sparsest_cut)


def optimal_dasgupta_cost(w: np.ndarray) -> float:
    """Minimum cost over all rooted binary trees, by dynamic programming over
    leaf subsets (exhaustive: every binary tree is a root split plus optimal
    subtrees on both sides)."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if n > 16:
        raise InstanceTooLarge("subset DP limited to 16 leaves")
    full = (1 << n) - 1
    inner = np.zeros(1 << n)
    for s in range(1, full + 1):
        low = (s & -s).bit_length() - 1
        rest = s & ~(1 << low)
        inner[s] = inner[rest] + sum(w[low, j] for j in range(n) if rest >> j & 1)
    size = [bin(s).count("1") for s in range(full + 1)]
    best = np.zeros(full + 1)
    for s in range(1, full + 1):
        if size[s] == 1:
            continue
        low = s & -s
        rest = s ^ low
        val = np.inf
        sub = rest
        # enumerate A = low | sub' for every proper subset sub' of rest
        while True:
            a = low | sub
            if a != s:
                b = s ^ a
                cost = best[a] + best[b] + size[s] * (inner[s] - inner[a] - inner[b])
                val = min(val, cost)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        best[s] = val
    return float(best[full])


def enumerate_binary_trees(n: int) -> Iterator[HierTree]:
    """Every rooted binary tree on leaves ``0..n-1`` ((2n-3)!! of them)."""
    if n < 1:
        return

    def build(k):
        if k == 1:
            yield 0
            return
        for t in build(k - 1):
            yield from _insert(t, k - 1)

    for shape in build(n):
        yield _nested_to_tree(shape, n)


def _insert(t, leaf):
    yield (t, leaf)
    if isinstance(t, tuple):
        left, right = t
        for new in _insert(left, leaf):
            yield (new, right)
        for new in _insert(right, leaf):
            yield (left, new)


def _nested_to_tree(shape, n: int) -> HierTree:
    parent: dict[int, int | None] = {}
    counter = itertools.count(n)

    def walk(node, par):
        if isinstance(node, tuple):
            vid = next(counter)
            parent[vid] = par
            for ch in node:
                walk(ch, vid)
        else:
            parent[node] = par

    walk(shape, None)
    return HierTree(parent)


def flatten_internal(tree: HierTree, gap: int = 0) -> HierTree:
    """Merge each non-root internal vertex into its parent when the parent's
    subtree height exceeds its own by at most ``gap``.

    Heights are taken from the input tree; children of a removed vertex are
    re-attached to the nearest kept ancestor. ``gap = 0`` is a no-op.
    """
    height = tree.height
    drop = {
        v
        for v in tree.internal
        if tree.parent[v] is not None and height[tree.parent[v]] - height[v] <= gap
    }
    if not drop:
        return tree
    parent: dict[int, int | None] = {}
    for v, p in tree.parent.items():
        if v in drop:
            continue
        while p is not None and p in drop:
            p = tree.parent[p]
        parent[v] = p
    return HierTree(parent, tree_id=tree.tree_id, pixels=dict(tree.pixels))
