"""Recursive spectral bisection with a dense cyclic-Jacobi eigensolver."""

from __future__ import annotations

from collections import deque
from typing import Callable, Sequence

import numpy as np

from .trees import HierTree

JACOBI_TOL = 1e-10
SIGN_TOL = 1e-12


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit (p, q) pairs in row-major order until the off-diagonal
    Frobenius norm drops below ``tol``. Returns ascending eigenvalues and the
    matching eigenvectors as columns; equal eigenvalues keep index order.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


def normalized_laplacian(w: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 W D^-1/2``; zero-degree vertices get a zero ``D^-1/2`` entry."""
    w = np.asarray(w, dtype=np.float64)
    deg = w.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    return np.eye(w.shape[0]) - inv_sqrt[:, None] * w * inv_sqrt[None, :]


def connected_components(w: np.ndarray) -> list[list[int]]:
    """Components of the graph with edges ``w > 0``, each sorted, listed by
    their smallest vertex."""
    n = w.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = [start], deque([start])
        while queue:
            v = queue.popleft()
            for u in np.nonzero((w[v] > 0) & ~seen)[0]:
                seen[u] = True
                comp.append(int(u))
                queue.append(int(u))
        comps.append(sorted(comp))
    return comps


def fiedler_bisection(w: np.ndarray, subset: Sequence[int]) -> tuple[list[int], list[int]]:
    """Split ``subset`` by the sign of the Fiedler vector of the normalized
    Laplacian of its induced subgraph.

    A disconnected induced subgraph is split into its largest component versus
    the rest without any eigen computation (isolated vertices land in the
    rest). Near-zero entries go to the nonnegative side, and an empty side is
    refilled with the vertex of smallest magnitude.
    """
    sub = sorted(int(i) for i in subset)
    if len(sub) < 2:
        raise ValueError("bisection needs at least two vertices")
    ws = np.asarray(w, dtype=np.float64)[np.ix_(sub, sub)]
    comps = connected_components(ws)
    if len(comps) > 1:
        largest = max(comps, key=len)  # first of equal size = smallest vertex
        rest = sorted(set(range(len(sub))) - set(largest))
        return [sub[i] for i in largest], [sub[i] for i in rest]

    _, vecs = jacobi_eigh(normalized_laplacian(ws))
    f = vecs[:, 1]
    # orient so the result does not depend on the solver's sign choice
    pivot = int(np.argmax(np.abs(f)))
    if f[pivot] < 0:
        f = -f
    pos = f >= -SIGN_TOL
    if pos.all() or not pos.any():
        flip = int(np.argmin(np.abs(f)))
        pos[flip] = not pos[flip]
    side_a = [sub[i] for i in range(len(sub)) if pos[i]]
    side_b = [sub[i] for i in range(len(sub)) if not pos[i]]
    return side_a, side_b


Splitter = Callable[[np.ndarray, Sequence[int]], tuple[list[int], list[int]]]


def recursive_tree(w: np.ndarray, splitter: Splitter) -> HierTree:
    """Top-down binary tree: leaves are ``0..n-1``, each split adds one
    internal vertex with id ``n, n+1, ...`` in preorder."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if n < 1:
        raise ValueError("need at least one leaf")
    if n == 1:
        return HierTree.single_leaf(0)
    parent: dict[int, int | None] = {}
    next_id = n
    stack: list[tuple[list[int], int | None]] = [(list(range(n)), None)]
    while stack:
        members, par = stack.pop()
        if len(members) == 1:
            parent[members[0]] = par
            continue
        node = next_id
        next_id += 1
        parent[node] = par
        a, b = splitter(w, members)
        # push b first so a is expanded first (preorder numbering)
        stack.append((sorted(b), node))
        stack.append((sorted(a), node))
    return HierTree(parent)


def recursive_spectral_tree(w: np.ndarray) -> HierTree:
    return recursive_tree(w, fiedler_bisection)
