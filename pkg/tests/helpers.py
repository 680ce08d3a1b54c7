"""Shared oracles and random instance builders for the test suites."""

import numpy as np

from hypergroup import lorentz as lz
from hypergroup.hierarchy.trees import HierForest, HierTree
from hypergroup.training import (
    TERMS,
    Batch,
    LossConfig,
    TrainableEmbedding,
    compute_leaf_prototypes,
    compute_root_centroids,
    loss_and_grad,
    sample_lca_triplets,
)

FD_STEP = 1e-4
FD_FLOOR = 1e-3
ANGLE_MARGIN = 1e-2  # the exterior angle has kinks at 0 and pi


def random_forest(rng, n_roots):
    """First tree always nests a leaf pair under a grandparent, so at least
    one LCA triplet exists."""
    trees, next_id = [], 0
    for t in range(n_roots):
        parent = {}
        root = next_id
        next_id += 1
        parent[root] = None
        if t == 0 or rng.random() < 0.5:
            mid = next_id
            next_id += 1
            parent[mid] = root
            for _ in range(2):
                parent[next_id] = mid
                next_id += 1
            for _ in range(int(rng.integers(1, 3))):
                parent[next_id] = root
                next_id += 1
        else:
            for _ in range(int(rng.integers(2, 4))):
                parent[next_id] = root
                next_id += 1
        trees.append(HierTree(parent, tree_id=t))
    return HierForest(trees)


def random_batch(rng, forest, ray_offset, max_rays):
    leaves = forest.leaves
    per_leaf = [int(rng.integers(2, 4)) for _ in leaves]
    while sum(per_leaf) > max_rays:
        i = int(np.argmax(per_leaf))
        if per_leaf[i] <= 2:
            break
        per_leaf[i] -= 1
    labels = np.repeat(leaves, per_leaf)
    ids = ray_offset + np.arange(labels.size)
    trip = sample_lca_triplets(forest, leaves, int(rng.integers(1, 5)), rng)
    return Batch(ids, labels, forest, trip)


def softmax_angles(batch, U, cfg):
    emb = TrainableEmbedding(U, cfg.curvature)
    protos = compute_leaf_prototypes(batch, emb)
    cents = compute_root_centroids(batch, emb, cfg.root_from_prototypes)
    p = np.stack([protos[k] for k in sorted(protos)])
    q = np.stack([cents[k] for k in sorted(cents)])
    s = emb.points(batch.ray_ids)
    leaf = lz.exterior_angle(p[None], s[:, None], cfg.curvature)
    root = lz.exterior_angle(q[None], p[:, None], cfg.curvature)
    return np.concatenate([leaf.ravel(), root.ravel()])


def random_configuration(rng):
    """(batches, U, config) with <= 16 rays, D <= 8, >= 2 roots, >= 1 triplet,
    redrawn until every softmax angle stays clear of the kinks at 0 and pi."""
    while True:
        batches, U, cfg = _draw_configuration(rng)
        th = softmax_angles(batches[0], U, cfg)
        if th.min() > ANGLE_MARGIN and th.max() < np.pi - ANGLE_MARGIN:
            return batches, U, cfg


def _draw_configuration(rng):
    forest = random_forest(rng, int(rng.integers(2, 4)))
    while len(forest.leaves) * 2 > 16:
        forest = random_forest(rng, 2)
    batches = [random_batch(rng, forest, 0, 16)]
    n_rays = batches[0].ray_ids.size
    dim = int(rng.integers(2, 9))
    U = rng.normal(0.0, 0.6, size=(n_rays, dim))
    cfg = LossConfig(
        margin=float(rng.uniform(0.0, 0.1)),
        max_norm=float(rng.uniform(0.3, 1.0)),
        curvature=float(rng.choice([0.5, 1.0, 2.0])),
        root_from_prototypes=bool(rng.random() < 0.3),
    )
    return batches, U, cfg


def frozen_term_values(batches, U, cfg, anchor):
    """Per-term values and total with compactness prototypes taken from ``anchor``."""
    res = loss_and_grad(batches, U, cfg, grad=False, compactness_anchor=anchor)
    return {**res.terms, "total": res.total}


def finite_difference(batches, U, cfg, h=FD_STEP):
    """Five-point central differences (step ``h``, error O(h^4)) of every
    term and the total, holding the compactness prototypes fixed at ``U``."""
    out = {t: np.zeros_like(U) for t in TERMS + ("total",)}
    stencil = ((2, -1.0), (1, 8.0), (-1, -8.0), (-2, 1.0))
    for idx in np.ndindex(U.shape):
        vals = []
        for k, _ in stencil:
            x = U.copy()
            x[idx] += k * h
            vals.append(frozen_term_values(batches, x, cfg, U))
        for t in out:
            out[t][idx] = sum(w * v[t] for (_, w), v in zip(stencil, vals)) / (12 * h)
    return out


def gradient_errors(batches, U, cfg):
    """Worst per-coordinate relative error for every term and the total."""
    res = loss_and_grad(batches, U, cfg, per_term=True)
    analytic = {**res.term_grads, "total": res.grad}
    numeric = finite_difference(batches, U, cfg)
    errs = {}
    for t, g in analytic.items():
        fd = numeric[t]
        denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), FD_FLOOR)
        errs[t] = float(np.max(np.abs(g - fd) / denom))
    return errs
