"""Hierarchy losses on Lorentz ray features, with analytic gradients.

Every term is written as an array-level function returning its value and,
on request, gradients with respect to the arrays it reads (ray features
``S``, leaf prototypes ``P``, root centroids ``Q``). ``loss_and_grad``
chains them back through the Einstein midpoints and the hyperboloid lift
to the per-ray tangent parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import lorentz as lz
from ..hierarchy.trees import HierForest

log = logging.getLogger(__name__)

TERMS = ("leaf", "root", "comp", "lca", "norm")


class NumericalError(FloatingPointError):
    pass


@dataclass
class LossConfig:
    leaf_weight: float = 1.0
    root_weight: float = 2.0
    comp_weight: float = 1.0
    lca_weight: float = 0.05
    norm_weight: float = 0.01
    leaf_temperature: float = 0.22
    root_temperature: float = 0.20
    lca_temperature: float = 0.5
    margin: float = 0.1
    max_norm: float = 5.0
    hierarchy_weight: float = 0.5
    curvature: float = 1.0
    triplets_per_step: int = 256
    root_from_prototypes: bool = False  # centroid of leaf prototypes instead of rays

    def __post_init__(self):
        for name in ("leaf_temperature", "root_temperature", "lca_temperature", "curvature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("leaf_weight", "root_weight", "comp_weight", "lca_weight", "norm_weight", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def weight(self, term: str) -> float:
        return getattr(self, f"{term}_weight")

    @classmethod
    def from_dict(cls, d: dict) -> LossConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Rays drawn from one image together with that image's forest."""

    ray_ids: np.ndarray
    leaf_labels: np.ndarray
    forest: HierForest
    triplets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.ray_ids = np.asarray(self.ray_ids, dtype=np.int64)
        self.leaf_labels = np.asarray(self.leaf_labels, dtype=np.int64)
        self.triplets = np.asarray(self.triplets, dtype=np.int64).reshape(-1, 3)
        if self.ray_ids.shape != self.leaf_labels.shape or self.ray_ids.ndim != 1 or self.ray_ids.size == 0:
            raise ValueError("ray_ids and leaf_labels must be matching nonempty vectors")
        if np.unique(self.ray_ids).size != self.ray_ids.size:
            raise ValueError("a batch may not repeat a ray")
        known = set(self.forest.leaves)
        bad = set(self.leaf_labels.tolist()) - known
        if bad:
            raise ValueError(f"labels {sorted(bad)} are not leaves of the forest")

    @property
    def observed_leaves(self) -> np.ndarray:
        return np.unique(self.leaf_labels)

    def layout(self) -> tuple:
        """Index arrays that depend only on the batch, computed once:
        ``(leaf_idx, n_leaf, proto_root, n_root, triplet rows)``."""
        if getattr(self, "_layout", None) is None:
            leaves, leaf_idx = np.unique(self.leaf_labels, return_inverse=True)
            leaf_roots = np.array([self.forest.root_of(int(l)) for l in leaves])
            roots, proto_root = np.unique(leaf_roots, return_inverse=True)
            pos = {int(l): i for i, l in enumerate(leaves)}
            trip = [[pos[int(v)] for v in t] for t in self.triplets if all(int(v) in pos for v in t)]
            trip = np.array(trip, dtype=np.int64).reshape(-1, 3)
            self._layout = (leaf_idx, leaves.size, proto_root, roots.size, trip)
        return self._layout


# --- grouping ---------------------------------------------------------------


def _group_midpoints(points: np.ndarray, group: np.ndarray, n_groups: int, c: float) -> np.ndarray:
    k = lz.klein_map(points)
    gamma = lz.lorentz_factor(points)
    member = (group[None, :] == np.arange(n_groups)[:, None]) * gamma[None, :]
    return lz.klein_inverse((member @ k) / member.sum(axis=1)[:, None], c)


def _group_midpoints_vjp(points: np.ndarray, group: np.ndarray, n_groups: int, g_mid: np.ndarray, c: float) -> np.ndarray:
    # Klein mean of a group is sum(x_space) / sum(x0) on the hyperboloid
    tot = np.zeros(n_groups)
    space = np.zeros((n_groups, points.shape[1] - 1))
    np.add.at(tot, group, points[:, 0])
    np.add.at(space, group, points[:, 1:])
    m = space / tot[:, None]
    g_m = lz.klein_inverse_vjp(m, g_mid, c)
    out = np.empty_like(points)
    out[:, 1:] = g_m[group] / tot[group, None]
    out[:, 0] = -np.einsum("gi,gi->g", g_m, m)[group] / tot[group]
    return out


# --- individual terms (array level) ------------------------------------------


def _softmax_xent(logits: np.ndarray, target: np.ndarray, valid_cols: np.ndarray):
    """Mean cross-entropy over rows; returns (value, d value / d logits)."""
    z = logits if valid_cols.all() else np.where(valid_cols[None, :], logits, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    tot = e.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    value = float((zmax[:, 0] + np.log(tot[:, 0]) - z[rows, target]).sum() / z.shape[0])
    g = e / tot
    g[rows, target] -= 1.0
    return value, g / z.shape[0]


def _angular_term(queries, query_target, refs, tau, c, grad=True):
    """Mean over queries of -log softmax_v(-theta(ref_v, query)/tau) at the target."""
    valid = np.einsum("ij,ij->i", refs[:, 1:], refs[:, 1:]) > lz.ORIGIN_TOL**2
    if not valid.all():
        log.warning("excluding %d prototype(s) at the origin from the angular softmax", int((~valid).sum()))
    keep = valid[query_target]
    g_q = np.zeros_like(queries)
    g_r = np.zeros_like(refs)
    if valid.sum() < 2 or not keep.any():
        return 0.0, g_q, g_r
    q = queries[keep]
    tgt = query_target[keep]
    safe_refs = refs
    if not valid.all():
        safe_refs = np.where(valid[:, None], refs, lz.project_to_hyperboloid(np.ones((1, refs.shape[1] - 1)), c))
    theta = lz.exterior_angle(safe_refs[None, :, :], q[:, None, :], c)
    value, g_logits = _softmax_xent(-theta / tau, tgt, valid)
    if not grad:
        return value, g_q, g_r
    g_theta = np.where(valid[None, :], -g_logits / tau, 0.0)
    gp, gs = lz.exterior_angle_vjp(safe_refs[None, :, :], q[:, None, :], g_theta, c)
    g_q[keep] = gs.sum(axis=1)
    g_r += np.where(valid[:, None], gp.sum(axis=0), 0.0)
    return value, g_q, g_r


def _compactness_term(s, leaf_index, prototypes, margin, c=1.0, grad=False):
    # prototypes are constants here; only the ray gradient exists
    target = prototypes[leaf_index]
    d = lz.geodesic_distance(s, target, c, check=False)
    excess = np.maximum(d - margin, 0.0)
    value = float(np.mean(excess**2))
    if not grad:
        return value
    g_d = 2.0 * excess / s.shape[0]
    g_s, _ = lz.geodesic_distance_vjp(s, target, g_d, c)
    return value, g_s


def _lca_term(triplets, prototypes, tau, c=1.0, grad=False):
    # triplets hold row indices into prototypes
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    g_p = np.zeros_like(prototypes)
    if triplets.shape[0] == 0:
        return (0.0, g_p) if grad else 0.0
    i, j, k = triplets.T
    # columns (i, j), (i, k), (j, k), evaluated in one stacked call
    a = np.concatenate([i, i, j])
    b = np.concatenate([j, k, k])
    d = lz.lca_depth_surrogate(prototypes[a], prototypes[b], c).reshape(3, -1).T
    value, g_logits = _softmax_xent(d / tau, np.zeros(len(d), dtype=np.int64), np.ones(3, bool))
    if not grad:
        return value
    g_d = (g_logits / tau).T.ravel()
    ga, gb = lz.lca_depth_surrogate_vjp(prototypes[a], prototypes[b], g_d, c)
    np.add.at(g_p, a, ga)
    np.add.at(g_p, b, gb)
    return value, g_p


def _norm_term(U, max_norm, grad=False):
    U = np.asarray(U, dtype=np.float64)
    norms = np.linalg.norm(U, axis=1)
    excess = np.maximum(norms - max_norm, 0.0)
    value = float(np.mean(excess**2))
    if not grad:
        return value
    scale = np.divide(2.0 * excess, norms * U.shape[0], out=np.zeros_like(norms), where=norms > 0)
    return value, scale[:, None] * U


# --- the full objective ------------------------------------------------------


@dataclass
class LossResult:
    total: float
    terms: dict[str, float]
    grad: np.ndarray | None = None  # same shape as U
    term_grads: dict[str, np.ndarray] = field(default_factory=dict)  # unweighted, per term


def _batch_forward_backward(batch: Batch, U: np.ndarray, cfg: LossConfig, want_grad: bool, anchor: np.ndarray | None):
    c = cfg.curvature
    u = U[batch.ray_ids]
    s = lz.project_to_hyperboloid(u, c)
    leaf_idx, n_leaf, proto_root, n_root, trip = batch.layout()
    p = _group_midpoints(s, leaf_idx, n_leaf, c)

    ray_root = proto_root[leaf_idx]
    if cfg.root_from_prototypes:
        q = _group_midpoints(p, proto_root, n_root, c)
    else:
        q = _group_midpoints(s, ray_root, n_root, c)

    values: dict[str, float] = {}
    grads: dict[str, tuple] = {}  # term -> (g_s, g_p, g_q, g_u)
    values["leaf"], gs, gp = _angular_term(s, leaf_idx, p, cfg.leaf_temperature, c, want_grad)
    grads["leaf"] = (gs, gp, None, None)
    if n_root > 1:
        values["root"], gp, gq = _angular_term(p, proto_root, q, cfg.root_temperature, c, want_grad)
    else:
        values["root"], gp, gq = 0.0, np.zeros_like(p), np.zeros_like(q)
    grads["root"] = (None, gp, gq, None)
    if anchor is None:
        p_const = p
    else:
        p_const = _group_midpoints(lz.project_to_hyperboloid(anchor[batch.ray_ids], c), leaf_idx, n_leaf, c)
    if not want_grad:
        values["comp"] = _compactness_term(s, leaf_idx, p_const, cfg.margin, c)
        values["lca"] = _lca_term(trip, p, cfg.lca_temperature, c)
        values["norm"] = _norm_term(u, cfg.max_norm)
    else:
        values["comp"], gs = _compactness_term(s, leaf_idx, p_const, cfg.margin, c, grad=True)
        grads["comp"] = (gs, None, None, None)
        values["lca"], gp = _lca_term(trip, p, cfg.lca_temperature, c, grad=True)
        grads["lca"] = (None, gp, None, None)
        values["norm"], gu = _norm_term(u, cfg.max_norm, grad=True)
        grads["norm"] = (None, None, None, gu)

    for name, val in values.items():
        if not math.isfinite(val):
            raise NumericalError(f"non-finite value in loss term '{name}'")
    if not want_grad:
        return values, None

    def pull(g_s, g_p, g_q, g_u):
        g_s = np.zeros_like(s) if g_s is None else g_s.copy()
        g_p = np.zeros_like(p) if g_p is None else g_p.copy()
        if g_q is not None:
            if cfg.root_from_prototypes:
                g_p += _group_midpoints_vjp(p, proto_root, n_root, g_q, c)
            else:
                g_s += _group_midpoints_vjp(s, ray_root, n_root, g_q, c)
        g_s += _group_midpoints_vjp(s, leaf_idx, n_leaf, g_p, c)
        out = lz.projector_vjp(s, g_s)
        if g_u is not None:
            out = out + g_u
        return out

    term_grads = {}
    for name in TERMS:
        g = pull(*grads[name])
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in loss term '{name}'")
        term_grads[name] = g
    return values, term_grads


def loss_and_grad(
    batches,
    U,
    cfg: LossConfig,
    grad: bool = True,
    per_term: bool = False,
    compactness_anchor: np.ndarray | None = None,
) -> LossResult:
    """Total objective (and its gradient with respect to ``U``).

    ``batches`` is one ``Batch`` or a list of them (one per image); per-image
    losses are averaged. Rendering weights and the compactness prototypes act
    as constants; every other path, including prototypes and centroids inside
    the angular and LCA terms, is differentiated. ``compactness_anchor``
    evaluates the compactness prototypes from a different parameter table,
    which makes the frozen-prototype variant of the loss available to
    finite-difference checks.
    """
    if isinstance(batches, Batch):
        batches = [batches]
    U = np.asarray(U, dtype=np.float64)
    n_img = len(batches)
    terms = dict.fromkeys(TERMS, 0.0)
    term_grads = {t: np.zeros_like(U) for t in TERMS} if grad else {}
    for b in batches:
        vals, tg = _batch_forward_backward(b, U, cfg, grad, compactness_anchor)
        for t in TERMS:
            terms[t] += vals[t] / n_img
            if grad:
                np.add.at(term_grads[t], b.ray_ids, tg[t] / n_img)
    total = cfg.hierarchy_weight * sum(cfg.weight(t) * terms[t] for t in TERMS)
    g = None
    if grad:
        g = cfg.hierarchy_weight * sum(cfg.weight(t) * term_grads[t] for t in TERMS)
    return LossResult(total, terms, g, term_grads if per_term else {})


def _as_table(embedding) -> tuple[np.ndarray, float | None]:
    if isinstance(embedding, TrainableEmbedding):
        return embedding.U, embedding.curvature
    return np.asarray(embedding, dtype=np.float64), None


def total_loss(batches, embedding, config: LossConfig) -> tuple[float, dict[str, float]]:
    """Weighted objective and its unweighted per-term breakdown."""
    U, _ = _as_table(embedding)
    res = loss_and_grad(batches, U, config, grad=False)
    return res.total, res.terms


def gradient(batches, embedding, config: LossConfig) -> np.ndarray:
    U, _ = _as_table(embedding)
    return loss_and_grad(batches, U, config, grad=True).grad


# --- per-ray parameters and sample aggregation -------------------------------


@dataclass
class TrainableEmbedding:
    """Per-ray tangent parameters; ray ``r`` lives at ``Pi_c(U[r])``."""

    U: np.ndarray
    curvature: float = 1.0

    def __post_init__(self):
        self.U = np.array(self.U, dtype=np.float64)
        if self.U.ndim != 2:
            raise ValueError("U must be a matrix")
        if not np.all(np.isfinite(self.U)):
            raise ValueError("U has non-finite entries")
        if not self.curvature > 0:
            raise ValueError("curvature must be positive")

    @classmethod
    def initialize(cls, n_rays: int, dim: int, seed: int, std: float = 0.05, curvature: float = 1.0) -> TrainableEmbedding:
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, std, size=(n_rays, dim)), curvature)

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    def points(self, ray_ids=None) -> np.ndarray:
        u = self.U if ray_ids is None else self.U[np.asarray(ray_ids)]
        return lz.project_to_hyperboloid(u, self.curvature)


@dataclass
class RaySampleSet:
    """Sample features along one ray and their normalized weights."""

    features: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.features.shape[0] == 0:
            raise ValueError("empty sample set")
        if self.weights.shape[0] != self.features.shape[0]:
            raise ValueError("one weight per sample required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")


def select_high_weight(features, weights, threshold: float = 1e-3) -> RaySampleSet:
    """Keep samples whose raw weight is at least ``threshold`` and renormalize."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).ravel()
    keep = weights >= threshold
    if not keep.any():
        raise ValueError("no sample reaches the weight threshold")
    w = weights[keep]
    return RaySampleSet(features[keep], w / w.sum())


def aggregate_ray_feature(samples: RaySampleSet, c: float = 1.0) -> np.ndarray:
    """Lift the weight-averaged sample feature onto the hyperboloid.

    The weights are plain numbers, so nothing downstream differentiates them.
    """
    mean = samples.weights @ samples.features
    return lz.project_to_hyperboloid(mean, c)


# --- batch-level views of each term ------------------------------------------


def compute_leaf_prototypes(batch: Batch, embedding: TrainableEmbedding) -> dict[int, np.ndarray]:
    """Einstein midpoint of the ray features of every observed leaf."""
    c = embedding.curvature
    s = embedding.points(batch.ray_ids)
    leaves, inv = np.unique(batch.leaf_labels, return_inverse=True)
    p = _group_midpoints(s, inv, leaves.size, c)
    return {int(l): p[i] for i, l in enumerate(leaves)}


def compute_root_centroids(batch: Batch, embedding: TrainableEmbedding, from_prototypes: bool = False) -> dict[int, np.ndarray]:
    """Einstein midpoint over all rays whose leaf hangs under each observed root,
    or over the leaf prototypes when ``from_prototypes`` is set."""
    c = embedding.curvature
    roots = np.array([batch.forest.root_of(int(l)) for l in batch.leaf_labels])
    uroots, rinv = np.unique(roots, return_inverse=True)
    if from_prototypes:
        protos = compute_leaf_prototypes(batch, embedding)
        keys = sorted(protos)
        proot = np.searchsorted(uroots, [batch.forest.root_of(k) for k in keys])
        q = _group_midpoints(np.stack([protos[k] for k in keys]), proot, uroots.size, c)
    else:
        q = _group_midpoints(embedding.points(batch.ray_ids), rinv, uroots.size, c)
    return {int(r): q[i] for i, r in enumerate(uroots)}


def _stack(points: dict[int, np.ndarray]) -> tuple[list[int], np.ndarray]:
    keys = sorted(points)
    return keys, np.stack([points[k] for k in keys])


def leaf_angular_loss(batch: Batch, embedding: TrainableEmbedding, prototypes: dict[int, np.ndarray], tau: float) -> float:
    keys, p = _stack(prototypes)
    idx = np.searchsorted(keys, batch.leaf_labels)
    if np.any(np.asarray(keys)[np.minimum(idx, len(keys) - 1)] != batch.leaf_labels):
        raise ValueError("every batch leaf needs a prototype")
    value, _, _ = _angular_term(embedding.points(batch.ray_ids), idx, p, tau, embedding.curvature, grad=False)
    return value


def root_angular_loss(prototypes: dict[int, np.ndarray], centroids: dict[int, np.ndarray], forest: HierForest, tau: float, c: float = 1.0) -> float:
    leaf_keys, p = _stack(prototypes)
    root_keys, q = _stack(centroids)
    if len(root_keys) < 2:
        return 0.0
    target = np.searchsorted(root_keys, [forest.root_of(l) for l in leaf_keys])
    value, _, _ = _angular_term(p, target, q, tau, c, grad=False)
    return value


def compactness_loss(batch: Batch, embedding: TrainableEmbedding, prototypes: dict[int, np.ndarray], margin: float) -> float:
    keys, p = _stack(prototypes)
    idx = np.searchsorted(keys, batch.leaf_labels)
    return _compactness_term(embedding.points(batch.ray_ids), idx, p, margin, embedding.curvature)


def lca_order_loss(triplets, prototypes: dict[int, np.ndarray], tau: float, c: float = 1.0) -> float:
    """Mean softmax ranking loss preferring the same-parent pair's segment to
    sit deepest; ``triplets`` hold leaf ids."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if triplets.shape[0] == 0:
        return 0.0
    keys, p = _stack(prototypes)
    missing = set(triplets.ravel().tolist()) - set(keys)
    if missing:
        raise ValueError(f"no prototype for leaves {sorted(missing)}")
    return _lca_term(np.searchsorted(keys, triplets), p, tau, c)


def max_norm_regularizer(embedding, max_norm: float) -> float:
    """Mean over rays of ``relu(|u| - max_norm)^2``."""
    U, _ = _as_table(embedding)
    return _norm_term(U, max_norm)


# --- LCA triplets ------------------------------------------------------------


def _triplet_sites(forest: HierForest, observed) -> list[tuple[list[int], list[int]]]:
    """For each internal vertex with a parent: its observed leaf children and
    the observed leaves under its siblings. Only sites admitting a triplet."""
    observed = set(int(v) for v in observed)
    sites = []
    for tree in forest.trees:
        for a in tree.internal:
            g = tree.parent[a]
            if g is None:
                continue
            pair_pool = [ch for ch in tree.children[a] if tree.is_leaf(ch) and ch in observed]
            if len(pair_pool) < 2:
                continue
            others = sorted(
                leaf for sib in tree.children[g] if sib != a for leaf in tree.leaf_set(sib) if leaf in observed
            )
            if others:
                sites.append((pair_pool, others))
    return sites


def enumerate_lca_triplets(forest: HierForest, observed=None) -> np.ndarray:
    """Every valid ``(i, j, k)``: ``i != j`` share a parent and ``k`` descends
    from another child of that parent's parent."""
    if observed is None:
        observed = forest.leaves
    rows = [(i, j, k) for pool, others in _triplet_sites(forest, observed) for i in pool for j in pool if i != j for k in others]
    return np.array(sorted(rows), dtype=np.int64).reshape(-1, 3)


def sample_lca_triplets(forest: HierForest, observed_leaves, count: int, rng_seed) -> np.ndarray:
    """Up to ``count`` triplets drawn with replacement: a uniform site, then a
    uniform ordered pair under it and a uniform leaf from a sibling branch.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    sites = _triplet_sites(forest, observed_leaves)
    if not sites or count <= 0:
        return np.zeros((0, 3), dtype=np.int64)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out = np.empty((count, 3), dtype=np.int64)
    for t in range(count):
        pool, others = sites[rng.integers(len(sites))]
        i, j = rng.choice(len(pool), size=2, replace=False)
        out[t] = (pool[i], pool[j], others[rng.integers(len(others))])
    return out
