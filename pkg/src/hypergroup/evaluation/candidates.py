"""Coarse-to-fine candidate masks by repeated density clustering of tangent
features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .. import lorentz as lz

EPSILON_SCHEDULE = (
    0.50, 0.45, 0.40, 0.35, 0.30, 0.25, 0.20,
    0.175, 0.15, 0.125, 0.10,
    0.085, 0.07, 0.06, 0.05, 0.04,
    0.035, 0.03, 0.025, 0.02,
    0.015, 0.01, 0.0075, 0.005, 0.004, 0.003, 0.002,
)  # fmt: skip
MIN_SAMPLES = 30
MIN_REGION = 30
MAX_NODES = 10_000
_CHUNK = 4096


def _nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index into ``dst`` of the nearest row for each row of ``src``; ties go
    to the lowest index."""
    out = np.empty(len(src), dtype=np.int64)
    for lo in range(0, len(src), _CHUNK):
        block = src[lo : lo + _CHUNK]
        d = ((block[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        out[lo : lo + _CHUNK] = np.argmin(d, axis=1)
    return out


def density_cluster(z: np.ndarray, eps: float, min_samples: int = MIN_SAMPLES, min_cluster_size: int = MIN_REGION) -> np.ndarray:
    """Cluster labels ``0..k-1`` (numbered by first member), or all ``-1``.

    Points with at least ``min_samples`` points (self included) within
    ``eps`` are core; connected cores form clusters; non-core points within
    ``eps`` of a core join the nearest such core's cluster. Clusters smaller
    than ``min_cluster_size`` dissolve into noise, and every noise point then
    joins the cluster of its nearest clustered point.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    pairs = cKDTree(z).query_pairs(eps, output_type="ndarray")
    deg = np.ones(n, dtype=np.int64) + np.bincount(pairs.ravel(), minlength=n)
    core = deg >= min_samples
    if not core.any():
        return labels

    both = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    graph = coo_matrix((np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    labels[core] = comp[core]

    # border points: nearest core neighbor within eps
    mixed = pairs[core[pairs[:, 0]] != core[pairs[:, 1]]]
    if len(mixed):
        border = np.where(core[mixed[:, 0]], mixed[:, 1], mixed[:, 0])
        anchor = np.where(core[mixed[:, 0]], mixed[:, 0], mixed[:, 1])
        dist = np.linalg.norm(z[border] - z[anchor], axis=1)
        order = np.lexsort((anchor, dist, border))
        first = np.ones(len(order), dtype=bool)
        first[1:] = border[order][1:] != border[order][:-1]
        pick = order[first]
        labels[border[pick]] = labels[anchor[pick]]

    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    labels[np.isin(labels, ids[counts < min_cluster_size])] = -1
    if not (labels >= 0).any():
        return labels
    noise = np.flatnonzero(labels < 0)
    kept = np.flatnonzero(labels >= 0)
    if len(noise):
        labels[noise] = labels[kept[_nearest(z[noise], z[kept])]]

    # renumber by first member
    _, first_idx = np.unique(labels, return_index=True)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[np.sort(first_idx)]] = np.arange(len(first_idx))
    return remap[labels]


@dataclass
class Candidate:
    mask: np.ndarray
    epsilon: float | None
    parent: int | None


@dataclass
class CandidatePool:
    candidates: list[Candidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def masks(self) -> list[np.ndarray]:
        return [c.mask for c in self.candidates]


def generate_candidates(
    features: np.ndarray,
    c: float = 1.0,
    schedule=EPSILON_SCHEDULE,
    min_region: int = MIN_REGION,
    min_samples: int = MIN_SAMPLES,
    max_nodes: int = MAX_NODES,
) -> CandidatePool:
    """Recursively split leaf regions over a decreasing epsilon schedule.

    The full image is the first candidate. At each epsilon every current leaf
    with at least ``min_region`` pixels is clustered on its own; when that
    yields two or more clusters, each one becomes a candidate and a new leaf.
    """
    h, w = features.shape[:2]
    z = lz.log_map_origin(features.reshape(h * w, -1), c)
    pool = CandidatePool([Candidate(np.ones((h, w), dtype=bool), None, None)])
    leaves = [(0, np.arange(h * w))]
    for eps in schedule:
        next_leaves = []
        for idx, pix in leaves:
            if len(pix) < min_region or len(pool) >= max_nodes:
                next_leaves.append((idx, pix))
                continue
            labels = density_cluster(z[pix], eps, min_samples, min_region)
            k = labels.max() + 1
            if k < 2:
                next_leaves.append((idx, pix))
                continue
            for lab in range(k):
                if len(pool) >= max_nodes:
                    break
                members = pix[labels == lab]
                mask = np.zeros(h * w, dtype=bool)
                mask[members] = True
                pool.candidates.append(Candidate(mask.reshape(h, w), float(eps), idx))
                next_leaves.append((len(pool) - 1, members))
        leaves = next_leaves
        if len(pool) >= max_nodes:
            break
    return pool
