"""From overlapping mask proposals to leaf regions, descriptors and affinities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class DegenerateDescriptor(ValueError):
    pass


@dataclass
class MaskProposal:
    id: int
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("mask must be a 2-D grid")
        if self.area == 0:
            raise ValueError(f"proposal {self.id} is empty")

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def sort_key(self) -> tuple[int, int]:
        return (self.area, self.id)


@dataclass
class ProposalForest:
    parent: dict[int, int | None]
    proposals: dict[int, MaskProposal]

    @property
    def roots(self) -> list[int]:
        return sorted((p for p, par in self.parent.items() if par is None), key=lambda i: self.proposals[i].sort_key)

    def root_of(self, pid: int) -> int:
        while self.parent[pid] is not None:
            pid = self.parent[pid]
        return pid

    def chain(self, pid: int) -> list[int]:
        out = [pid]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def groups(self) -> dict[int, list[MaskProposal]]:
        """Proposals keyed by their root, each group sorted by (area, id)."""
        out: dict[int, list[MaskProposal]] = {r: [] for r in self.roots}
        for pid in self.parent:
            out[self.root_of(pid)].append(self.proposals[pid])
        for r in out:
            out[r].sort(key=lambda p: p.sort_key)
        return out


def containment_ratio(child: np.ndarray, candidate: np.ndarray) -> float:
    """``|child & candidate| / |child|``."""
    return float(np.logical_and(child, candidate).sum()) / float(child.sum())


def assign_parents(proposals: list[MaskProposal], containment_threshold: float = 0.8) -> ProposalForest:
    """Attach every proposal to the smallest strictly larger proposal containing
    more than ``containment_threshold`` of it; proposals without one are roots."""
    if not 0.0 < containment_threshold <= 1.0:
        raise ValueError("containment threshold must lie in (0, 1]")
    ordered = sorted(proposals, key=lambda p: p.sort_key)
    if len({p.id for p in ordered}) != len(ordered):
        raise ValueError("proposal ids must be unique")
    parent: dict[int, int | None] = {}
    for i, child in enumerate(ordered):
        parent[child.id] = None
        for cand in ordered[i + 1 :]:
            if cand.area <= child.area:
                continue
            if containment_ratio(child.mask, cand.mask) > containment_threshold:
                parent[child.id] = cand.id
                break
    return ProposalForest(parent, {p.id: p for p in ordered})


@dataclass
class Leaf:
    pixels: np.ndarray  # (k, 2) row, col
    proposal: int
    ancestors: tuple[int, ...]  # proposal chain from the covering proposal to the group root


@dataclass
class LeafPartition:
    labels: np.ndarray  # H x W leaf index, -1 for background
    leaves: list[Leaf] = field(default_factory=list)

    def mask(self, leaf: int) -> np.ndarray:
        return self.labels == leaf


def resolve_leaf_partition(
    group: list[MaskProposal], forest: ProposalForest | None = None, min_pixels: int = 1
) -> LeafPartition:
    """Give every covered pixel to its smallest covering proposal, then split
    each resulting region into 4-connected components (one leaf each)."""
    if not group:
        raise ValueError("empty proposal group")
    ordered = sorted(group, key=lambda p: p.sort_key)
    shape = ordered[0].mask.shape
    owner = np.full(shape, -1, dtype=np.int64)
    # largest first so smaller proposals overwrite
    for idx in range(len(ordered) - 1, -1, -1):
        owner[ordered[idx].mask] = idx

    labels = np.full(shape, -1, dtype=np.int64)
    leaves: list[Leaf] = []
    for idx, prop in enumerate(ordered):
        region = owner == idx
        if not region.any():
            continue
        comp, n_comp = ndimage.label(region)
        chain = tuple(forest.chain(prop.id)) if forest is not None else (prop.id,)
        for k in range(1, n_comp + 1):
            rows, cols = np.nonzero(comp == k)
            if rows.size < min_pixels:
                continue
            labels[rows, cols] = len(leaves)
            leaves.append(Leaf(np.stack([rows, cols], axis=1), prop.id, chain))
    return LeafPartition(labels, leaves)


def mask_to_patches(mask: np.ndarray, patch_shape: tuple[int, int]) -> np.ndarray:
    """Patch indices (row, col) of a ``patch_shape`` grid touched by ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    ph, pw = patch_shape
    rows, cols = np.nonzero(mask)
    pr = rows * ph // mask.shape[0]
    pc = cols * pw // mask.shape[1]
    return np.unique(np.stack([pr, pc], axis=1), axis=0)


def pool_descriptor(fmap: np.ndarray, region) -> np.ndarray:
    """Mean feature over ``region`` (patch (row, col) pairs or a boolean patch
    mask), l2-normalized."""
    fmap = np.asarray(fmap, dtype=np.float64)
    region = np.asarray(region)
    if region.dtype == bool:
        feats = fmap[region]
    else:
        region = region.reshape(-1, 2)
        feats = fmap[region[:, 0], region[:, 1]]
    if feats.shape[0] == 0:
        raise ValueError("empty pooling region")
    mean = feats.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 1e-12:
        raise DegenerateDescriptor("degenerate descriptor: pooled mean has zero norm")
    return mean / norm


def build_affinity(descriptors) -> np.ndarray:
    """``W_uv = max(0, z_u . z_v)`` with a zero diagonal."""
    z = np.asarray(descriptors, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need at least two descriptors")
    w = np.maximum(z @ z.T, 0.0)
    w = np.minimum(0.5 * (w + w.T), 1.0)
    np.fill_diagonal(w, 0.0)
    return w
