"""Per-image forest construction: proposals -> groups -> leaves -> trees."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dasgupta import exact_sparsest_cut_tree, flatten_internal
from .proposals import (
    MaskProposal,
    assign_parents,
    build_affinity,
    mask_to_patches,
    pool_descriptor,
    resolve_leaf_partition,
)
from .spectral import recursive_spectral_tree
from .trees import HierForest, HierTree

log = logging.getLogger(__name__)

TREE_BUILDERS = {
    "spectral": recursive_spectral_tree,
    "exact": exact_sparsest_cut_tree,
}


@dataclass
class ForestBuild:
    forest: HierForest
    descriptors: list[np.ndarray] = field(default_factory=list)  # per tree, rows = leaves in id order
    leaf_proposals: dict[int, tuple[int, ...]] = field(default_factory=dict)  # leaf -> proposal chain


def build_forest(
    proposals: list[MaskProposal],
    feature_map: np.ndarray,
    method: str = "spectral",
    containment_threshold: float = 0.8,
    flatten_gap: int = 0,
    min_leaf_pixels: int = 1,
) -> ForestBuild:
    """Build one image's hierarchy forest from its mask proposals.

    ``feature_map`` is an ``(Hp, Wp, d)`` patch grid covering the image; leaf
    masks are pooled over the patches they touch.
    """
    if method not in TREE_BUILDERS:
        raise ValueError(f"unknown tree method {method!r}; expected one of {sorted(TREE_BUILDERS)}")
    builder = TREE_BUILDERS[method]
    patch_shape = feature_map.shape[:2]
    pf = assign_parents(proposals, containment_threshold)

    trees: list[HierTree] = []
    descriptors: list[np.ndarray] = []
    chains: dict[int, tuple[int, ...]] = {}
    offset = 0
    for tree_id, (root, group) in enumerate(pf.groups().items()):
        part = resolve_leaf_partition(group, pf, min_pixels=min_leaf_pixels)
        n = len(part.leaves)
        if n == 0:
            log.warning("proposal group %d produced no leaves", root)
            continue
        z = np.stack([pool_descriptor(feature_map, mask_to_patches(part.mask(i), patch_shape)) for i in range(n)])
        if n == 1:
            local = HierTree.single_leaf(0)
        else:
            local = flatten_internal(builder(build_affinity(z)), flatten_gap)
        mapping = {v: offset + i for i, v in enumerate(sorted(local.parent))}
        tree = local.relabel(mapping, tree_id=tree_id)
        for i, leaf in enumerate(part.leaves):
            tree.pixels[mapping[i]] = leaf.pixels
            chains[mapping[i]] = leaf.ancestors
        trees.append(tree)
        descriptors.append(z)
        offset += len(mapping)
    return ForestBuild(HierForest(trees), descriptors, chains)
