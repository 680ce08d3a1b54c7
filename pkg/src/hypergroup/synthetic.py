"""Synthetic scenes with a known rectangular part hierarchy.

A base grid is split recursively into rectangles; each node of the split
tree gets a random direction and pixel descriptors diffuse down the tree.
Views are flips, rotations or crops of the base grid that keep track of
which base point every view pixel sees, so per-point parameters are shared
across views the way a 3D field would share them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .evaluation.completeness import SceneBundle, ViewData
from .hierarchy.pipeline import build_forest
from .hierarchy.proposals import MaskProposal
from .hierarchy.trees import HierForest, HierTree
from .training.losses import TrainableEmbedding
from .training.trainer import ImageRays

LEVEL_NAMES = ("Fine", "Medium", "Coarse")


@dataclass
class SceneSpec:
    height: int = 32
    width: int = 32
    branching: tuple[int, ...] = (4, 2, 2)
    d_feat: int = 64
    sigma: float = 0.05
    n_views: int = 3
    seed: int = 0

    def __post_init__(self):
        self.branching = tuple(int(b) for b in self.branching)
        if not self.branching or any(b < 2 for b in self.branching):
            raise ValueError("branching factors must be at least 2")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.height < 1 or self.width < 1 or self.d_feat < 1 or self.n_views < 1:
            raise ValueError("grid size, descriptor dimension and view count must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branching"] = list(self.branching)
        return d


@dataclass
class SyntheticView:
    index_map: np.ndarray  # (h, w) base pixel index seen by each view pixel
    query: tuple[int, int]


@dataclass
class Scene:
    spec: SceneSpec
    parent: dict[int, int | None]  # split tree; node 0 is the whole image
    depth: dict[int, int]
    base_labels: np.ndarray  # (H, W) leaf node ids
    descriptors: np.ndarray  # (H*W, d_feat)
    views: list[SyntheticView] = field(default_factory=list)
    query_base: int = 0

    @property
    def n_levels(self) -> int:
        return len(self.spec.branching)

    @property
    def n_rays(self) -> int:
        return self.base_labels.size

    @property
    def levels(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self._level_depths())

    def _level_depths(self) -> list[tuple[str, int]]:
        depths = {"Fine": self.n_levels, "Medium": self.n_levels - 1, "Coarse": 1}
        out, used = [], set()
        for name in LEVEL_NAMES:
            d = depths[name]
            if d >= 1 and d not in used:
                out.append((name, d))
                used.add(d)
        return out

    def gt_forest(self) -> HierForest:
        flat = self.base_labels.ravel()
        pixels = {
            leaf: np.column_stack(np.unravel_index(np.flatnonzero(flat == leaf), self.base_labels.shape))
            for leaf in np.unique(flat).tolist()
        }
        return HierForest([HierTree(dict(self.parent), tree_id=0, pixels=pixels)])

    def node_mask(self, node: int) -> np.ndarray:
        """Base-grid mask of a split-tree node."""
        return self._node_masks()[node]

    def _node_masks(self) -> dict[int, np.ndarray]:
        tree = self.gt_forest().trees[0]
        return {v: np.isin(self.base_labels, sorted(tree.leaf_set(v))) for v in sorted(self.parent)}

    def view_masks(self, v: int) -> dict[int, np.ndarray]:
        """Every nonempty node mask in view coordinates."""
        idx = self.views[v].index_map
        out = {}
        for node, m in self._node_masks().items():
            vm = m.ravel()[idx]
            if vm.any():
                out[node] = vm
        return out

    def view_gt(self, v: int) -> dict[str, np.ndarray]:
        """Per-level ground-truth masks through the query's ancestor chain."""
        tree = self.gt_forest().trees[0]
        leaf = int(self.base_labels.ravel()[self.query_base])
        chain = [leaf] + tree.ancestor_chain(leaf)
        by_depth = {self.depth[n]: n for n in chain}
        masks = self._node_masks()
        idx = self.views[v].index_map
        return {name: masks[by_depth[d]].ravel()[idx] for name, d in self._level_depths()}

    def view_descriptors(self, v: int) -> np.ndarray:
        idx = self.views[v].index_map
        return self.descriptors[idx]

    def proposals(self, v: int) -> list[MaskProposal]:
        """Masks of every non-root node visible in view ``v``."""
        return [MaskProposal(node, m) for node, m in self.view_masks(v).items() if self.parent[node] is not None]

    def build_view_forest(self, v: int, method: str = "spectral"):
        return build_forest(self.proposals(v), self.view_descriptors(v), method=method)

    def training_images(self, method: str = "spectral") -> list[ImageRays]:
        images = []
        for v, view in enumerate(self.views):
            forest = self.build_view_forest(v, method).forest
            labels = forest.label_grid(view.index_map.shape)
            keep = labels >= 0
            images.append(ImageRays(forest, view.index_map[keep], labels[keep]))
        return images

    def bundle(self, embedding: TrainableEmbedding) -> SceneBundle:
        views = [
            ViewData(embedding.points(view.index_map), view.query, self.view_gt(v)) for v, view in enumerate(self.views)
        ]
        return SceneBundle(views, self.levels, embedding.curvature)


def _split(extent: tuple[int, int, int, int], parts: int) -> list[tuple[int, int, int, int]]:
    r0, r1, c0, c1 = extent
    rows = r1 - r0 >= c1 - c0
    length = (r1 - r0) if rows else (c1 - c0)
    if length < parts:
        raise ValueError(f"grid too small: cannot split a side of {length} pixels into {parts}")
    cuts = [round(i * length / parts) for i in range(parts + 1)]
    if rows:
        return [(r0 + cuts[i], r0 + cuts[i + 1], c0, c1) for i in range(parts)]
    return [(r0, r1, c0 + cuts[i], c0 + cuts[i + 1]) for i in range(parts)]


def _directions(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, n))
    if d >= n:
        q, r = np.linalg.qr(g)
        return (q * np.sign(np.diag(r))).T
    return (g / np.linalg.norm(g, axis=0)).T


def _view_maps(h: int, w: int, n_views: int, query: tuple[int, int], rng: np.random.Generator) -> list[np.ndarray]:
    base = np.arange(h * w).reshape(h, w)
    fixed = [base, base[:, ::-1], np.rot90(base), base[::-1, :]]
    maps = [m.copy() for m in fixed[:n_views]]
    ch, cw = max(1, (3 * h) // 4), max(1, (3 * w) // 4)
    while len(maps) < n_views:
        r0 = int(rng.integers(max(0, query[0] - ch + 1), min(query[0], h - ch) + 1))
        c0 = int(rng.integers(max(0, query[1] - cw + 1), min(query[1], w - cw) + 1))
        maps.append(base[r0 : r0 + ch, c0 : c0 + cw].copy())
    return maps


def gen_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    parent: dict[int, int | None] = {0: None}
    depth = {0: 0}
    extents = {0: (0, h, 0, w)}
    frontier = [0]
    for b in spec.branching:
        nxt = []
        for node in frontier:
            for ext in _split(extents[node], b):
                vid = len(parent)
                parent[vid] = node
                depth[vid] = depth[node] + 1
                extents[vid] = ext
                nxt.append(vid)
        frontier = nxt
    leaves = frontier

    labels = np.zeros((h, w), dtype=np.int64)
    for leaf in leaves:
        r0, r1, c0, c1 = extents[leaf]
        labels[r0:r1, c0:c1] = leaf

    non_root = sorted(v for v in parent if v != 0)
    dirs = dict(zip(non_root, _directions(len(non_root), spec.d_feat, rng)))
    leaf_vec = {}
    for leaf in leaves:
        v, acc = leaf, np.zeros(spec.d_feat)
        while v != 0:
            acc += dirs[v]
            v = parent[v]
        leaf_vec[leaf] = acc / np.linalg.norm(acc)
    desc = np.stack([leaf_vec[l] for l in labels.ravel().tolist()])
    desc = desc + spec.sigma * rng.normal(size=desc.shape)

    query_leaf = leaves[int(rng.integers(len(leaves)))]
    r0, r1, c0, c1 = extents[query_leaf]
    query = ((r0 + r1 - 1) // 2, (c0 + c1 - 1) // 2)
    query_base = query[0] * w + query[1]
    views = []
    for m in _view_maps(h, w, spec.n_views, query, rng):
        r, c = np.argwhere(m == query_base)[0]
        views.append(SyntheticView(m, (int(r), int(c))))
    return Scene(spec, parent, depth, labels, desc, views, query_base)


# --- persistence --------------------------------------------------------------


def save_scene(scene: Scene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_pgm(out / "base_labels.pgm", scene.base_labels + 1)
    io.write_matrix(out / "descriptors.bin", scene.descriptors)
    views = []
    for v, view in enumerate(scene.views):
        io.write_pgm(out / f"view{v}_index.pgm", view.index_map)
        gt_files = {}
        for level, mask in scene.view_gt(v).items():
            name = f"view{v}_gt_{level.lower()}.pgm"
            io.write_mask(out / name, mask)
            gt_files[level] = name
        views.append({"index": f"view{v}_index.pgm", "query": list(view.query), "gt": gt_files})
    manifest = {
        "spec": scene.spec.to_dict(),
        "levels": list(scene.levels),
        "parent": {str(k): p for k, p in sorted(scene.parent.items())},
        "query_base": scene.query_base,
        "views": views,
    }
    io.write_json(out / "manifest.json", manifest)


def load_scene(scene_dir) -> Scene:
    d = Path(scene_dir)
    man = io.read_json(d / "manifest.json")
    spec = SceneSpec.from_dict(man["spec"])
    parent = {int(k): (None if p is None else int(p)) for k, p in man["parent"].items()}
    depth = {}
    for v in sorted(parent):
        depth[v] = 0 if parent[v] is None else depth[parent[v]] + 1
    labels = io.read_pgm(d / "base_labels.pgm") - 1
    desc = io.read_matrix(d / "descriptors.bin")
    if desc.shape[0] != labels.size:
        raise io.FormatError("descriptor rows do not match the grid")
    views = [SyntheticView(io.read_pgm(d / v["index"]), tuple(v["query"])) for v in man["views"]]
    return Scene(spec, parent, depth, labels, desc, views, int(man["query_base"]))
