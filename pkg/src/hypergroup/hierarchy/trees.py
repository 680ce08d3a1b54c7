"""Rooted trees and forests over integer vertex ids."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class TreeError(ValueError):
    pass


@dataclass
class HierTree:
    """A rooted tree with leaf and virtual internal vertices.

    ``parent`` maps every vertex to its parent (``None`` for the root).
    ``pixels`` optionally maps leaf ids to ``(k, 2)`` arrays of (row, col).
    """

    parent: dict[int, int | None]
    tree_id: int = 0
    pixels: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        roots = [v for v, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise TreeError(f"tree must have exactly one root, found {len(roots)}")
        for v, p in self.parent.items():
            if p is not None and p not in self.parent:
                raise TreeError(f"vertex {v} has unknown parent {p}")
        self.root = roots[0]
        # walk every vertex to the root once to reject cycles
        seen_ok = {self.root}
        for v in self.parent:
            path = []
            while v not in seen_ok:
                if v in path:
                    raise TreeError("cycle in parent links")
                path.append(v)
                v = self.parent[v]
            seen_ok.update(path)

    @classmethod
    def single_leaf(cls, leaf: int = 0, tree_id: int = 0) -> HierTree:
        return cls({leaf: None}, tree_id=tree_id)

    @cached_property
    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in self.parent}
        for v, p in self.parent.items():
            if p is not None:
                out[p].append(v)
        for v in out:
            out[v].sort()
        return out

    @cached_property
    def leaves(self) -> list[int]:
        return sorted(v for v, ch in self.children.items() if not ch)

    @cached_property
    def internal(self) -> list[int]:
        return sorted(v for v, ch in self.children.items() if ch)

    def is_leaf(self, v: int) -> bool:
        self._require(v)
        return not self.children[v]

    def _require(self, v: int) -> None:
        if v not in self.parent:
            raise TreeError(f"unknown vertex id {v}")

    def ancestor_chain(self, v: int) -> list[int]:
        """``(v, par(v), ..., root)``."""
        self._require(v)
        chain = [v]
        while self.parent[chain[-1]] is not None:
            chain.append(self.parent[chain[-1]])
        return chain

    @cached_property
    def depth(self) -> dict[int, int]:
        out = {self.root: 0}
        stack = [self.root]
        while stack:
            v = stack.pop()
            for ch in self.children[v]:
                out[ch] = out[v] + 1
                stack.append(ch)
        return out

    @cached_property
    def height(self) -> dict[int, int]:
        """Longest downward distance to a leaf."""
        out: dict[int, int] = {}
        for v in self._postorder():
            ch = self.children[v]
            out[v] = 0 if not ch else 1 + max(out[c] for c in ch)
        return out

    @cached_property
    def _leaf_sets(self) -> dict[int, frozenset[int]]:
        out: dict[int, frozenset[int]] = {}
        for v in self._postorder():
            ch = self.children[v]
            out[v] = frozenset([v]) if not ch else frozenset().union(*(out[c] for c in ch))
        return out

    def _postorder(self) -> list[int]:
        order, stack = [], [self.root]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(self.children[v])
        return order[::-1]

    def leaf_set(self, v: int) -> frozenset[int]:
        self._require(v)
        return self._leaf_sets[v]

    def leaf_count(self, v: int) -> int:
        return len(self.leaf_set(v))

    def lca(self, a: int, b: int) -> int:
        self._require(a)
        self._require(b)
        depth = self.depth
        while depth[a] > depth[b]:
            a = self.parent[a]
        while depth[b] > depth[a]:
            b = self.parent[b]
        while a != b:
            a, b = self.parent[a], self.parent[b]
        return a

    def relabel(self, mapping: dict[int, int], tree_id: int | None = None) -> HierTree:
        parent = {mapping[v]: (None if p is None else mapping[p]) for v, p in self.parent.items()}
        pixels = {mapping[v]: px for v, px in self.pixels.items()}
        return HierTree(parent, tree_id=self.tree_id if tree_id is None else tree_id, pixels=pixels)

    def to_json(self) -> dict:
        nodes = []
        for v in sorted(self.parent):
            node = {"id": int(v), "kind": "leaf" if not self.children[v] else "internal", "parent": self.parent[v]}
            if v in self.pixels:
                node["pixels"] = np.asarray(self.pixels[v]).astype(int).tolist()
            nodes.append(node)
        return {"tree_id": int(self.tree_id), "nodes": nodes}

    @classmethod
    def from_json(cls, obj: dict) -> HierTree:
        try:
            parent = {int(n["id"]): (None if n["parent"] is None else int(n["parent"])) for n in obj["nodes"]}
            pixels = {
                int(n["id"]): np.asarray(n["pixels"], dtype=np.int64).reshape(-1, 2)
                for n in obj["nodes"]
                if "pixels" in n
            }
            tree = cls(parent, tree_id=int(obj["tree_id"]), pixels=pixels)
            for n in obj["nodes"]:
                expected = "leaf" if tree.is_leaf(int(n["id"])) else "internal"
                if n["kind"] != expected:
                    raise TreeError(f"node {n['id']} declared {n['kind']} but is {expected}")
        except (KeyError, TypeError) as exc:
            raise TreeError(f"malformed tree JSON: {exc}") from exc
        return tree


class HierForest:
    """A collection of trees with globally unique vertex ids."""

    def __init__(self, trees: Iterable[HierTree]):
        self.trees = list(trees)
        self._tree_of: dict[int, HierTree] = {}
        for t in self.trees:
            for v in t.parent:
                if v in self._tree_of:
                    raise TreeError(f"vertex id {v} appears in two trees")
                self._tree_of[v] = t

    @property
    def leaves(self) -> list[int]:
        return sorted(v for t in self.trees for v in t.leaves)

    @property
    def roots(self) -> list[int]:
        return [t.root for t in self.trees]

    def tree_of(self, v: int) -> HierTree:
        try:
            return self._tree_of[v]
        except KeyError:
            raise TreeError(f"unknown vertex id {v}") from None

    def root_of(self, v: int) -> int:
        return self.tree_of(v).root

    def parent(self, v: int) -> int | None:
        return self.tree_of(v).parent[v]

    def ancestor_chain(self, v: int) -> list[int]:
        return self.tree_of(v).ancestor_chain(v)

    def lca(self, a: int, b: int) -> int | None:
        """LCA within a tree; ``None`` when the leaves belong to different trees."""
        ta, tb = self.tree_of(a), self.tree_of(b)
        if ta is not tb:
            return None
        return ta.lca(a, b)

    def leaf_pixels(self, v: int) -> np.ndarray:
        return self.tree_of(v).pixels[v]

    def label_grid(self, shape: tuple[int, int], background: int = -1) -> np.ndarray:
        grid = np.full(shape, background, dtype=np.int64)
        for t in self.trees:
            for leaf, px in t.pixels.items():
                grid[px[:, 0], px[:, 1]] = leaf
        return grid

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, obj: dict) -> HierForest:
        if "trees" not in obj:
            raise TreeError("forest JSON needs a 'trees' list")
        return cls(HierTree.from_json(t) for t in obj["trees"])

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> HierForest:
        return cls.from_json(json.loads(text))
