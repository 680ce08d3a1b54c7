"""Query-point grouping completeness under a threshold sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import lorentz as lz

log = logging.getLogger(__name__)

THRESHOLDS = np.linspace(0.0, 0.99, 1000)
LEVEL_ORDER = ("Fine", "Medium", "Coarse")


@dataclass
class ViewData:
    features: np.ndarray  # (H, W, D+1) Lorentz points
    query: tuple[int, int]
    gt: dict[str, np.ndarray] = field(default_factory=dict)  # level -> (H, W) bool

    def __post_init__(self):
        h, w = self.features.shape[:2]
        r, c = self.query
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"query {self.query} outside the {h}x{w} grid")
        for level, m in self.gt.items():
            if m.shape != (h, w):
                raise ValueError(f"{level} mask shape {m.shape} does not match the grid")
            if not m[r, c]:
                raise ValueError(f"{level} mask does not contain the query pixel")


@dataclass
class SceneBundle:
    views: list[ViewData]
    levels: tuple[str, ...]
    curvature: float = 1.0

    def __post_init__(self):
        for v in self.views:
            missing = set(self.levels) - set(v.gt)
            if missing:
                raise ValueError(f"view lacks ground truth for {sorted(missing)}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        log.warning("IoU of two empty masks taken as 0")
        return 0.0
    return np.count_nonzero(a & b) / union


def tangent_affinity_score(features: np.ndarray, query: tuple[int, int], c: float = 1.0) -> np.ndarray:
    """``exp(-|z(p) - z(q)|^2)`` with ``z`` the origin log map."""
    z = lz.log_map_origin(features, c)
    diff = z - z[query[0], query[1]]
    return np.exp(-np.einsum("...i,...i->...", diff, diff))


def threshold_mask(score: np.ndarray, t: float) -> np.ndarray:
    return score >= t


def iou_sweep(score: np.ndarray, gt: np.ndarray, thresholds: np.ndarray = THRESHOLDS) -> np.ndarray:
    """IoU of ``score >= t`` against ``gt`` for every ``t``, by counting."""
    s = np.sort(score.ravel())
    s_in = np.sort(score[gt])
    size = s.size - np.searchsorted(s, thresholds, side="left")
    inter = s_in.size - np.searchsorted(s_in, thresholds, side="left")
    union = size + s_in.size - inter
    return np.divide(inter, union, out=np.zeros(len(thresholds)), where=union > 0)


def _sweeps(scene: SceneBundle) -> dict[str, np.ndarray]:
    """level -> (n_views, n_thresholds) IoU table."""
    out = {level: [] for level in scene.levels}
    for view in scene.views:
        score = tangent_affinity_score(view.features, view.query, scene.curvature)
        for level in scene.levels:
            out[level].append(iou_sweep(score, view.gt[level]))
    return {k: np.array(v) for k, v in out.items()}


def completeness_viewwise(scene: SceneBundle) -> dict[str, float]:
    """Per level, the mean over views of the best IoU in the sweep."""
    return {level: float(np.mean(tab.max(axis=1))) for level, tab in _sweeps(scene).items()}


def completeness_levelwise(scene: SceneBundle) -> tuple[dict[str, float], dict[str, float]]:
    """Per level, one shared threshold maximizing the IoU summed over views
    (ties to the larger threshold); returns mean IoUs and the thresholds."""
    scores, chosen = {}, {}
    for level, tab in _sweeps(scene).items():
        total = tab.sum(axis=0)
        best = int(np.flatnonzero(total == total.max())[-1])
        scores[level] = float(np.mean(tab[:, best]))
        chosen[level] = float(THRESHOLDS[best])
    return scores, chosen


def ctr(viewwise: list[dict[str, float]], levelwise: list[dict[str, float]]) -> tuple[dict[str, float], float]:
    """Per-level mean over scenes of level-wise / view-wise completeness, and
    the mean of those per-level values."""
    if not viewwise:
        raise ValueError("no scenes")
    if len(viewwise) != len(levelwise):
        raise ValueError("view-wise and level-wise results cover different scenes")
    ratios: dict[str, list[float]] = {}
    for vw, lw in zip(viewwise, levelwise):
        for level, denom in vw.items():
            if denom == 0:
                log.warning("skipping undefined ratio for level %s", level)
                continue
            ratios.setdefault(level, []).append(lw[level] / denom)
    per_level = {level: float(np.mean(r)) for level, r in ratios.items()}
    overall = float(np.mean(list(per_level.values()))) if per_level else float("nan")
    return per_level, overall
