"""Group recall of a candidate pool, natively and under random budgets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRICS = ("miou", "r50", "r75")
DEFAULT_BUDGETS = (50, 100, 200, 500, 1000, 2000)


def iou_matrix(pool: list[np.ndarray], gt: list[np.ndarray]) -> np.ndarray:
    """``(len(pool), len(gt))`` IoUs; empty unions count as 0."""
    if not pool or not gt:
        return np.zeros((len(pool), len(gt)))
    p = np.stack([m.ravel() for m in pool]).astype(np.float64)
    g = np.stack([m.ravel() for m in gt]).astype(np.float64)
    inter = p @ g.T
    union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def metrics_from_best(best: np.ndarray) -> dict[str, float]:
    return {
        "miou": float(np.mean(best)),
        "r50": float(np.mean(best >= 0.5)),
        "r75": float(np.mean(best >= 0.75)),
    }


@dataclass
class RecallReport:
    native: dict[str, float]
    budgets: list[int]
    mean: dict[str, list[float]] = field(default_factory=dict)
    std: dict[str, list[float]] = field(default_factory=dict)
    auc: dict[str, float] = field(default_factory=dict)
    seeds: int = 0

    def rows(self) -> list[tuple]:
        """``(budget, metric, mean, std)`` rows, native results first."""
        out = [("native", m, self.native[m], 0.0) for m in METRICS]
        for i, k in enumerate(self.budgets):
            out.extend((k, m, self.mean[m][i], self.std[m][i]) for m in METRICS)
        return out


def budget_auc(budgets, values) -> float:
    """Trapezoidal area under ``(K, value)`` with a leading ``(0, 0)``,
    divided by the largest budget."""
    k = np.concatenate([[0.0], np.asarray(budgets, dtype=np.float64)])
    v = np.concatenate([[0.0], np.asarray(values, dtype=np.float64)])
    if k[-1] <= 0:
        return 0.0
    return float(np.sum((k[1:] - k[:-1]) * (v[1:] + v[:-1]) / 2.0) / k[-1])


def group_recall(
    pool: list[np.ndarray],
    gt: list[np.ndarray],
    budgets=DEFAULT_BUDGETS,
    seeds: int = 100,
    base_seed: int = 0,
) -> RecallReport:
    """Best-IoU recall of ``gt`` groups by the full pool and by random
    budget-``K`` subsets.

    Seed ``s`` draws one permutation from ``base_seed + s`` and a budget
    takes its first ``K`` entries, so subsets grow with ``K``.
    """
    if not gt:
        raise ValueError("no ground-truth groups")
    budgets = sorted(int(k) for k in budgets)
    if any(k < 1 for k in budgets):
        raise ValueError("budgets must be positive")
    n = len(pool)
    if n == 0:
        zeros = dict.fromkeys(METRICS, 0.0)
        flat = {m: [0.0] * len(budgets) for m in METRICS}
        return RecallReport(zeros, budgets, flat, dict(flat), dict(zeros), seeds)

    ious = iou_matrix(pool, gt)
    native = metrics_from_best(ious.max(axis=0))
    table = {m: np.zeros((seeds, len(budgets))) for m in METRICS}
    for s in range(seeds):
        perm = np.random.default_rng(base_seed + s).permutation(n)
        for b, k in enumerate(budgets):
            best = ious[perm[: min(k, n)]].max(axis=0)
            for m, val in metrics_from_best(best).items():
                table[m][s, b] = val
    mean, std = {}, {}
    for m in METRICS:
        # columns where every seed agrees keep that exact value (no rounding drift)
        same = np.all(table[m] == table[m][:1], axis=0)
        mean[m] = np.where(same, table[m][0], table[m].mean(axis=0)).tolist()
        std[m] = np.where(same, 0.0, table[m].std(axis=0)).tolist()
    auc = {m: budget_auc(budgets, mean[m]) for m in METRICS}
    return RecallReport(native, budgets, mean, std, auc, seeds)
