"""Spectral versus exact recursive sparsest-cut trees on random descriptor graphs."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .hierarchy.dasgupta import EXACT_MAX_N, dasgupta_cost, exact_sparsest_cut_tree, normalized_dasgupta_cost
from .hierarchy.proposals import build_affinity
from .hierarchy.spectral import recursive_spectral_tree

METHODS = {"spectral": recursive_spectral_tree, "exact": exact_sparsest_cut_tree}


@dataclass
class BenchmarkRecord:
    n: int
    trial: int
    method: str
    cost: float
    normalized_cost: float
    seconds: float


def random_descriptor_graph(n: int, rng: np.random.Generator, dim: int = 64, shared: float = 1.0) -> np.ndarray:
    """Affinity graph of ``n`` unit descriptors that share a common mean
    direction of strength ``shared`` over isotropic noise, so most pairs have
    positive affinity as in dense patch-feature graphs."""
    mu = rng.normal(size=dim)
    mu /= np.linalg.norm(mu)
    z = shared * mu + rng.normal(size=(n, dim)) / np.sqrt(dim)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return build_affinity(z)


def run_benchmark(ns, trials: int, seed: int, dim: int = 64, shared: float = 1.0) -> list[BenchmarkRecord]:
    records = []
    for n in ns:
        if n > EXACT_MAX_N:
            raise ValueError(f"n={n} exceeds the exact builder limit {EXACT_MAX_N}")
        if n < 2:
            raise ValueError("graphs need at least two vertices")
        rng = np.random.default_rng([seed, n])
        for t in range(trials):
            w = random_descriptor_graph(n, rng, dim, shared)
            for method, build in METHODS.items():
                start = time.perf_counter()
                tree = build(w)
                elapsed = time.perf_counter() - start
                records.append(BenchmarkRecord(n, t, method, dasgupta_cost(tree, w), normalized_dasgupta_cost(tree, w), elapsed))
    return records


def relative_gaps(records: list[BenchmarkRecord]) -> dict[int, list[float]]:
    """Signed ``cost_spectral / cost_exact - 1`` per n, in trial order."""
    cost = {(r.n, r.trial, r.method): r.cost for r in records}
    gaps: dict[int, list[float]] = {}
    for n, t, m in sorted(cost):
        if m != "exact":
            continue
        exact = cost[(n, t, "exact")]
        spec = cost[(n, t, "spectral")]
        gaps.setdefault(n, []).append(0.0 if exact == 0 else spec / exact - 1.0)
    return gaps


def summarize(records: list[BenchmarkRecord]) -> list[tuple]:
    """``(n, mean_gap, median_gap, max_abs_gap)`` rows."""
    return [
        (n, statistics.fmean(g), statistics.median(g), max(abs(x) for x in g))
        for n, g in sorted(relative_gaps(records).items())
    ]


def mean_seconds(records: list[BenchmarkRecord]) -> dict[tuple[int, str], float]:
    acc: dict[tuple[int, str], list[float]] = {}
    for r in records:
        acc.setdefault((r.n, r.method), []).append(r.seconds)
    return {k: statistics.fmean(v) for k, v in sorted(acc.items())}
