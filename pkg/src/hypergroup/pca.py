"""Principal directions by power iteration with deflation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

POWER_TOL = 1e-10
MAX_ITER = 100_000


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    variances: np.ndarray
    projected: np.ndarray  # (n, k)
    total_variance: float = 0.0

    @property
    def explained_ratio(self) -> np.ndarray:
        total = self.total_variance
        return self.variances / total if total > 0 else np.zeros_like(self.variances)


def _orient(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def principal_components(x: np.ndarray, k: int = 3, tol: float = POWER_TOL) -> PCAResult:
    """Top ``k`` principal directions of the rows of ``x``.

    Each direction starts from the largest column of the (deflated)
    covariance, so results are deterministic. Directions with negligible
    variance are dropped with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least three feature rows")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    total = float(np.trace(cov))
    floor = 1e-12 * max(total, 1e-300)
    comps, variances = [], []
    work = cov.copy()
    for _ in range(min(k, x.shape[1])):
        col = int(np.argmax(np.linalg.norm(work, axis=0)))
        v = work[:, col].copy()
        if np.linalg.norm(v) <= floor:
            break
        v = _orient(v / np.linalg.norm(v))
        for _ in range(MAX_ITER):
            w = work @ v
            for prev in comps:
                w -= (prev @ w) * prev
            nrm = np.linalg.norm(w)
            if nrm <= floor:
                break
            w = _orient(w / nrm)
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        else:
            log.warning("power iteration stopped before reaching tolerance %g", tol)
        lam = float(v @ cov @ v)
        if lam <= floor:
            break
        comps.append(v)
        variances.append(lam)
        work = work - lam * np.outer(v, v)
    if len(comps) < k:
        log.warning("input has rank below %d: returning %d component(s)", k, len(comps))
    comp = np.array(comps).reshape(len(comps), x.shape[1])
    return PCAResult(mean, comp, np.array(variances), xc @ comp.T, total)
