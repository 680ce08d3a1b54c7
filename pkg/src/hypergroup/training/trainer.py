"""Adam optimization of per-ray features against per-image forests."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import lorentz as lz
from ..hierarchy.trees import HierForest
from .losses import (
    TERMS,
    Batch,
    LossConfig,
    NumericalError,
    TrainableEmbedding,
    compute_leaf_prototypes,
    loss_and_grad,
    sample_lca_triplets,
)

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    steps: int = 2000
    batch_size: int = 512
    lr_init: float = 1e-3
    lr_final: float = 1e-4
    warmup_steps: int = 1000
    weight_decay: float = 1e-6
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("steps, batch_size and warmup_steps must be nonnegative (batch_size positive)")
        if not (self.lr_init > 0 and self.lr_final > 0):
            raise ValueError("learning rates must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def learning_rate(self, step: int) -> float:
        """Linear warmup to ``lr_init``, then log-linear decay to ``lr_final``
        at the last step."""
        if step < self.warmup_steps:
            return self.lr_init * (step + 1) / self.warmup_steps
        span = max(self.steps - self.warmup_steps - 1, 1)
        t = min((step - self.warmup_steps) / span, 1.0)
        return math.exp(math.log(self.lr_init) * (1 - t) + math.log(self.lr_final) * t)

    @classmethod
    def from_dict(cls, d: dict) -> Schedule:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias correction; weight decay is added to the (clipped)
    gradient before the moment updates."""

    def __init__(self, shape, schedule: Schedule):
        self.s = schedule
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        s = self.s
        norm = float(np.linalg.norm(grad))
        if norm > s.clip_norm:
            grad = grad * (s.clip_norm / (norm + 1e-6))
        if s.weight_decay:
            grad = grad + s.weight_decay * params
        self.t += 1
        self.m = s.beta1 * self.m + (1 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1 - s.beta2) * grad * grad
        m_hat = self.m / (1 - s.beta1**self.t)
        v_hat = self.v / (1 - s.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + s.eps)


@dataclass
class ImageRays:
    """Labeled rays of one image: ray ids into the embedding table and the
    forest leaf each one falls in."""

    forest: HierForest
    ray_ids: np.ndarray
    leaf_labels: np.ndarray

    def __post_init__(self):
        self.ray_ids = np.asarray(self.ray_ids, dtype=np.int64)
        self.leaf_labels = np.asarray(self.leaf_labels, dtype=np.int64)
        if self.ray_ids.shape != self.leaf_labels.shape or self.ray_ids.size == 0:
            raise ValueError("an image needs matching, nonempty ray ids and labels")


@dataclass
class TrainResult:
    embedding: TrainableEmbedding
    history: list[dict] = field(default_factory=list)


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


HISTORY_COLUMNS = ("step", "total") + TERMS


def draw_batch(image: ImageRays, batch_size: int, n_triplets: int, rng: np.random.Generator) -> Batch:
    n = image.ray_ids.size
    pick = np.sort(rng.choice(n, size=min(batch_size, n), replace=False))
    labels = image.leaf_labels[pick]
    triplets = sample_lca_triplets(image.forest, np.unique(labels), n_triplets, rng)
    return Batch(image.ray_ids[pick], labels, image.forest, triplets)


def train(
    embedding: TrainableEmbedding,
    images: list[ImageRays],
    schedule: Schedule,
    config: LossConfig,
    rng_seed: int,
) -> TrainResult:
    """Optimize a copy of ``embedding``; each step draws rays from one image.

    Raises ``TrainingDiverged`` (carrying the history so far) when the loss
    or its gradient stops being finite.
    """
    if not images:
        raise ValueError("no training images")
    if abs(config.curvature - embedding.curvature) > 0:
        raise ValueError("loss curvature differs from the embedding curvature")
    rng = np.random.default_rng(rng_seed)
    U = embedding.U.copy()
    opt = Adam(U.shape, schedule)
    history: list[dict] = []
    for step in range(schedule.steps):
        image = images[int(rng.integers(len(images)))]
        batch = draw_batch(image, schedule.batch_size, config.triplets_per_step, rng)
        try:
            res = loss_and_grad(batch, U, config)
        except NumericalError as exc:
            raise TrainingDiverged(f"step {step}: {exc}", history) from exc
        if not math.isfinite(res.total):
            raise TrainingDiverged(f"step {step}: loss is not finite", history)
        history.append({"step": step, "total": res.total, **res.terms})
        U = opt.step(U, res.grad, schedule.learning_rate(step))
        if not np.all(np.isfinite(U)):
            raise TrainingDiverged(f"step {step}: parameters are not finite", history)
        if step % 500 == 0:
            log.debug("step %d loss %.6f", step, res.total)
    return TrainResult(TrainableEmbedding(U, embedding.curvature), history)


def nearest_prototype_accuracy(embedding: TrainableEmbedding, image: ImageRays) -> float:
    """Fraction of rays whose geodesically nearest leaf prototype (built from
    all of the image's rays) is their own leaf."""
    batch = Batch(image.ray_ids, image.leaf_labels, image.forest)
    protos = compute_leaf_prototypes(batch, embedding)
    keys = sorted(protos)
    p = np.stack([protos[k] for k in keys])
    s = embedding.points(image.ray_ids)
    d = lz.geodesic_distance(s[:, None, :], p[None, :, :], embedding.curvature, check=False)
    pred = np.asarray(keys)[np.argmin(d, axis=1)]
    return float(np.mean(pred == image.leaf_labels))
