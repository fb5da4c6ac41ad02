"""
Training: weighted cross-entropy, exponentially decayed plain SGD, seeded batch
sampling with optional rotation augmentation, and stratified fold splitting.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, ShapeError, ValidationError
from model import Model
from preprocess import Augmenter, PreprocessConfig, Volume, VolumeKind, prepare_case
from tensor import Parameter, Tensor, from_op

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    lr0: float = 0.01
    decay: float = 0.9997
    iterations: int = 1500
    # weight of the abnormal class in the loss
    lam: float = 0.7
    seed: int = 0
    augment: bool = True
    log_every: int = 100

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not 0 < self.lam < 1:
            raise ConfigError(f"lam must lie in (0, 1), got {self.lam}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    case_id: str
    image: Volume
    mask: Volume
    z: int
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.image.dims != self.mask.dims:
            raise ShapeError(f"{self.case_id}: image {self.image.dims} and mask {self.mask.dims} differ")
        if self.mask.kind is not VolumeKind.MASK:
            raise ValidationError(f"{self.case_id}: mask volume is not of mask kind")
        if self.z not in (0, 1):
            raise ValidationError(f"{self.case_id}: label must be 0 or 1, got {self.z}")


@dataclass(frozen=True)
class FoldSplit:
    folds: Tuple[Tuple[int, ...], ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def test_indices(self, fold: int) -> List[int]:
        return list(self.folds[fold])

    def train_indices(self, fold: int) -> List[int]:
        return sorted(i for j, f in enumerate(self.folds) if j != fold for i in f)

    def to_dict(self) -> Dict[str, Any]:
        return {"folds": [list(f) for f in self.folds]}


@dataclass
class TrainResult:
    model: Model
    losses: List[float]
    lrs: List[float]


def weighted_bce(p: Tensor, z: Sequence[int], lam: float) -> Tensor:
    """
    Batch mean of -lam * z * log(p) - (1 - lam) * (1 - z) * log(1 - p),
    with p clamped to [1e-7, 1 - 1e-7].
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if p.ndim != 2 or p.shape[1] != 1 or p.shape[0] != z.shape[0]:
        raise ShapeError(f"weighted_bce: probabilities {p.shape} vs labels {z.shape}")
    batch = z.shape[0]
    probs = np.clip(p.data[:, 0].astype(np.float64), PROB_EPS, 1.0 - PROB_EPS)
    per_sample = -lam * z * np.log(probs) - (1.0 - lam) * (1.0 - z) * np.log(1.0 - probs)
    loss = np.asarray(per_sample.mean())

    def backward(g: np.ndarray):
        dp = (-lam * z / probs + (1.0 - lam) * (1.0 - z) / (1.0 - probs)) / batch
        return ((float(g) * dp).reshape(-1, 1),)

    return from_op(loss, (p,), backward, "weighted_bce")


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < 0:
        raise ValidationError(f"iteration must be >= 0, got {iteration}")
    return config.lr0 * config.decay ** iteration


def sgd_step(parameters: Sequence[Parameter], lr: float) -> None:
    for param in parameters:
        grad = param.tensor.grad
        if grad is None:
            continue
        param.tensor.data -= (lr * grad).astype(param.tensor.data.dtype, copy=False)


def prepare_samples(samples: Sequence[Sample], out_side: int, cfg: PreprocessConfig) -> List[Sample]:
    """ROI crop, resample to an out_side cube and HU-normalize every case."""
    prepared = []
    for s in samples:
        image, mask = prepare_case(s.image, s.mask, out_side, cfg, case_id=s.case_id)
        prepared.append(Sample(s.case_id, image, mask, s.z, dict(s.meta)))
    return prepared


def stack_arrays(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """[N, 1, D, H, W] masks and images plus the label vector."""
    masks = np.stack([s.mask.data for s in samples])[:, None]
    images = np.stack([s.image.data for s in samples])[:, None]
    z = np.asarray([s.z for s in samples], dtype=np.int64)
    return masks, images, z


def stack_batch(
    samples: Sequence[Sample],
    indices: Sequence[int],
    augmenter: Optional[Augmenter],
    rng: np.random.Generator,
) -> Tuple[Tensor, Tensor, np.ndarray]:
    masks, images, labels = [], [], []
    for i in indices:
        sample = samples[int(i)]
        image, mask = sample.image.data, sample.mask.data
        if augmenter is not None:
            # one shared rotation for image and mask
            image, mask = augmenter.draw(image, mask, rng)
        masks.append(mask)
        images.append(image)
        labels.append(sample.z)
    return (
        Tensor(np.stack(masks)[:, None]),
        Tensor(np.stack(images)[:, None]),
        np.asarray(labels, dtype=np.int64),
    )


def train_model(
    model: Model,
    data: Sequence[Sample],
    config: TrainConfig,
    augmenter: Optional[Augmenter] = None,
    tag: str = "",
) -> TrainResult:
    """
    Plain SGD for `config.iterations` steps. Each step samples a batch uniformly
    with replacement, optionally rotates every sample, and updates every
    parameter with lr_at(step). The run is a pure function of the initial
    weights, the data and the config.
    """
    config.validate()
    if not data:
        raise ValidationError("train_model needs at least one sample")
    labels = {s.z for s in data}
    if len(labels) < 2:
        logger.warning(f"[train] ⚠️ {tag or model.name}: training data holds a single class ({labels.pop()})")
    if config.augment and augmenter is None:
        augmenter = Augmenter()
    if not config.augment:
        augmenter = None

    rng = np.random.default_rng(config.seed)
    losses: List[float] = []
    lrs: List[float] = []
    model.train()
    model.zero_grad()
    for step in range(config.iterations):
        indices = rng.integers(0, len(data), size=config.batch_size)
        masks, images, z = stack_batch(data, indices, augmenter, rng)
        loss = weighted_bce(model.forward(masks, images), z, config.lam)
        loss.backward()
        lr = lr_at(step, config)
        sgd_step(model.parameters(), lr)
        model.zero_grad()

        losses.append(loss.item())
        lrs.append(lr)
        if logger.isEnabledFor(logging.DEBUG) or (step + 1) % config.log_every == 0:
            recent = float(np.mean(losses[-config.log_every:]))
            logger.info(f"[train] {tag or model.name} step {step + 1}/{config.iterations} lr={lr:.3e} loss={recent:.4f}")
    return TrainResult(model=model, losses=losses, lrs=lrs)


def make_folds(samples: Sequence[Any], k: int = 4, seed: int = 0) -> FoldSplit:
    """
    Stratified split: each class is shuffled and dealt into k nearly equal
    parts (the first folds take the remainder).
    """
    labels = np.asarray([s.z if hasattr(s, "z") else int(s) for s in samples], dtype=np.int64)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    classes = [np.flatnonzero(labels == c) for c in (0, 1)]
    smallest = min(len(c) for c in classes)
    if k > smallest:
        raise ValidationError(f"cannot split into {k} folds: smallest class has {smallest} case(s)")
    rng = np.random.default_rng(seed)
    folds: List[List[int]] = [[] for _ in range(k)]
    for members in classes:
        shuffled = rng.permutation(members)
        for fold, part in enumerate(np.array_split(shuffled, k)):
            folds[fold].extend(int(i) for i in part)
    return FoldSplit(tuple(tuple(sorted(f)) for f in folds))
