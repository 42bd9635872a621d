"""
AdamW, the cosine schedule, the training loop and the clip-averaged
evaluation protocol.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from tqdm import tqdm

from .config import ScheduleConfig
from .data_io import SampleRecord, sample_frames
from .errors import ContractError, NumericFailure
from .functional import cross_entropy
from .metrics import ConfusionMatrix
from .model import Batch, MMAModel
from .nn import Module
from .tensor import ComputationTrace, Parameter, backward

logger = logging.getLogger(__name__)


# ============= OPTIMIZER =============

class AdamW:
    """
    Bias-corrected Adam with decoupled weight decay over trainable parameters.

    Moment buffers exist only for the parameters handed in; frozen
    parameters passed by mistake are skipped.
    """

    def __init__(self, params: Sequence[Parameter], betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = [p for p in params if p.trainable]
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {id(p): np.zeros(p.shape, dtype=p.dtype) for p in self.params}
        self.exp_avg_sq = {id(p): np.zeros(p.shape, dtype=p.dtype) for p in self.params}

    @classmethod
    def from_schedule(cls, params: Sequence[Parameter], schedule: ScheduleConfig) -> "AdamW":
        return cls(params, betas=(schedule.beta1, schedule.beta2), eps=schedule.eps,
                   weight_decay=schedule.weight_decay)

    def step(self, lr: float) -> None:
        """
        Apply one update with learning rate ``lr``.

        Raises:
            ContractError: If a trainable parameter has no gradient
        """
        missing = [p.name or repr(p) for p in self.params if p.grad is None]
        if missing:
            raise ContractError(f"No gradient for trainable parameters: {missing[:5]}")

        self.step_count += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1 ** self.step_count
        correction2 = 1.0 - beta2 ** self.step_count
        for p in self.params:
            grad = np.asarray(p.grad, dtype=p.dtype)
            m = beta1 * self.exp_avg[id(p)] + (1.0 - beta1) * grad
            v = beta2 * self.exp_avg_sq[id(p)] + (1.0 - beta2) * grad * grad
            self.exp_avg[id(p)], self.exp_avg_sq[id(p)] = m, v
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = p.data * (1.0 - lr * self.weight_decay) - lr * update


def adamw_step(params: Sequence[Parameter], state: AdamW, lr: float) -> None:
    """Gradients are read from ``param.grad``; ``state`` must own exactly these params"""
    owned = {id(p) for p in state.params}
    stray = [p.name for p in params if p.trainable and id(p) not in owned]
    if stray:
        raise ContractError(f"Optimizer state holds no moments for {stray[:5]}")
    state.step(lr)


def cosine_lr(epoch: float, schedule: ScheduleConfig) -> float:
    """
    0.5 * base_lr * (1 + cos(pi * epoch / epochs)).

    Raises:
        ContractError: If epoch lies outside [0, epochs]
    """
    if not 0 <= epoch <= schedule.epochs:
        raise ContractError(f"Epoch {epoch} is outside [0, {schedule.epochs}]")
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * epoch / schedule.epochs))


# ============= BATCHING =============

def make_batch(records: Sequence[SampleRecord], frames: int, clip: int = 0, clips: int = 1) -> Batch:
    """Stack records; with ``clips=2`` the ``clip``-th two-clip index set is used"""
    videos = []
    for record in records:
        total = record.video.shape[0]
        if clips == 1:
            indices = sample_frames(total, frames, "uniform")
        else:
            indices = sample_frames(total, frames, "two_clip")[clip]
        videos.append(record.video[indices])
    return Batch(
        video=np.stack(videos),
        audio=np.stack([record.audio for record in records]),
        labels=np.array([record.label for record in records], dtype=np.int64),
        ids=[record.id for record in records],
    )


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    batch_losses: list[float] = field(default_factory=list)


def train_epoch(model: MMAModel, records: Sequence[SampleRecord], optimizer: AdamW, schedule: ScheduleConfig,
                epoch: int, seed: int, progress: bool = False) -> EpochStats:
    """
    One shuffled pass (order from ``default_rng([seed, epoch])``) with a
    cross-entropy step per batch at the epoch's cosine learning rate.

    Raises:
        ContractError: If there are no records
        NumericFailure: If a batch loss is not finite
    """
    if not records:
        raise ContractError("Cannot train on an empty dataset")
    lr = cosine_lr(epoch, schedule)
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    frames = model.config.num_frames
    losses = []
    starts = range(0, len(records), schedule.batch_size)
    for batch_id, start in enumerate(tqdm(starts, desc=f"epoch {epoch + 1}", disable=not progress, leave=False)):
        batch = make_batch([records[i] for i in order[start:start + schedule.batch_size]], frames)
        model.zero_grad()
        with ComputationTrace() as trace:
            loss = cross_entropy(model(batch), batch.labels)
        value = loss.item()
        if not np.isfinite(value):
            logger.error(f"❌ Non-finite loss in epoch {epoch + 1}, batch {batch_id}: {value}")
            raise NumericFailure(f"Loss became {value} in epoch {epoch + 1}, batch {batch_id}", batch_id=batch_id)
        backward(trace, loss)
        optimizer.step(lr)
        losses.append(value)
    stats = EpochStats(epoch=epoch, lr=lr, mean_loss=float(np.mean(losses)), batch_losses=losses)
    logger.info(f"Epoch {epoch + 1}/{schedule.epochs}: loss={stats.mean_loss:.4f} lr={lr:.3e}")
    return stats


def fit(model: MMAModel, records: Sequence[SampleRecord], schedule: ScheduleConfig, seed: int,
        progress: bool = False) -> list[EpochStats]:
    optimizer = AdamW.from_schedule(model.trainable_parameters(), schedule)
    return [train_epoch(model, records, optimizer, schedule, epoch, seed, progress)
            for epoch in range(schedule.epochs)]


# ============= EVALUATION =============

def predict_logits(model: MMAModel, records: Sequence[SampleRecord], clips: int = 1,
                   batch_size: int = 8) -> np.ndarray:
    """(N, num_classes) logits, averaged over clips"""
    if clips not in (1, 2):
        raise ContractError(f"clips must be 1 or 2, got {clips}")
    frames = model.config.num_frames
    rows = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        per_clip = [model(make_batch(chunk, frames, clip, clips)).numpy().astype(np.float64)
                    for clip in range(clips)]
        rows.append(np.mean(per_clip, axis=0))
    if not rows:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(rows, axis=0)


def predictions_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index"""
    return np.argmax(logits, axis=-1)


def evaluate(model: MMAModel, records: Sequence[SampleRecord], clips: int = 1,
             batch_size: int = 8) -> ConfusionMatrix:
    logits = predict_logits(model, records, clips, batch_size)
    truth = [record.label for record in records]
    return ConfusionMatrix.from_predictions(truth, predictions_from_logits(logits), model.config.num_classes)


def frozen_digest(model: Module) -> str:
    """SHA-256 over the name and bytes of every frozen parameter"""
    digest = hashlib.sha256()
    for name, param in model.named_parameters():
        if not param.trainable:
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(param.data).tobytes())
    return digest.hexdigest()
