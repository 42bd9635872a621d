"""
Recall metrics over confusion matrices and trainable-parameter accounting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .nn import Module, count_elements

logger = logging.getLogger(__name__)

PARAMETER_GROUPS = ("positional_embeddings", "prompts", "fusion", "ita", "jam", "mtt", "classifier")


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted classes"""
    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @classmethod
    def from_predictions(cls, truth: Sequence[int], predicted: Sequence[int], num_classes: int) -> "ConfusionMatrix":
        truth, predicted = np.asarray(truth, dtype=np.int64), np.asarray(predicted, dtype=np.int64)
        if truth.shape != predicted.shape:
            raise DimensionError(f"{truth.shape[0]} labels vs {predicted.shape[0]} predictions")
        matrix = cls.empty(num_classes)
        np.add.at(matrix.counts, (truth, predicted), 1)
        return matrix

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


def compute_metrics(cm: ConfusionMatrix) -> tuple[float, float]:
    """
    Unweighted and weighted average recall.

    UAR is the mean recall over classes with non-zero support; WAR is the
    overall accuracy.

    Raises:
        ContractError: If the matrix holds no samples
    """
    counts = np.asarray(cm.counts, dtype=np.int64)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise DimensionError(f"Confusion matrix must be square, got {counts.shape}")
    support = counts.sum(axis=1)
    if support.sum() == 0:
        raise ContractError("Cannot compute recall on an empty confusion matrix")
    present = support > 0
    recalls = np.diag(counts)[present] / support[present]
    uar = float(recalls.mean())
    war = float(np.trace(counts) / support.sum())
    return uar, war


# ============= PARAMETER ACCOUNTING =============

@dataclass
class ParameterBreakdown:
    total: int
    groups: dict[str, int] = field(default_factory=dict)


def parameter_group(name: str) -> str:
    """Accounting group of a trainable parameter path"""
    if name.endswith("pos_embed"):
        return "positional_embeddings"
    if name.startswith(("vision_prompts.", "audio_prompts.")):
        return "prompts"
    if name.startswith("ita.") or ".ita." in name:
        return "ita"
    if name.startswith("fusion."):
        return "fusion"
    if name.startswith("head.jam."):
        return "jam"
    if name.startswith("head.classifier."):
        return "classifier"
    if name.startswith("head."):
        return "mtt"
    raise ContractError(f"Trainable parameter '{name}' belongs to no accounting group")


def count_trainable_params(model: Module) -> ParameterBreakdown:
    """Element count of every trainable parameter, in total and per group"""
    groups = {group: 0 for group in PARAMETER_GROUPS}
    for name, param in model.named_parameters():
        if param.trainable:
            groups[parameter_group(name)] += count_elements([param])
    return ParameterBreakdown(total=sum(groups.values()), groups=groups)
