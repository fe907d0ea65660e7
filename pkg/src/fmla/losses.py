"""Loss terms: KL divergence, mask self-distillation, DCN->CLA online
distillation, cross entropy and their sum.

Teachers are always detached: gradients flow only into the student
distribution. All KL terms use temperature 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, ValidationError
from .tensor import Tensor, as_tensor, log_clamped, log_softmax_lastdim, mean, mul, sum_

KL_EPS = 1e-9


@dataclass
class LossBreakdown:
    loss1: float
    loss2: float
    loss3: float
    alpha: float = 1.0
    beta: float = 1.0
    N: int = 3

    @property
    def total(self) -> float:
        return total_loss(self)


def total_loss(parts: LossBreakdown) -> float:
    return parts.loss1 + parts.loss2 + parts.loss3


def _check_distribution(x: np.ndarray, what: str) -> None:
    if np.any(x < -1e-12) or np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-6):
        raise ValidationError(f"{what} is not a probability distribution over the last axis")


def kl_divergence(p, q) -> Tensor:
    """KL(p || q) over the last axis with 0 ln 0 = 0 and q clamped at 1e-9.

    ``p`` is treated as a constant teacher; the result keeps the leading axes.
    """
    p_data = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    q = as_tensor(q)
    _check_distribution(p_data, "teacher p")
    _check_distribution(q.data, "student q")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p_data > 0, p_data * np.log(np.where(p_data > 0, p_data, 1.0)), 0.0)
    cross = sum_(mul(log_clamped(q, KL_EPS), p_data), axis=-1)
    return plogp.sum(axis=-1) - cross


def self_distill_loss(random_outputs: Sequence, regular_output, beta: float) -> Tensor:
    """beta * KL(mean of random-mask outputs || regular-mask output), batch-averaged."""
    if len(random_outputs) == 0:
        raise ValidationError("self-distillation needs at least one random-mask output")
    first = random_outputs[0]
    if all(r is first for r in random_outputs):
        teacher = np.array(first.data if isinstance(first, Tensor) else first, dtype=np.float64)
    else:
        teacher = np.mean([r.data if isinstance(r, Tensor) else np.asarray(r) for r in random_outputs], axis=0)
    return mul(mean(kl_divergence(teacher, regular_output)), float(beta))


def online_distill_loss(y_dcn, y_cla, alpha: float) -> Tensor:
    """alpha * KL(y_dcn || y_cla) with the DCN distribution detached."""
    teacher = y_dcn.data if isinstance(y_dcn, Tensor) else np.asarray(y_dcn, dtype=np.float64)
    return mul(mean(kl_divergence(teacher, y_cla)), float(alpha))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -ln softmax(logits)[label]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, K = logits.shape
    if labels.shape[0] != B:
        raise DataError(f"{labels.shape[0]} labels for a batch of {B}")
    bad = np.flatnonzero((labels < 0) | (labels >= K))
    if bad.size:
        raise DataError(f"sample {bad[0]} has label {labels[bad[0]]} outside [0, {K})")
    onehot = np.zeros((B, K))
    onehot[np.arange(B), labels] = 1.0
    return mul(sum_(mul(log_softmax_lastdim(logits), onehot)), -1.0 / B)
