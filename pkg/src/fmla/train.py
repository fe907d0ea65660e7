"""Adam optimisation loop, accuracy evaluation and metrics logging."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import TimeSeriesDataset
from .errors import DataError, NumericError
from .model import FMLAModel
from .tensor import Tensor

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "loss1", "loss2", "loss3", "total", "train_acc", "test_acc", "ms"]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 500
    eval_every: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    f32_weights: bool = True
    wall_clock: bool = False


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, f32_weights: bool = False) -> None:
    """Bias-corrected Adam update in place. Parameters without a gradient are skipped.

    With ``f32_weights`` every updated value is rounded to the nearest float32,
    so checkpoints (stored as float32) reproduce the live model exactly.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if f32_weights:
            p.data[...] = p.data.astype(np.float32)


@dataclass
class EpochRow:
    epoch: int
    loss1: float
    loss2: float
    loss3: float
    total: float
    train_acc: float
    test_acc: float
    ms: float

    def as_csv(self, wall_clock: bool = True) -> list[str]:
        ms = f"{self.ms:.0f}" if wall_clock else "0"
        return [str(self.epoch), repr(self.loss1), repr(self.loss2), repr(self.loss3), repr(self.total),
                f"{self.train_acc:.6f}", "nan" if math.isnan(self.test_acc) else f"{self.test_acc:.6f}", ms]


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)

    def append(self, row: EpochRow) -> None:
        self.rows.append(row)

    def write_csv(self, path, wall_clock: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            for row in self.rows:
                writer.writerow(row.as_csv(wall_clock))


def evaluate_accuracy(model: FMLAModel, dataset: TimeSeriesDataset) -> float:
    """Top-1 accuracy of ``predict_labels`` on a labelled split."""
    if len(dataset) == 0:
        raise DataError(f"{dataset.name}: cannot evaluate on an empty split")
    pred = model.predict_labels(dataset.samples)
    return float(np.mean(pred == dataset.labels))


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    order, masks = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(order), np.random.default_rng(masks)


def train_epochs(
    model: FMLAModel,
    train: TimeSeriesDataset,
    config: TrainConfig,
    test: TimeSeriesDataset | None = None,
    on_epoch: Callable[[EpochRow], None] | None = None,
) -> TrainReport:
    """Shuffled mini-batch training. Each report row holds the epoch's
    sample-weighted mean loss terms; ``train_acc`` is measured on the first
    random-mask pass of each batch, ``test_acc`` every ``eval_every`` epochs
    and always after the final epoch (NaN otherwise)."""
    if len(train) == 0:
        raise DataError(f"{train.name}: empty training split")
    order_rng, mask_rng = _streams(config.seed)
    params = model.named_parameters()
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport()
    B = len(train)

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        perm = order_rng.permutation(B)
        sums = np.zeros(3)
        correct = 0
        for lo in range(0, B, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            xb, yb = train.samples[idx], train.labels[idx]
            total, parts, passes = model.forward_train(xb, yb, mask_rng)
            if not math.isfinite(float(total)):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            model.zero_grad()
            total.backward()
            adam_step(params, state, config.f32_weights)
            if config.f32_weights:
                for buf in model.named_buffers().values():
                    buf[...] = buf.astype(np.float32)
            sums += len(idx) * np.array([parts.loss1, parts.loss2, parts.loss3])
            correct += int(np.sum(np.argmax(passes[0].u_sum.data, axis=-1) == yb))
        l1, l2, l3 = (sums / B).tolist()
        last = epoch == config.epochs
        test_acc = math.nan
        if test is not None and (last or (config.eval_every > 0 and epoch % config.eval_every == 0)):
            test_acc = evaluate_accuracy(model, test)
        row = EpochRow(epoch, l1, l2, l3, l1 + l2 + l3, correct / B, test_acc, 1000.0 * (time.perf_counter() - start))
        report.append(row)
        log.info("epoch %d loss=%.5f (%.5f/%.5f/%.5f) train_acc=%.4f test_acc=%.4f",
                 epoch, row.total, l1, l2, l3, row.train_acc, test_acc)
        if on_epoch is not None:
            on_epoch(row)
    return report


def read_numeric_csv(path, header: list[str]) -> list[dict]:
    """Schema check for the package's CSV outputs: exact header, every cell a float."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise DataError(f"{path}: header {reader.fieldnames} != expected {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({k: float(v) for k, v in row.items()})
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {lineno} has a missing or non-numeric cell") from None
        return rows


def read_metrics_csv(path) -> list[dict]:
    return read_numeric_csv(path, METRICS_HEADER)
