"""Whole-model finite-difference gradient verification."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .model import FMLAModel, ModelConfig, Teachers
from .tensor import Tensor, _node, gradient_errors, sum_

TOLERANCE = 1e-4


@dataclass
class GradcheckReport:
    errors: "OrderedDict[str, float]"    # parameter name -> worst relative error

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)

    def by_module(self) -> "OrderedDict[str, float]":
        out = OrderedDict()
        for name, err in self.errors.items():
            parts = name.split(".")
            key = ".".join(parts[:2]) if parts[0] in ("dcn", "cla") else parts[0]
            out[key] = max(out.get(key, 0.0), err)
        return out

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def randomize(model: FMLAModel, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Move every parameter off its structured init (zero offsets sit on the
    sampling lattice, where position gradients are one-sided)."""
    for p in model.parameters():
        p.data += rng.normal(0.0, scale, p.shape)


def _faulty_square_sum(t: Tensor) -> Tensor:
    # backward deliberately off by a factor of 2
    return _node(np.array((t.data**2).sum()), (t,), lambda g: (g * t.data,))


def run_gradcheck(config: ModelConfig, batch: int = 2, seed: int = 0, step: float = 1e-5,
                  inject_fault: bool = False) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    model = FMLAModel(config)
    randomize(model, rng)
    x = rng.normal(size=(batch, config.seq_len))
    y = rng.integers(0, config.num_classes, batch)
    params = model.named_parameters()
    victim = next(iter(params.values()))

    _, _, passes = model.forward_train(x, y, np.random.default_rng(seed + 1))
    teachers = Teachers.from_passes(passes)

    def loss():
        total, _, _ = model.forward_train(x, y, np.random.default_rng(seed + 1), teachers)
        if inject_fault:
            total = total + _faulty_square_sum(victim)
        return total

    errs = gradient_errors(loss, list(params.values()), step)
    return GradcheckReport(OrderedDict(zip(params.keys(), errs)))
