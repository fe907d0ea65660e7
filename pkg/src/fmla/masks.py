"""Position masks: Bernoulli masks while training, fixed-stride masks at inference.

A mask is a boolean vector over sequence positions where ``True`` means the
position is zeroed. Masked activations are not rescaled afterwards; the same
ratio is applied at inference, so both modes see the same expected scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, mul

MODES = ("random", "regular", "off")
_MAX_STRIDE = 64


@dataclass(frozen=True)
class MaskSpec:
    ratio: float = 0.5
    mode: str = "random"
    phase: int = 1
    seed: int = 0
    per_head: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"mask ratio must lie in [0, 1), got {self.ratio}")
        if self.mode not in MODES:
            raise ConfigError(f"mask mode must be one of {MODES}, got {self.mode!r}")
        if self.phase not in (0, 1):
            raise ConfigError(f"regular mask phase must be 0 or 1, got {self.phase}")

    @property
    def active(self) -> bool:
        return self.mode != "off" and self.ratio > 0.0


def sample_random_mask(n: int, ratio: float, rng: np.random.Generator, size: tuple[int, ...] = ()) -> np.ndarray:
    """Mask each position independently with probability ``ratio``.

    ``size`` prepends independent draws, e.g. ``(batch, heads)``.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {ratio}")
    if ratio == 0.0:
        return np.zeros(size + (n,), dtype=bool)
    return rng.random(size + (n,)) < ratio


def _regular_grid(ratio: float) -> tuple[int, bool]:
    """Nearest ratio of the form 1/k (masks one of k) or (k-1)/k (keeps one of k)."""
    best = None
    for k in range(2, _MAX_STRIDE + 1):
        for keep_one, r in ((False, 1.0 / k), (True, (k - 1.0) / k)):
            gap = abs(r - ratio)
            if best is None or gap < best[0] - 1e-15:
                best = (gap, k, keep_one)
    gap, k, keep_one = best
    if gap > 1e-9:
        snapped = (k - 1) / k if keep_one else 1 / k
        warnings.warn(f"regular mask ratio {ratio} rounded to {snapped:.6g}", stacklevel=3)
    return k, keep_one


def build_regular_mask(n: int, ratio: float, phase: int = 1) -> np.ndarray:
    """Fixed-stride mask; at ratio 1/2 phase 1 masks odd indices, phase 0 even ones."""
    if ratio >= 1.0 or ratio < 0.0:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {ratio}")
    if phase not in (0, 1):
        raise ConfigError(f"regular mask phase must be 0 or 1, got {phase}")
    if ratio == 0.0:
        return np.zeros(n, dtype=bool)
    k, keep_one = _regular_grid(ratio)
    t = np.arange(n) % k
    if keep_one:
        return t != (1 - phase)
    return t == phase


def apply_mask(h: Tensor, mask: np.ndarray) -> Tensor:
    """Zero the masked rows of ``h (..., n, f)``; ``mask`` broadcasts over ``(..., n)``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != h.shape[-2]:
        raise DimensionError(f"mask length {mask.shape[-1]} != sequence length {h.shape[-2]}")
    keep = (~mask).astype(np.float64)[..., None]
    return mul(h, keep)


def layer_masks(spec: MaskSpec, n: int, batch: int, heads: int, rng: np.random.Generator | None) -> np.ndarray | None:
    """Masks for one layer, shaped ``(batch, heads or 1, n)``; None when inactive."""
    if not spec.active:
        return None
    if spec.mode == "regular":
        return build_regular_mask(n, spec.ratio, spec.phase)[None, None, :]
    if rng is None:
        raise ConfigError("random masks need an RNG stream")
    width = heads if spec.per_head else 1
    return sample_random_mask(n, spec.ratio, rng, (batch, width))
