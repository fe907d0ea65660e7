"""Dual-stream FMLA classifier.

The DCN stream consumes the raw series ``(B, 1, n)`` through chained
deformable blocks; the CLA stream consumes a lifted, position-encoded copy
``(B, n, d)``. Block l of the CLA stream takes its compression maps from DCN
block l. Each stream ends in global average pooling and its own linear head;
the prediction uses the summed logits.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .attention import ClaBlockParams, fmla_block_forward, init_cla_block
from .deform import DcnBlockParams, dcn_block_forward, init_dcn_block
from .errors import ConfigError, DataError
from .losses import LossBreakdown, cross_entropy_loss, online_distill_loss, self_distill_loss
from .masks import MaskSpec, layer_masks
from .tensor import Tensor, layer_norm, matmul, mean, no_grad, parameter, softmax_lastdim

PLACEMENTS = ("heads", "block")


@dataclass
class ModelConfig:
    num_blocks: int = 4
    d: int = 64
    num_heads: int = 4
    C: int = 16
    dcn_channels: tuple[int, ...] = (128, 128, 64, 64)
    kernel_size: int = 3
    mask_ratio: float = 0.5
    mask_phase: int = 1
    mask_per_head: bool = True
    mask_placement: str = "heads"
    self_distill_n: int = 3
    alpha: float = 1.0
    beta: float = 1.0
    num_classes: int = 2
    seq_len: int = 128
    ffn_expansion: int = 4
    pool_residual: bool = True
    pool_kernel: int = 3
    normalize_maps: bool = False
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.dcn_channels = tuple(int(c) for c in self.dcn_channels)
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} not divisible by num_heads={self.num_heads}")
        if len(self.dcn_channels) != self.num_blocks:
            raise ConfigError(f"dcn_channels has {len(self.dcn_channels)} entries for {self.num_blocks} blocks")
        for c in self.dcn_channels:
            if c < 1 or c % self.num_heads:
                raise ConfigError(f"DCN channel count {c} not divisible by num_heads={self.num_heads}")
        if self.kernel_size % 2 == 0 or self.pool_kernel % 2 == 0:
            raise ConfigError("kernel_size and pool_kernel must be odd")
        if self.C < 1 or self.num_classes < 1 or self.seq_len < 1:
            raise ConfigError("C, num_classes and seq_len must be positive")
        if self.self_distill_n < 1:
            raise ConfigError("self_distill_n must be >= 1")
        if self.mask_placement not in PLACEMENTS:
            raise ConfigError(f"mask_placement must be one of {PLACEMENTS}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if not 0 <= self.seed < 2**24:
            raise ConfigError("seed must lie in [0, 2**24)")
        MaskSpec(ratio=self.mask_ratio, phase=self.mask_phase)

    @property
    def head_dim(self) -> int:
        return self.d // self.num_heads

    def mask_spec(self, mode: str) -> MaskSpec:
        return MaskSpec(self.mask_ratio, mode, self.mask_phase, self.seed, self.mask_per_head)

    def to_dict(self) -> dict:
        return asdict(self)


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]


@dataclass
class BranchOutputs:
    u_dcn: Tensor
    u_cla: Tensor
    u_sum: Tensor
    y_dcn: Tensor = field(init=False)
    y_cla: Tensor = field(init=False)
    y_hat: Tensor = field(init=False)

    def __post_init__(self):
        self.y_dcn = softmax_lastdim(self.u_dcn)
        self.y_cla = softmax_lastdim(self.u_cla)
        self.y_hat = softmax_lastdim(self.u_sum)


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Fixed sinusoidal table ``(n, d)``: sin on even features, cos on odd ones."""
    pos = np.arange(n)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: d // 2])
    return pe


class FMLAModel:
    def __init__(self, config: ModelConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        std = cfg.init_std
        self.stem_weight = parameter(rng.normal(0.0, 1.0, cfg.d))
        self.stem_bias = parameter(np.zeros(cfg.d))
        self.dcn: list[DcnBlockParams] = []
        self.cla: list[ClaBlockParams] = []
        c_in = 1
        for c_out in cfg.dcn_channels:
            self.dcn.append(init_dcn_block(c_in, c_out, rng, cfg.kernel_size, std))
            self.cla.append(init_cla_block(cfg.d, cfg.num_heads, cfg.C, c_out, rng, cfg.ffn_expansion, std))
            c_in = c_out
        self.norm_gain = parameter(np.ones(cfg.d))
        self.norm_bias = parameter(np.zeros(cfg.d))
        self.head_dcn_weight = parameter(rng.normal(0.0, std, (cfg.dcn_channels[-1], cfg.num_classes)))
        self.head_dcn_bias = parameter(np.zeros(cfg.num_classes))
        self.head_cla_weight = parameter(rng.normal(0.0, std, (cfg.d, cfg.num_classes)))
        self.head_cla_bias = parameter(np.zeros(cfg.num_classes))
        self._pe: dict[int, np.ndarray] = {}
        for name, t in self.named_parameters().items():
            t.name = name

    # -- parameter bookkeeping ---------------------------------------------------
    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        out["stem.weight"] = self.stem_weight
        out["stem.bias"] = self.stem_bias
        for i, (dp, cp) in enumerate(zip(self.dcn, self.cla)):
            for name, t in dp.named_parameters():
                out[f"dcn.{i}.{name}"] = t
            for name, t in cp.named_parameters():
                out[f"cla.{i}.{name}"] = t
        out["norm.gain"] = self.norm_gain
        out["norm.bias"] = self.norm_bias
        out["head_dcn.weight"] = self.head_dcn_weight
        out["head_dcn.bias"] = self.head_dcn_bias
        out["head_cla.weight"] = self.head_cla_weight
        out["head_cla.bias"] = self.head_cla_bias
        return out

    def named_buffers(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for i, dp in enumerate(self.dcn):
            for name, arr in dp.named_buffers():
                out[f"dcn.{i}.{name}"] = arr
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward pieces --------------------------------------------------------------
    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise DataError(f"expected a (batch, length) array of series, got shape {x.shape}")
        if x.shape[1] != self.config.seq_len:
            raise DataError(f"series length {x.shape[1]} does not match configured seq_len {self.config.seq_len}")
        if not np.all(np.isfinite(x)):
            raise DataError("input series contain non-finite values")
        return x

    def embed(self, x: np.ndarray) -> Tensor:
        """Pointwise lift 1 -> d plus the fixed positional table: ``(B, n, d)``."""
        n = x.shape[-1]
        if n not in self._pe:
            self._pe[n] = positional_encoding(n, self.config.d)
        lifted = matmul(Tensor(x[..., None]), self.stem_weight.reshape(1, self.config.d))
        return lifted + self.stem_bias + self._pe[n]

    def dcn_forward(self, x: np.ndarray, training: bool) -> tuple[list[Tensor], Tensor]:
        h = Tensor(x[:, None, :])
        feats = []
        for dp in self.dcn:
            h = dcn_block_forward(h, dp, training)
            feats.append(h)
        u_dcn = matmul(mean(h, axis=-1), self.head_dcn_weight) + self.head_dcn_bias
        return feats, u_dcn

    def cla_forward(self, s: Tensor, feats: list[Tensor], masks: list | None) -> Tensor:
        cfg = self.config
        for i, (cp, h_dcn) in enumerate(zip(self.cla, feats)):
            s = fmla_block_forward(
                s,
                h_dcn,
                cp,
                None if masks is None else masks[i],
                mask_placement=cfg.mask_placement,
                pool_residual=cfg.pool_residual,
                pool_kernel=cfg.pool_kernel,
                normalize_maps=cfg.normalize_maps,
            )
        pooled = mean(layer_norm(s, self.norm_gain, self.norm_bias), axis=-2)
        return matmul(pooled, self.head_cla_weight) + self.head_cla_bias

    def _masks(self, mode: str, n: int, batch: int, rng) -> list | None:
        spec = self.config.mask_spec(mode)
        if not spec.active:
            return None
        return [layer_masks(spec, n, batch, self.config.num_heads, rng) for _ in self.cla]

    # -- public forwards -------------------------------------------------------------
    def forward_eval(self, x) -> BranchOutputs:
        """Inference: regular masks, running BN statistics, no tape."""
        x = self._as_batch(x)
        with no_grad():
            feats, u_dcn = self.dcn_forward(x, training=False)
            u_cla = self.cla_forward(self.embed(x), feats, self._masks("regular", x.shape[1], x.shape[0], None))
            return BranchOutputs(u_dcn, u_cla, u_dcn + u_cla)

    def forward_train(
        self, x, labels, rng: np.random.Generator, teachers: "Teachers | None" = None
    ) -> tuple[Tensor, LossBreakdown, list[BranchOutputs]]:
        """N random-mask passes plus one regular-mask pass; returns the total loss tensor.

        The DCN stream carries no masks, so it runs once per call and all
        passes share its features (and its single batch-norm update).
        ``teachers`` replaces the live (detached) teacher distributions with
        fixed arrays, which makes the loss a function whose exact derivative
        is the stop-gradient derivative (used by finite-difference checks).
        """
        cfg = self.config
        x = self._as_batch(x)
        B, n = x.shape
        feats, u_dcn = self.dcn_forward(x, training=True)
        s = self.embed(x)
        masks_on = cfg.mask_spec("random").active

        if masks_on:
            passes = []
            for _ in range(cfg.self_distill_n):
                u = self.cla_forward(s, feats, self._masks("random", n, B, rng))
                passes.append(BranchOutputs(u_dcn, u, u_dcn + u))
        else:
            u = self.cla_forward(s, feats, None)
            passes = [BranchOutputs(u_dcn, u, u_dcn + u)] * cfg.self_distill_n

        if cfg.beta > 0:
            if masks_on:
                u = self.cla_forward(s, feats, self._masks("regular", n, B, None))
                regular = BranchOutputs(u_dcn, u, u_dcn + u)
            else:
                regular = passes[0]
            outputs = [p.y_hat for p in passes] if teachers is None else [teachers.self_teacher]
            loss1 = self_distill_loss(outputs, regular.y_hat, cfg.beta)
        else:
            loss1 = Tensor(0.0)

        distinct = _unique(passes)
        if cfg.alpha > 0:
            loss2 = _average([
                online_distill_loss(p.y_dcn if teachers is None else teachers.dcn_teacher, p.y_cla, cfg.alpha)
                for p in distinct
            ])
        else:
            loss2 = Tensor(0.0)
        loss3 = _average([cross_entropy_loss(p.u_sum, labels) for p in distinct])

        total = loss1 + loss2 + loss3
        parts = LossBreakdown(float(loss1), float(loss2), float(loss3), cfg.alpha, cfg.beta, cfg.self_distill_n)
        return total, parts, passes

    def predict_labels(self, x, batch_size: int = 128) -> np.ndarray:
        """argmax of the summed logits; ties resolve to the lower class index."""
        x = self._as_batch(x)
        out = []
        for start in range(0, x.shape[0], batch_size):
            u = self.forward_eval(x[start:start + batch_size]).u_sum.data
            out.append(np.argmax(u, axis=-1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def params_by_module(self) -> "OrderedDict[str, int]":
        table = OrderedDict()
        for name, t in self.named_parameters().items():
            parts = name.split(".")
            key = ".".join(parts[:2]) if parts[0] in ("dcn", "cla") else parts[0]
            table[key] = table.get(key, 0) + t.size
        return table


class Teachers(NamedTuple):
    self_teacher: np.ndarray   # mean random-mask prediction, (B, K)
    dcn_teacher: np.ndarray    # DCN-branch distribution, (B, K)

    @classmethod
    def from_passes(cls, passes: list[BranchOutputs]) -> "Teachers":
        return cls(np.mean([p.y_hat.data for p in passes], axis=0), passes[0].y_dcn.data.copy())


def _unique(items: list) -> list:
    seen, out = set(), []
    for it in items:
        if id(it) not in seen:
            seen.add(id(it))
            out.append(it)
    return out


def _average(terms: list[Tensor]) -> Tensor:
    if len(terms) == 1:
        return terms[0]
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


def count_params(config: ModelConfig) -> int:
    """Trainable scalar count (running BN statistics excluded)."""
    return sum(FMLAModel(config).params_by_module().values())


def params_by_module(config: ModelConfig) -> "OrderedDict[str, int]":
    return FMLAModel(config).params_by_module()
