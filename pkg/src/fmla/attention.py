"""Collaborative linear attention (CLA) guided by the paired DCN block.

Shapes use ``B`` for any leading batch axes, ``H`` heads of width ``dh``,
model width ``d = H * dh`` and compressed length ``Ce = min(C, n)``:

* compression maps  F      (B, H, Ce, n)   grouped 1x1 conv over DCN features
* compressed values Vbar   (B, H, Ce, dh)  F_i @ (s @ Wv_i)
* shared key        Khat   (B, Ce, dh)     1x1 conv over the concatenated Vbar_i
* queries           Q      (B, H, n, dh)   (s @ Wq) scaled by the mix vector m_i
* attention         A      (B, H, n, Ce)   softmax(Q Khat^T / sqrt(dh))

Attention therefore costs O(n * Ce * d) and never forms an n x n matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .masks import apply_mask
from .tensor import (
    Tensor,
    avg_pool_same,
    conv1d_same,
    gelu,
    layer_norm,
    matmul,
    mul,
    parameter,
    softmax_lastdim,
)


@dataclass
class ClaBlockParams:
    query: Tensor      # (d, dh)  shared query projection
    mix: Tensor        # (H, dh)  row i is the mix vector m_i
    value: Tensor      # (H, d, dh)
    key_conv: Tensor   # (dh, H * dh, 1)
    comp_gen: Tensor   # (H * C, c_dcn / H, 1), grouped by head
    out_proj: Tensor   # (d, d)
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @property
    def heads(self) -> int:
        return self.mix.shape[0]

    @property
    def head_dim(self) -> int:
        return self.mix.shape[1]

    @property
    def compressed_len(self) -> int:
        return self.comp_gen.shape[0] // self.heads

    def named_parameters(self):
        for name in self.__dataclass_fields__:
            yield name, getattr(self, name)


def init_cla_block(
    d: int,
    heads: int,
    compressed_len: int,
    dcn_channels: int,
    rng: np.random.Generator,
    ffn_expansion: int = 4,
    std: float = 0.02,
) -> ClaBlockParams:
    if d % heads:
        raise ConfigError(f"model width {d} not divisible by {heads} heads")
    if dcn_channels % heads:
        raise ConfigError(f"DCN channels {dcn_channels} not divisible by {heads} heads")
    dh = d // heads
    hidden = ffn_expansion * d

    def normal(*shape):
        return parameter(rng.normal(0.0, std, shape))

    return ClaBlockParams(
        query=normal(d, dh),
        mix=parameter(np.ones((heads, dh))),
        value=normal(heads, d, dh),
        key_conv=normal(dh, heads * dh, 1),
        comp_gen=normal(heads * compressed_len, dcn_channels // heads, 1),
        out_proj=normal(d, d),
        ffn_w1=normal(d, hidden),
        ffn_b1=parameter(np.zeros(hidden)),
        ffn_w2=normal(hidden, d),
        ffn_b2=parameter(np.zeros(d)),
        ln1_gain=parameter(np.ones(d)),
        ln1_bias=parameter(np.zeros(d)),
        ln2_gain=parameter(np.ones(d)),
        ln2_bias=parameter(np.zeros(d)),
    )


def gen_compression_maps(h_dcn: Tensor, p: ClaBlockParams, normalize: bool = False) -> Tensor:
    """Per-head compression maps ``(B, H, Ce, n)`` from DCN features ``(B, c_dcn, n)``.

    Head i reads only DCN channel group i. With ``normalize`` each compressed
    row becomes a convex combination over positions (softmax over n).
    """
    heads, C = p.heads, p.compressed_len
    c_dcn, n = h_dcn.shape[-2], h_dcn.shape[-1]
    if c_dcn % heads:
        raise ConfigError(f"DCN channels {c_dcn} not divisible by {heads} heads")
    ce = min(C, n)
    F = conv1d_same(h_dcn, p.comp_gen, groups=heads)
    F = F.reshape(h_dcn.shape[:-2] + (heads, C, n))
    if ce < C:
        F = F[..., :ce, :]
    if normalize:
        F = softmax_lastdim(F)
    return F


def compress_values(s: Tensor, F: Tensor, value: Tensor) -> Tensor:
    """Vbar_i = F_i (s Wv_i); ``s (B, n, d)``, ``F (B, H, Ce, n)``, ``value (H, d, dh)``."""
    if F.shape[-1] != s.shape[-2] or value.shape[-2] != s.shape[-1]:
        raise DimensionError(f"incompatible shapes s={s.shape}, F={F.shape}, value={value.shape}")
    v = matmul(s.reshape(s.shape[:-2] + (1,) + s.shape[-2:]), value)
    return matmul(F, v)


def regenerate_key(vbar: Tensor, key_conv: Tensor) -> Tensor:
    """Shared key ``(B, Ce, dh)``: kernel-1 conv over the head-concatenated Vbar rows."""
    heads, ce, dh = vbar.shape[-3:]
    lead = vbar.shape[:-3]
    cat = vbar.swapaxes(-3, -2).reshape(lead + (ce, heads * dh))
    w = key_conv.reshape(key_conv.shape[0], heads * dh).swapaxes(0, 1)
    return matmul(cat, w)


def collab_queries(s_norm: Tensor, p: ClaBlockParams) -> Tensor:
    """Q_i = (s Wq) diag(m_i), stacked to ``(B, H, n, dh)``."""
    q = matmul(s_norm, p.query)
    q = q.reshape(q.shape[:-2] + (1,) + q.shape[-2:])
    return mul(q, p.mix.reshape(p.heads, 1, p.head_dim))


def collab_attention(q: Tensor, khat: Tensor, vbar: Tensor) -> tuple[Tensor, Tensor]:
    """Per-head attention output Hbar ``(B, H, n, dh)`` and maps A ``(B, H, n, Ce)``."""
    dh = q.shape[-1]
    kt = khat.reshape(khat.shape[:-2] + (1,) + khat.shape[-2:]).swapaxes(-1, -2)
    attn = softmax_lastdim(matmul(q, kt) * (1.0 / math.sqrt(dh)))
    return matmul(attn, vbar), attn


def merge_heads_residual(
    hbar: Tensor,
    q: Tensor,
    out_proj: Tensor,
    mask: np.ndarray | None = None,
    pool_residual: bool = True,
    pool_kernel: int = 3,
) -> Tensor:
    """concat_i[mask(Hbar_i + AvgPool(Q_i))] W_O, giving ``(B, n, d)``.

    ``mask`` broadcasts over ``(B, H, n)``.
    """
    h = hbar + avg_pool_same(q, pool_kernel) if pool_residual else hbar
    if mask is not None:
        h = apply_mask(h, mask)
    heads, n, dh = h.shape[-3:]
    cat = h.swapaxes(-3, -2).reshape(h.shape[:-3] + (n, heads * dh))
    return matmul(cat, out_proj)


def cla_attention(
    s_norm: Tensor,
    F: Tensor,
    p: ClaBlockParams,
    mask: np.ndarray | None = None,
    pool_residual: bool = True,
    pool_kernel: int = 3,
) -> Tensor:
    """Attention sublayer given explicit compression maps F."""
    vbar = compress_values(s_norm, F, p.value)
    khat = regenerate_key(vbar, p.key_conv)
    q = collab_queries(s_norm, p)
    hbar, _ = collab_attention(q, khat, vbar)
    return merge_heads_residual(hbar, q, p.out_proj, mask, pool_residual, pool_kernel)


def feed_forward(s: Tensor, p: ClaBlockParams) -> Tensor:
    h = gelu(matmul(s, p.ffn_w1) + p.ffn_b1)
    return matmul(h, p.ffn_w2) + p.ffn_b2


def fmla_block_forward(
    s: Tensor,
    h_dcn: Tensor,
    p: ClaBlockParams,
    mask: np.ndarray | None = None,
    *,
    mask_placement: str = "heads",
    pool_residual: bool = True,
    pool_kernel: int = 3,
    normalize_maps: bool = False,
) -> Tensor:
    """Pre-norm block: s + attention(LN(s)), then s + FFN(LN(s)).

    With ``mask_placement="heads"`` the mask (B, H or 1, n) hits each head
    before concatenation; with ``"block"`` it zeroes rows of the block output.
    """
    F = gen_compression_maps(h_dcn, p, normalize_maps)
    s_norm = layer_norm(s, p.ln1_gain, p.ln1_bias)
    head_mask = mask if mask_placement == "heads" else None
    s = s + cla_attention(s_norm, F, p, head_mask, pool_residual, pool_kernel)
    s = s + feed_forward(layer_norm(s, p.ln2_gain, p.ln2_bias), p)
    if mask is not None and mask_placement == "block":
        s = apply_mask(s, mask[..., 0, :])
    return s
