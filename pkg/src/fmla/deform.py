"""1-D deformable convolution and the DCN block (deformable conv + BN + ReLU).

Each output position t samples the input at t + (j - r) + offset_j(t) for
taps j = 0..k-1 (r = k // 2). One offset per tap and position is shared by
all input channels. Sampling reads the input zero-padded by r on each side
and clamps to the padded range, so zero offsets reproduce ``conv1d_same``
exactly, borders included, and far-out samples read the padding value. Offsets come from an ordinary zero-initialised
convolution, so a fresh block behaves exactly like a standard convolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, batch_norm, concat, conv1d_same, linear_interp_sample, matmul, parameter, relu


@dataclass
class DcnBlockParams:
    kernel: Tensor          # (c_out, c_in, k)
    offset_kernel: Tensor   # (k, c_in, k)
    offset_bias: Tensor     # (k,)
    bn_gain: Tensor         # (c_out,)
    bn_bias: Tensor         # (c_out,)
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        c_out = self.kernel.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(c_out)
        if self.running_var is None:
            self.running_var = np.ones(c_out)

    @property
    def taps(self) -> int:
        return self.kernel.shape[-1]

    def named_parameters(self):
        yield "kernel", self.kernel
        yield "offset_kernel", self.offset_kernel
        yield "offset_bias", self.offset_bias
        yield "bn_gain", self.bn_gain
        yield "bn_bias", self.bn_bias

    def named_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var


def init_dcn_block(c_in: int, c_out: int, rng: np.random.Generator, kernel_size: int = 3, std: float = 0.02) -> DcnBlockParams:
    k = kernel_size
    return DcnBlockParams(
        kernel=parameter(rng.normal(0.0, std, (c_out, c_in, k))),
        offset_kernel=parameter(np.zeros((k, c_in, k))),
        offset_bias=parameter(np.zeros(k)),
        bn_gain=parameter(np.ones(c_out)),
        bn_bias=parameter(np.zeros(c_out)),
    )


def predict_offsets(x: Tensor, p: DcnBlockParams) -> Tensor:
    """Offsets ``(..., k, n)``: one real shift per kernel tap and output position."""
    return conv1d_same(x, p.offset_kernel, bias=p.offset_bias)


def deform_conv1d(x: Tensor, offsets: Tensor, kernel: Tensor) -> Tensor:
    """out[o, t] = sum_{i, j} kernel[o, i, j] * x_i(t + j - r + offsets[j, t])."""
    c_in, n = x.shape[-2], x.shape[-1]
    c_out, kc_in, k = kernel.shape
    if kc_in != c_in:
        raise DimensionError(f"kernel {kernel.shape} does not match input channels {c_in}")
    if offsets.shape[-2:] != (k, n) or offsets.shape[:-2] != x.shape[:-2]:
        raise DimensionError(f"offsets {offsets.shape} must be (..., {k}, {n}) for input {x.shape}")
    lead = x.shape[:-2]
    r = k // 2
    if r:
        zeros = Tensor(np.zeros(lead + (c_in, r)))
        x = concat([zeros, x, zeros], axis=-1)
    base = (np.arange(n)[None, :] + np.arange(k)[:, None]).astype(np.float64)
    pos = (offsets + base).reshape(lead + (k * n,))
    sampled = linear_interp_sample(x, pos).reshape(lead + (c_in * k, n))
    return matmul(kernel.reshape(c_out, c_in * k), sampled)


def dcn_block_forward(x: Tensor, p: DcnBlockParams, training: bool) -> Tensor:
    """ReLU(BatchNorm(deformable conv)). Before any training batch, eval mode
    normalises with the initial running stats (mean 0, variance 1)."""
    h = deform_conv1d(x, predict_offsets(x, p), p.kernel)
    h = batch_norm(h, p.bn_gain, p.bn_bias, p.running_mean, p.running_var, training)
    return relu(h)
