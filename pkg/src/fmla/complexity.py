"""Analytic cost model: multiply-accumulate counts and parameter counts.

One multiply-accumulate counts as one FLOP. Elementwise work that the
accounting treats as minor (activations, normalisation, softmax
exponentials) is left out except where listed.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import replace
from typing import Iterable

import numpy as np

from .attention import fmla_block_forward
from .deform import dcn_block_forward
from .masks import layer_masks
from .model import FMLAModel, ModelConfig
from .tensor import Tensor, mac_counter, no_grad

CSV_HEADER = ["n", "flops_fmla", "flops_vanilla", "params_fmla"]


def flops_vanilla(n: int, d: int) -> int:
    """One softmax-attention layer: QKV projections, QK^T, softmax, AV, output projection."""
    return 3 * n * d * d + 2 * n * n * d + n * n + n * d * d


def block_flops(config: ModelConfig, n: int, block: int) -> "OrderedDict[str, int]":
    """Itemised MACs of DCN block ``block`` and its paired CLA block."""
    d, C, k = config.d, min(config.C, n), config.kernel_size
    c_out = config.dcn_channels[block]
    c_in = 1 if block == 0 else config.dcn_channels[block - 1]
    return OrderedDict(
        qv_proj=2 * n * d * d,
        comp_maps=n * c_out * C,
        compression=C * n * d,
        key_regen=C * d * d,
        attention=2 * n * C * d + n * C,
        mask=n * d,
        pool_residual=3 * n * d,
        out_proj=n * d * d,
        ffn=2 * config.ffn_expansion * n * d * d,
        dcn=n * k * c_in * c_out,
        offset_net=n * k * c_in * k,
    )


def flops_fmla(config: ModelConfig, n: int) -> "OrderedDict[str, int]":
    """Itemised forward MACs of the whole model at length ``n``; key ``total`` sums them."""
    out = OrderedDict(stem=n * config.d)
    for b in range(config.num_blocks):
        out[f"block{b}"] = sum(block_flops(config, n, b).values())
    out["heads"] = config.num_classes * (config.d + config.dcn_channels[-1])
    out["total"] = sum(out.values())
    return out


def params_table(config: ModelConfig) -> "OrderedDict[str, int]":
    """Trainable parameter count per module (none depends on sequence length)."""
    d, H, C, k, K = config.d, config.num_heads, config.C, config.kernel_size, config.num_classes
    dh = d // H
    hidden = config.ffn_expansion * d
    table = OrderedDict(stem=2 * d)
    c_in = 1
    for b, c_out in enumerate(config.dcn_channels):
        table[f"dcn.{b}"] = c_out * c_in * k + k * c_in * k + k + 2 * c_out
        table[f"cla.{b}"] = (
            d * dh                       # shared query
            + H * dh                     # mix vectors
            + H * d * dh                 # value projections
            + dh * H * dh                # key regeneration
            + H * C * (c_out // H)       # compression-map generator
            + d * d                      # output projection
            + d * hidden + hidden + hidden * d + d
            + 4 * d                      # two layer norms
        )
        c_in = c_out
    table["norm"] = 2 * d
    table["head_dcn"] = config.dcn_channels[-1] * K + K
    table["head_cla"] = d * K + K
    table["total"] = sum(table.values())
    return table


def instrumented_block_macs(config: ModelConfig, n: int, seed: int = 0) -> list[int]:
    """MACs actually executed by each DCN + CLA block pair in one inference
    forward of a single length-``n`` series, counted by the tensor ops."""
    model = FMLAModel(replace(config, seq_len=n))
    x = np.random.default_rng(seed).normal(size=(1, n))
    mask = layer_masks(config.mask_spec("regular"), n, 1, config.num_heads, None)
    counts = []
    with no_grad():
        h, s = Tensor(x[:, None, :]), model.embed(x)
        for dp, cp in zip(model.dcn, model.cla):
            with mac_counter() as mc:
                h = dcn_block_forward(h, dp, training=False)
                s = fmla_block_forward(s, h, cp, mask, mask_placement=config.mask_placement,
                                       pool_residual=config.pool_residual, pool_kernel=config.pool_kernel,
                                       normalize_maps=config.normalize_maps)
            counts.append(mc.macs)
    return counts


def loglog_slope(ns: Iterable[int], values: Iterable[float]) -> float:
    """Least-squares slope of log(value) against log(n)."""
    x = np.log(np.asarray(list(ns), dtype=np.float64))
    y = np.log(np.asarray(list(values), dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def complexity_rows(config: ModelConfig, ns: Iterable[int]) -> list[dict]:
    """One row per length. The vanilla column counts one attention layer per block."""
    params = params_table(config)["total"]
    return [
        dict(n=n, flops_fmla=flops_fmla(config, n)["total"],
             flops_vanilla=config.num_blocks * flops_vanilla(n, config.d), params_fmla=params)
        for n in ns
    ]


def write_complexity_csv(config: ModelConfig, ns: Iterable[int], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(complexity_rows(config, ns))
