"""Binary checkpoint format.

Layout (little endian)::

    b"FMLA" | u8 version (=1) | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 payload
    u32 CRC32 of every preceding byte

Model configuration travels as rank-1 tensors named ``config.<field>``;
batch-norm running statistics are stored next to the parameters.
"""

from __future__ import annotations

import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ChecksumError, CheckpointError, TruncatedCheckpointError, VersionMismatchError
from .model import PLACEMENTS, FMLAModel, ModelConfig, config_fields

MAGIC = b"FMLA"
VERSION = 1
_CONFIG_PREFIX = "config."


def _encode_config(config: ModelConfig) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    for name, value in config.to_dict().items():
        if name == "mask_placement":
            value = PLACEMENTS.index(value)
        out[_CONFIG_PREFIX + name] = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return out


def _decode_config(entries: dict) -> ModelConfig:
    defaults = ModelConfig()
    kwargs = {}
    for name in config_fields():
        key = _CONFIG_PREFIX + name
        if key not in entries:
            raise CheckpointError(f"checkpoint lacks configuration entry {name!r}")
        arr = entries[key]
        template = getattr(defaults, name)
        if name == "mask_placement":
            kwargs[name] = PLACEMENTS[int(arr[0])]
        elif isinstance(template, tuple):
            kwargs[name] = tuple(int(v) for v in arr)
        elif isinstance(template, bool):
            kwargs[name] = bool(arr[0])
        elif isinstance(template, int):
            kwargs[name] = int(arr[0])
        else:
            kwargs[name] = float(str(np.float32(arr[0])))
    return ModelConfig(**kwargs)


def encode(tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<BI", VERSION, len(tensors))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < len(MAGIC):
        raise TruncatedCheckpointError("file shorter than the magic header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(blob):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(blob)} (needed {pos + count})")
        chunk = blob[pos:pos + count]
        pos += count
        return chunk

    (version,) = struct.unpack("<B", take(1))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads version {VERSION}")
    (count,) = struct.unpack("<I", take(4))
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"tensor name is not UTF-8: {exc}") from None
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        out[name] = arr.astype(np.float64)
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} unexpected trailing bytes")
    if crc != zlib.crc32(blob[:-4]) & 0xFFFFFFFF:
        raise ChecksumError("CRC32 mismatch")
    return out


def save_checkpoint(params: dict, config: ModelConfig, path) -> None:
    """Write ``config`` plus the named arrays (parameters and buffers)."""
    tensors = _encode_config(config)
    for name, value in params.items():
        tensors[name] = np.asarray(getattr(value, "data", value))
    Path(path).write_bytes(encode(tensors))


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", ModelConfig]:
    entries = decode(Path(path).read_bytes())
    config = _decode_config(entries)
    params = OrderedDict((k, v) for k, v in entries.items() if not k.startswith(_CONFIG_PREFIX))
    return params, config


def model_state(model: FMLAModel) -> "OrderedDict[str, np.ndarray]":
    state = OrderedDict((k, t.data) for k, t in model.named_parameters().items())
    state.update(model.named_buffers())
    return state


def save_model(model: FMLAModel, path) -> None:
    save_checkpoint(model_state(model), model.config, path)


def load_model(path) -> FMLAModel:
    """Fully decode and validate the file before building the model."""
    params, config = load_checkpoint(path)
    model = FMLAModel(config)
    expected = model_state(model)
    missing = [k for k in expected if k not in params]
    extra = [k for k in params if k not in expected]
    if missing or extra:
        raise CheckpointError(f"checkpoint tensors do not match the model (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, target in expected.items():
        if params[name].shape != target.shape:
            raise CheckpointError(f"{name}: stored shape {params[name].shape} != model shape {target.shape}")
    for name, target in expected.items():
        target[...] = params[name]
    return model
