"""FVCK checkpoint files.

Layout, all little-endian::

    b"FVCK" | version u16 | count u32
    count x ( name_len u32 | name utf-8 | rank u32 | extents u32 x rank | float64 payload )

Model hyperparameters are stored as rank-1 entries under ``meta.<field>``
(the mode as its index in ``MODE_ORDER``, booleans as 0/1), so the file holds
nothing but named float64 arrays.
"""

from __future__ import annotations

import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .model import FVAEModel, ModelConfig

MAGIC = b"FVCK"
VERSION = 1
MODE_ORDER = ("fvae", "vae", "flow", "hybrid")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _meta_entries(config: ModelConfig) -> list[tuple[str, np.ndarray]]:
    out = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if f.name == "mode":
            value = MODE_ORDER.index(value)
        out.append((f"meta.{f.name}", np.array([float(value)])))
    return out


def _config_from_meta(meta: dict[str, np.ndarray]) -> ModelConfig:
    kw = {}
    for f in fields(ModelConfig):
        key = f"meta.{f.name}"
        if key not in meta:
            raise CheckpointError(f"checkpoint lacks {key}")
        v = float(meta[key][0])
        if f.name == "mode":
            kw[f.name] = MODE_ORDER[int(v)]
        elif f.name == "tanh_output":
            kw[f.name] = bool(v)
        elif f.name in ("log_scale_clamp", "noise_sigma"):
            kw[f.name] = v
        else:
            kw[f.name] = int(v)
    return ModelConfig(**kw)


def encode_entries(entries: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [MAGIC, _U16.pack(VERSION), _U32.pack(len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(n) for n in arr.shape]
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def decode_entries(buf: bytes) -> list[tuple[str, np.ndarray]]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint reading {what} at offset {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    (version,) = _U16.unpack(take(2, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    (count,) = _U32.unpack(take(4, "entry count"))
    entries = []
    for _ in range(count):
        (nlen,) = _U32.unpack(take(4, "name length"))
        start = pos
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid entry name at offset {start}") from None
        (rank,) = _U32.unpack(take(4, "rank"))
        shape = tuple(_U32.unpack(take(4, "extent"))[0] for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        payload = take(8 * size, f"payload of {name!r}")
        entries.append((name, np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)))
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes after last entry at offset {pos}")
    return entries


def save_checkpoint(model: FVAEModel, path) -> None:
    entries = _meta_entries(model.config)
    entries += [(name, p.data) for name, p in model.named_parameters()]
    Path(path).write_bytes(encode_entries(entries))


def load_checkpoint(path) -> FVAEModel:
    entries = decode_entries(Path(path).read_bytes())
    meta = {k: v for k, v in entries if k.startswith("meta.")}
    params = {k: v for k, v in entries if not k.startswith("meta.")}
    model = FVAEModel(_config_from_meta(meta))
    expected = dict(model.named_parameters())
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"parameter table mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, tensor in expected.items():
        if params[name].shape != tensor.shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != expected {tensor.shape}")
        tensor.data = params[name].copy()
    return model
