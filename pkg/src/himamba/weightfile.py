"""Binary weight file (little-endian).

    magic      4 bytes   b"HIMB"
    version    u32       1
    config     u32 scale, C, C_r, n, N1, N2; f32 lambda; u32 N_state, C_h;
               u32 cycle length followed by one u8 direction tag each
               (H=0, V=1, RH=2, RV=3)
    count      u32       number of tensors
    tensors    u16 name length, UTF-8 name, u8 rank, u32 per dim,
               raw f32 data in row-major order
"""
from __future__ import annotations

import struct

import numpy as np

from .config import HiMambaConfig
from .errors import FormatError
from .network import ModelWeights, param_shapes
from .scan import Direction

__all__ = ["MAGIC", "VERSION", "encode", "decode", "save_weights", "load_weights"]

MAGIC = b"HIMB"
VERSION = 1


def _encode_config(cfg):
    out = struct.pack("<6I", cfg.scale, cfg.channels, cfg.region_channels, cfg.region_size,
                      cfg.blocks_per_group, cfg.groups)
    out += struct.pack("<f2I", cfg.expand, cfg.state_size, cfg.ffn_channels)
    out += struct.pack("<I", len(cfg.dir_cycle))
    out += bytes(d.code for d in cfg.dir_cycle)
    return out


def encode(weights: ModelWeights) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _encode_config(weights.config),
             struct.pack("<I", len(weights.params))]
    for name, value in weights.params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def decode(buf: bytes) -> ModelWeights:
    r = _Reader(memoryview(buf).tobytes())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a weight file", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    at = r.pos
    scale, c, cr, n, n1, n2 = r.unpack("<6I", "config")
    expand, state, ch = r.unpack("<f2I", "config")
    (ncycle,) = r.unpack("<I", "direction cycle length")
    tags_at = r.pos
    tags = r.take(ncycle, "direction tags")
    try:
        cycle = tuple(Direction.from_code(t) for t in tags)
        cfg = HiMambaConfig(scale=scale, channels=c, region_channels=cr, region_size=n,
                            blocks_per_group=n1, groups=n2, expand=float(expand),
                            state_size=state, ffn_channels=ch, dir_cycle=cycle)
    except ValueError as e:
        raise FormatError(f"invalid config block: {e}", at if not ncycle else tags_at) from None
    (count,) = r.unpack("<I", "tensor count")
    expected = param_shapes(cfg)
    params = {}
    for _ in range(count):
        start = r.pos
        (nlen,) = r.unpack("<H", "name length")
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", start + 2) from None
        (rank,) = r.unpack("<B", "rank")
        shape = r.unpack(f"<{rank}I", "dims")
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size, f"data of {name}"), dtype="<f4")
        if name in params:
            raise FormatError(f"duplicate tensor {name!r}", start)
        if expected.get(name) != tuple(shape):
            raise FormatError(f"tensor {name!r} with shape {shape} does not belong to the config", start)
        params[name] = data.astype(np.float64).reshape(shape)
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after last tensor", r.pos)
    missing = [k for k in expected if k not in params]
    if missing:
        raise FormatError(f"missing {len(missing)} tensors, first {missing[0]!r}", r.pos)
    return ModelWeights(cfg, params)


def save_weights(weights: ModelWeights, path):
    with open(path, "wb") as f:
        f.write(encode(weights))


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as f:
        return decode(f.read())
