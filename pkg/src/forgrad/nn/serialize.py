"""Binary model file format.

Layout (little-endian):
  magic b"FORG", version u8 = 1,
  u32 C, u32 H, u32 W (input shape), u32 num_classes,
  u32 layer count, per layer: u8 type, u32 kernel_size, u32 stride,
  u32 channels_out, u32 padding flag (1 = same),
  u32 named-tensor count, per tensor: u16 name length + UTF-8 name,
  u8 rank, u32 dims, f64 payload row-major.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError, ShapeMismatch, ValidationError, VersionError
from .layers import LAYER_KINDS, LayerSpec
from .network import Network, shape_chain

MAGIC = b"FORG"
VERSION = 1

_KIND_TO_BYTE = {kind: i + 1 for i, kind in enumerate(LAYER_KINDS)}
_BYTE_TO_KIND = {v: k for k, v in _KIND_TO_BYTE.items()}


def save_model(net: Network, path):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<4I", *net.input_shape, net.num_classes)
    out += struct.pack("<I", len(net.layers))
    for spec in net.layers:
        out += struct.pack("<B4I", _KIND_TO_BYTE[spec.kind], spec.kernel_size,
                           spec.stride, spec.channels_out,
                           1 if spec.padding == "same" else 0)
    names = sorted(net.params)
    out += struct.pack("<I", len(names))
    for name in names:
        enc = name.encode("utf-8")
        t = np.ascontiguousarray(net.params[name], dtype=np.float64)
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> Network:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != MAGIC:
        raise FormatError("bad magic")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise VersionError(f"unknown version {version}")
    c, h, w, num_classes = r.unpack("<4I")
    (n_layers,) = r.unpack("<I")
    layers = []
    for _ in range(n_layers):
        tb, k, s, co, pad = r.unpack("<B4I")
        if tb not in _BYTE_TO_KIND:
            raise FormatError(f"unknown layer type byte {tb}")
        layers.append(LayerSpec(kind=_BYTE_TO_KIND[tb], kernel_size=k, stride=s,
                                channels_out=co, padding="same" if pad else "valid"))
    (n_tensors,) = r.unpack("<I")
    params = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        payload = r.take(8 * count)
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model payload")
    net = Network(tuple(layers), params, (c, h, w), num_classes)
    try:
        shape_chain(net)
    except (ShapeMismatch, KeyError) as e:
        raise ValidationError(f"inconsistent layer shape chain: {e}") from e
    return net
