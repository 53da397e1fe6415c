"""Model checkpoints: a little-endian flat layout.

    magic   8 bytes  b"BLVLNET1"
    u16     version (1)
    u16     input rank, then u32 per input dim
    u16     layer count
    per layer: u8 kind code, u32 arg0, u32 arg1
    u64     parameter count d
    f64[d]  parameter values

Kind codes: 1 dense(out_dim), 2 relu, 3 dropout, 4 flatten,
5 conv2d(filters, kernel_size), 6 maxpool2x2.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .. import nn
from ..errors import DataError

MAGIC = b"BLVLNET1"

_KIND_CODES = {
    nn.Dense: 1,
    nn.Relu: 2,
    nn.Dropout: 3,
    nn.Flatten: 4,
    nn.Conv2d: 5,
    nn.MaxPool2x2: 6,
}


def _encode_layer(kind) -> tuple[int, int, int]:
    code = _KIND_CODES[type(kind)]
    if isinstance(kind, nn.Dense):
        return code, kind.out_dim, 0
    if isinstance(kind, nn.Conv2d):
        return code, kind.filters, kind.kernel_size
    return code, 0, 0


def _decode_layer(code: int, arg0: int, arg1: int):
    if code == 1:
        return nn.Dense(arg0)
    if code == 2:
        return nn.Relu()
    if code == 3:
        return nn.Dropout()
    if code == 4:
        return nn.Flatten()
    if code == 5:
        return nn.Conv2d(arg0, arg1)
    if code == 6:
        return nn.MaxPool2x2()
    raise DataError(f"unknown layer code {code} in checkpoint")


def save_model(net: nn.Network, path) -> None:
    parts = [MAGIC, struct.pack("<H", 1)]
    parts.append(struct.pack("<H", len(net.input_shape)))
    parts.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    parts.append(struct.pack("<H", len(net.bound)))
    for bl in net.bound:
        parts.append(struct.pack("<BII", *_encode_layer(bl.kind)))
    values = np.ascontiguousarray(net.params.values, dtype="<f8")
    parts.append(struct.pack("<Q", values.size))
    parts.append(values.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> nn.Network:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    off = 8

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise DataError(f"{path}: truncated checkpoint at byte {off}")
        out = struct.unpack_from(fmt, raw, off)
        off += size
        return out

    (version,) = take("<H")
    if version != 1:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (rank,) = take("<H")
    input_shape = take(f"<{rank}I")
    (n_layers,) = take("<H")
    kinds = [_decode_layer(*take("<BII")) for _ in range(n_layers)]
    (d,) = take("<Q")
    if off + 8 * d != len(raw):
        raise DataError(
            f"{path}: payload has {len(raw) - off} bytes at offset {off}, expected {8 * d}"
        )
    values = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(np.float64)
    net = nn.build_network(input_shape, kinds, np.random.default_rng(0))
    if net.params.dim != d:
        raise DataError(
            f"{path}: checkpoint has {d} parameters, architecture needs {net.params.dim}"
        )
    net.params.values[:] = values
    return net
