"""Dense feature tensors and reference convolution arithmetic.

Layout is channel-major: a tensor of C channels over an H x W grid is a
C-contiguous float32 array of shape (C, H, W), so the per-position feature
vector ``values[:, y, x]`` is a strided view and the flat buffer matches the
QDT1 on-disk order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, FormatError, ValidationError

TENSOR_MAGIC = b"QDTENS1\n"


@dataclass(frozen=True)
class DenseTensor:
    """A dense C x H x W float32 feature map."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise ValidationError(f"dense tensor must be (C, H, W), got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ConvWeights:
    """Weights of one convolution layer: (out, in, k, k) kernel plus per-output bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        b = np.ascontiguousarray(self.bias, dtype=np.float32)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ConfigurationError(f"conv weights must be (out, in, k, k), got {w.shape}")
        if w.shape[2] not in (1, 3):
            raise ConfigurationError(f"kernel size must be 1 or 3, got {w.shape[2]}")
        if b.shape != (w.shape[0],):
            raise ConfigurationError(
                f"bias length {b.shape} does not match out_channels {w.shape[0]}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    def matrix(self) -> np.ndarray:
        """Weights flattened to (out, in * k * k) with (channel, ky, kx) tap order."""
        return self.weights.reshape(self.out_channels, -1)


def conv2d(inp: DenseTensor, w: ConvWeights) -> DenseTensor:
    """Stride-1, zero-padded convolution; output spatial size equals input.

    output[o, y, x] = bias[o] + sum_{c, ky, kx} w[o, c, ky, kx] * padded[c, y+ky-1, x+kx-1]

    Implemented as im2col + one float32 GEMM, which is deterministic call to
    call on a given machine.
    """
    if inp.channels != w.in_channels:
        raise ConfigurationError(
            f"input has {inp.channels} channels, weights expect {w.in_channels}"
        )
    if not np.isfinite(inp.values).all():
        raise ValidationError("conv2d input contains non-finite values")
    c, h, wd = inp.values.shape
    if w.kernel == 1:
        cols = inp.values.reshape(c, h * wd).T
    else:
        padded = np.pad(inp.values, ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
        cols = win.transpose(1, 2, 0, 3, 4).reshape(h * wd, c * 9)
    out = cols @ w.matrix().T + w.bias
    return DenseTensor(out.T.reshape(w.out_channels, h, wd))


def relu(inp: DenseTensor) -> DenseTensor:
    return DenseTensor(np.maximum(inp.values, np.float32(0.0)))


def sigmoid(inp: DenseTensor) -> DenseTensor:
    """Elementwise logistic function, computed in float64 and rounded to float32."""
    return DenseTensor(sigmoid_array(inp.values))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out.astype(np.float32)


def save_tensor(t: DenseTensor, path) -> None:
    """Write one tensor in the QDT1 container format."""
    header = json.dumps({"dtype": "f32", "shape": list(t.values.shape)}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(t.values.astype("<f4").tobytes())


def load_tensor(path) -> DenseTensor:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic, not a QDT1 tensor file")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise FormatError(f"{path}: truncated JSON header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header: {e}") from e
    if header.get("dtype") != "f32":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = header.get("shape")
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(d, int) and d > 0 for d in shape)):
        raise FormatError(f"{path}: bad shape in header: {shape!r}")
    c, h, wd = shape
    payload = data[12 + hlen :]
    expected = c * h * wd * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, wd)
    return DenseTensor(values.copy())
