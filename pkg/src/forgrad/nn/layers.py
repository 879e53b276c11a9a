"""Layer specifications and per-layer forward/backward kernels.

All spatial tensors are batched NCHW float64 arrays. Backward passes are
hand-written (no autodiff): each kernel returns the cotangent w.r.t. its
input and, where applicable, w.r.t. its parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

LAYER_KINDS = ("Conv2D", "Dense", "ReLU", "MaxPool2D", "AvgPool2D", "Flatten", "Softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int = 0
    stride: int = 1
    channels_out: int = 0
    padding: str = "valid"  # {"valid", "same"}; meaningful for Conv2D only

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.kind in ("Conv2D", "MaxPool2D", "AvgPool2D") and self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.padding not in ("valid", "same"):
            raise ValueError(f"unknown padding {self.padding!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("Conv2D", "Dense")


def _same_padding(size: int, k: int, s: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for 'same' padding."""
    out = -(-size // s)  # ceil
    total = max((out - 1) * s + k - size, 0)
    before = total // 2
    return out, before, total - before


def conv2d_out_shape(in_shape, spec: LayerSpec):
    c, h, w = in_shape
    k, s = spec.kernel_size, spec.stride
    if spec.padding == "same":
        ho = -(-h // s)
        wo = -(-w // s)
    else:
        ho = (h - k) // s + 1
        wo = (w - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv kernel {k} too large for input {in_shape}")
    return (spec.channels_out, ho, wo)


def pool_out_shape(in_shape, spec: LayerSpec):
    c, h, w = in_shape
    k, s = spec.kernel_size, spec.stride
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"pool kernel {k} too large for input {in_shape}")
    return (c, ho, wo)


def _pad_input(x, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    if spec.padding == "same":
        _, ph0, ph1 = _same_padding(x.shape[2], k, s)
        _, pw0, pw1 = _same_padding(x.shape[3], k, s)
        if ph0 or ph1 or pw0 or pw1:
            x = np.pad(x, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
        return x, (ph0, ph1, pw0, pw1)
    return x, (0, 0, 0, 0)


def _windows(xp, k, s):
    """Strided (B,C,Ho,Wo,k,k) view over a padded NCHW array."""
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, ::s, ::s]


def conv2d_forward(x, w, b, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    xp, _ = _pad_input(x, spec)
    cols = _windows(xp, k, s)
    out = np.einsum("bchwij,fcij->bfhw", cols, w, optimize=True)
    return out + b[None, :, None, None]


def conv2d_backward(x, w, gy, spec: LayerSpec, want_param_grads: bool):
    k, s = spec.kernel_size, spec.stride
    xp, (ph0, ph1, pw0, pw1) = _pad_input(x, spec)
    ho, wo = gy.shape[2], gy.shape[3]
    dw = db = None
    if want_param_grads:
        cols = _windows(xp, k, s)
        dw = np.einsum("bchwij,bfhw->fcij", cols, gy, optimize=True)
        db = gy.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            patch = np.einsum("bfhw,fc->bchw", gy, w[:, :, i, j], optimize=True)
            dxp[:, :, i : i + ho * s : s, j : j + wo * s : s] += patch
    h, w_ = x.shape[2], x.shape[3]
    dx = dxp[:, :, ph0 : ph0 + h, pw0 : pw0 + w_]
    return dx, dw, db


def dense_forward(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    return flat @ w + b


def dense_backward(x, w, gy, want_param_grads: bool):
    flat = x.reshape(x.shape[0], -1)
    dw = db = None
    if want_param_grads:
        dw = flat.T @ gy
        db = gy.sum(axis=0)
    dx = (gy @ w.T).reshape(x.shape)
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gy, guided: bool):
    dx = np.where(x > 0, gy, 0.0)
    if guided:
        dx = np.where(dx > 0, dx, 0.0)
    return dx


def maxpool_forward(x, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    v = _windows(x, k, s)
    flat = v.reshape(*v.shape[:4], k * k)
    argmax = np.argmax(flat, axis=-1)  # first maximum, row-major within window
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(x_shape, argmax, gy, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    b, c, h, w = x_shape
    ho, wo = gy.shape[2], gy.shape[3]
    oh = np.arange(ho)[:, None]
    ow = np.arange(wo)[None, :]
    rows = oh * s + argmax // k  # (B,C,Ho,Wo)
    cols = ow * s + argmax % k
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    flat_idx = ((bi * c + ci) * h + rows) * w + cols
    dx = np.zeros(b * c * h * w)
    np.add.at(dx, flat_idx.ravel(), gy.ravel())
    return dx.reshape(x_shape)


def avgpool_forward(x, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    v = _windows(x, k, s)
    return v.mean(axis=(-1, -2))


def avgpool_backward(x_shape, gy, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    ho, wo = gy.shape[2], gy.shape[3]
    dx = np.zeros(x_shape)
    share = gy / (k * k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + ho * s : s, j : j + wo * s : s] += share
    return dx


def softmax(logits):
    """Row-wise softmax with max-subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
