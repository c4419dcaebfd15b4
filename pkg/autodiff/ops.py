"""
ops.py

Purpose:
--------
Forward and backward maps for the fixed layer vocabulary of the segmentor
and critic: same-padded convolution, 2x2 average pooling, strided
transposed convolution, ReLU, channel softmax, sigmoid and per-channel
batch normalization.

Every function accepts a single activation [H, W, C] or a batch
[N, H, W, C] and returns the same rank it was given. Values keep the dtype
of their inputs, which is how the 64-bit gradient-check mode works.

Convolutions are evaluated as a sum over kernel offsets of shifted
(N*H*W, Cin) x (Cin, Cout) products, so memory stays at the size of one
activation regardless of kernel extent.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from schema.errors import ConfigError, ShapeError


BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SUPPORTED_STRIDES = (2,)


# -----------------------------
# Shape helpers
# -----------------------------

def _as_batch(x: np.ndarray, what: str = "input") -> Tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{what} must be [H,W,C] or [N,H,W,C], got shape {x.shape}")


def _restore(x: np.ndarray, single: bool) -> np.ndarray:
    return x[0] if single else x


def _check_bias(bias: Optional[np.ndarray], cout: int) -> None:
    if bias is not None and np.shape(bias) != (cout,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {cout} output channels")


# -----------------------------
# Convolution (stride 1, zero "same" padding)
# -----------------------------

def _conv_geometry(x: np.ndarray, kernel: np.ndarray) -> Tuple[int, int]:
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be [kh,kw,Cin,Cout], got shape {kernel.shape}")
    kh, kw, cin, _ = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got kernel shape {kernel.shape}")
    if x.shape[-1] != cin:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[-1]} channels but kernel shape "
            f"{kernel.shape} expects {cin}"
        )
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"input spatial extents must be >= 1, got shape {x.shape}")
    return (kh - 1) // 2, (kw - 1) // 2


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """out[j,k,c] = bias[c] + sum over the window of input * kernel."""
    xb, single = _as_batch(x)
    kernel = np.asarray(kernel)
    ph, pw = _conv_geometry(xb, kernel)
    kh, kw, _, cout = kernel.shape
    _check_bias(bias, cout)

    n, h, w, _ = xb.shape
    padded = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((n, h, w, cout), dtype=np.result_type(xb, kernel))

    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(padded[:, i:i + h, j:j + w, :], kernel[i, j], axes=([3], [0]))

    if bias is not None:
        out += bias
    return _restore(out, single)


def conv2d_backward(x: np.ndarray, kernel: np.ndarray,
                    upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_kernel, grad_bias) of conv2d at (x, kernel)."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(upstream, "upstream gradient")
    kernel = np.asarray(kernel)
    ph, pw = _conv_geometry(xb, kernel)
    kh, kw, _, cout = kernel.shape

    n, h, w, _ = xb.shape
    if gb.shape != (n, h, w, cout):
        raise ShapeError(
            f"upstream gradient shape {gb.shape} does not match conv output {(n, h, w, cout)}"
        )

    padded = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    grad_padded = np.zeros_like(padded, dtype=np.result_type(padded, gb))
    grad_kernel = np.zeros_like(kernel, dtype=np.result_type(kernel, gb))

    for i in range(kh):
        for j in range(kw):
            window = padded[:, i:i + h, j:j + w, :]
            grad_kernel[i, j] = np.tensordot(window, gb, axes=([0, 1, 2], [0, 1, 2]))
            grad_padded[:, i:i + h, j:j + w, :] += np.tensordot(gb, kernel[i, j], axes=([3], [1]))

    grad_input = grad_padded[:, ph:ph + h, pw:pw + w, :]
    grad_bias = gb.sum(axis=(0, 1, 2))
    return _restore(np.ascontiguousarray(grad_input), single), grad_kernel, grad_bias


# -----------------------------
# Average pooling 2x2 / stride 2
# -----------------------------

def avg_pool2(x: np.ndarray) -> np.ndarray:
    xb, single = _as_batch(x)
    _, h, w, _ = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial extents, got shape {np.shape(x)}")
    out = (xb[:, 0::2, 0::2] + xb[:, 0::2, 1::2] + xb[:, 1::2, 0::2] + xb[:, 1::2, 1::2]) / 4
    return _restore(out, single)


def avg_pool2_backward(upstream: np.ndarray) -> np.ndarray:
    gb, single = _as_batch(upstream, "upstream gradient")
    grad = np.repeat(np.repeat(gb, 2, axis=1), 2, axis=2) / 4
    return _restore(grad, single)


# -----------------------------
# Transposed convolution
# -----------------------------

def check_transposed_geometry(kh: int, kw: int, stride: int) -> Tuple[int, int]:
    """
    Validate a kernel/stride pairing and return the crop (padding) per side.

    Output extents are exactly input * stride when the kernel equals the
    stride or twice the stride.
    """
    if stride not in SUPPORTED_STRIDES:
        raise ConfigError(f"transposed convolution stride must be one of {SUPPORTED_STRIDES}, got {stride}")
    for k in (kh, kw):
        if k not in (stride, 2 * stride):
            raise ConfigError(
                f"transposed kernel extent {k} incompatible with stride {stride}; "
                f"use {stride} or {2 * stride}"
            )
    return (kh - stride) // 2, (kw - stride) // 2


def transposed_conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 2,
                      bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Adjoint of a strided convolution: scatter-accumulate then crop."""
    xb, single = _as_batch(x)
    kernel = np.asarray(kernel)
    if kernel.ndim != 4 or kernel.shape[2] != xb.shape[-1]:
        raise ShapeError(f"input shape {np.shape(x)} incompatible with kernel shape {kernel.shape}")
    kh, kw, _, cout = kernel.shape
    ph, pw = check_transposed_geometry(kh, kw, stride)
    _check_bias(bias, cout)

    n, h, w, _ = xb.shape
    s = stride
    full = np.zeros((n, (h - 1) * s + kh, (w - 1) * s + kw, cout), dtype=np.result_type(xb, kernel))
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :] += np.tensordot(
                xb, kernel[i, j], axes=([3], [0])
            )

    out = full[:, ph:ph + h * s, pw:pw + w * s, :]
    if bias is not None:
        out = out + bias
    return _restore(np.ascontiguousarray(out), single)


def transposed_conv2d_backward(x: np.ndarray, kernel: np.ndarray, upstream: np.ndarray,
                               stride: int = 2) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xb, single = _as_batch(x)
    gb, _ = _as_batch(upstream, "upstream gradient")
    kernel = np.asarray(kernel)
    kh, kw, _, cout = kernel.shape
    ph, pw = check_transposed_geometry(kh, kw, stride)

    n, h, w, _ = xb.shape
    s = stride
    if gb.shape != (n, h * s, w * s, cout):
        raise ShapeError(
            f"upstream gradient shape {gb.shape} does not match output {(n, h * s, w * s, cout)}"
        )

    full = np.zeros((n, (h - 1) * s + kh, (w - 1) * s + kw, cout), dtype=gb.dtype)
    full[:, ph:ph + h * s, pw:pw + w * s, :] = gb

    grad_input = np.zeros_like(xb, dtype=np.result_type(xb, gb))
    grad_kernel = np.zeros_like(kernel, dtype=np.result_type(kernel, gb))
    for i in range(kh):
        for j in range(kw):
            gs = full[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :]
            grad_input += np.tensordot(gs, kernel[i, j], axes=([3], [1]))
            grad_kernel[i, j] = np.tensordot(xb, gs, axes=([0, 1, 2], [0, 1, 2]))

    grad_bias = gb.sum(axis=(0, 1, 2))
    return _restore(grad_input, single), grad_kernel, grad_bias


# -----------------------------
# Pointwise maps
# -----------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * (x > 0)


def softmax_channels(z: np.ndarray) -> np.ndarray:
    """Per-pixel distribution over the last axis (max-subtracted)."""
    z = np.asarray(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_channels(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    return z - logsumexp(z, axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax at output p."""
    return p * (upstream - (upstream * p).sum(axis=-1, keepdims=True))


def sigmoid(z):
    return expit(z)


def sigmoid_backward(t: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * t * (1 - t)


# -----------------------------
# Batch normalization
# -----------------------------

@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def _bn_moments(xb: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return xb.mean(axis=(0, 1, 2)), xb.var(axis=(0, 1, 2))


def batch_norm_channel(x: np.ndarray, gain: np.ndarray, shift: np.ndarray, mode: str,
                       stats: Optional[RunningStats] = None, update_stats: bool = True,
                       eps: float = BN_EPS) -> np.ndarray:
    """
    Per-channel standardization followed by gain/shift.

    mode "train" uses batch statistics over (N, H, W) and, when stats are
    given and update_stats is set, folds them into the running estimates
    with the configured momentum. mode "eval" uses the running estimates.
    """
    xb, single = _as_batch(x)
    if mode == "train":
        mean, var = _bn_moments(xb)
        if stats is not None and update_stats:
            m = stats.momentum
            stats.mean[...] = m * stats.mean + (1 - m) * mean
            stats.var[...] = m * stats.var + (1 - m) * var
    elif mode == "eval":
        if stats is None:
            raise ConfigError("batch_norm_channel in eval mode needs running statistics")
        mean, var = stats.mean, stats.var
    else:
        raise ConfigError(f"unknown batch norm mode {mode!r}; expected 'train' or 'eval'")

    x_hat = (xb - mean) / np.sqrt(var + eps)
    out = x_hat * gain + shift
    return _restore(out.astype(np.result_type(xb, gain), copy=False), single)


def batch_norm_backward(x: np.ndarray, gain: np.ndarray, upstream: np.ndarray, mode: str,
                        stats: Optional[RunningStats] = None,
                        eps: float = BN_EPS) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_gain, grad_shift); batch moments are recomputed from x."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(upstream, "upstream gradient")
    if gb.shape != xb.shape:
        raise ShapeError(f"upstream gradient shape {gb.shape} does not match input {xb.shape}")

    axes = (0, 1, 2)
    if mode == "train":
        mean, var = _bn_moments(xb)
    else:
        mean, var = stats.mean, stats.var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xb - mean) * inv_std

    grad_gain = (gb * x_hat).sum(axis=axes)
    grad_shift = gb.sum(axis=axes)
    dx_hat = gb * gain

    if mode == "train":
        m = xb.shape[0] * xb.shape[1] * xb.shape[2]
        grad_input = (inv_std / m) * (
            m * dx_hat - dx_hat.sum(axis=axes) - x_hat * (dx_hat * x_hat).sum(axis=axes)
        )
    else:
        grad_input = dx_hat * inv_std
    return _restore(grad_input, single), grad_gain, grad_shift
