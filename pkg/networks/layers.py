"""
layers.py

Purpose:
--------
Layer objects for the fixed vocabulary of the SCAN networks.

Each layer owns its parameter Tensors, keeps the activations it needs for
the backward pass when a forward is recorded, and accumulates parameter
gradients in backward(). Activations are batched [N, H, W, C] arrays
(pooled vectors are [N, C]).

Output transforms (softmax, the critic's final sigmoid) are not layers;
the Network applies them on top of the logits.
"""

from typing import Dict, List, Optional

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor
from networks.architecture import LayerSpec
from schema.errors import ConfigError


# -----------------------------
# Initialization
# -----------------------------

def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Gaussian with variance 2 / fan_in."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    """Base layer: no parameters, no buffers."""

    def __init__(self, name: str, spec: LayerSpec):
        self.name = name
        self.spec = spec
        self._cache = None

    def parameters(self) -> Dict[str, Tensor]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, mode: str, record: bool, update_stats: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def clear(self):
        self._cache = None

    def _recorded(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward() called without a recorded forward pass")
        return self._cache


# -----------------------------
# Convolutions
# -----------------------------

class Conv(Layer):

    def __init__(self, name, spec, rng, dtype):
        super().__init__(name, spec)
        k, cin, cout = spec.kernel, spec.in_channels, spec.out_channels
        self.kernel = Tensor(he_normal(rng, (k, k, cin, cout), k * k * cin, dtype),
                             name=f"{name}.kernel", requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), name=f"{name}.bias", requires_grad=True)

    def parameters(self):
        return {self.kernel.name: self.kernel, self.bias.name: self.bias}

    def forward(self, x, mode, record, update_stats):
        z = ops.conv2d(x, self.kernel.values, self.bias.values)
        self._cache = (x, z) if record else None
        return ops.relu(z) if self.spec.activation == "relu" else z

    def backward(self, upstream):
        x, z = self._recorded()
        if self.spec.activation == "relu":
            upstream = ops.relu_backward(z, upstream)
        gi, gk, gb = ops.conv2d_backward(x, self.kernel.values, upstream)
        self.kernel.accumulate(gk)
        self.bias.accumulate(gb)
        return gi


class TransposedConv(Layer):

    def __init__(self, name, spec, rng, dtype):
        super().__init__(name, spec)
        k, s, cin, cout = spec.kernel, spec.stride, spec.in_channels, spec.out_channels
        # each output pixel receives (k / s)^2 input pixels per channel
        fan_in = (k // s) * (k // s) * cin
        self.kernel = Tensor(he_normal(rng, (k, k, cin, cout), fan_in, dtype),
                             name=f"{name}.kernel", requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), name=f"{name}.bias", requires_grad=True)

    def parameters(self):
        return {self.kernel.name: self.kernel, self.bias.name: self.bias}

    def forward(self, x, mode, record, update_stats):
        z = ops.transposed_conv2d(x, self.kernel.values, self.spec.stride, self.bias.values)
        self._cache = (x, z) if record else None
        return ops.relu(z) if self.spec.activation == "relu" else z

    def backward(self, upstream):
        x, z = self._recorded()
        if self.spec.activation == "relu":
            upstream = ops.relu_backward(z, upstream)
        gi, gk, gb = ops.transposed_conv2d_backward(x, self.kernel.values, upstream, self.spec.stride)
        self.kernel.accumulate(gk)
        self.bias.accumulate(gb)
        return gi


# -----------------------------
# Pre-activation residual block
# -----------------------------

class BatchNorm:
    """Per-channel gain/shift with running statistics."""

    def __init__(self, name: str, channels: int, dtype):
        self.gain = Tensor(np.ones(channels, dtype=dtype), name=f"{name}.gain", requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), name=f"{name}.shift", requires_grad=True)
        self.stats = ops.RunningStats.fresh(channels, dtype=dtype)
        self.name = name

    def parameters(self):
        return {self.gain.name: self.gain, self.shift.name: self.shift}

    def buffers(self):
        return {f"{self.name}.running_mean": self.stats.mean, f"{self.name}.running_var": self.stats.var}

    def forward(self, x, mode, update_stats):
        return ops.batch_norm_channel(x, self.gain.values, self.shift.values, mode, self.stats, update_stats)

    def backward(self, x, upstream, mode):
        gi, gg, gs = ops.batch_norm_backward(x, self.gain.values, upstream, mode, self.stats)
        self.gain.accumulate(gg)
        self.shift.accumulate(gs)
        return gi


class ResBlock(Layer):
    """
    BN -> ReLU -> conv -> BN -> ReLU -> conv, plus the identity shortcut.

    A widening block (in < out) zero-pads the shortcut along the channel axis.
    """

    def __init__(self, name, spec, rng, dtype):
        super().__init__(name, spec)
        k, cin, w, cout = spec.kernel, spec.in_channels, spec.width, spec.out_channels
        self.bn1 = BatchNorm(f"{name}.bn1", cin, dtype)
        self.k1 = Tensor(he_normal(rng, (k, k, cin, w), k * k * cin, dtype),
                         name=f"{name}.conv1.kernel", requires_grad=True)
        self.b1 = Tensor(np.zeros(w, dtype=dtype), name=f"{name}.conv1.bias", requires_grad=True)
        self.bn2 = BatchNorm(f"{name}.bn2", w, dtype)
        self.k2 = Tensor(he_normal(rng, (k, k, w, cout), k * k * w, dtype),
                         name=f"{name}.conv2.kernel", requires_grad=True)
        self.b2 = Tensor(np.zeros(cout, dtype=dtype), name=f"{name}.conv2.bias", requires_grad=True)

    def parameters(self):
        out = dict(self.bn1.parameters())
        out.update({self.k1.name: self.k1, self.b1.name: self.b1})
        out.update(self.bn2.parameters())
        out.update({self.k2.name: self.k2, self.b2.name: self.b2})
        return out

    def buffers(self):
        return {**self.bn1.buffers(), **self.bn2.buffers()}

    def forward(self, x, mode, record, update_stats):
        a1 = self.bn1.forward(x, mode, update_stats)
        r1 = ops.relu(a1)
        c1 = ops.conv2d(r1, self.k1.values, self.b1.values)
        a2 = self.bn2.forward(c1, mode, update_stats)
        r2 = ops.relu(a2)
        out = ops.conv2d(r2, self.k2.values, self.b2.values)

        cin, cout = self.spec.in_channels, self.spec.out_channels
        if cin == cout:
            out = out + x
        else:
            out[..., :cin] += x

        self._cache = (x, a1, r1, c1, a2, r2, mode) if record else None
        return out

    def backward(self, upstream):
        x, a1, r1, c1, a2, r2, mode = self._recorded()

        g_r2, gk2, gb2 = ops.conv2d_backward(r2, self.k2.values, upstream)
        self.k2.accumulate(gk2)
        self.b2.accumulate(gb2)
        g_c1 = self.bn2.backward(c1, ops.relu_backward(a2, g_r2), mode)

        g_r1, gk1, gb1 = ops.conv2d_backward(r1, self.k1.values, g_c1)
        self.k1.accumulate(gk1)
        self.b1.accumulate(gb1)
        g_x = self.bn1.backward(x, ops.relu_backward(a1, g_r1), mode)

        return g_x + upstream[..., :self.spec.in_channels]


# -----------------------------
# Pooling and head
# -----------------------------

class AvgPool(Layer):

    def forward(self, x, mode, record, update_stats):
        self._cache = True if record else None
        return ops.avg_pool2(x)

    def backward(self, upstream):
        self._recorded()
        return ops.avg_pool2_backward(upstream)


class GlobalPool(Layer):

    def forward(self, x, mode, record, update_stats):
        self._cache = x.shape if record else None
        return x.mean(axis=(1, 2))

    def backward(self, upstream):
        n, h, w, c = self._recorded()
        return np.broadcast_to(upstream[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dense(Layer):

    def __init__(self, name, spec, rng, dtype):
        super().__init__(name, spec)
        cin, cout = spec.in_channels, spec.out_channels
        self.weight = Tensor(he_normal(rng, (cin, cout), cin, dtype), name=f"{name}.weight", requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), name=f"{name}.bias", requires_grad=True)

    def parameters(self):
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def forward(self, x, mode, record, update_stats):
        self._cache = x if record else None
        return x @ self.weight.values + self.bias.values

    def backward(self, upstream):
        x = self._recorded()
        self.weight.accumulate(x.T @ upstream)
        self.bias.accumulate(upstream.sum(axis=0))
        return upstream @ self.weight.values.T


# -----------------------------
# Factory
# -----------------------------

_LAYER_TYPES = {
    "conv": Conv,
    "transposed_conv": TransposedConv,
    "dense": Dense,
}


def make_layers(index: int, spec: LayerSpec, rng: np.random.Generator, dtype) -> List[Layer]:
    """
    Layers for one table row, named "<index>.<kind>".

    Repeated resblocks become one ResBlock per repetition ("<index>.resblock.<r>").
    Output transforms produce no layer.
    """
    prefix = f"{index:02d}.{spec.kind}"
    if spec.kind == "softmax":
        return []
    if spec.kind == "resblock":
        if spec.repeat == 1:
            return [ResBlock(prefix, spec, rng, dtype)]
        return [ResBlock(f"{prefix}.{r}", spec, rng, dtype) for r in range(spec.repeat)]
    if spec.kind == "avg_pool":
        return [AvgPool(prefix, spec)]
    if spec.kind == "global_pool":
        return [GlobalPool(prefix, spec)]
    if spec.kind in _LAYER_TYPES:
        return [_LAYER_TYPES[spec.kind](prefix, spec, rng, dtype)]
    raise ConfigError(f"no layer implementation for kind {spec.kind!r}")


def cast_layer_arrays(layer: Layer, dtype: Optional[np.dtype]):
    """Cast every parameter and buffer of a layer in place."""
    for t in layer.parameters().values():
        t.values = t.values.astype(dtype)
        t.grad = None if t.grad is None else t.grad.astype(dtype)
    for bn in (getattr(layer, "bn1", None), getattr(layer, "bn2", None)):
        if bn is not None:
            bn.stats.mean = bn.stats.mean.astype(dtype)
            bn.stats.var = bn.stats.var.astype(dtype)
