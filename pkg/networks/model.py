"""
model.py

Purpose:
--------
Network: an ordered stack of layers built from a LayerSpec table, with
parameter/buffer views, a recorded forward pass and the matching backward.

The same class carries the segmentor (softmax output over classes) and
the critic (sigmoid output over a single logit).
"""

import logging
from typing import Dict, List, Optional

import numpy as np
from typing_extensions import Self

from autodiff import ops
from autodiff.tensor import DEFAULT_DTYPE, Tensor, digest_arrays
from networks.architecture import LayerSpec, fingerprint, validate_table
from networks.layers import Layer, cast_layer_arrays, make_layers
from schema.errors import ConfigError, FormatError, ShapeError


logger = logging.getLogger(__name__)

MODES = ("train", "eval")


class Network:

    def __init__(self, name: str, table: List[LayerSpec], layers: List[Layer], output: Optional[str]):
        self.name = name
        self.table = table
        self.layers = layers
        self.output = output
        self.fingerprint = fingerprint(table)

    # -----------------------------
    # Parameter views
    # -----------------------------

    def parameters(self) -> Dict[str, Tensor]:
        """Every learnable Tensor, in schedule order."""
        out = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        """Running normalization statistics, in schedule order."""
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def param_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.values for name, t in self.parameters().items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.parameters().items()}

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def digest(self) -> str:
        """Hash of parameters and buffers, used to prove a network was (not) touched."""
        return digest_arrays(list(self.param_arrays().values()) + list(self.buffers().values()))

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {**self.param_arrays(), **self.buffers()}

    def load_state(self, arrays: Dict[str, np.ndarray]):
        """Copy named arrays into parameters and buffers; names and shapes must match exactly."""
        params = self.parameters()
        buffers = self.buffers()
        expected = list(params) + list(buffers)
        if sorted(arrays) != sorted(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise FormatError(f"state for {self.name} does not match: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in arrays.items():
            target = params[name].values if name in params else buffers[name]
            if target.shape != arr.shape:
                raise ShapeError(f"state array {name} has shape {arr.shape}, expected {target.shape}")
            target[...] = arr

    def astype(self, dtype) -> Self:
        """Cast in place (64-bit for gradient checks) and return self."""
        for layer in self.layers:
            cast_layer_arrays(layer, dtype)
        return self

    @property
    def dtype(self):
        params = self.parameters()
        return next(iter(params.values())).dtype if params else DEFAULT_DTYPE

    @property
    def in_channels(self) -> int:
        return self.table[0].in_channels

    @property
    def resolution(self) -> int:
        return self.table[0].resolution

    # -----------------------------
    # Forward / backward
    # -----------------------------

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        expected = (self.resolution, self.resolution, self.in_channels)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"{self.name} expects input [N,{expected[0]},{expected[1]},{expected[2]}], got {np.shape(x)}")
        return x.astype(self.dtype, copy=False)

    def logits(self, x: np.ndarray, mode: str = "eval", record: bool = False,
               update_stats: bool = True) -> np.ndarray:
        """
        Run every layer; returns pre-output-transform values.

        Segmentor: [N, H, W, C]; critic: [N]. With record=True the layers keep
        what backward() needs.
        """
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        h = self.check_input(x)
        for layer in self.layers:
            h = layer.forward(h, mode, record, update_stats)
        if self.output == "sigmoid":
            h = h[:, 0]
        return h

    def forward(self, x: np.ndarray, mode: str = "eval", record: bool = False,
                update_stats: bool = True) -> np.ndarray:
        z = self.logits(x, mode, record, update_stats)
        return self.transform(z)

    def transform(self, z: np.ndarray) -> np.ndarray:
        if self.output == "softmax":
            return ops.softmax_channels(z)
        if self.output == "sigmoid":
            return ops.sigmoid(z)
        return z

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients from d(loss)/d(logits); returns d(loss)/d(input)."""
        g = np.asarray(grad_logits)
        if self.output == "sigmoid":
            g = g[:, None]
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def clear(self):
        for layer in self.layers:
            layer.clear()


# -----------------------------
# Construction
# -----------------------------

def build_network(name: str, table: List[LayerSpec], seed: int, dtype=DEFAULT_DTYPE) -> Network:
    """Initialize every layer of a validated table from one seeded generator, in schedule order."""
    if table:
        validate_table(table)
    rng = np.random.default_rng(seed)
    layers = []
    for i, spec in enumerate(table):
        layers.extend(make_layers(i, spec, rng, dtype))

    output = None
    if table and table[-1].kind == "softmax":
        output = "softmax"
    elif table and table[-1].activation == "sigmoid":
        output = "sigmoid"

    net = Network(name, table, layers, output)
    logger.debug("built %s: %d layers, %d parameters", name, len(layers), param_count(net))
    return net


def param_count(network: Network) -> int:
    """Learnable scalars: kernels, biases and normalization gains/shifts (running statistics excluded)."""
    return sum(t.size for t in network.parameters().values())
