"""
tensor.py

Purpose:
--------
The value type of the numeric core plus its on-disk dump format.

Layout conventions (row-major, C order):
- activations: [H, W, C], optionally with a leading batch axis [N, H, W, C]
- convolution kernels: [kh, kw, in_ch, out_ch]
- dense weights: [in, out]

Dump format (used by checkpoints and golden-file tests):
    int64 LE rank, rank x int64 LE extents, prod(extents) x float32 LE values
"""

import hashlib
from typing import BinaryIO, Iterable, Optional, Tuple

import numpy as np

from schema.errors import FormatError, ShapeError


# -----------------------------
# Precision modes
# -----------------------------

DEFAULT_DTYPE = np.float32
GRADCHECK_DTYPE = np.float64

_DUMP_INT = np.dtype("<i8")
_DUMP_FLOAT = np.dtype("<f4")


class Tensor:
    """
    Dense array with an optional gradient buffer.

    Parameters are Tensors; intermediate activations flow between layers as
    plain ndarrays and are only wrapped when they need a name or a dump.
    """

    __slots__ = ("name", "values", "grad")

    def __init__(self, values, name: str = "", requires_grad: bool = False,
                 dtype: Optional[np.dtype] = None):
        arr = np.asarray(values)
        if dtype is None:
            dtype = arr.dtype if arr.dtype.kind == "f" else DEFAULT_DTYPE
        self.name = name
        self.values = np.ascontiguousarray(arr, dtype=dtype)
        self.grad = np.zeros_like(self.values) if requires_grad else None

    # -----------------------------
    # Introspection
    # -----------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"

    # -----------------------------
    # Gradient buffer
    # -----------------------------

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0)

    def accumulate(self, grad: np.ndarray):
        if grad.shape != self.values.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor "
                f"{self.name or '<unnamed>'} of shape {self.values.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad


# -----------------------------
# Dump format
# -----------------------------

def write_tensor(fh: BinaryIO, values: np.ndarray):
    arr = np.asarray(values)
    header = np.array([arr.ndim, *arr.shape], dtype=_DUMP_INT)
    fh.write(header.tobytes())
    fh.write(np.ascontiguousarray(arr, dtype=_DUMP_FLOAT).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    raw_rank = fh.read(_DUMP_INT.itemsize)
    if len(raw_rank) != _DUMP_INT.itemsize:
        raise FormatError("tensor dump truncated before rank field")
    rank = int(np.frombuffer(raw_rank, dtype=_DUMP_INT)[0])
    if rank < 0 or rank > 8:
        raise FormatError(f"implausible tensor rank {rank} in dump")

    raw_extents = fh.read(_DUMP_INT.itemsize * rank)
    if len(raw_extents) != _DUMP_INT.itemsize * rank:
        raise FormatError("tensor dump truncated inside extents")
    extents = tuple(int(e) for e in np.frombuffer(raw_extents, dtype=_DUMP_INT))

    count = int(np.prod(extents, dtype=np.int64))
    expected = count * _DUMP_FLOAT.itemsize
    data = fh.read(expected)
    if len(data) != expected:
        raise FormatError(
            f"tensor dump truncated: expected {expected} value bytes, got {len(data)}"
        )
    return np.frombuffer(data, dtype=_DUMP_FLOAT).reshape(extents).astype(DEFAULT_DTYPE)


def save_tensor(path, values: np.ndarray):
    with open(path, "wb") as fh:
        write_tensor(fh, values)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def digest_arrays(arrays: Iterable[np.ndarray]) -> str:
    """Stable hash over array bytes, used for before/after parameter checks."""
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
