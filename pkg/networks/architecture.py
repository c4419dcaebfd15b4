"""
architecture.py

Purpose:
--------
Expand the architecture registry (schema/architecture.yaml) into concrete
LayerSpec tables for a given build resolution, validate them and derive
the quantities that identify a schedule:

- conv_layer_count: convolutions over the whole table (resblock convolutions
  and 1x1 convolutions included, transposed convolutions excluded)
- spec_param_count: closed-form learnable scalars per LayerSpec
- fingerprint: sha256 over the table, written into every checkpoint
"""

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from autodiff.ops import check_transposed_geometry
from schema.config import ARCHITECTURE_PATH, load_yaml_registry
from schema.errors import ConfigError


LayerKind = Literal["conv", "resblock", "avg_pool", "transposed_conv", "softmax", "global_pool", "dense"]


class LayerSpec(BaseModel):
    """One row of a layer schedule. `resolution` is the input extent (1 for pooled vectors)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LayerKind
    in_channels: int
    out_channels: int
    resolution: int
    kernel: Optional[int] = None
    stride: int = 1
    repeat: int = 1
    inner_channels: Optional[int] = None
    activation: Literal["none", "relu", "sigmoid"] = "none"

    @property
    def out_resolution(self) -> int:
        if self.kind == "avg_pool":
            return self.resolution // 2
        if self.kind == "transposed_conv":
            return self.resolution * self.stride
        if self.kind == "global_pool":
            return 1
        return self.resolution

    @property
    def width(self) -> int:
        """Inner width of a resblock."""
        return self.inner_channels or self.out_channels


# -----------------------------
# Registry expansion
# -----------------------------

def load_architecture_registry(path=None) -> dict:
    return load_yaml_registry(path or ARCHITECTURE_PATH)


def _expand_entry(entry: Dict[str, Any], resolution: int) -> LayerSpec:
    scale = entry.get("scale")
    if scale is not None and resolution % scale:
        raise ConfigError(f"resolution {resolution} is not divisible by stage scale {scale}")
    try:
        return LayerSpec(
            kind=entry["kind"],
            in_channels=entry["in"],
            out_channels=entry["out"],
            resolution=resolution // scale if scale is not None else 1,
            kernel=entry.get("kernel"),
            stride=entry.get("stride", 1),
            repeat=entry.get("repeat", 1),
            inner_channels=entry.get("inner"),
            activation=entry.get("activation", "none"),
        )
    except (KeyError, ValidationError) as e:
        raise ConfigError(f"invalid architecture entry {entry}: {e}") from e


def _check_resolution(registry: dict, resolution: int):
    multiple = registry.get("resolution_multiple", 16)
    if resolution < multiple or resolution % multiple:
        raise ConfigError(f"build resolution must be a positive multiple of {multiple}, got {resolution}")


def segmentor_table(resolution: Optional[int] = None, registry: Optional[dict] = None) -> List[LayerSpec]:
    registry = registry or load_architecture_registry()
    resolution = resolution or registry["default_resolution"]
    _check_resolution(registry, resolution)

    entries = registry["down_path"] + registry["segmentor"]["up_path"]
    table = [_expand_entry(e, resolution) for e in entries]
    validate_table(table)
    return table


def critic_table(resolution: Optional[int] = None, include_image: bool = False,
                 registry: Optional[dict] = None) -> List[LayerSpec]:
    registry = registry or load_architecture_registry()
    resolution = resolution or registry["default_resolution"]
    _check_resolution(registry, resolution)

    in_channels = registry["critic"]["mask_channels"] + (1 if include_image else 0)
    down = [dict(e) for e in registry["down_path"]]
    down[0]["in"] = in_channels

    table = [_expand_entry(e, resolution) for e in down + registry["critic"]["head"]]
    validate_table(table)
    return table


# -----------------------------
# Validation and derived quantities
# -----------------------------

def validate_table(table: List[LayerSpec]):
    """Channel and resolution chaining plus per-kind geometry rules."""
    for i, spec in enumerate(table):
        where = f"layer {i} ({spec.kind})"

        if spec.kind in ("conv", "resblock"):
            if spec.kernel is None or spec.kernel % 2 == 0:
                raise ConfigError(f"{where}: convolution kernels must be odd, got {spec.kernel}")
        if spec.kind == "transposed_conv":
            if spec.kernel is None:
                raise ConfigError(f"{where}: transposed convolution needs a kernel extent")
            check_transposed_geometry(spec.kernel, spec.kernel, spec.stride)
        if spec.kind in ("avg_pool", "softmax", "global_pool") and spec.in_channels != spec.out_channels:
            raise ConfigError(f"{where}: {spec.kind} cannot change channel count")
        if spec.kind == "avg_pool" and spec.resolution % 2:
            raise ConfigError(f"{where}: avg_pool input extent {spec.resolution} is odd")
        if spec.kind == "resblock":
            if spec.in_channels > spec.out_channels:
                raise ConfigError(f"{where}: resblock shortcut cannot narrow {spec.in_channels}->{spec.out_channels}")
            if spec.repeat > 1 and spec.in_channels != spec.out_channels:
                raise ConfigError(f"{where}: repeated resblocks must keep their channel count")

        if i == 0:
            continue
        prev = table[i - 1]
        if prev.out_channels != spec.in_channels:
            raise ConfigError(
                f"{where}: expects {spec.in_channels} input channels, previous layer emits {prev.out_channels}"
            )
        if prev.out_resolution != spec.resolution:
            raise ConfigError(
                f"{where}: expects input extent {spec.resolution}, previous layer emits {prev.out_resolution}"
            )


def conv_layer_count(table: List[LayerSpec]) -> int:
    count = 0
    for spec in table:
        if spec.kind == "conv":
            count += 1
        elif spec.kind == "resblock":
            count += 2 * spec.repeat
    return count


def spec_param_count(spec: LayerSpec) -> int:
    k = spec.kernel or 0
    cin, cout = spec.in_channels, spec.out_channels
    if spec.kind in ("conv", "transposed_conv"):
        return k * k * cin * cout + cout
    if spec.kind == "dense":
        return cin * cout + cout
    if spec.kind == "resblock":
        w = spec.width
        block = 2 * cin + (k * k * cin * w + w) + 2 * w + (k * k * w * cout + cout)
        return block * spec.repeat
    return 0


def table_param_count(table: List[LayerSpec]) -> int:
    return sum(spec_param_count(s) for s in table)


def down_path(table: List[LayerSpec]) -> List[LayerSpec]:
    """Prefix of the table up to and including the last resblock."""
    last = max(i for i, s in enumerate(table) if s.kind == "resblock")
    return table[:last + 1]


def fingerprint(table: List[LayerSpec]) -> str:
    payload = json.dumps([s.model_dump() for s in table], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def budget_band(name: str, registry: Optional[dict] = None) -> tuple:
    """(low, high) parameter-count bounds from the registry budgets."""
    registry = registry or load_architecture_registry()
    budget = registry["budgets"][name]
    target, tol = budget["target"], budget["tolerance"]
    return round(target * (1 - tol)), round(target * (1 + tol))


def describe_table(table: List[LayerSpec]) -> List[Dict[str, Any]]:
    """Row dicts for manifests and the docs table."""
    rows = []
    for i, s in enumerate(table):
        rows.append({
            "index": i,
            "kind": s.kind if s.repeat == 1 else f"{s.kind} x{s.repeat}",
            "kernel": s.kernel,
            "channels": f"{s.in_channels}->{s.out_channels}",
            "resolution": f"{s.resolution}->{s.out_resolution}",
            "params": spec_param_count(s),
        })
    return rows
