"""Shared data model: fixed-point tensors, layer/network shapes, architecture config.

All types here are immutable once constructed. Tensors carry signed
two's-complement integers at rest; the sign-magnitude view only appears
inside the encoder.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

CONV = "CONV"
FC = "FC"
LAYER_KINDS = (CONV, FC)
PRECISIONS = (8, 16)

# accumulator width per layer precision
PSUM_BITS = {16: 32, 8: 16}


def int_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


@dataclass(frozen=True, eq=False)
class FixedTensor:
    """Integer tensor with a declared signed bitwidth.

    ``data`` is stored flat in row-major order; use :attr:`array` for the
    shaped (read-only) view.
    """

    dims: tuple[int, ...]
    bitwidth: int
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if self.bitwidth not in PRECISIONS:
            raise ValueError(f"bitwidth must be 8 or 16, got {self.bitwidth}")
        if any(d < 0 for d in dims):
            raise ValueError(f"negative extent in dims {dims}")
        data = np.asarray(self.data)
        if data.size and not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.mod(data, 1) == 0):
                raise ValueError("FixedTensor data must be integers")
        # int64 input is adopted without a copy (and marked read-only)
        data = data.astype(np.int64, copy=False).reshape(-1)
        if data.size != int(np.prod(dims, dtype=np.int64)):
            raise ValueError(f"data length {data.size} does not match dims {dims}")
        lo, hi = int_range(self.bitwidth)
        if data.size and (data.min() < lo or data.max() > hi):
            raise ValueError(f"element outside [{lo}, {hi}] for {self.bitwidth}-bit tensor")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, bitwidth: int) -> "FixedTensor":
        arr = np.asarray(arr)
        return cls(tuple(arr.shape), bitwidth, arr.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __eq__(self, other):
        if not isinstance(other, FixedTensor):
            return NotImplemented
        return (self.dims == other.dims and self.bitwidth == other.bitwidth
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"FixedTensor(dims={self.dims}, bitwidth={self.bitwidth})"


@dataclass(frozen=True)
class Pool:
    window: int
    stride: int


@dataclass(frozen=True)
class LayerSpec:
    """Shape and quantization parameters of one CONV or FC layer.

    ``h_i``/``w_i`` are the already-padded IFM extents; ``pad`` only records
    how much zero border the network runner adds to the previous layer's
    output before feeding it here. ``ofm_shift`` is an arithmetic right shift
    applied to the accumulator before the OFM is truncated to ``precision``.
    """

    kind: str
    n_ic: int
    n_oc: int
    h_i: int = 1
    w_i: int = 1
    h_k: int = 1
    w_k: int = 1
    stride: int = 1
    n_nzb_max: int = 16
    precision: int = 16
    post_relu: bool = True
    pool: Pool | None = None
    pad: int = 0
    ofm_shift: int = 0
    name: str = ""

    @property
    def is_fc(self) -> bool:
        return self.kind == FC

    @property
    def psum_bits(self) -> int:
        return PSUM_BITS[self.precision]

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.n_oc, self.n_ic, self.h_k, self.w_k)

    @property
    def ifm_dims(self) -> tuple[int, int, int]:
        return (self.n_ic, self.h_i, self.w_i)

    @property
    def n_weights(self) -> int:
        return self.n_oc * self.n_ic * self.h_k * self.w_k

    @property
    def macs(self) -> int:
        h_o, w_o = output_dims(self)
        return self.n_weights * h_o * w_o


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_dims: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    # False for branchy topologies (residual, inception, route): each layer is
    # then an independent workload and shapes are not chained.
    sequential: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(self.input_dims))
        object.__setattr__(self, "layers", tuple(self.layers))

    def __len__(self):
        return len(self.layers)

    def with_overrides(self, *, precision: int | None = None,
                       n_nzb_max: int | None = None) -> "NetworkSpec":
        """Copy with every layer's precision and/or NNZB cap replaced.

        When only ``precision`` is given, caps above it are clipped.
        """
        layers = []
        for layer in self.layers:
            p = precision if precision is not None else layer.precision
            n = n_nzb_max if n_nzb_max is not None else min(layer.n_nzb_max, p)
            layers.append(replace(layer, precision=p, n_nzb_max=n))
        return replace(self, layers=tuple(layers))


@dataclass(frozen=True)
class ArchConfig:
    """Hardware parameters.

    Defaults describe a 32x32 array with 8x8 IFM tiles and 32 I&W buffers of
    2x1K + 2x256 16-bit words each (ping-pong). ``dram_words_per_cycle`` is the
    DMA port width in 16-bit words. ``dram_energy_pj_per_bit`` is a placeholder
    with no measured basis; only ratios derived from it are meaningful.
    """

    n_pe: int = 32
    w_is: int = 8
    h_is: int = 8
    ifm_weight_buffer_words: int = 32 * (2 * 1024 + 2 * 256)
    output_buffer_words: int = 32 * 2 * 64
    core_power_mw_16b: float = 689.0
    core_power_mw_8b: float = 729.0
    dram_energy_pj_per_bit: float = 20.0
    clock_hz: float = 1e9
    dram_words_per_cycle: int = 16
    area_mm2: float = 4.99
    buffer_word_bits: int = 16

    def __post_init__(self):
        for name in ("n_pe", "w_is", "h_is", "dram_words_per_cycle", "buffer_word_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("ifm_weight_buffer_words", "output_buffer_words", "core_power_mw_16b",
                     "core_power_mw_8b", "dram_energy_pj_per_bit", "area_mm2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be positive")

    def core_power_mw(self, precision: int) -> float:
        return self.core_power_mw_8b if precision == 8 else self.core_power_mw_16b


def output_dims(layer: LayerSpec) -> tuple[int, int]:
    """Convolution output extent (no padding; stride applies to both axes)."""
    if layer.kind == FC:
        return (1, 1)
    if layer.h_k > layer.h_i or layer.w_k > layer.w_i:
        raise ValueError("kernel exceeds input")
    s = layer.stride
    return ((layer.h_i - layer.h_k) // s + 1, (layer.w_i - layer.w_k) // s + 1)


def pooled_dims(layer: LayerSpec) -> tuple[int, int, int]:
    """OFM (C, H, W) after optional max pooling."""
    h, w = output_dims(layer)
    if layer.pool is not None:
        win, s = layer.pool.window, layer.pool.stride
        if win > h or win > w:
            raise ValueError("pooling window exceeds OFM")
        h, w = (h - win) // s + 1, (w - win) // s + 1
    return (layer.n_oc, h, w)


@dataclass(frozen=True)
class Diagnostic:
    layer: int
    field: str
    message: str

    def __str__(self):
        where = "network" if self.layer < 0 else f"layer {self.layer}"
        return f"{where}: {self.field}: {self.message}"


def _layer_diagnostics(idx: int, layer: LayerSpec) -> list[Diagnostic]:
    out = []

    def bad(fld, msg):
        out.append(Diagnostic(idx, fld, msg))

    if layer.kind not in LAYER_KINDS:
        bad("kind", f"unknown layer kind {layer.kind!r}")
    if layer.precision not in PRECISIONS:
        bad("precision", "precision must be 8 or 16")
    elif not 1 <= layer.n_nzb_max <= layer.precision:
        bad("n_nzb_max", f"n_nzb_max must lie in [1, {layer.precision}]")
    for name in ("n_ic", "n_oc", "h_i", "w_i", "h_k", "w_k", "stride"):
        if getattr(layer, name) < 1:
            bad(name, "must be >= 1")
    if layer.pad < 0:
        bad("pad", "must be >= 0")
    if layer.ofm_shift < 0 or (layer.precision in PSUM_BITS
                               and layer.ofm_shift >= PSUM_BITS[layer.precision]):
        bad("ofm_shift", "shift outside accumulator width")
    if layer.kind == FC:
        if (layer.h_k, layer.w_k) != (1, 1):
            bad("h_k", "FC requires 1×1 kernel")
        if (layer.h_i, layer.w_i) != (1, 1):
            bad("h_i", "FC requires 1×1 input")
        if layer.pool is not None:
            bad("pool", "FC layers cannot pool")
        if layer.pad:
            bad("pad", "FC layers cannot pad")
    elif layer.h_k > layer.h_i or layer.w_k > layer.w_i:
        bad("h_k", "kernel exceeds input")
    if layer.pool is not None and not out:
        if layer.pool.window < 1 or layer.pool.stride < 1:
            bad("pool", "window and stride must be >= 1")
        else:
            h, w = output_dims(layer)
            if layer.pool.window > min(h, w):
                bad("pool", "pooling window exceeds OFM")
    return out


def validate_network(net: NetworkSpec, arch: ArchConfig | None = None) -> list[Diagnostic]:
    """Every invariant violation in ``net``; empty when the network is well formed."""
    diags: list[Diagnostic] = []
    if not net.layers:
        diags.append(Diagnostic(-1, "layers", "network has no layers"))
    per_layer_ok = []
    for i, layer in enumerate(net.layers):
        d = _layer_diagnostics(i, layer)
        diags.extend(d)
        per_layer_ok.append(not d)
    if not net.sequential or not net.layers:
        return diags

    first = net.layers[0]
    c, h, w = net.input_dims
    if first.kind == FC:
        if first.n_ic != c * h * w:
            diags.append(Diagnostic(0, "n_ic", f"expected {c * h * w} from network input"))
    elif (first.n_ic, first.h_i, first.w_i) != (c, h + 2 * first.pad, w + 2 * first.pad):
        diags.append(Diagnostic(0, "h_i", f"does not match network input {net.input_dims}"))

    for i in range(1, len(net.layers)):
        if not per_layer_ok[i - 1]:
            continue
        c, h, w = pooled_dims(net.layers[i - 1])
        nxt = net.layers[i]
        if nxt.kind == FC:
            if nxt.n_ic != c * h * w:
                diags.append(Diagnostic(i, "n_ic", f"expected {c * h * w} (flattened previous output)"))
        else:
            if nxt.n_ic != c:
                diags.append(Diagnostic(i, "n_ic", f"expected {c} from previous layer"))
            if (nxt.h_i, nxt.w_i) != (h + 2 * nxt.pad, w + 2 * nxt.pad):
                diags.append(Diagnostic(
                    i, "h_i", f"expected {h + 2 * nxt.pad}x{w + 2 * nxt.pad} from previous layer"))
    return diags


# ---------------------------------------------------------------------------
# config files

_LAYER_FIELDS = {f.name for f in fields(LayerSpec)}


def layer_from_dict(d: dict, defaults: dict | None = None) -> LayerSpec:
    merged = dict(defaults or {})
    merged.update(d)
    unknown = set(merged) - _LAYER_FIELDS
    if unknown:
        raise ValueError(f"unknown layer fields: {sorted(unknown)}")
    pool = merged.get("pool")
    if isinstance(pool, dict):
        merged["pool"] = Pool(int(pool["window"]), int(pool["stride"]))
    merged["kind"] = str(merged.get("kind", CONV)).upper()
    return LayerSpec(**merged)


def layer_to_dict(layer: LayerSpec) -> dict:
    d = {}
    for f in fields(LayerSpec):
        v = getattr(layer, f.name)
        if isinstance(v, Pool):
            v = {"window": v.window, "stride": v.stride}
        d[f.name] = v
    return d


def network_from_dict(d: dict) -> NetworkSpec:
    defaults = {k: d[k] for k in ("n_nzb_max", "precision") if k in d}
    layers = [layer_from_dict(ld, defaults) for ld in d["layers"]]
    return NetworkSpec(name=d.get("name", ""), input_dims=tuple(d["input"]),
                       layers=tuple(layers), sequential=bool(d.get("sequential", True)))


def network_to_dict(net: NetworkSpec) -> dict:
    return {"name": net.name, "input": list(net.input_dims), "sequential": net.sequential,
            "layers": [layer_to_dict(layer) for layer in net.layers]}


def load_network(path) -> NetworkSpec:
    with open(path) as fh:
        return network_from_dict(yaml.safe_load(fh))


def save_network(net: NetworkSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(network_to_dict(net), sort_keys=False))


BUNDLED_DIR = Path(__file__).parent / "networks"


def bundled_networks() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.yaml"))


def bundled_network(name: str) -> NetworkSpec:
    path = BUNDLED_DIR / f"{name}.yaml"
    if not path.exists():
        raise KeyError(f"no bundled network {name!r}; have {bundled_networks()}")
    return load_network(path)


def load_arch(path=None) -> ArchConfig:
    if path is None:
        return ArchConfig()
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    known = {f.name for f in fields(ArchConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown arch fields: {sorted(unknown)}")
    return ArchConfig(**d)


# ---------------------------------------------------------------------------
# weight file: 16-byte header then each layer's [Co, Ci, Hk, Wk] weights as
# little-endian int8/int16 according to the layer precision.

WEIGHT_MAGIC = b"SBWT"
WEIGHT_VERSION = 1
_WEIGHT_HEADER = struct.Struct("<4sIII")


def _dtype_for(bits: int) -> str:
    return "<i1" if bits == 8 else "<i2"


def weight_file_bytes(tensors: Iterable[FixedTensor]) -> bytes:
    tensors = list(tensors)
    chunks = [_WEIGHT_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, len(tensors), 0)]
    chunks += [t.data.astype(_dtype_for(t.bitwidth)).tobytes() for t in tensors]
    return b"".join(chunks)


def write_weight_file(path, tensors: Sequence[FixedTensor]) -> None:
    Path(path).write_bytes(weight_file_bytes(tensors))


def read_weight_file(path, net: NetworkSpec) -> list[FixedTensor]:
    raw = Path(path).read_bytes()
    if len(raw) < _WEIGHT_HEADER.size:
        raise ValueError("weight file shorter than header")
    magic, version, count, _ = _WEIGHT_HEADER.unpack_from(raw)
    if magic != WEIGHT_MAGIC:
        raise ValueError(f"bad weight file magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    if count != len(net.layers):
        raise ValueError(f"weight file has {count} layers, network has {len(net.layers)}")
    offset = _WEIGHT_HEADER.size
    out = []
    for layer in net.layers:
        n = layer.n_weights
        width = layer.precision // 8
        end = offset + n * width
        if end > len(raw):
            raise ValueError(f"weight file truncated in layer {layer.name or len(out)}")
        arr = np.frombuffer(raw, dtype=_dtype_for(layer.precision), count=n, offset=offset)
        out.append(FixedTensor(layer.weight_dims, layer.precision, arr))
        offset = end
    if offset != len(raw):
        raise ValueError("trailing bytes after last layer")
    return out
