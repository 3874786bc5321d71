"""Data partition, tile-pass schedule, dataflow selection and DRAM traffic.

IFMs are cut into ``w_is x h_is`` tiles; channels into groups of ``n_pe``.
An output pixel belongs to the IFM tile containing the top-left corner of
its receptive field, and each tile fetches its outputs' full receptive field
(tile plus kernel halo).

Two dataflows are modeled. RIF keeps an IFM tile on chip and sweeps all
output-channel tiles, re-reading weights once per spatial tile. RWF keeps a
weight tile and sweeps all spatial tiles, re-reading the IFM once per
output-channel tile.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .core import FC, ArchConfig, LayerSpec, output_dims, pooled_dims
from .encoder import bits_per_weight

RIF = "RIF"
RWF = "RWF"
Dataflow = Literal["RIF", "RWF"]
WORD_BITS = 16


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _chunks(n: int, size: int) -> tuple[tuple[int, int], ...]:
    return tuple((s, min(s + size, n)) for s in range(0, n, size))


def _out_ranges(n_in: int, n_out: int, tile: int, stride: int) -> tuple[tuple[int, int], ...]:
    # output y is owned by input tile floor(y * stride / tile)
    out = []
    for t in range(ceil_div(n_in, tile)):
        start = ceil_div(t * tile, stride)
        stop = min(n_out, ceil_div((t + 1) * tile, stride))
        out.append((start, max(start, stop)))
    return tuple(out)


@dataclass(frozen=True)
class TilingPlan:
    t_ic: int
    t_oc: int
    t_wi: int
    t_hi: int
    w_is: int
    h_is: int
    n_pe: int
    ic_ranges: tuple[tuple[int, int], ...]
    oc_ranges: tuple[tuple[int, int], ...]
    out_rows: tuple[tuple[int, int], ...]  # per height tile, half-open output-row range
    out_cols: tuple[tuple[int, int], ...]
    dataflow: str | None = None

    @property
    def spatial_tiles(self) -> list[tuple[int, int]]:
        """(row tile, col tile) pairs that own at least one output pixel."""
        return [(r, c) for c in range(self.t_wi) for r in range(self.t_hi)
                if self.out_rows[r][1] > self.out_rows[r][0]
                and self.out_cols[c][1] > self.out_cols[c][0]]

    @property
    def n_spatial(self) -> int:
        return len(self.spatial_tiles)

    def with_dataflow(self, dataflow: str) -> "TilingPlan":
        if dataflow not in (RIF, RWF):
            raise ValueError(f"unknown dataflow {dataflow!r}")
        return replace(self, dataflow=dataflow)


def tile_layer(layer: LayerSpec, arch: ArchConfig) -> TilingPlan:
    """Partition a layer per the array size and IFM tile edge (dataflow left unset)."""
    n = arch.n_pe
    h_o, w_o = output_dims(layer)
    if layer.kind == FC:
        rows = cols = ((0, 1),)
        t_wi = t_hi = 1
    else:
        rows = _out_ranges(layer.h_i, h_o, arch.h_is, layer.stride)
        cols = _out_ranges(layer.w_i, w_o, arch.w_is, layer.stride)
        t_hi, t_wi = len(rows), len(cols)
    return TilingPlan(
        t_ic=ceil_div(layer.n_ic, n), t_oc=ceil_div(layer.n_oc, n), t_wi=t_wi, t_hi=t_hi,
        w_is=arch.w_is, h_is=arch.h_is, n_pe=n,
        ic_ranges=_chunks(layer.n_ic, n), oc_ranges=_chunks(layer.n_oc, n),
        out_rows=rows, out_cols=cols)


def input_span(out_range: tuple[int, int], kernel: int, stride: int) -> tuple[int, int]:
    """Half-open IFM index range read by outputs ``out_range`` (empty -> (0, 0))."""
    s0, s1 = out_range
    if s1 <= s0:
        return (0, 0)
    return (s0 * stride, (s1 - 1) * stride + kernel)


# ---------------------------------------------------------------------------
# traffic


@dataclass(frozen=True)
class TrafficReport:
    dram_bits_ifm: int = 0
    dram_bits_weight: int = 0
    dram_bits_ofm: int = 0

    @property
    def total_bits(self) -> int:
        return self.dram_bits_ifm + self.dram_bits_weight + self.dram_bits_ofm

    @property
    def total_accesses(self) -> int:
        return ceil_div(self.total_bits, WORD_BITS)

    def __add__(self, other: "TrafficReport") -> "TrafficReport":
        return TrafficReport(self.dram_bits_ifm + other.dram_bits_ifm,
                             self.dram_bits_weight + other.dram_bits_weight,
                             self.dram_bits_ofm + other.dram_bits_ofm)

    def to_row(self) -> dict:
        return {"dram_bits_ifm": self.dram_bits_ifm, "dram_bits_weight": self.dram_bits_weight,
                "dram_bits_ofm": self.dram_bits_ofm, "total_bits": self.total_bits,
                "total_accesses": self.total_accesses}


def traffic_from_counts(ifm_bits: int, weight_bits: int, ofm_bits: int,
                        n_spatial: int, t_oc: int, dataflow: str) -> TrafficReport:
    """Re-fetch model: RIF reads weights once per spatial tile, RWF reads the IFM once per OC tile."""
    if dataflow == RIF:
        return TrafficReport(ifm_bits, weight_bits * n_spatial, ofm_bits)
    if dataflow == RWF:
        return TrafficReport(ifm_bits * t_oc, weight_bits, ofm_bits)
    raise ValueError(f"unknown dataflow {dataflow!r}")


def weight_bits_for(layer: LayerSpec, encoded: bool = True) -> int:
    """Bits per stored weight: encoded format, or raw ``precision`` bits."""
    if not encoded:
        return layer.precision
    return bits_per_weight(layer.precision, layer.n_nzb_max)


def layer_bit_counts(layer: LayerSpec, plan: TilingPlan,
                     weight_bits_per_weight: int | None = None) -> tuple[int, int, int]:
    """(IFM bits incl. halo, weight bits, OFM bits) for one fetch of each."""
    if weight_bits_per_weight is None:
        weight_bits_per_weight = weight_bits_for(layer)
    p = layer.precision
    if layer.kind == FC:
        ifm = layer.n_ic * p
    else:
        ifm = 0
        for r, c in plan.spatial_tiles:
            h0, h1 = input_span(plan.out_rows[r], layer.h_k, layer.stride)
            w0, w1 = input_span(plan.out_cols[c], layer.w_k, layer.stride)
            ifm += (h1 - h0) * (w1 - w0)
        ifm *= layer.n_ic * p
    c, h, w = pooled_dims(layer)
    return ifm, layer.n_weights * weight_bits_per_weight, c * h * w * p


def dram_traffic(layer: LayerSpec, plan: TilingPlan, dataflow: str | None = None,
                 weight_bits_per_weight: int | None = None) -> TrafficReport:
    dataflow = dataflow or plan.dataflow or RIF
    ifm, wts, ofm = layer_bit_counts(layer, plan, weight_bits_per_weight)
    return traffic_from_counts(ifm, wts, ofm, plan.n_spatial, plan.t_oc, dataflow)


def choose_dataflow(layer: LayerSpec, plan: TilingPlan,
                    weight_bits_per_weight: int | None = None) -> str:
    """Dataflow with the smaller total DRAM traffic; ties go to RIF."""
    rif = dram_traffic(layer, plan, RIF, weight_bits_per_weight).total_bits
    rwf = dram_traffic(layer, plan, RWF, weight_bits_per_weight).total_bits
    return RWF if rwf < rif else RIF


def plan_layer(layer: LayerSpec, arch: ArchConfig,
               weight_bits_per_weight: int | None = None) -> TilingPlan:
    plan = tile_layer(layer, arch)
    return plan.with_dataflow(choose_dataflow(layer, plan, weight_bits_per_weight))


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class TilePass:
    oc_tile: int
    ic_tile: int
    row_tile: int
    col_tile: int
    pixels: int          # output pixels computed in this pass
    load_ifm: bool       # IFM tile fetched from DRAM before this pass
    load_weight: bool    # weight tile fetched from DRAM before this pass
    last_ic: bool        # OFM tile complete after this pass


def schedule(plan: TilingPlan, layer: LayerSpec | None = None) -> list[TilePass]:
    """Tile passes in loop-nest order.

    Loop nest (outer to inner): OC tiles when RWF, IFM width tiles, IFM height
    tiles, OC tiles when RIF, IC tiles. Kernel offsets and bit slots iterate
    inside each pass.
    """
    dataflow = plan.dataflow or RIF
    t_oc_rwf, t_oc_rif = (plan.t_oc, 1) if dataflow == RWF else (1, plan.t_oc)
    first_spatial = plan.spatial_tiles[0] if plan.spatial_tiles else None
    passes = []
    for a in range(t_oc_rwf):
        for b in range(plan.t_wi):
            for c in range(plan.t_hi):
                rows, cols = plan.out_rows[c], plan.out_cols[b]
                pixels = max(0, rows[1] - rows[0]) * max(0, cols[1] - cols[0])
                for d in range(t_oc_rif):
                    oc = a if dataflow == RWF else d
                    for e in range(plan.t_ic):
                        if dataflow == RIF:
                            load_ifm, load_w = d == 0, True
                        else:
                            load_ifm, load_w = True, (c, b) == first_spatial
                        passes.append(TilePass(oc, e, c, b, pixels,
                                               load_ifm and pixels > 0, load_w and pixels > 0,
                                               e == plan.t_ic - 1))
    return passes


def coverage_counts(plan: TilingPlan, layer: LayerSpec) -> np.ndarray:
    """How many passes touch each (oc, ic, out_y, out_x); all ones for a valid plan."""
    h_o, w_o = output_dims(layer)
    cover = np.zeros((layer.n_oc, layer.n_ic, h_o, w_o), dtype=np.int64)
    for p in schedule(plan, layer):
        o0, o1 = plan.oc_ranges[p.oc_tile]
        i0, i1 = plan.ic_ranges[p.ic_tile]
        r0, r1 = plan.out_rows[p.row_tile]
        c0, c1 = plan.out_cols[p.col_tile]
        cover[o0:o1, i0:i1, r0:r1, c0:c1] += 1
    return cover
