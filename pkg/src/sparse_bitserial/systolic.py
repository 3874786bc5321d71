"""Cycle-level and functional model of the sparse bit-serial systolic array.

PE(r, c) holds the weights of input channel r and output channel c. IFMs are
broadcast along rows, partial sums flow down columns. Every controller step
is one shift-add slot: the PE negates the IFM when the weight is negative,
shifts it by the slot's bit position and accumulates, or sits gated when the
slot's bitmap bit is clear.

Two timing engines share one contract:

* ``analytic`` - per-pass closed form, used for full-size networks;
* ``event`` - cycle-by-cycle stepping of every PE register, limited to
  arrays of at most 8x8 and used to validate the closed form.

Per CONV tile pass: ``(n_pe - 1)`` fill + compute + ``(n_pe - 1)`` drain,
where compute = lane steps x sum over kernel offsets of the per-offset step
cost (``precision`` dense, ``n_max`` balanced, block-max NNZB imbalanced).
In 8-bit mode each PE runs two lanes, so lane steps = ceil(pixels / 2).
FC layers run on one PE column and overlap the weight stream with compute.
DRAM refills are double-buffered; a pass stalls only when its refill takes
longer than the previous pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import FC, PSUM_BITS, ArchConfig, FixedTensor, LayerSpec, NetworkSpec, output_dims, pooled_dims
from .dataflow import (RIF, TilePass, TilingPlan, TrafficReport, ceil_div, dram_traffic,
                       input_span, plan_layer, schedule, tile_layer, weight_bits_for)
from .encoder import EncodedLayer, EncodedWeight
from .reference import IntOperand, ifm_array, im2col, oc_chunks, relu_pool, wrap, write_out

EVENT_MAX_PE = 8


class WorkloadMode(str, enum.Enum):
    DENSE = "dense"            # every weight costs `precision` steps
    IMBALANCED = "imbalanced"  # every weight costs its own NNZB; array waits for the slowest
    BALANCED = "balanced"      # every weight costs n_max steps

    @classmethod
    def parse(cls, value) -> "WorkloadMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class BufferOverflow(ValueError):
    pass


def lane_count(precision: int) -> int:
    return 2 if precision == 8 else 1


def lane_steps(pixels: int, precision: int) -> int:
    return ceil_div(pixels, lane_count(precision))


# ---------------------------------------------------------------------------
# single PE


@dataclass(frozen=True)
class WeightSlot:
    sign: int      # 1 = negative weight
    position: int  # shift amount
    valid: int     # bitmap bit


@dataclass(frozen=True)
class PEState:
    psums: tuple[int, ...]
    lane_bits: int
    gated: bool = False
    cycle: int = 0

    @classmethod
    def fresh(cls, precision: int) -> "PEState":
        lanes = lane_count(precision)
        return cls(psums=(0,) * lanes, lane_bits=PSUM_BITS[16] // lanes)


def pe_step(state: PEState, ifm, slot) -> PEState:
    """One PE cycle: complement, shift and accumulate each lane unless gated.

    ``ifm`` and ``slot`` are per-lane sequences (a bare value is accepted for
    a single lane).
    """
    ifms = ifm if isinstance(ifm, (tuple, list)) else (ifm,)
    slots = slot if isinstance(slot, (tuple, list)) else (slot,)
    if not (len(ifms) == len(slots) == len(state.psums)):
        raise ValueError("ifm/slot lanes do not match PE lanes")
    psums = []
    gated = True
    for p, x, s in zip(state.psums, ifms, slots):
        if s.valid:
            gated = False
            operand = -int(x) if s.sign else int(x)
            p = wrap(p + (operand << s.position), state.lane_bits)
        psums.append(p)
    return replace(state, psums=tuple(psums), gated=gated, cycle=state.cycle + 1)


# ---------------------------------------------------------------------------
# single column (workload-balance view)


@dataclass(frozen=True)
class ColumnTiming:
    latency: int
    idle: tuple[int, ...]
    gated: tuple[int, ...]


def _column_nnzb(weights) -> list[int]:
    return [w.nnzb if isinstance(w, EncodedWeight) else int(w) for w in weights]


def simulate_column(weights: Sequence, mode, precision: int, n_max: int | None = None) -> ColumnTiming:
    """Latency of one weight pass through a column of PEs (closed form)."""
    mode = WorkloadMode.parse(mode)
    if not weights:
        raise ValueError("weights must be nonempty")
    nz = _column_nnzb(weights)
    if n_max is None:
        n_max = next((w.n_max for w in weights if isinstance(w, EncodedWeight)), max(nz))
    if mode is WorkloadMode.DENSE:
        return ColumnTiming(precision, (0,) * len(nz), (0,) * len(nz))
    if mode is WorkloadMode.IMBALANCED:
        lat = max(nz)
        return ColumnTiming(lat, tuple(lat - k for k in nz), (0,) * len(nz))
    if max(nz) > n_max:
        raise ValueError("weight NNZB exceeds n_max")
    return ColumnTiming(n_max, (0,) * len(nz), tuple(n_max - k for k in nz))


def event_column(weights: Sequence, mode, precision: int, n_max: int | None = None) -> ColumnTiming:
    """Same as :func:`simulate_column` but stepped one cycle at a time.

    Each cycle the controller issues one step to the whole column and only
    advances to the next weight pass when every PE reports done.
    """
    mode = WorkloadMode.parse(mode)
    nz = _column_nnzb(weights)
    if n_max is None:
        n_max = next((w.n_max for w in weights if isinstance(w, EncodedWeight)), max(nz))
    work = {WorkloadMode.DENSE: [precision] * len(nz),
            WorkloadMode.IMBALANCED: list(nz),
            WorkloadMode.BALANCED: [n_max] * len(nz)}[mode]
    remaining = list(work)
    idle = [0] * len(nz)
    gated = [0] * len(nz)
    cycles = 0
    while any(remaining):
        for i, left in enumerate(remaining):
            if left == 0:
                idle[i] += 1
                continue
            step = work[i] - left
            if mode is WorkloadMode.BALANCED and step >= nz[i]:
                gated[i] += 1
            remaining[i] -= 1
        cycles += 1
    return ColumnTiming(cycles, tuple(idle), tuple(gated))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CycleReport:
    layer: str
    mode: str
    precision: int
    n_pe: int
    total_cycles: int
    compute_cycles: int
    fill_drain_cycles: int
    stall_cycles: int
    pe_busy_cycles: int
    pe_idle_cycles: int
    gated_step_count: int
    passes: int = 0
    psum_overflows: int = 0  # filled by the analytic engine when an IFM is given

    @property
    def utilization(self) -> float:
        tot = self.pe_busy_cycles + self.pe_idle_cycles
        return self.pe_busy_cycles / tot if tot else 0.0

    def to_row(self) -> dict:
        return {"layer": self.layer, "mode": self.mode, "precision": self.precision,
                "total_cycles": self.total_cycles, "compute_cycles": self.compute_cycles,
                "fill_drain_cycles": self.fill_drain_cycles, "stall_cycles": self.stall_cycles,
                "pe_busy_cycles": self.pe_busy_cycles, "pe_idle_cycles": self.pe_idle_cycles,
                "utilization": round(self.utilization, 6), "gated_step_count": self.gated_step_count,
                "passes": self.passes}


def sum_reports(reports: Sequence[CycleReport], name: str = "total") -> CycleReport:
    first = reports[0]
    return CycleReport(
        layer=name, mode=first.mode, precision=first.precision, n_pe=first.n_pe,
        **{k: sum(getattr(r, k) for r in reports)
           for k in ("total_cycles", "compute_cycles", "fill_drain_cycles", "stall_cycles",
                     "pe_busy_cycles", "pe_idle_cycles", "gated_step_count", "passes",
                     "psum_overflows")})


# ---------------------------------------------------------------------------
# per-block step costs


@dataclass
class _BlockCosts:
    """Step costs per (oc tile, ic tile) for CONV, or per (oc, ic tile) for FC."""
    steps: np.ndarray   # controller steps per lane step, summed over kernel offsets
    busy: np.ndarray    # PE-steps doing useful or gated work, per lane step
    gated: np.ndarray   # gated PE-steps, per lane step


def _block_costs(layer: LayerSpec, enc: EncodedLayer, mode: WorkloadMode, n_pe: int) -> _BlockCosts:
    co, ci, hk, wk = layer.weight_dims
    k2 = hk * wk
    nz = enc.nnzb().reshape(co, ci, k2)
    t_ic = ceil_div(ci, n_pe)
    ci_pad = t_ic * n_pe
    if layer.kind == FC:
        # one column: each OC is its own block over ic tiles
        nzp = np.zeros((co, ci_pad), dtype=np.int16)
        nzp[:, :ci] = nz[:, :, 0]
        nzp = nzp.reshape(co, t_ic, n_pe)
        rows = np.zeros((t_ic, n_pe), dtype=np.int64)
        rows.reshape(-1)[:ci] = 1
        active = np.broadcast_to(rows.sum(axis=1), (co, t_ic))
        nz_sum = nzp.sum(axis=2, dtype=np.int64)
        nz_max = nzp.max(axis=2)
        k2_eff = 1
    else:
        t_oc = ceil_div(co, n_pe)
        co_pad = t_oc * n_pe
        nzp = np.zeros((co_pad, ci_pad, k2), dtype=np.int16)
        nzp[:co, :ci] = nz
        nzp = nzp.reshape(t_oc, n_pe, t_ic, n_pe, k2)
        oc_used = np.array([min(n_pe, co - t * n_pe) for t in range(t_oc)])
        ic_used = np.array([min(n_pe, ci - t * n_pe) for t in range(t_ic)])
        active = np.outer(oc_used, ic_used)
        nz_sum = nzp.sum(axis=(1, 3, 4), dtype=np.int64)
        nz_max = nzp.max(axis=(1, 3)).sum(axis=-1)
        k2_eff = k2
    if mode is WorkloadMode.DENSE:
        steps = np.full(active.shape, layer.precision * k2_eff, dtype=np.int64)
        return _BlockCosts(steps, active * steps, np.zeros_like(steps))
    if mode is WorkloadMode.BALANCED:
        steps = np.full(active.shape, enc.n_max * k2_eff, dtype=np.int64)
        return _BlockCosts(steps, active * steps, active * steps - nz_sum)
    return _BlockCosts(nz_max.astype(np.int64), nz_sum.astype(np.int64),
                       np.zeros(active.shape, dtype=np.int64))


# ---------------------------------------------------------------------------
# DMA / buffer bookkeeping


def _words(bits: int) -> int:
    return ceil_div(bits, 16)


@dataclass(frozen=True)
class _PassIO:
    ifm_words: int
    weight_words: int
    ofm_words: int


def _pass_io(layer: LayerSpec, plan: TilingPlan, p: TilePass, wbits: int) -> _PassIO:
    o0, o1 = plan.oc_ranges[p.oc_tile]
    i0, i1 = plan.ic_ranges[p.ic_tile]
    if layer.kind == FC:
        ifm = _words((i1 - i0) * layer.precision)
    else:
        h0, h1 = input_span(plan.out_rows[p.row_tile], layer.h_k, layer.stride)
        w0, w1 = input_span(plan.out_cols[p.col_tile], layer.w_k, layer.stride)
        ifm = _words((h1 - h0) * (w1 - w0) * (i1 - i0) * layer.precision)
    weight = _words((o1 - o0) * (i1 - i0) * layer.h_k * layer.w_k * wbits)
    h_o, w_o = output_dims(layer)
    _, hp, wp = pooled_dims(layer)
    ofm = _words(ceil_div((o1 - o0) * p.pixels * layer.precision * hp * wp, h_o * w_o))
    return _PassIO(ifm, weight, ofm)


def _check_buffers(layer: LayerSpec, io: _PassIO, p: TilePass, plan: TilingPlan, arch: ArchConfig) -> None:
    half_in = arch.ifm_weight_buffer_words // 2
    if io.ifm_words + io.weight_words > half_in:
        raise BufferOverflow(
            f"{layer.name or 'layer'}: tile needs {io.ifm_words + io.weight_words} I&W words, "
            f"ping-pong half holds {half_in}")
    o0, o1 = plan.oc_ranges[p.oc_tile]
    out_words = _words((o1 - o0) * p.pixels * layer.precision)
    if out_words > arch.output_buffer_words // 2:
        raise BufferOverflow(
            f"{layer.name or 'layer'}: OFM tile needs {out_words} words, "
            f"ping-pong half holds {arch.output_buffer_words // 2}")


def _conv_stalls(layer, plan, passes, windows, wbits, arch) -> int:
    """Stall cycles of a double-buffered DMA feeding the pass sequence."""
    wpc = arch.dram_words_per_cycle
    stall = 0
    prev_window = 0
    pending_wb = 0
    started = False
    for p, window in zip(passes, windows):
        if p.pixels == 0:
            continue
        io = _pass_io(layer, plan, p, wbits)
        _check_buffers(layer, io, p, plan, arch)
        words = pending_wb + (io.ifm_words if p.load_ifm else 0) + (io.weight_words if p.load_weight else 0)
        load = ceil_div(words, wpc)
        stall += load if not started else max(0, load - prev_window)
        started = True
        prev_window = window
        pending_wb = io.ofm_words if p.last_ic else 0
    return stall + ceil_div(pending_wb, wpc)


def _check_plan(layer: LayerSpec, plan: TilingPlan, arch: ArchConfig) -> None:
    ref = tile_layer(layer, arch)
    if replace(plan, dataflow=None) != ref:
        raise ValueError("plan/layer mismatch: plan was not produced for this layer and arch")


def _check_encoding(layer: LayerSpec, enc: EncodedLayer) -> None:
    if tuple(enc.dims) != layer.weight_dims:
        raise ValueError(f"encoded dims {enc.dims} do not match layer {layer.weight_dims}")
    if enc.precision != layer.precision:
        raise ValueError("encoding precision does not match layer")


# ---------------------------------------------------------------------------
# analytic timing


def _analytic_timing(layer, enc, plan, mode, arch) -> CycleReport:
    n = arch.n_pe
    costs = _block_costs(layer, enc, mode, n)
    wbits = weight_bits_for(layer, encoded=mode is not WorkloadMode.DENSE)
    if layer.kind == FC:
        compute = int(costs.steps.sum())
        busy = int(costs.busy.sum())
        gated = int(costs.gated.sum())
        fill_drain = n - 1
        words = _words(layer.n_weights * wbits) + _words(layer.n_ic * layer.precision) \
            + _words(layer.n_oc * layer.precision)
        stall = max(0, ceil_div(words, arch.dram_words_per_cycle) - compute)
        total = compute + fill_drain + stall
        return CycleReport(layer.name, mode.value, layer.precision, n, total, compute, fill_drain,
                           stall, busy, n * n * total - busy, gated, passes=layer.n_oc * plan.t_ic)

    passes = schedule(plan, layer)
    compute = busy = gated = fill_drain = n_pass = 0
    windows = []
    for p in passes:
        if p.pixels == 0:
            windows.append(0)
            continue
        ls = lane_steps(p.pixels, layer.precision)
        c = ls * int(costs.steps[p.oc_tile, p.ic_tile])
        fd = 2 * (n - 1)
        compute += c
        fill_drain += fd
        busy += ls * int(costs.busy[p.oc_tile, p.ic_tile])
        gated += ls * int(costs.gated[p.oc_tile, p.ic_tile])
        windows.append(c + fd)
        n_pass += 1
    stall = _conv_stalls(layer, plan, passes, windows, wbits, arch)
    total = compute + fill_drain + stall
    return CycleReport(layer.name, mode.value, layer.precision, n, total, compute, fill_drain,
                       stall, busy, n * n * total - busy, gated, passes=n_pass)


# ---------------------------------------------------------------------------
# functional datapath (vectorized over pixels, blocked by PE-array tiles)


def _selector_planes(enc: EncodedLayer, mode: WorkloadMode, lo: int = 0, hi: int | None = None):
    """Yield flat {0, +-2^p} selectors (float64) for weights ``lo:hi``, one per plane.

    Sparse modes walk the encoded slots; dense mode walks every magnitude bit.
    """
    hi = len(enc) if hi is None else hi
    sign = np.where(enc.signs[lo:hi].astype(bool), -1.0, 1.0)
    if mode is WorkloadMode.DENSE:
        mag = np.zeros(hi - lo, dtype=np.uint16)
        for k in range(enc.n_max):
            mag |= enc.bitmaps[lo:hi, k].astype(np.uint16) << enc.positions[lo:hi, k].astype(np.uint16)
        for bit in range(enc.precision):
            on = (mag >> np.uint16(bit)) & np.uint16(1)
            if on.any():
                sel = sign * on
                sel *= float(1 << bit)
                yield sel
    else:
        for k in range(enc.n_max):
            valid = enc.bitmaps[lo:hi, k]
            if valid.any():
                yield np.ldexp(sign * valid, enc.positions[lo:hi, k])


def _functional(layer, enc, plan, mode, ifm: np.ndarray) -> tuple[np.ndarray, int]:
    """OFM accumulators built plane by plane from the shift-add selectors.

    Every plane is one controller step's worth of shift-add work across all
    PEs. Contributions are summed exactly and wrapped to the accumulator
    width at the end; two's-complement wrap commutes with addition, so this
    equals wrapping after every step (the event engine wraps per step).
    """
    co, ci, hk, wk = layer.weight_dims
    h_o, w_o = output_dims(layer)
    per = ci * hk * wk
    cols = IntOperand(im2col(ifm, hk, wk, layer.stride))
    wide = np.zeros((co, h_o * w_o), dtype=np.int64)
    bound = 1 << (layer.precision - 1)  # largest selector magnitude
    for o0, o1 in oc_chunks(co, per):
        for sel in _selector_planes(enc, mode, o0 * per, o1 * per):
            wide[o0:o1] += cols.rmatmul(sel.reshape(o1 - o0, per), bound)
    bits = layer.psum_bits
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    overflows = int(np.count_nonzero((wide < lo) | (wide > hi)))
    return wrap(wide, bits).reshape(co, h_o, w_o), overflows


# ---------------------------------------------------------------------------
# event engine


@dataclass
class _Step:
    pixels: tuple[int, ...]   # output pixel index per lane (-1 = empty lane)
    kpos: tuple[int, int]
    slot: int                 # slot index (sparse) or bit index (dense)


def _event_pass(layer, enc, plan, p: TilePass, mode, arch, ifm, out_acc, block_costs) -> tuple[int, int, int]:
    """Run one tile pass cycle by cycle; accumulate into ``out_acc`` (co, h_o*w_o).

    Returns (compute steps, busy PE-cycles, gated PE-cycles).
    """
    n = arch.n_pe
    o0, o1 = plan.oc_ranges[p.oc_tile]
    i0, i1 = plan.ic_ranges[p.ic_tile]
    r0, r1 = plan.out_rows[p.row_tile]
    c0, c1 = plan.out_cols[p.col_tile]
    h_o, w_o = output_dims(layer)
    hk, wk = layer.h_k, layer.w_k
    s = layer.stride
    lanes = lane_count(layer.precision)
    lane_bits = PSUM_BITS[16] // lanes
    pix = [y * w_o + x for y in range(r0, r1) for x in range(c0, c1)]
    groups = [tuple(pix[j:j + lanes]) + (-1,) * (lanes - len(pix[j:j + lanes]))
              for j in range(0, len(pix), lanes)]
    co, ci = layer.n_oc, layer.n_ic
    signs = enc.signs.reshape(co, ci, hk, wk)
    pos = enc.positions.reshape(co, ci, hk, wk, enc.n_max)
    valid = enc.bitmaps.reshape(co, ci, hk, wk, enc.n_max)
    nz = valid.sum(axis=-1)
    mag = enc.magnitudes().reshape(enc.dims) if mode is WorkloadMode.DENSE else None

    def cost(a, b):
        if mode is WorkloadMode.DENSE:
            return layer.precision
        if mode is WorkloadMode.BALANCED:
            return enc.n_max
        return int(nz[o0:o1, i0:i1, a, b].max())

    steps = [_Step(g, (a, b), k) for g in groups for a in range(hk) for b in range(wk)
             for k in range(cost(a, b))]
    S = len(steps)
    R, C = n, n
    total = S + (R - 1) + (C - 1)
    # registers: IFM lane values and psum lane values travelling with step index
    ifm_reg = [[None] * C for _ in range(R)]
    psum_reg = [[None] * C for _ in range(R)]
    busy = gated = 0
    for t in range(total):
        new_ifm = [[None] * C for _ in range(R)]
        new_psum = [[None] * C for _ in range(R)]
        for r in range(R):
            for c in range(C):
                sidx = t - r - c
                if not 0 <= sidx < S:
                    continue
                st = steps[sidx]
                ch, oc = i0 + r, o0 + c
                a, b = st.kpos
                # IFM enters the row at column 0 (skewed by r) and shifts right
                if c == 0:
                    vals = []
                    for q in st.pixels:
                        if q < 0 or ch >= i1:
                            vals.append(0)
                        else:
                            y, x = divmod(q, w_o)
                            vals.append(int(ifm[ch, y * s + a, x * s + b]))
                    x_in = tuple(vals)
                else:
                    x_in = ifm_reg[r][c - 1]
                new_ifm[r][c] = x_in
                p_in = psum_reg[r - 1][c] if r > 0 else (0,) * lanes
                active = ch < i1 and oc < o1
                if active:
                    if mode is WorkloadMode.DENSE:
                        bit = st.slot
                        on = int((mag[oc, ch, a, b] >> bit) & 1)
                        slot = WeightSlot(int(signs[oc, ch, a, b]), bit, on)
                        busy += 1
                    else:
                        k = st.slot
                        v = int(valid[oc, ch, a, b, k]) if k < enc.n_max else 0
                        slot = WeightSlot(int(signs[oc, ch, a, b]), int(pos[oc, ch, a, b, k]) if v else 0, v)
                        if mode is WorkloadMode.IMBALANCED and k >= nz[oc, ch, a, b]:
                            pass  # finished early: idle until the block's slowest PE is done
                        else:
                            busy += 1
                            if not v:
                                gated += 1
                    st_pe = pe_step(PEState(p_in, lane_bits), list(x_in), [slot] * lanes)
                    new_psum[r][c] = st_pe.psums
                else:
                    new_psum[r][c] = p_in
                if r == R - 1 and oc < o1:
                    for q, v in zip(st.pixels, new_psum[r][c]):
                        if q >= 0:
                            out_acc[oc, q] = wrap(int(out_acc[oc, q]) + v, layer.psum_bits)
        ifm_reg, psum_reg = new_ifm, new_psum
    return S, busy, gated


def _event_fc_pass(layer, enc, plan, mode, arch, ifm, out_acc) -> tuple[int, int, int]:
    """FC on a single column: steps over (oc, ic tile, slot), cycle by cycle."""
    n = arch.n_pe
    ci = layer.n_ic
    x = ifm.reshape(-1)
    signs = enc.signs.reshape(layer.n_oc, ci)
    pos = enc.positions.reshape(layer.n_oc, ci, enc.n_max)
    valid = enc.bitmaps.reshape(layer.n_oc, ci, enc.n_max)
    nz = valid.sum(axis=-1)
    mag = enc.magnitudes().reshape(enc.dims).reshape(layer.n_oc, ci)
    steps = []
    for oc in range(layer.n_oc):
        for (i0, i1) in plan.ic_ranges:
            if mode is WorkloadMode.DENSE:
                k_max = layer.precision
            elif mode is WorkloadMode.BALANCED:
                k_max = enc.n_max
            else:
                k_max = int(nz[oc, i0:i1].max())
            steps += [(oc, i0, i1, k) for k in range(k_max)]
    S = len(steps)
    bits = PSUM_BITS[16]
    lane_bits = bits // lane_count(layer.precision)
    psum_reg = [None] * n
    busy = gated = 0
    for t in range(S + n - 1):
        new = [None] * n
        for r in range(n):
            sidx = t - r
            if not 0 <= sidx < S:
                continue
            oc, i0, i1, k = steps[sidx]
            p_in = psum_reg[r - 1] if r > 0 else (0,) * lane_count(layer.precision)
            ch = i0 + r
            if ch < i1:
                if mode is WorkloadMode.DENSE:
                    slot = WeightSlot(int(signs[oc, ch]), k, int((mag[oc, ch] >> k) & 1))
                    busy += 1
                else:
                    v = int(valid[oc, ch, k])
                    slot = WeightSlot(int(signs[oc, ch]), int(pos[oc, ch, k]) if v else 0, v)
                    if not (mode is WorkloadMode.IMBALANCED and k >= nz[oc, ch]):
                        busy += 1
                        gated += 0 if v else 1
                lanes_in = [int(x[ch])] + [0] * (lane_count(layer.precision) - 1)
                new[r] = pe_step(PEState(p_in, lane_bits), lanes_in,
                                 [slot] * lane_count(layer.precision)).psums
            else:
                new[r] = p_in
            if r == n - 1:
                out_acc[oc, 0] = wrap(int(out_acc[oc, 0]) + new[r][0], layer.psum_bits)
        psum_reg = new
    return S, busy, gated


def _event_run(layer, enc, plan, mode, arch, ifm: np.ndarray) -> tuple[np.ndarray, CycleReport]:
    if arch.n_pe > EVENT_MAX_PE:
        raise ValueError(f"event engine supports arrays up to {EVENT_MAX_PE}x{EVENT_MAX_PE}")
    n = arch.n_pe
    h_o, w_o = output_dims(layer)
    out_acc = np.zeros((layer.n_oc, h_o * w_o), dtype=np.int64)
    wbits = weight_bits_for(layer, encoded=mode is not WorkloadMode.DENSE)
    if layer.kind == FC:
        S, busy, gated = _event_fc_pass(layer, enc, plan, mode, arch, ifm, out_acc)
        words = _words(layer.n_weights * wbits) + _words(layer.n_ic * layer.precision) \
            + _words(layer.n_oc * layer.precision)
        stall = max(0, ceil_div(words, arch.dram_words_per_cycle) - S)
        total = S + n - 1 + stall
        rep = CycleReport(layer.name, mode.value, layer.precision, n, total, S, n - 1, stall,
                          busy, n * n * total - busy, gated, passes=layer.n_oc * plan.t_ic)
        return out_acc.reshape(layer.n_oc, 1, 1), rep
    passes = schedule(plan, layer)
    compute = busy = gated = fd = n_pass = 0
    windows = []
    for p in passes:
        if p.pixels == 0:
            windows.append(0)
            continue
        S, b, g = _event_pass(layer, enc, plan, p, mode, arch, ifm, out_acc, None)
        compute += S
        busy += b
        gated += g
        fd += 2 * (n - 1)
        windows.append(S + 2 * (n - 1))
        n_pass += 1
    stall = _conv_stalls(layer, plan, passes, windows, wbits, arch)
    total = compute + fd + stall
    rep = CycleReport(layer.name, mode.value, layer.precision, n, total, compute, fd, stall,
                      busy, n * n * total - busy, gated, passes=n_pass)
    return out_acc.reshape(layer.n_oc, h_o, w_o), rep


# ---------------------------------------------------------------------------
# public entry points


def simulate_layer(layer: LayerSpec, enc: EncodedLayer, plan: TilingPlan, mode, arch: ArchConfig,
                   ifm: FixedTensor | None = None, engine: str = "analytic",
                   post_process: bool = True) -> tuple[FixedTensor | None, CycleReport]:
    """Time one layer and, when ``ifm`` is given, compute its OFM through the PE datapath.

    The returned OFM has had ReLU/pooling applied unless ``post_process`` is
    false. With ``ifm=None`` only timing is produced.
    """
    mode = WorkloadMode.parse(mode)
    _check_encoding(layer, enc)
    _check_plan(layer, plan, arch)
    if engine == "event":
        if ifm is None:
            raise ValueError("event engine needs an IFM")
        psum, rep = _event_run(layer, enc, plan, mode, arch, ifm_array(ifm, layer))
    elif engine == "analytic":
        rep = _analytic_timing(layer, enc, plan, mode, arch)
        psum = None
        if ifm is not None:
            psum, overflows = _functional(layer, enc, plan, mode, ifm_array(ifm, layer))
            rep = replace(rep, psum_overflows=overflows)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if psum is None:
        return None, rep
    out = write_out(psum, layer)
    ofm = FixedTensor(out.shape, layer.precision, out)
    return (relu_pool(ofm, layer) if post_process else ofm), rep


@dataclass
class NetworkRun:
    network: str
    mode: str
    layers: list[CycleReport]
    traffic: list[TrafficReport]
    plans: list[TilingPlan]
    frames_per_second: float
    ofms: list[FixedTensor] = field(default_factory=list)
    ifms: list[FixedTensor] = field(default_factory=list)  # layer inputs of a functional run

    @property
    def total(self) -> CycleReport:
        return sum_reports(self.layers, self.network or "total")

    @property
    def total_traffic(self) -> TrafficReport:
        out = TrafficReport()
        for t in self.traffic:
            out = out + t
        return out


def random_ifm(layer: LayerSpec, rng: np.random.Generator) -> FixedTensor:
    lo, hi = -(1 << (layer.precision - 1)), (1 << (layer.precision - 1)) - 1
    dims = (layer.n_ic,) if layer.kind == FC else layer.ifm_dims
    return FixedTensor(dims, layer.precision, rng.integers(lo, hi + 1, size=int(np.prod(dims))))


def next_ifm(prev_out: FixedTensor, nxt: LayerSpec) -> FixedTensor:
    """Feed a post-processed OFM to the next layer: zero-pad, flatten, requantize width."""
    x = prev_out.array
    if nxt.kind == FC:
        x = x.reshape(-1)
    elif nxt.pad:
        x = np.pad(x, ((0, 0), (nxt.pad, nxt.pad), (nxt.pad, nxt.pad)))
    if nxt.precision != prev_out.bitwidth:
        x = wrap(x, nxt.precision)
    return FixedTensor(x.shape, nxt.precision, x)


def simulate_network(net: NetworkSpec, encoded: Sequence[EncodedLayer], arch: ArchConfig, mode,
                     ifm: FixedTensor | None = None, functional: bool = False, seed: int = 0,
                     plans: Sequence[TilingPlan] | None = None) -> NetworkRun:
    """Run every layer in order (one layer at a time on the whole array).

    Sequential networks chain each post-processed OFM into the next layer;
    non-sequential ones give each layer its own seeded random IFM.
    """
    mode = WorkloadMode.parse(mode)
    if len(encoded) != len(net.layers):
        raise ValueError("one encoded layer per network layer required")
    rng = np.random.default_rng(seed)
    reports, traffic, used_plans, ofms, ifms = [], [], [], [], []
    x = ifm
    for i, (layer, enc) in enumerate(zip(net.layers, encoded)):
        wbits = weight_bits_for(layer, encoded=mode is not WorkloadMode.DENSE)
        plan = plans[i] if plans is not None else plan_layer(layer, arch, wbits)
        layer_in = None
        if functional:
            if net.sequential and x is not None:
                layer_in = x
            else:
                layer_in = random_ifm(layer, rng) if (i > 0 or x is None) else x
        out, rep = simulate_layer(layer, enc, plan, mode, arch, ifm=layer_in)
        reports.append(rep)
        traffic.append(dram_traffic(layer, plan, plan.dataflow or RIF, wbits))
        used_plans.append(plan)
        if functional:
            ifms.append(layer_in)
            ofms.append(out)
            if net.sequential and i + 1 < len(net.layers):
                x = next_ifm(out, net.layers[i + 1])
    total = sum(r.total_cycles for r in reports)
    return NetworkRun(net.name, mode.value, reports, traffic, used_plans,
                      arch.clock_hz / total if total else float("inf"), ofms, ifms)
