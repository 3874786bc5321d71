"""Golden functional models.

* :func:`conv_golden` - exact integer convolution with accumulator wrap.
* :func:`bitserial_mac` / :func:`sparse_mac` - scalar shift-add MACs.
* :func:`sparse_conv_golden` - convolution driven slot by slot from the encoding.
* :func:`relu_pool` - post-processing.

Accumulators are two's-complement: 32 bits for 16-bit layers, 16 bits for
8-bit layers. OFMs are the low ``precision`` bits of the (optionally
right-shifted) accumulator unless saturation is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FC, PSUM_BITS, FixedTensor, LayerSpec, int_range, output_dims
from .encoder import EncodedLayer, EncodedWeight

_F64_EXACT = 1 << 53


def wrap(values, bits: int):
    """Two's-complement wrap of integers (scalar or array) to ``bits`` bits."""
    half = 1 << (bits - 1)
    if isinstance(values, (int, np.integer)):
        return ((int(values) + half) % (1 << bits)) - half
    v = np.asarray(values, dtype=np.int64)
    if bits >= 64:
        return v
    return ((v + half) & ((1 << bits) - 1)) - half


@dataclass
class Psum:
    """Fixed-width accumulator that wraps and counts each wrapping add."""

    bits: int
    value: int = 0
    overflow_count: int = 0

    COUNTER_MAX = (1 << 32) - 1

    def add(self, x: int) -> "Psum":
        wide = self.value + int(x)
        self.value = wrap(wide, self.bits)
        if self.value != wide:
            self.overflow_count = min(self.overflow_count + 1, self.COUNTER_MAX)
        return self


def exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matrix product. Uses float64 BLAS when every partial sum is exactly representable."""
    return IntOperand(b).rmatmul(a)


class IntOperand:
    """Right-hand integer matrix kept in float64 for repeated exact products."""

    def __init__(self, b):
        b = np.asarray(b)
        self.shape = b.shape
        self._float = b if b.dtype == np.float64 else b.astype(np.float64)
        self.absmax = int(np.abs(self._float).max()) if b.size else 0

    def rmatmul(self, a, a_absmax: int | None = None) -> np.ndarray:
        """Exact ``a @ b`` for an integer-valued matrix ``a``.

        ``a_absmax`` is a known bound on ``|a|``; it skips a scan of ``a``.
        """
        a = np.asarray(a)
        if a.size == 0 or self._float.size == 0:
            return np.zeros((a.shape[0], self.shape[1]), dtype=np.int64)
        amax = int(np.abs(a).max()) if a_absmax is None else int(a_absmax)
        if amax * self.absmax * a.shape[1] < _F64_EXACT:
            return np.rint(a.astype(np.float64, copy=False) @ self._float).astype(np.int64)
        # operands wider than the float mantissa: exact but slow integer product
        return a.astype(np.int64) @ self._float.astype(np.int64)


def im2col(ifm: np.ndarray, hk: int, wk: int, stride: int = 1) -> np.ndarray:
    """(Ci*Hk*Wk, Ho*Wo) float64 patch matrix, rows ordered (channel, ky, kx)."""
    ci, h, w = ifm.shape
    ho, wo = (h - hk) // stride + 1, (w - wk) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(ifm.astype(np.float64), (hk, wk), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(ci * hk * wk, ho * wo)


# oc rows per product are sized so one weight block stays near this many elements
_BLOCK_ELEMS = 1 << 22


def oc_chunks(co: int, per_oc: int) -> list[tuple[int, int]]:
    step = max(1, _BLOCK_ELEMS // max(per_oc, 1))
    return [(o, min(o + step, co)) for o in range(0, co, step)]


def _check_shapes(ifm: FixedTensor, w_dims, layer: LayerSpec) -> None:
    if layer.kind == FC:
        if ifm.size != layer.n_ic:
            raise ValueError(f"IFM has {ifm.size} elements, FC layer expects {layer.n_ic}")
    elif tuple(ifm.dims) != layer.ifm_dims:
        raise ValueError(f"IFM dims {ifm.dims} do not match layer {layer.ifm_dims}")
    if tuple(w_dims) != layer.weight_dims:
        raise ValueError(f"weight dims {tuple(w_dims)} do not match layer {layer.weight_dims}")


def ifm_array(ifm: FixedTensor, layer: LayerSpec) -> np.ndarray:
    """IFM shaped (C, H, W); FC inputs are flattened into C with a 1x1 map."""
    if layer.kind == FC:
        return ifm.data.reshape(layer.n_ic, 1, 1)
    return ifm.array


def conv_accumulate(ifm: np.ndarray, weights: np.ndarray, stride: int = 1) -> np.ndarray:
    """Full-precision convolution sums, no wrapping.

    ``ifm`` is (Ci, H, W), ``weights`` (Co, Ci, Hk, Wk); returns (Co, Ho, Wo).
    """
    co, ci, hk, wk = weights.shape
    _, h, w = ifm.shape
    ho, wo = (h - hk) // stride + 1, (w - wk) // stride + 1
    cols = IntOperand(im2col(ifm, hk, wk, stride))
    flat = weights.reshape(co, ci * hk * wk)
    out = np.empty((co, ho * wo), dtype=np.int64)
    for o0, o1 in oc_chunks(co, ci * hk * wk):
        out[o0:o1] = cols.rmatmul(flat[o0:o1])
    return out.reshape(co, ho, wo)


def write_out(psum: np.ndarray, layer: LayerSpec, saturate: bool = False) -> np.ndarray:
    """Accumulator values -> OFM integers at layer precision."""
    v = np.asarray(psum, dtype=np.int64) >> layer.ofm_shift
    if saturate:
        lo, hi = int_range(layer.precision)
        return np.clip(v, lo, hi)
    return wrap(v, layer.precision)


def psum_overflows(wide: np.ndarray, bits: int) -> int:
    """Outputs whose exact sum lies outside the accumulator range."""
    lo, hi = int_range(bits)
    return int(np.count_nonzero((wide < lo) | (wide > hi)))


def conv_golden(ifm: FixedTensor, w: FixedTensor, layer: LayerSpec,
                saturate: bool = False) -> FixedTensor:
    """Dense integer convolution (or GEMV for FC) producing the layer's OFM."""
    _check_shapes(ifm, w.dims, layer)
    wide = conv_accumulate(ifm_array(ifm, layer), w.array, layer.stride)
    psum = wrap(wide, PSUM_BITS[layer.precision])
    out = write_out(psum, layer, saturate)
    return FixedTensor(out.shape, layer.precision, out)


def bitserial_mac(i: int, w: int, precision: int) -> tuple[int, int]:
    """``i * w`` one magnitude bit per cycle; always ``precision`` cycles."""
    i, w = int(i), int(w)
    operand = -i if w < 0 else i
    mag = abs(w)
    acc = 0
    for bit in range(precision):
        if (mag >> bit) & 1:
            acc += operand << bit
    return acc, precision


def sparse_mac(i: int, e: EncodedWeight, n_max: int) -> tuple[int, int]:
    """``i * decode(e)`` as ``n_max`` shift-add steps; gated slots add nothing."""
    if e.n_max != n_max:
        raise ValueError(f"encoded weight has {e.n_max} slots, expected {n_max}")
    operand = -int(i) if e.sign else int(i)
    acc = 0
    for pos, valid in zip(e.positions, e.bitmap):
        if valid:
            acc += operand << pos
    return acc, n_max


def sparse_accumulate(ifm: np.ndarray, enc: EncodedLayer, stride: int = 1) -> np.ndarray:
    """Exact convolution sums built from shift-add slot contributions.

    For each kernel offset and slot, every IFM value is conditionally negated,
    shifted by its weight's bit position and masked by the bitmap.
    """
    co, ci, hk, wk = enc.dims
    _, h, w = ifm.shape
    ho, wo = (h - hk) // stride + 1, (w - wk) // stride + 1
    signs = enc.signs.reshape(co, ci, hk, wk).astype(bool)
    pos = enc.positions.reshape(co, ci, hk, wk, enc.n_max)
    valid = enc.bitmaps.reshape(co, ci, hk, wk, enc.n_max).astype(bool)
    out = np.zeros((co, ho * wo), dtype=np.int64)
    for a in range(hk):
        for b in range(wk):
            patch = ifm[:, a:a + (ho - 1) * stride + 1:stride,
                        b:b + (wo - 1) * stride + 1:stride].reshape(ci, ho * wo)
            for k in range(enc.n_max):
                # shift-and-select as a {0, +-2^p} selector matrix over channels
                sel = np.where(valid[:, :, a, b, k],
                               np.left_shift(np.int64(1), pos[:, :, a, b, k]), 0)
                sel = np.where(signs[:, :, a, b], -sel, sel)
                out += exact_matmul(sel, patch)
    return out.reshape(co, ho, wo)


def sparse_conv_golden(ifm: FixedTensor, enc: EncodedLayer, layer: LayerSpec,
                       saturate: bool = False) -> FixedTensor:
    """Convolution evaluated from the sign/position/bitmap encoding."""
    _check_shapes(ifm, enc.dims, layer)
    if enc.precision != layer.precision:
        raise ValueError("encoding precision does not match layer")
    wide = sparse_accumulate(ifm_array(ifm, layer), enc, layer.stride)
    psum = wrap(wide, PSUM_BITS[layer.precision])
    out = write_out(psum, layer, saturate)
    return FixedTensor(out.shape, layer.precision, out)


def relu_pool(ofm: FixedTensor, layer: LayerSpec) -> FixedTensor:
    """ReLU (if ``post_relu``) followed by max pooling (if configured)."""
    if layer.kind != FC:
        expected = (layer.n_oc, *output_dims(layer))
        if tuple(ofm.dims) != expected:
            raise ValueError(f"OFM dims {ofm.dims} do not match layer output {expected}")
    x = ofm.array
    if layer.post_relu:
        x = np.maximum(x, 0)
    if layer.pool is not None:
        win, s = layer.pool.window, layer.pool.stride
        c, h, w = x.shape
        if win > h or win > w:
            raise ValueError("pooling window exceeds OFM")
        ho, wo = (h - win) // s + 1, (w - win) // s + 1
        pooled = None
        for a in range(win):
            for b in range(win):
                v = x[:, a:a + (ho - 1) * s + 1:s, b:b + (wo - 1) * s + 1:s]
                pooled = v if pooled is None else np.maximum(pooled, v)
        x = pooled
    return FixedTensor(x.shape, ofm.bitwidth, x)
