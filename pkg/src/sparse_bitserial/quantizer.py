"""Bit-sparsity quantization: cap the number of nonzero magnitude bits per weight.

Weights keep their sign; the magnitude loses its least-significant set bits
until at most ``n_max`` remain. Dropped bits are truncated, never rounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Callable, Sequence

import numpy as np

from .core import FixedTensor

# widest magnitude handled by the vectorized paths
_MAX_BITS = 32
_CHUNK = 1 << 20
_LUT_SIZE = (1 << 16) + 1


def nnzb(w: int) -> int:
    """Number of nonzero bits in ``|w|``. The sign is not counted."""
    return abs(int(w)).bit_count()


def nnzb_array(values) -> np.ndarray:
    """Elementwise :func:`nnzb` over an integer array."""
    mag = np.abs(np.asarray(values, dtype=np.int64))
    return np.bitwise_count(mag).astype(np.int64)


def quantize_weight(w: int, n_max: int) -> int:
    """Keep the ``n_max`` most significant set bits of ``|w|``, preserving sign."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    w = int(w)
    mag = abs(w)
    kept = 0
    remaining = n_max
    while mag and remaining:
        top = 1 << (mag.bit_length() - 1)
        kept |= top
        mag ^= top
        remaining -= 1
    return -kept if w < 0 else kept


def _clear_low_bits(mag: np.ndarray, n_max: int) -> np.ndarray:
    excess = np.bitwise_count(mag).astype(np.int64) - n_max
    while (hit := excess > 0).any():
        mag = np.where(hit, mag & (mag - 1), mag)  # x & (x-1) drops the lowest set bit
        excess -= 1
    return mag


@lru_cache(maxsize=None)
def _lut(n_max: int) -> np.ndarray:
    """Quantized magnitude for every magnitude up to 2^16."""
    table = _clear_low_bits(np.arange(_LUT_SIZE, dtype=np.int64), n_max)
    table.setflags(write=False)
    return table


def quantize_array(values, n_max: int) -> np.ndarray:
    """Vectorized :func:`quantize_weight`."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    arr = np.asarray(values)
    out = np.empty(arr.shape, dtype=np.int64)
    flat, dst = arr.reshape(-1), out.reshape(-1)
    for s in range(0, flat.size, _CHUNK):
        # chunked to bound temporaries on multi-million-weight layers
        part = flat[s:s + _CHUNK].astype(np.int64)
        mag = np.abs(part)
        if mag.size and mag.max() < _LUT_SIZE:
            mag = _lut(n_max)[mag]
        else:
            mag = _clear_low_bits(mag, n_max)
        dst[s:s + _CHUNK] = np.where(part < 0, -mag, mag)
    return out


@dataclass(frozen=True)
class QuantStats:
    layer_index: int
    n_max: int
    hist_before: np.ndarray  # index k -> number of weights with NNZB == k
    hist_after: np.ndarray
    mse: float
    max_abs_error: int
    frac_modified: float

    def to_row(self) -> dict:
        return {
            "layer": self.layer_index,
            "n_max": self.n_max,
            "mse": self.mse,
            "max_abs_error": self.max_abs_error,
            "frac_modified": self.frac_modified,
            "hist_before": " ".join(str(int(x)) for x in self.hist_before),
            "hist_after": " ".join(str(int(x)) for x in self.hist_after),
        }


def _histogram(counts: np.ndarray, nbins: int) -> np.ndarray:
    return np.bincount(counts.reshape(-1), minlength=nbins)[:nbins].astype(np.int64)


def quantize_tensor(t: FixedTensor, n_max: int, layer_index: int = 0) -> tuple[FixedTensor, QuantStats]:
    q = quantize_array(t.data, n_max)
    nbins = t.bitwidth + 1
    before = np.zeros(nbins, dtype=np.int64)
    after = np.zeros(nbins, dtype=np.int64)
    sq_err, max_err, modified = 0.0, 0, 0
    for s in range(0, t.size, _CHUNK):
        x, y = t.data[s:s + _CHUNK], q[s:s + _CHUNK]
        before += _histogram(nnzb_array(x), nbins)
        after += _histogram(nnzb_array(y), nbins)
        err = x - y
        sq_err += float(np.dot(err.astype(np.float64), err.astype(np.float64)))
        max_err = max(max_err, int(np.abs(err).max()))
        modified += int(np.count_nonzero(err))
    n = t.size
    stats = QuantStats(
        layer_index=layer_index,
        n_max=n_max,
        hist_before=before,
        hist_after=after,
        mse=sq_err / n if n else 0.0,
        max_abs_error=max_err,
        frac_modified=modified / n if n else 0.0,
    )
    return FixedTensor(t.dims, t.bitwidth, q), stats


def numeric_range(n_max: int, bits: int) -> int:
    """How many distinct magnitudes of a ``bits``-bit word have at most ``n_max`` set bits."""
    if not 0 <= n_max <= bits <= _MAX_BITS:
        raise ValueError("need 0 <= n_max <= bits <= 32")
    return sum(comb(bits, i) for i in range(n_max + 1))


def sweep_nnzb(t: FixedTensor, n_values: Sequence[int], layer_index: int = 0,
               on_step: Callable[[int, FixedTensor, QuantStats], None] | None = None) -> list[QuantStats]:
    """Quantize ``t`` once per cap in ``n_values`` and collect error statistics.

    ``on_step(n_max, quantized, stats)`` is invoked after each cap, so an
    external trainer can retrain and decide whether to keep going.
    """
    if not n_values:
        raise ValueError("n_values must be nonempty")
    out = []
    for n in n_values:
        q, stats = quantize_tensor(t, n, layer_index)
        if on_step is not None:
            on_step(n, q, stats)
        out.append(stats)
    return out
