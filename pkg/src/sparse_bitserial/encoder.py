"""Sign / bit-position / bitmap weight encoding and its packed buffer layout.

Each weight becomes one sign bit, ``n_max`` bit positions (most significant
first, unused slots zero) and an ``n_max``-bit validity bitmap. The layer
stores ``n_max`` once. In the on-chip buffer a 16-bit word holds 16 signs,
16 bitmap bits, four 4-bit positions (16-bit mode) or five 3-bit positions
plus a zero pad bit in the MSB (8-bit mode).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import PRECISIONS, FixedTensor

WORD_BITS = 16
POSITION_BITS = {16: 4, 8: 3}
POSITIONS_PER_WORD = {16: 4, 8: 5}
_CHUNK = 1 << 20


def _check(precision: int, n_max: int) -> None:
    if precision not in PRECISIONS:
        raise ValueError("precision must be 8 or 16")
    if not 1 <= n_max <= precision:
        raise ValueError(f"n_max must lie in [1, {precision}]")


def bits_per_weight(precision: int, n_max: int) -> int:
    _check(precision, n_max)
    return 1 + n_max + n_max * POSITION_BITS[precision]


@dataclass(frozen=True)
class EncodedWeight:
    sign: int
    positions: tuple[int, ...]
    bitmap: tuple[int, ...]

    def __post_init__(self):
        if len(self.positions) != len(self.bitmap):
            raise ValueError("positions and bitmap must have n_max entries each")
        valid = [p for p, b in zip(self.positions, self.bitmap) if b]
        if any(a <= b for a, b in zip(valid, valid[1:])):
            raise ValueError("valid positions must be strictly decreasing")
        if any(p != 0 for p, b in zip(self.positions, self.bitmap) if not b):
            raise ValueError("invalid slots must carry position 0")
        if self.sign not in (0, 1):
            raise ValueError("sign must be 0 or 1")

    @property
    def n_max(self) -> int:
        return len(self.positions)

    @property
    def nnzb(self) -> int:
        return sum(self.bitmap)


def encode_weight(w: int, precision: int, n_max: int) -> EncodedWeight:
    _check(precision, n_max)
    w = int(w)
    mag = abs(w)
    if mag >= 1 << precision:
        raise ValueError(f"{w} does not fit {precision}-bit precision")
    bits = [b for b in range(precision - 1, -1, -1) if (mag >> b) & 1]
    if len(bits) > n_max:
        raise ValueError("weight not quantized to n_max")
    pad = n_max - len(bits)
    return EncodedWeight(sign=int(w < 0),
                         positions=tuple(bits) + (0,) * pad,
                         bitmap=(1,) * len(bits) + (0,) * pad)


def decode_weight(e: EncodedWeight) -> int:
    mag = sum(1 << p for p, b in zip(e.positions, e.bitmap) if b)
    return -mag if e.sign else mag


@dataclass(frozen=True, eq=False)
class EncodedLayer:
    """Encoded weights of one layer, held as parallel arrays.

    ``signs`` has shape (n,), ``positions`` and ``bitmaps`` shape (n, n_max),
    in [Co, Ci, Hk, Wk] row-major weight order.
    """

    n_max: int
    precision: int
    dims: tuple[int, ...]
    signs: np.ndarray
    positions: np.ndarray
    bitmaps: np.ndarray

    def __post_init__(self):
        _check(self.precision, self.n_max)
        n = int(np.prod(self.dims, dtype=np.int64))
        for name, shape in (("signs", (n,)), ("positions", (n, self.n_max)),
                            ("bitmaps", (n, self.n_max))):
            # fields are at most 4 bits wide; uint8 keeps large layers compact
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"encoded array shape {arr.shape}, expected {shape}")
            arr = arr.astype(np.uint8, copy=arr.dtype != np.uint8)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def __len__(self) -> int:
        return int(self.signs.shape[0])

    def __getitem__(self, i: int) -> EncodedWeight:
        return EncodedWeight(int(self.signs[i]),
                             tuple(int(p) for p in self.positions[i]),
                             tuple(int(b) for b in self.bitmaps[i]))

    def __iter__(self) -> Iterator[EncodedWeight]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, EncodedLayer):
            return NotImplemented
        return (self.n_max == other.n_max and self.precision == other.precision
                and tuple(self.dims) == tuple(other.dims)
                and np.array_equal(self.signs, other.signs)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.bitmaps, other.bitmaps))

    @property
    def bits_per_weight(self) -> int:
        return bits_per_weight(self.precision, self.n_max)

    @property
    def total_bits(self) -> int:
        return len(self) * self.bits_per_weight

    def nnzb(self) -> np.ndarray:
        """Per-weight nonzero-bit counts, shaped like the weight tensor."""
        return self.bitmaps.sum(axis=1, dtype=np.int64).reshape(self.dims)

    def magnitudes(self) -> np.ndarray:
        """Decoded ``|w|`` per weight, flat."""
        mag = np.zeros(len(self), dtype=np.int64)
        for k in range(self.n_max):
            mag += self.bitmaps[:, k].astype(np.int64) << self.positions[:, k].astype(np.int64)
        return mag

    def slot_plane(self, k: int) -> np.ndarray:
        """Signed power-of-two contribution of slot ``k``, shaped like the weights."""
        sign = np.where(self.signs.astype(bool), -1, 1)
        plane = self.bitmaps[:, k].astype(np.int64) << self.positions[:, k].astype(np.int64)
        return (sign * plane).reshape(self.dims)

    def slot_planes(self) -> np.ndarray:
        """Signed power-of-two contribution of every slot: shape (n_max, *dims).

        Plane ``k`` holds ``(-1)^sign * bitmap[k] * 2^positions[k]``, so the
        planes sum to the decoded weights.
        """
        return np.stack([self.slot_plane(k) for k in range(self.n_max)])


def encode_layer(t: FixedTensor, n_max: int) -> EncodedLayer:
    """Encode a tensor that is already quantized to at most ``n_max`` set bits."""
    precision = t.bitwidth
    _check(precision, n_max)
    n = t.size
    positions = np.zeros((n, n_max), dtype=np.uint8)
    bitmaps = np.zeros((n, n_max), dtype=np.uint8)
    for s in range(0, n, _CHUNK):
        mag = np.abs(t.data[s:s + _CHUNK])
        for k in range(n_max):
            on = mag > 0
            # frexp exponent - 1 is the index of the top set bit (exact below 2^53)
            top = np.where(on, np.frexp(mag.astype(np.float64))[1] - 1, 0)
            positions[s:s + _CHUNK, k] = top
            bitmaps[s:s + _CHUNK, k] = on
            mag = mag - (on.astype(np.int64) << top)
        if mag.any():
            raise ValueError("weight not quantized to n_max")
    signs = (t.data < 0).astype(np.uint8)
    return EncodedLayer(n_max, precision, tuple(t.dims), signs, positions, bitmaps)


def decode_layer(enc: EncodedLayer) -> FixedTensor:
    mag = enc.magnitudes()
    return FixedTensor(enc.dims, enc.precision, np.where(enc.signs.astype(bool), -mag, mag))


# ---------------------------------------------------------------------------
# buffer packing


@dataclass(frozen=True, eq=False)
class WeightBufferImage:
    precision: int
    n_max: int
    count: int
    signs: np.ndarray
    bitmaps: np.ndarray
    positions: np.ndarray

    @property
    def words(self) -> np.ndarray:
        """Signs, bitmaps and positions as consecutive regions."""
        return np.concatenate([self.signs, self.bitmaps, self.positions]).astype(np.uint16)

    @property
    def n_words(self) -> int:
        return len(self.signs) + len(self.bitmaps) + len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, WeightBufferImage):
            return NotImplemented
        return ((self.precision, self.n_max, self.count) == (other.precision, other.n_max, other.count)
                and all(np.array_equal(a, b) for a, b in ((self.signs, other.signs),
                                                          (self.bitmaps, other.bitmaps),
                                                          (self.positions, other.positions))))


def stream_word_counts(precision: int, n_max: int, count: int) -> tuple[int, int, int]:
    ppw = POSITIONS_PER_WORD[precision]
    return (-(-count // WORD_BITS), -(-count * n_max // WORD_BITS), -(-count * n_max // ppw))


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Bit i of the stream lands in word i // 16, bit i % 16."""
    n_words = -(-bits.size // WORD_BITS)
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little")
    buf = np.zeros(2 * n_words, dtype=np.uint8)
    buf[:packed.size] = packed
    return buf.view("<u2").astype(np.uint16)


def _unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    raw = np.ascontiguousarray(words, dtype="<u2").view(np.uint8)
    return np.unpackbits(raw, count=n, bitorder="little")


def pack_layer(enc: EncodedLayer, arch=None) -> WeightBufferImage:
    """Pack an encoded layer into three 16-bit word streams (LSB-first fields)."""
    pw = POSITION_BITS[enc.precision]
    ppw = POSITIONS_PER_WORD[enc.precision]
    signs = _pack_bits(enc.signs)
    bitmaps = _pack_bits(enc.bitmaps.reshape(-1))
    flat = enc.positions.reshape(-1)
    n_words = -(-flat.size // ppw)
    padded = np.zeros((n_words, ppw), dtype=np.uint16)
    padded.reshape(-1)[:flat.size] = flat
    positions = np.zeros(n_words, dtype=np.uint16)
    for j in range(ppw):
        positions |= padded[:, j] << np.uint16(j * pw)
    return WeightBufferImage(enc.precision, enc.n_max, len(enc), signs, bitmaps, positions)


def unpack_layer(img: WeightBufferImage, dims=None) -> EncodedLayer:
    precision, n_max, count = img.precision, img.n_max, img.count
    dims = tuple(dims) if dims is not None else (count,)
    if int(np.prod(dims, dtype=np.int64)) != count:
        raise ValueError("dims do not match weight count")
    want = stream_word_counts(precision, n_max, count)
    have = (len(img.signs), len(img.bitmaps), len(img.positions))
    if any(h < w for h, w in zip(have, want)):
        raise ValueError("buffer underrun")
    if any(h > w for h, w in zip(have, want)):
        raise ValueError("buffer overrun: image longer than weight count implies")
    pw = POSITION_BITS[precision]
    ppw = POSITIONS_PER_WORD[precision]
    signs = _unpack_bits(np.asarray(img.signs), count)
    bitmaps = _unpack_bits(np.asarray(img.bitmaps), count * n_max).reshape(count, n_max)
    words = np.asarray(img.positions, dtype=np.uint16)
    fields = np.empty((words.size, ppw), dtype=np.uint8)
    for j in range(ppw):
        fields[:, j] = (words >> np.uint16(j * pw)) & ((1 << pw) - 1)
    positions = fields.reshape(-1)[:count * n_max].reshape(count, n_max)
    return EncodedLayer(n_max, precision, dims, signs, positions, bitmaps)


def split_words(words: np.ndarray, precision: int, n_max: int, count: int) -> WeightBufferImage:
    """Cut a flat word sequence (as produced by ``WeightBufferImage.words``) into streams."""
    ns, nb, npos = stream_word_counts(precision, n_max, count)
    words = np.asarray(words, dtype=np.uint16)
    if len(words) < ns + nb + npos:
        raise ValueError("buffer underrun")
    return WeightBufferImage(precision, n_max, count, words[:ns], words[ns:ns + nb],
                             words[ns + nb:ns + nb + npos])


# ---------------------------------------------------------------------------
# encoded-layer file: header, dims, then the three streams as little-endian words

ENCODED_MAGIC = b"SBEL"
ENCODED_VERSION = 1
_HEADER = struct.Struct("<4sHHHH")


def encoded_layer_bytes(enc: EncodedLayer) -> bytes:
    img = pack_layer(enc)
    dims = tuple(enc.dims)
    head = _HEADER.pack(ENCODED_MAGIC, ENCODED_VERSION, enc.precision, enc.n_max, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    return head + img.words.astype("<u2").tobytes()


def write_encoded_layer(path, enc: EncodedLayer) -> None:
    Path(path).write_bytes(encoded_layer_bytes(enc))


def read_encoded_layer(path) -> EncodedLayer:
    raw = Path(path).read_bytes()
    magic, version, precision, n_max, ndim = _HEADER.unpack_from(raw)
    if magic != ENCODED_MAGIC:
        raise ValueError(f"bad encoded-layer magic {magic!r}")
    if version != ENCODED_VERSION:
        raise ValueError(f"unsupported encoded-layer version {version}")
    off = _HEADER.size
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    words = np.frombuffer(raw, dtype="<u2", offset=off)
    img = split_words(words, precision, n_max, count)
    if len(words) != img.n_words:
        raise ValueError("trailing words in encoded-layer file")
    return unpack_layer(img, dims)
