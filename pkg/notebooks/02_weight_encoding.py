"""Sign, bit positions and bitmap: the encoded weight format.

Run: python notebooks/02_weight_encoding.py
"""
# %%
import numpy as np

from sparse_bitserial import (FixedTensor, bits_per_weight, decode_layer, decode_weight, encode_layer,
                              encode_weight, pack_layer, quantize_array, unpack_layer)

# %% [markdown]
# Each weight becomes a sign bit, n_max bit positions (MSB first) and an
# n_max-bit validity bitmap. Unused slots carry position 0 and bitmap 0.

# %%
for w in (92, 80, -92, 0):
    e = encode_weight(w, 8, 4)
    print(f"{w:4d}: sign {e.sign} positions {e.positions} bitmap {e.bitmap} -> {decode_weight(e)}")

# %% [markdown]
# Storage per weight is 1 + n + n * (position field width).

# %%
for prec, n in ((16, 3), (16, 4), (8, 4), (8, 5)):
    b = bits_per_weight(prec, n)
    print(f"{prec}-bit, n_max={n}: {b} bits/weight ({b / prec:.4f}x raw)")

# %% [markdown]
# In the on-chip buffer a layer is three word streams.

# %%
rng = np.random.default_rng(1)
q = quantize_array(rng.integers(-32768, 32768, 16), 3)
enc = encode_layer(FixedTensor((16,), 16, q), 3)
img = pack_layer(enc)
print("sign words    ", [f"{x:04x}" for x in img.signs])
print("bitmap words  ", [f"{x:04x}" for x in img.bitmaps])
print("position words", [f"{x:04x}" for x in img.positions])
assert unpack_layer(img) == enc and decode_layer(enc).data.tolist() == q.tolist()
print("round trip ok")
