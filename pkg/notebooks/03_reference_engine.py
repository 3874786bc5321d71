"""Bit-exact integer reference: dense convolution, bit-serial and sparse MACs.

Run: python notebooks/03_reference_engine.py
"""
# %%
import numpy as np

from sparse_bitserial import (CONV, FixedTensor, LayerSpec, Pool, bitserial_mac, conv_golden,
                              encode_layer, encode_weight, quantize_tensor, relu_pool, sparse_conv_golden,
                              sparse_mac)

# %% [markdown]
# A plain bit-serial MAC spends one cycle per weight bit; the sparse MAC
# spends one per encoded slot and gates the invalid ones.

# %%
print("bit-serial 5 x 92:", bitserial_mac(5, 92, 8))
print("sparse     5 x 92:", sparse_mac(5, encode_weight(92, 8, 4), 4))
print("sparse     7 x 0: ", sparse_mac(7, encode_weight(0, 16, 3), 3))

# %% [markdown]
# Convolution on integers with a wrapping accumulator (32-bit at 16-bit
# precision, 16-bit at 8-bit), then ReLU and max pooling.

# %%
rng = np.random.default_rng(2)
layer = LayerSpec(CONV, 3, 4, 10, 10, 3, 3, n_nzb_max=3, precision=8, pool=Pool(2, 2))
x = FixedTensor(layer.ifm_dims, 8, rng.integers(-128, 128, 300))
w = FixedTensor(layer.weight_dims, 8, rng.integers(-128, 128, layer.n_weights))
q, _ = quantize_tensor(w, 3)
dense = conv_golden(x, q, layer)
sparse = sparse_conv_golden(x, encode_layer(q, 3), layer)
print("dense == sparse evaluation:", dense == sparse)
print("pooled OFM shape:", relu_pool(dense, layer).dims)
