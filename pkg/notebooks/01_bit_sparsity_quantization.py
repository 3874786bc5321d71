"""Capping the number of nonzero bits per weight.

Run: python notebooks/01_bit_sparsity_quantization.py
"""
# %%
import numpy as np

from sparse_bitserial import FixedTensor, nnzb, numeric_range, quantize_tensor, quantize_weight, sweep_nnzb

# %% [markdown]
# A weight's cost on a bit-serial array is its count of nonzero magnitude
# bits (NNZB). 93 = 0b1011101 has five.

# %%
print("nnzb(93) =", nnzb(93), " nnzb(-93) =", nnzb(-93))

# Quantization keeps the top n set bits and drops the rest (rounds toward zero).
for n in (5, 4, 3, 2, 1):
    q = quantize_weight(93, n)
    print(f"n_max={n}: 93 -> {q:3d} = {q:#010b}")

# %% [markdown]
# How many distinct 16-bit magnitudes survive a cap of n bits?

# %%
for n in range(3, 14):
    print(f"n_max={n:2d}: {numeric_range(n, 16):6d} of {1 << 16} magnitudes")

# %% [markdown]
# Quantizing a whole tensor also reports the NNZB histogram before and after
# plus error statistics.

# %%
rng = np.random.default_rng(0)
w = FixedTensor((64, 32, 3, 3), 16, rng.integers(-32768, 32768, 64 * 32 * 9))
q, stats = quantize_tensor(w, 3)
print("NNZB before:", stats.hist_before.tolist())
print("NNZB after: ", stats.hist_after.tolist())
print(f"modified {stats.frac_modified:.1%}, max |error| {stats.max_abs_error}")

# %% [markdown]
# Sweeping the cap gives the error curve a retraining loop would walk down.
# The callback is where an external trainer would plug in.

# %%
for s in sweep_nnzb(w, range(1, 9), on_step=lambda n, qt, st: None):
    print(f"n_max={s.n_max}: rmse {np.sqrt(s.mse):9.1f}")
