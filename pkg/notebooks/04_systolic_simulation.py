"""The systolic array in its three workload modes.

Run: python notebooks/04_systolic_simulation.py
"""
# %%
import numpy as np

from sparse_bitserial import (CONV, ArchConfig, FixedTensor, LayerSpec, PEState, WeightSlot,
                              encode_layer, pe_step, plan_layer, quantize_tensor, simulate_column,
                              simulate_layer)
from sparse_bitserial.systolic import random_ifm

# %% [markdown]
# One PE step: complement by sign, shift by position, accumulate if valid.

# %%
st = pe_step(PEState((140,), 32), 5, WeightSlot(sign=0, position=6, valid=1))
print("140 + (5 << 6) =", st.psums[0])

# %% [markdown]
# A column of PEs with weights of NNZB 4 and 2. Without balancing the short
# weight's PE idles; with a cap of 4 every PE takes 4 steps, some gated.

# %%
for mode in ("dense", "imbalanced", "balanced"):
    t = simulate_column([4, 2], mode, 16, n_max=4)
    print(f"{mode:10s} latency {t.latency:2d} idle {t.idle} gated {t.gated}")

# %% [markdown]
# A whole layer on a small 8x8 array, with the closed-form engine and the
# cycle-by-cycle one side by side. Both produce the same OFM and counters.

# %%
rng = np.random.default_rng(3)
arch = ArchConfig(n_pe=8)
layer = LayerSpec(CONV, 6, 10, 10, 10, 3, 3, n_nzb_max=3)
w = FixedTensor(layer.weight_dims, 16, rng.integers(-32768, 32768, layer.n_weights))
enc = encode_layer(quantize_tensor(w, 3)[0], 3)
x = random_ifm(layer, rng)
plan = plan_layer(layer, arch)
for mode in ("dense", "imbalanced", "balanced"):
    out_a, ra = simulate_layer(layer, enc, plan, mode, arch, ifm=x)
    out_e, re = simulate_layer(layer, enc, plan, mode, arch, ifm=x, engine="event")
    print(f"{mode:10s} cycles {ra.total_cycles:6d} compute {ra.compute_cycles:5d} "
          f"util {ra.utilization:.2f} engines agree {ra.to_row() == re.to_row() and out_a == out_e}")
