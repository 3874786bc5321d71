"""Speedup, power and energy efficiency against the dense bit-serial baseline.

Run: python notebooks/06_energy_and_ratios.py   (about 10 s)
"""
# %%
from sparse_bitserial import ArchConfig, bundled_network, compare_runs, encode_layer, energy_report, quantize_tensor, simulate_network
from sparse_bitserial.pipeline import gen_weights

arch = ArchConfig()

# %%
for prec in (16, 8):
    net = bundled_network("alexnet").with_overrides(precision=prec, n_nzb_max=3 if prec == 16 else 4)
    encs = [encode_layer(quantize_tensor(w, L.n_nzb_max)[0], L.n_nzb_max)
            for L, w in zip(net.layers, gen_weights(net, 42))]
    runs = {m: simulate_network(net, encs, arch, m) for m in ("dense", "balanced")}
    en = {m: energy_report(r.total, r.total_traffic, arch, prec, net.name) for m, r in runs.items()}
    ratio = compare_runs((runs["balanced"].total, en["balanced"]), (runs["dense"].total, en["dense"]))
    print(f"AlexNet {prec}-bit: {runs['balanced'].frames_per_second:7.1f} frame/s, "
          f"speedup {ratio.speedup:.2f}, DRAM weight ratio {ratio.dram_weight_ratio:.3f}, "
          f"frame/J ratio {ratio.energy_efficiency_ratio:.2f}")

# %% [markdown]
# The DRAM energy coefficient is a placeholder; only the ratios mean something.
