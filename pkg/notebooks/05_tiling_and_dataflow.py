"""Tiling a layer and choosing between IFM reuse and weight reuse.

Run: python notebooks/05_tiling_and_dataflow.py
"""
# %%
from sparse_bitserial import RIF, RWF, ArchConfig, bundled_network, choose_dataflow, dram_traffic, schedule, tile_layer

arch = ArchConfig()
net = bundled_network("alexnet")

# %% [markdown]
# Reusing the IFM (RIF) re-reads weights once per spatial tile; reusing the
# weights (RWF) re-reads the IFM once per output-channel tile. The cheaper
# one wins, ties go to RIF.

# %%
print(f"{'layer':8s} {'T_IC':>4s} {'T_OC':>4s} {'tiles':>5s} {'RIF Mbit':>9s} {'RWF Mbit':>9s}  choice")
for layer in net.layers:
    plan = tile_layer(layer, arch)
    rif = dram_traffic(layer, plan, RIF).total_bits / 1e6
    rwf = dram_traffic(layer, plan, RWF).total_bits / 1e6
    print(f"{layer.name:8s} {plan.t_ic:4d} {plan.t_oc:4d} {plan.n_spatial:5d} {rif:9.2f} {rwf:9.2f}  "
          f"{choose_dataflow(layer, plan)}")

# %% [markdown]
# The pass order that goes with each choice.

# %%
from itertools import groupby

conv2 = net.layers[1]
for df in (RIF, RWF):
    passes = schedule(tile_layer(conv2, arch).with_dataflow(df), conv2)
    # IC tiles run innermost; collapse them to show (oc tile, row tile, col tile)
    order = [k for k, _ in groupby((p.oc_tile, p.row_tile, p.col_tile) for p in passes)]
    print(df, order[:8], "...")
