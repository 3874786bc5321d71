import numpy as np
import pytest

from sparse_bitserial import (CONV, FC, RIF, RWF, ArchConfig, LayerSpec, choose_dataflow,
                              coverage_counts, dram_traffic, plan_layer, schedule, tile_layer)
from sparse_bitserial.dataflow import layer_bit_counts, traffic_from_counts, weight_bits_for

from conftest import rand_conv

ARCH = ArchConfig()


def test_tile_counts():
    assert tile_layer(LayerSpec(CONV, 64, 8, 8, 8, 1, 1), ARCH).t_ic == 2
    p = tile_layer(LayerSpec(CONV, 48, 8, 8, 8, 1, 1), ARCH)
    assert p.t_ic == 2 and p.ic_ranges == ((0, 32), (32, 48))
    assert tile_layer(LayerSpec(CONV, 3, 8, 8, 8, 3, 3), ARCH).t_wi == 1
    p = tile_layer(LayerSpec(CONV, 3, 70, 17, 9, 3, 3), ARCH)
    assert (p.t_oc, p.t_hi, p.t_wi) == (3, 3, 2)


def test_channel_ranges_partition(rng):
    for _ in range(50):
        n_ic = int(rng.integers(1, 200))
        p = tile_layer(LayerSpec(CONV, n_ic, 1, 4, 4, 1, 1), ARCH)
        owned = np.concatenate([np.arange(a, b) for a, b in p.ic_ranges])
        assert owned.tolist() == list(range(n_ic))


def test_traffic_example():
    rif = traffic_from_counts(600, 1000, 0, 4, 2, RIF)
    rwf = traffic_from_counts(600, 1000, 0, 4, 2, RWF)
    assert rif.dram_bits_weight == 4000 and rwf.dram_bits_ifm == 1200
    assert (rif.total_bits, rwf.total_bits) == (4600, 2200)
    o = traffic_from_counts(600, 1000, 77, 4, 2, RIF)
    assert o.total_bits == 4677 and o.total_accesses == -(-4677 // 16)
    with pytest.raises(ValueError):
        traffic_from_counts(1, 1, 1, 1, 1, "XYZ")


def test_single_tile_tie_goes_to_rif():
    layer = LayerSpec(CONV, 16, 16, 8, 8, 3, 3)
    plan = tile_layer(layer, ARCH)
    assert (plan.t_oc, plan.n_spatial) == (1, 1)
    assert dram_traffic(layer, plan, RIF) == dram_traffic(layer, plan, RWF)
    assert choose_dataflow(layer, plan) == RIF


def test_encoded_traffic_ratios():
    for prec, n, want in ((16, 3, 1.0), (16, 4, 1.3125), (8, 4, 2.125), (8, 5, 2.625)):
        layer = LayerSpec(CONV, 64, 64, 18, 18, 3, 3, n_nzb_max=n, precision=prec)
        plan = tile_layer(layer, ARCH)
        for df in (RIF, RWF):
            enc = dram_traffic(layer, plan, df, weight_bits_for(layer)).dram_bits_weight
            raw = dram_traffic(layer, plan, df, weight_bits_for(layer, encoded=False)).dram_bits_weight
            assert enc / raw == want


def test_choice_is_brute_force_minimum(rng):
    for _ in range(200):
        layer = rand_conv(rng, max_c=80, max_hw=40, max_k=5, max_stride=3, n_max=3)
        plan = tile_layer(layer, ARCH)
        totals = {df: dram_traffic(layer, plan, df).total_bits for df in (RIF, RWF)}
        best = min(totals.values())
        chosen = choose_dataflow(layer, plan)
        assert totals[chosen] == best
        if totals[RIF] == totals[RWF]:
            assert chosen == RIF


def test_traffic_monotone_in_weight_bits(rng):
    for _ in range(30):
        layer = rand_conv(rng, max_c=70, max_hw=30)
        plan = tile_layer(layer, ARCH)
        for df in (RIF, RWF):
            seq = [dram_traffic(layer, plan, df, b).total_bits for b in (8, 16, 17, 21, 26)]
            assert seq == sorted(seq)


def test_schedule_orders():
    layer = LayerSpec(CONV, 8, 64, 8, 8, 3, 3)
    plan = tile_layer(layer, ARCH).with_dataflow(RIF)
    order = [(p.row_tile, p.col_tile, p.oc_tile) for p in schedule(plan)]
    assert order == [(0, 0, 0), (0, 0, 1)]

    layer = LayerSpec(CONV, 8, 64, 8, 16, 3, 3)
    plan = tile_layer(layer, ARCH).with_dataflow(RWF)
    passes = schedule(plan)
    assert [p.oc_tile for p in passes] == [0, 0, 1, 1]
    assert [p.load_weight for p in passes] == [True, False, True, False]
    assert all(p.load_ifm for p in passes)

    plan = plan.with_dataflow(RIF)
    passes = schedule(plan)
    assert [p.oc_tile for p in passes] == [0, 1, 0, 1]
    assert [p.load_ifm for p in passes] == [True, False, True, False]


def test_schedule_ic_innermost():
    layer = LayerSpec(CONV, 70, 8, 8, 8, 3, 3)
    passes = schedule(tile_layer(layer, ARCH))
    assert [p.ic_tile for p in passes] == [0, 1, 2]
    assert [p.last_ic for p in passes] == [False, False, True]


def test_coverage_complete(rng):
    small = ArchConfig(n_pe=4, w_is=4, h_is=4)
    for _ in range(100):
        layer = rand_conv(rng, max_c=9, max_hw=14, max_k=4, max_stride=3)
        for df in (RIF, RWF):
            assert (coverage_counts(tile_layer(layer, small).with_dataflow(df), layer) == 1).all()
    fc = LayerSpec(FC, 50, 9)
    assert (coverage_counts(plan_layer(fc, small), fc) == 1).all()


def test_halo_ifm_bits():
    # 10x10 input, 3x3 kernel, 8x8 tiles: output rows 0-7 read 0-9, rows >= 8 none
    layer = LayerSpec(CONV, 1, 1, 10, 10, 3, 3)
    plan = tile_layer(layer, ARCH)
    assert plan.t_hi == 2 and plan.n_spatial == 1
    ifm, _, ofm = layer_bit_counts(layer, plan)
    assert ifm == 10 * 10 * 16 and ofm == 64 * 16


def test_with_dataflow_rejects_unknown():
    with pytest.raises(ValueError):
        tile_layer(LayerSpec(CONV, 1, 1, 4, 4, 1, 1), ARCH).with_dataflow("FOO")
