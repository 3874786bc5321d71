import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_bitserial import (CONV, FC, ArchConfig, FixedTensor, LayerSpec, NetworkSpec, Pool,
                              bundled_network, bundled_networks, load_network, output_dims,
                              pooled_dims, read_weight_file, save_network, validate_network,
                              write_weight_file)


def brute_out(h_i, h_k, stride):
    # count start positions whose window lies fully inside the input
    return sum(1 for y in range(0, h_i, stride) if y + h_k <= h_i)


@pytest.mark.parametrize("h_i,h_k,s,want", [(8, 3, 1, 6), (8, 8, 1, 1), (227, 11, 4, 55)])
def test_output_dims_examples(h_i, h_k, s, want):
    layer = LayerSpec(CONV, 1, 1, h_i, h_i, h_k, h_k, s)
    assert output_dims(layer) == (want, want)
    assert brute_out(h_i, h_k, s) == want


def test_output_dims_matches_window_count():
    for h_i in range(1, 17):
        for h_k in range(1, h_i + 1):
            for s in range(1, 5):
                layer = LayerSpec(CONV, 1, 1, h_i, h_i, h_k, 1, s)
                assert output_dims(layer) == (brute_out(h_i, h_k, s), brute_out(h_i, 1, s))


def test_output_dims_fc_and_errors():
    assert output_dims(LayerSpec(FC, 10, 4)) == (1, 1)
    with pytest.raises(ValueError, match="kernel exceeds input"):
        output_dims(LayerSpec(CONV, 1, 1, 4, 4, 5, 5))


def test_pooled_dims():
    layer = LayerSpec(CONV, 3, 8, 10, 10, 3, 3, pool=Pool(2, 2))
    assert pooled_dims(layer) == (8, 4, 4)


@settings(max_examples=60, deadline=None)
@given(bits=st.sampled_from([8, 16]), data=st.data())
def test_fixed_tensor_rejects_out_of_range(bits, data):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    ok = data.draw(st.lists(st.integers(lo, hi), min_size=1, max_size=10))
    FixedTensor((len(ok),), bits, ok)
    bad = data.draw(st.one_of(st.integers(hi + 1, hi + 1 << 20), st.integers(lo - (1 << 20), lo - 1)))
    pos = data.draw(st.integers(0, len(ok)))
    with pytest.raises(ValueError):
        FixedTensor((len(ok) + 1,), bits, ok[:pos] + [bad] + ok[pos:])


def test_fixed_tensor_shape_and_width_checks():
    with pytest.raises(ValueError, match="does not match"):
        FixedTensor((2, 2), 8, [1, 2, 3])
    with pytest.raises(ValueError, match="bitwidth"):
        FixedTensor((1,), 12, [1])
    t = FixedTensor((2, 3), 16, np.arange(6))
    assert t.array.shape == (2, 3) and not t.data.flags.writeable
    assert t == FixedTensor.from_array(np.arange(6).reshape(2, 3), 16)


def _two_layer():
    return NetworkSpec("two", (3, 10, 10), (
        LayerSpec(CONV, 3, 8, 10, 10, 3, 3, pool=Pool(2, 2)),
        LayerSpec(CONV, 8, 4, 4, 4, 3, 3)))


def test_validate_examples():
    assert validate_network(_two_layer()) == []
    fc = NetworkSpec("fc", (4, 3, 3), (LayerSpec(FC, 4, 2, 3, 3, 3, 3),))
    msgs = [str(d) for d in validate_network(fc)]
    assert any("FC requires 1×1 kernel" in m for m in msgs)
    over = NetworkSpec("n", (1, 4, 4), (LayerSpec(CONV, 1, 1, 4, 4, 3, 3, n_nzb_max=17, precision=16),))
    diags = validate_network(over)
    assert [d.field for d in diags] == ["n_nzb_max"] and diags[0].layer == 0


def test_validate_chaining():
    net = _two_layer()
    broken = NetworkSpec("b", net.input_dims, (net.layers[0], LayerSpec(CONV, 7, 4, 4, 4, 3, 3)))
    diags = validate_network(broken)
    assert len(diags) == 1 and diags[0].layer == 1 and diags[0].field == "n_ic"


def test_bundled_networks_are_valid():
    names = bundled_networks()
    assert {"alexnet", "vgg16", "resnet50", "googlenet", "yolov3", "smoke"} <= set(names)
    for name in names:
        assert validate_network(bundled_network(name), ArchConfig()) == [], name


def test_alexnet_first_layer():
    conv1 = bundled_network("alexnet").layers[0]
    assert (conv1.h_i, conv1.h_k, conv1.stride) == (227, 11, 4)
    assert output_dims(conv1) == (55, 55)


def test_network_yaml_round_trip(tmp_path):
    net = bundled_network("alexnet")
    save_network(net, tmp_path / "a.yaml")
    assert load_network(tmp_path / "a.yaml") == net


def test_with_overrides_clips_cap():
    net = bundled_network("smoke").with_overrides(n_nzb_max=12)
    eight = net.with_overrides(precision=8)
    assert all(L.precision == 8 and L.n_nzb_max == 8 for L in eight.layers)


def test_arch_rejects_bad_values():
    with pytest.raises(ValueError):
        ArchConfig(n_pe=0)
    with pytest.raises(ValueError):
        ArchConfig(core_power_mw_16b=-1)


def test_weight_file_round_trip_and_errors(tmp_path, rng):
    net = bundled_network("smoke")
    ws = [FixedTensor(L.weight_dims, L.precision, rng.integers(-300, 300, L.n_weights)) for L in net.layers]
    path = tmp_path / "w.sbw"
    write_weight_file(path, ws)
    raw = path.read_bytes()
    assert raw[:4] == b"SBWT" and len(raw) == 16 + 2 * sum(L.n_weights for L in net.layers)
    assert read_weight_file(path, net) == ws
    path.write_bytes(raw[:-2])
    with pytest.raises(ValueError, match="truncated"):
        read_weight_file(path, net)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        read_weight_file(path, net)
    path.write_bytes(raw + b"\0\0")
    with pytest.raises(ValueError, match="trailing"):
        read_weight_file(path, net)


def test_load_arch(tmp_path):
    from sparse_bitserial import load_arch
    assert load_arch() == ArchConfig()
    p = tmp_path / "a.yaml"
    p.write_text("n_pe: 16\ndram_words_per_cycle: 4\n")
    arch = load_arch(p)
    assert (arch.n_pe, arch.dram_words_per_cycle, arch.w_is) == (16, 4, 8)
    p.write_text("n_pes: 16\n")
    with pytest.raises(ValueError, match="unknown arch fields"):
        load_arch(p)
