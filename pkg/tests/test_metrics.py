import pytest

from sparse_bitserial import ArchConfig, CycleReport, TrafficReport, compare_runs, energy_report


def report(cycles, prec=16, name="net"):
    return CycleReport(name, "balanced", prec, 32, cycles, cycles, 0, 0, 0, 0, 0)


def test_zero_traffic_zero_dram_energy():
    e = energy_report(report(1000), TrafficReport(), ArchConfig())
    assert e.dram_energy_j == 0 and e.dram_bits == 0


def test_core_energy_full_chip_power():
    arch = ArchConfig(core_power_mw_16b=820.0)
    e = energy_report(report(10 ** 9), TrafficReport(), arch)
    assert e.runtime_s == 1.0 and e.core_energy_j == pytest.approx(0.82)
    assert e.frames_per_second == 1.0


def test_linearity():
    arch = ArchConfig()
    t = TrafficReport(1000, 2000, 300)
    a = energy_report(report(2000), t, arch)
    b = energy_report(report(1000), t, arch)
    assert b.core_energy_j == pytest.approx(a.core_energy_j / 2)
    assert b.dram_energy_j == a.dram_energy_j == pytest.approx(3300 * 20e-12)


def test_precision_picks_power():
    arch = ArchConfig()
    assert energy_report(report(10, 8), TrafficReport(), arch).core_power_w == pytest.approx(0.729)
    assert energy_report(report(10, 16), TrafficReport(), arch).core_power_w == pytest.approx(0.689)


def test_compare_self_is_one():
    arch = ArchConfig()
    r, t = report(5000), TrafficReport(10, 20, 30)
    e = energy_report(r, t, arch)
    row = compare_runs((r, e), (r, e)).to_row()
    assert all(v == 1.0 for k, v in row.items() if k != "network")


def test_compare_ratios():
    arch = ArchConfig()
    fast, slow = report(3000), report(16000)
    t_fast, t_slow = TrafficReport(100, 1000, 100), TrafficReport(100, 1000, 100)
    ef, es = energy_report(fast, t_fast, arch), energy_report(slow, t_slow, arch)
    table = compare_runs((fast, ef), (slow, es))
    assert table.speedup == pytest.approx(16 / 3)
    assert table.energy_efficiency_ratio == pytest.approx(table.speedup / table.power_ratio)
    assert table.dram_ratio == 1.0


def test_compare_weight_ratio_8bit():
    arch = ArchConfig()
    r = report(100, 8)
    enc = energy_report(r, TrafficReport(0, 17 * 64, 0), arch)
    raw = energy_report(r, TrafficReport(0, 8 * 64, 0), arch)
    assert compare_runs((r, enc), (r, raw)).dram_weight_ratio == 2.125


def test_compare_rejects_network_mismatch():
    arch = ArchConfig()
    a = energy_report(report(10), TrafficReport(), arch, network="a")
    b = energy_report(report(10), TrafficReport(), arch, network="b")
    with pytest.raises(ValueError, match="different networks"):
        compare_runs((report(10), a), (report(10), b))


def test_energy_dict_has_derived_fields():
    d = energy_report(report(100), TrafficReport(1, 2, 3), ArchConfig()).to_dict()
    assert {"total_energy_j", "frames_per_joule", "frames_per_s_per_mm2", "average_power_w"} <= set(d)
