"""Runtime, energy and efficiency figures derived from cycle and traffic reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .core import ArchConfig
from .dataflow import TrafficReport
from .systolic import CycleReport


@dataclass(frozen=True)
class EnergyReport:
    network: str
    precision: int
    runtime_s: float
    core_power_w: float
    core_energy_j: float
    dram_bits: int
    dram_weight_bits: int
    dram_energy_j: float
    frames_per_second: float
    area_mm2: float

    @property
    def total_energy_j(self) -> float:
        return self.core_energy_j + self.dram_energy_j

    @property
    def average_power_w(self) -> float:
        return self.total_energy_j / self.runtime_s if self.runtime_s else 0.0

    @property
    def frames_per_joule(self) -> float:
        return 1.0 / self.total_energy_j if self.total_energy_j else float("inf")

    @property
    def frames_per_s_per_mm2(self) -> float:
        return self.frames_per_second / self.area_mm2 if self.area_mm2 else float("inf")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(total_energy_j=self.total_energy_j, average_power_w=self.average_power_w,
                 frames_per_joule=self.frames_per_joule,
                 frames_per_s_per_mm2=self.frames_per_s_per_mm2)
        return d


def energy_report(cycles: CycleReport, traffic: TrafficReport, arch: ArchConfig,
                  precision: int | None = None, network: str | None = None) -> EnergyReport:
    """Energy of one frame: core power x runtime plus per-bit DRAM energy."""
    precision = precision or cycles.precision
    runtime = cycles.total_cycles / arch.clock_hz
    power_w = arch.core_power_mw(precision) * 1e-3
    return EnergyReport(
        network=network if network is not None else cycles.layer,
        precision=precision,
        runtime_s=runtime,
        core_power_w=power_w,
        core_energy_j=power_w * runtime,
        dram_bits=traffic.total_bits,
        dram_weight_bits=traffic.dram_bits_weight,
        dram_energy_j=traffic.total_bits * arch.dram_energy_pj_per_bit * 1e-12,
        frames_per_second=arch.clock_hz / cycles.total_cycles if cycles.total_cycles else float("inf"),
        area_mm2=arch.area_mm2,
    )


@dataclass(frozen=True)
class RatioTable:
    """``run`` relative to ``baseline``; every ratio > 1 favours ``run``, except power/DRAM."""

    network: str
    speedup: float
    power_ratio: float
    dram_ratio: float
    dram_weight_ratio: float
    energy_efficiency_ratio: float

    def to_row(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def compare_runs(run: tuple[CycleReport, EnergyReport],
                 baseline: tuple[CycleReport, EnergyReport]) -> RatioTable:
    """Speedup, power, DRAM and frame/J ratios of ``run`` over ``baseline``."""
    cyc_a, en_a = run
    cyc_b, en_b = baseline
    if en_a.network != en_b.network:
        raise ValueError(f"cannot compare runs of different networks: {en_a.network!r} vs {en_b.network!r}")
    return RatioTable(
        network=en_a.network,
        speedup=_ratio(cyc_b.total_cycles, cyc_a.total_cycles),
        power_ratio=_ratio(en_a.average_power_w, en_b.average_power_w),
        dram_ratio=_ratio(en_a.dram_bits, en_b.dram_bits),
        dram_weight_ratio=_ratio(en_a.dram_weight_bits, en_b.dram_weight_bits),
        energy_efficiency_ratio=_ratio(en_a.frames_per_joule, en_b.frames_per_joule),
    )
