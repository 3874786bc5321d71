"""Fast self-checks of the models against independent oracles.

Run from the command line with ``sparse-bitserial check``. Each check
returns a :class:`CheckResult`; none of them needs more than a few seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .core import CONV, FC, ArchConfig, FixedTensor, LayerSpec
from .dataflow import RIF, RWF, choose_dataflow, coverage_counts, dram_traffic, plan_layer, tile_layer
from .encoder import bits_per_weight, encode_layer
from .quantizer import numeric_range, quantize_array, quantize_tensor
from .reference import conv_golden, relu_pool
from .systolic import WorkloadMode, random_ifm, simulate_layer


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def check_numeric_range() -> CheckResult:
    mags = np.arange(1 << 16)
    counts = np.bincount(np.bitwise_count(mags), minlength=17)
    brute = np.cumsum(counts)
    bad = [n for n in range(17) if numeric_range(n, 16) != brute[n] or brute[n] != sum(comb(16, i) for i in range(n + 1))]
    return CheckResult("numeric range vs enumeration (16-bit)", not bad, f"bad n: {bad}" if bad else "")


def check_bits_per_weight() -> CheckResult:
    want = {(16, 3): 16, (16, 4): 21, (8, 4): 17, (8, 5): 21}
    got = {k: bits_per_weight(*k) for k in want}
    return CheckResult("encoded bits per weight", got == want, str(got))


def check_sparse_mac_exhaustive(n_values=range(1, 9)) -> CheckResult:
    """Every 8-bit (i, w): shift-add over encoded slots equals i * quantized w."""
    i = np.arange(-128, 128, dtype=np.int64)
    w = np.arange(-128, 128, dtype=np.int64)
    mismatches = 0
    for n in n_values:
        q = quantize_array(w, n)
        enc = encode_layer(FixedTensor((w.size,), 8, q), n)
        operand = np.where(enc.signs[None, :].astype(bool), -i[:, None], i[:, None])
        acc = np.zeros((i.size, w.size), dtype=np.int64)
        for k in range(n):
            acc += np.where(enc.bitmaps[None, :, k].astype(bool),
                            operand << enc.positions[None, :, k].astype(np.int64), 0)
        mismatches += int(np.count_nonzero(acc != i[:, None] * q[None, :]))
    return CheckResult("sparse MAC vs multiply, all 8-bit pairs", mismatches == 0, f"mismatches={mismatches}")


def _random_layer(rng: np.random.Generator) -> LayerSpec:
    prec = int(rng.choice([8, 16]))
    n = int(rng.integers(1, 6))
    if rng.random() < 0.25:
        return LayerSpec(FC, int(rng.integers(1, 12)), int(rng.integers(1, 6)), n_nzb_max=n, precision=prec)
    k = int(rng.integers(1, 4))
    h = int(rng.integers(k, 11))
    return LayerSpec(CONV, int(rng.integers(1, 7)), int(rng.integers(1, 7)), h, h, k, k,
                     int(rng.integers(1, 3)), n_nzb_max=n, precision=prec)


def check_engines(trials: int = 12, seed: int = 0) -> CheckResult:
    """Analytic and cycle-by-cycle engines agree on timing and match the reference OFM."""
    rng = np.random.default_rng(seed)
    arch = ArchConfig(n_pe=4, w_is=4, h_is=4)
    bad = 0
    for _ in range(trials):
        layer = _random_layer(rng)
        lo, hi = -(1 << (layer.precision - 1)), 1 << (layer.precision - 1)
        w = FixedTensor(layer.weight_dims, layer.precision, rng.integers(lo, hi, size=layer.n_weights))
        q, _ = quantize_tensor(w, layer.n_nzb_max)
        enc = encode_layer(q, layer.n_nzb_max)
        x = random_ifm(layer, rng)
        plan = plan_layer(layer, arch)
        gold = relu_pool(conv_golden(x, q, layer), layer)
        for mode in WorkloadMode:
            o1, r1 = simulate_layer(layer, enc, plan, mode, arch, ifm=x)
            o2, r2 = simulate_layer(layer, enc, plan, mode, arch, ifm=x, engine="event")
            same_timing = r1.to_row() == r2.to_row()
            bad += not (o1 == gold and o2 == gold and same_timing)
    return CheckResult("analytic vs event engine vs reference", bad == 0, f"failures={bad}")


def check_dataflow(trials: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    arch = ArchConfig(n_pe=4, w_is=4, h_is=4)
    bad = 0
    for _ in range(trials):
        k = int(rng.integers(1, 4))
        h = int(rng.integers(k, 20))
        layer = LayerSpec(CONV, int(rng.integers(1, 12)), int(rng.integers(1, 12)), h,
                          int(rng.integers(k, 20)), k, k, int(rng.integers(1, 3)))
        plan = tile_layer(layer, arch)
        best = min(dram_traffic(layer, plan, RIF).total_bits, dram_traffic(layer, plan, RWF).total_bits)
        chosen = dram_traffic(layer, plan, choose_dataflow(layer, plan)).total_bits
        cover = coverage_counts(plan.with_dataflow(RIF), layer)
        bad += chosen != best or not (cover == 1).all()
    return CheckResult("dataflow choice and tile coverage", bad == 0, f"failures={bad}")


ALL_CHECKS = (check_numeric_range, check_bits_per_weight, check_sparse_mac_exhaustive,
              check_engines, check_dataflow)


def run_checks() -> list[CheckResult]:
    return [fn() for fn in ALL_CHECKS]
