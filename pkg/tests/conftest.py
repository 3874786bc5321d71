import numpy as np
import pytest

from sparse_bitserial import CONV, FC, ArchConfig, FixedTensor, LayerSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_arch():
    return ArchConfig(n_pe=4, w_is=4, h_is=4)


def rand_tensor(rng, dims, bits):
    lo, hi = -(1 << (bits - 1)), 1 << (bits - 1)
    return FixedTensor(tuple(dims), bits, rng.integers(lo, hi, size=int(np.prod(dims))))


def rand_conv(rng, max_c=4, max_hw=8, prec=16, n_max=3, max_k=3, max_stride=2):
    k = int(rng.integers(1, max_k + 1))
    h = int(rng.integers(k, max_hw + 1))
    w = int(rng.integers(k, max_hw + 1))
    return LayerSpec(CONV, int(rng.integers(1, max_c + 1)), int(rng.integers(1, max_c + 1)), h, w,
                     k, int(rng.integers(1, k + 1)), int(rng.integers(1, max_stride + 1)),
                     n_nzb_max=n_max, precision=prec)


def rand_fc(rng, prec=16, n_max=3):
    return LayerSpec(FC, int(rng.integers(1, 20)), int(rng.integers(1, 10)), n_nzb_max=n_max, precision=prec)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
