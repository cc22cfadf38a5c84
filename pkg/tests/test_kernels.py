"""Backend equivalence: the compiled kernels and the numpy fallback must be
draw-for-draw bit-identical."""

import numpy as np
import pytest

from memsoc._kernels import BACKEND, py_backend
from memsoc.mathcore.rng import fixed_rng

try:
    from memsoc._kernels import _core
except ImportError:
    _core = None

needs_ext = pytest.mark.skipif(_core is None, reason="compiled backend unavailable")


def test_backend_selected():
    assert BACKEND in ("cython", "python")


@needs_ext
@pytest.mark.parametrize("read_sigma,prog_sigma", [(0.3, 1.2), (0.0, 1.2),
                                                   (0.3, 0.0), (0.0, 0.0)])
def test_closed_loop_program_backends_identical(read_sigma, prog_sigma):
    rng = fixed_rng(31)
    g0 = rng.integers(0, 256, size=(40, 40)).astype(np.int16)
    stuck = (rng.random((40, 40)) < 0.01).astype(np.int8)
    target = rng.integers(0, 256, size=(40, 40)).astype(np.int16)
    g1, g2 = g0.copy(), g0.copy()
    it1 = py_backend.closed_loop_program(g1, stuck, target, 0.3, prog_sigma,
                                         read_sigma, 1, 100, fixed_rng(77))
    it2 = _core.closed_loop_program(g2, stuck, target, 0.3, prog_sigma,
                                    read_sigma, 1, 100, fixed_rng(77))
    assert it1 == it2
    assert np.array_equal(g1, g2)


@needs_ext
@pytest.mark.parametrize("read_sigma,shift", [(0.0, 0), (0.3, 4), (2.0, 8)])
def test_noisy_vmm_backends_identical(read_sigma, shift):
    rng = fixed_rng(13)
    g = rng.integers(0, 256, size=(64, 64)).astype(np.int16)
    v = rng.integers(0, 256, size=64).astype(np.uint8)
    a = py_backend.noisy_vmm(g, v, read_sigma, shift, fixed_rng(5))
    b = _core.noisy_vmm(g, v, read_sigma, shift, fixed_rng(5))
    assert a.dtype == b.dtype == np.uint8
    assert np.array_equal(a, b)


def test_python_backend_zero_rows_skipped_consistently():
    # zero DAC codes contribute nothing even with noise on
    g = np.full((8, 8), 200, dtype=np.int16)
    v = np.zeros(8, dtype=np.uint8)
    out = py_backend.noisy_vmm(g, v, 5.0, 0, fixed_rng(1))
    assert np.array_equal(out, np.zeros(8, dtype=np.uint8))
