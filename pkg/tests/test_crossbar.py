import numpy as np
import pytest

from memsoc.crossbar import (
    STUCK_OFF,
    STUCK_ON,
    AdcConfig,
    CrossbarTile,
    DeviceParams,
    conductance_cdf_study,
    program_closed_loop,
    read_conductance,
    vmm,
)
from memsoc.errors import ProgrammingFailureError
from memsoc.mathcore.rng import fixed_rng

ZERO_NOISE = dict(program_noise_sigma=0.0, read_noise_sigma=0.0,
                  stuck_off_rate=0.0, stuck_on_rate=0.0)


def _tile(params=None, seed=1, rows=32, cols=32):
    params = params if params is not None else DeviceParams(**ZERO_NOISE)
    return CrossbarTile(params, fixed_rng(seed), rows=rows, cols=cols)


def test_device_params_validation():
    with pytest.raises(ValueError, match="pulse step"):
        DeviceParams(pulse_step_fraction=0.0)
    with pytest.raises(ValueError, match="probability"):
        DeviceParams(stuck_on_rate=1.5)
    with pytest.raises(ValueError, match=">= 0"):
        DeviceParams(read_noise_sigma=-1)


def test_program_zero_noise_full_step_exact():
    tile = _tile(DeviceParams(pulse_step_fraction=1.0, **ZERO_NOISE))
    target = fixed_rng(3).integers(0, 256, size=tile.shape).astype(np.int16)
    report = program_closed_loop(tile, target)
    assert report.iterations <= 2  # one pulse pass, one confirming read
    assert report.rmse_free == 0.0
    assert np.array_equal(tile.g, target)


def test_program_stuck_cells_do_not_move():
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.2, stuck_on_rate=0.2,
                          pulse_step_fraction=1.0)
    tile = _tile(params, seed=5)
    target = np.full(tile.shape, 200, dtype=np.int16)
    report = program_closed_loop(tile, target)
    off = tile.stuck == STUCK_OFF
    on = tile.stuck == STUCK_ON
    assert report.stuck_count == int(off.sum() + on.sum()) > 0
    eff = tile.effective_levels()
    assert np.all(eff[off] == 0)
    assert np.all(eff[on] == 255)
    assert report.rmse_all > report.rmse_free


def test_program_default_params_meets_criterion():
    rng = fixed_rng(11)
    for trial in range(3):
        tile = CrossbarTile(DeviceParams(), fixed_rng(100 + trial), rows=64, cols=64)
        target = rng.integers(0, 256, size=(64, 64)).astype(np.int16)
        report = program_closed_loop(tile, target)
        assert report.rmse_free <= 5.0


def test_program_failure_carries_report():
    # one pulse allowed and tiny step: cannot reach far targets
    params = DeviceParams(pulse_step_fraction=0.01, max_program_iters=2,
                          program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.0, stuck_on_rate=0.0)
    tile = _tile(params)
    target = np.full(tile.shape, 255, dtype=np.int16)
    with pytest.raises(ProgrammingFailureError) as info:
        program_closed_loop(tile, target)
    assert info.value.report.rmse_free > 5.0


def test_program_shape_and_range_errors():
    tile = _tile()
    with pytest.raises(ValueError, match="shape"):
        program_closed_loop(tile, np.zeros((4, 4), dtype=np.int16))
    with pytest.raises(ValueError, match="levels"):
        program_closed_loop(tile, np.full(tile.shape, 300, dtype=np.int16))


def test_read_conductance_exact_and_stuck():
    tile = _tile()
    tile.g[:] = 7
    assert read_conductance(tile, 0, 0) == 7
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.0, stuck_on_rate=1.0)
    stuck_tile = _tile(params, seed=2)
    assert read_conductance(stuck_tile, 3, 3) == 255
    with pytest.raises(IndexError):
        read_conductance(tile, 99, 0)


def test_read_noise_sigma_estimate():
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=2.0,
                          stuck_off_rate=0.0, stuck_on_rate=0.0)
    tile = _tile(params, seed=7)
    tile.g[:] = 100
    reads = np.array([read_conductance(tile, 0, 0) for _ in range(10000)], dtype=float)
    # rounding to integer levels adds 1/12 quantization variance
    expected = np.sqrt(2.0 ** 2 + 1 / 12)
    assert abs(reads.std() - expected) / expected < 0.15


def test_vmm_single_cell_hand_case():
    tile = _tile(rows=1, cols=1)
    tile.g[0, 0] = 2
    out = vmm(tile, np.array([3]), AdcConfig(0), noise_on=False)
    assert out.tolist() == [6]


def test_vmm_saturation():
    tile = _tile(rows=2, cols=1)
    tile.g[:, 0] = [150, 150]
    out = vmm(tile, np.array([1, 1]), AdcConfig(0), noise_on=False)
    assert out.tolist() == [255]


def test_vmm_matches_integer_oracle():
    rng = fixed_rng(17)
    for _ in range(1000):
        rows, cols = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        tile = _tile(rows=rows, cols=cols)
        tile.g[:] = rng.integers(0, 256, size=(rows, cols)).astype(np.int16)
        v = rng.integers(0, 256, size=rows)
        want = v @ tile.g.astype(np.int64)
        shift = 0
        while (want.max() >> shift) > 255:
            shift += 1
        out = vmm(tile, v, AdcConfig(shift), noise_on=False)
        assert np.array_equal(out.astype(np.int64), want >> shift)


def test_vmm_monotone_in_inputs():
    tile = _tile(rows=8, cols=8)
    tile.g[:] = fixed_rng(9).integers(0, 16, size=(8, 8)).astype(np.int16)
    v = np.full(8, 2)
    base = vmm(tile, v, AdcConfig(0), noise_on=False).astype(int)
    for i in range(8):
        bumped = v.copy()
        bumped[i] += 1
        out = vmm(tile, bumped, AdcConfig(0), noise_on=False).astype(int)
        assert np.all(out >= base)


def test_vmm_input_validation():
    tile = _tile(rows=4, cols=4)
    with pytest.raises(ValueError, match="rows"):
        vmm(tile, np.zeros(3), AdcConfig(0), noise_on=False)
    with pytest.raises(ValueError, match="DAC"):
        vmm(tile, np.full(4, 300), AdcConfig(0), noise_on=False)
    with pytest.raises(ValueError, match="shift"):
        AdcConfig(-1)


def test_vmm_deterministic_per_stream():
    params = DeviceParams()
    t1 = CrossbarTile(params, fixed_rng(4), rows=16, cols=16)
    t2 = CrossbarTile(params, fixed_rng(4), rows=16, cols=16)
    t1.g[:] = 80
    t2.g[:] = 80
    v = np.full(16, 100)
    a = vmm(t1, v, AdcConfig(4), noise_on=True)
    b = vmm(t2, v, AdcConfig(4), noise_on=True)
    assert np.array_equal(a, b)


def test_stuck_cells_ignore_reprogramming():
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.0, stuck_on_rate=1.0,
                          pulse_step_fraction=1.0)
    tile = _tile(params, seed=3, rows=4, cols=4)
    program_closed_loop(tile, np.full((4, 4), 10, dtype=np.int16))
    first = tile.effective_levels().copy()
    program_closed_loop(tile, np.full((4, 4), 200, dtype=np.int16))
    assert np.array_equal(tile.effective_levels(), first)


def test_cdf_study_zero_noise_is_step_function():
    params = DeviceParams(**ZERO_NOISE, pulse_step_fraction=1.0)
    study = conductance_cdf_study(params, fixed_rng(5), n_cells=256 * 4)
    assert np.array_equal(study.medians, np.arange(256))
    for target, read, frac in study.rows:
        assert read == target and frac == 1.0


def test_cdf_study_default_params_medians():
    study = conductance_cdf_study(DeviceParams(), fixed_rng(6), n_cells=256 * 16)
    assert np.all(np.abs(study.medians - np.arange(256)) <= 2)
    assert np.all(np.diff(study.medians) >= 0)
    lines = study.to_csv_lines()
    assert lines[0] == "target_level,read_level,cumulative_fraction"
