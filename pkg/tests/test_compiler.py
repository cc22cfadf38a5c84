import numpy as np
import pytest

from memsoc.classifier import MlpModel, quantize
from memsoc.compiler import (
    GZ_FRAC_BITS,
    MappingPlan,
    compile_model,
    encode_conductance,
    fold_bias,
    model_fingerprint,
    program_plan,
    reference_forward,
    split_signed_input,
)
from memsoc.crossbar import TILE_SIZE, DeviceParams
from memsoc.errors import CalibrationError, CapacityError
from memsoc.mathcore.rng import fixed_rng


def _quantized_toy(dims=(6, 8, 8, 8, 3), seed=4, n_cal=40):
    rng = fixed_rng(seed)
    model = MlpModel(dims=dims, seed=seed)
    cal = rng.standard_normal((n_cal, dims[0]))
    qm = quantize(model, cal)
    codes = qm.act_params[0].quant(cal)
    return model, qm, codes


# ---------------------------------------------------------------------------
# lowering passes
# ---------------------------------------------------------------------------

def test_fold_bias_hand_cases():
    w = np.array([[1, 2]])
    folded = fold_bias(w, np.array([3]))
    assert folded.tolist() == [[1, 2, 3]]
    x1 = np.array([1, 1, 1])
    assert (folded @ x1).tolist() == [6]
    zero = fold_bias(w, np.array([0]))
    assert (zero @ x1).tolist() == [3]


def test_fold_bias_identity_sweep():
    rng = fixed_rng(8)
    for _ in range(100):
        out_dim, in_dim = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        w = rng.integers(-50, 50, size=(out_dim, in_dim))
        b = rng.integers(-50, 50, size=out_dim)
        x = rng.integers(-20, 20, size=in_dim)
        folded = fold_bias(w, b)
        assert np.array_equal(folded @ np.concatenate([x, [1]]), w @ x + b)


def test_fold_bias_shape_error():
    with pytest.raises(ValueError, match="bias"):
        fold_bias(np.zeros((2, 3)), np.zeros(3))


def test_split_signed_input_hand_case():
    plus, minus = split_signed_input(np.array([2, -3]))
    assert plus.tolist() == [2, 0] and minus.tolist() == [0, 3]
    w = fixed_rng(1).integers(-9, 9, size=(4, 2))
    assert np.array_equal(w @ np.array([2, -3]),
                          (w @ plus.astype(np.int64)) - (w @ minus.astype(np.int64)))


def test_split_signed_input_non_negative_passthrough():
    plus, minus = split_signed_input(np.array([0, 5, 255]))
    assert minus.tolist() == [0, 0, 0]
    assert plus.tolist() == [0, 5, 255]


def test_split_signed_input_reconstruction_sweep():
    rng = fixed_rng(2)
    for _ in range(1000):
        x = rng.integers(-255, 256, size=rng.integers(1, 32))
        plus, minus = split_signed_input(x)
        assert np.array_equal(plus.astype(np.int64) - minus.astype(np.int64), x)
        assert np.all((plus == 0) | (minus == 0))


def test_split_signed_input_range_error():
    with pytest.raises(ValueError, match="9-bit"):
        split_signed_input(np.array([300]))


def test_encode_endpoints_and_zero():
    levels, meta = encode_conductance(np.array([[-128, 0, 127]]))
    assert levels.tolist() == [[50, 125, 200]]
    assert meta.slope == pytest.approx(150 / 255)
    assert meta.g_zero == pytest.approx(50 + 128 * 150 / 255)
    assert meta.g_zero_fp == round(meta.g_zero * (1 << GZ_FRAC_BITS))


def test_encode_roundtrip_all_codes():
    codes = np.arange(-128, 128)
    levels, meta = encode_conductance(codes)
    err = np.abs(meta.decode(levels) - codes)
    assert np.max(err) <= 1.0


def test_encode_validation():
    with pytest.raises(ValueError, match="exceed"):
        encode_conductance(np.zeros(1, dtype=int), g_lo=200, g_hi=50)
    with pytest.raises(ValueError, match="int8"):
        encode_conductance(np.array([400]))


def test_offset_correction_recovers_decoded_dot_product():
    rng = fixed_rng(3)
    for _ in range(200):
        wq = rng.integers(-128, 128, size=(int(rng.integers(1, 8)),
                                           int(rng.integers(1, 8))))
        levels, meta = encode_conductance(wq)
        v = rng.integers(0, 256, size=wq.shape[1]).astype(np.int64)
        acc = levels.astype(np.int64) @ v
        corrected = (acc - meta.g_zero_fp * v.sum() / (1 << GZ_FRAC_BITS)) / meta.slope
        decoded_dot = meta.decode(levels) @ v
        assert np.max(np.abs(corrected - decoded_dot)) < 1e-9
        # and the decoded weights stay within one unit of the true codes
        assert np.max(np.abs(corrected - wq @ v)) <= (0.5 / meta.slope) * v.sum() + 1e-9


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------

def test_compile_structure_of_spec_model():
    _, qm, codes = _quantized_toy(dims=(128, 240, 96, 48, 3), n_cal=64)
    plan = compile_model(qm, codes)
    assert len(plan.layers) == 4
    assert [lp.tile_id for lp in plan.layers] == [0, 1, 2, 3]
    assert plan.layers[0].input_split and not plan.layers[1].input_split
    assert (plan.layers[0].rows_used, plan.layers[0].cols_used) == (129, 240)
    assert (plan.layers[1].rows_used, plan.layers[1].cols_used) == (241, 96)
    assert (plan.layers[2].rows_used, plan.layers[2].cols_used) == (97, 48)
    assert (plan.layers[3].rows_used, plan.layers[3].cols_used) == (49, 3)
    assert plan.layers[3].requant_scale == 0.0 and not plan.layers[3].relu
    assert plan.used_cells() <= plan.npu_count * TILE_SIZE * TILE_SIZE
    assert plan.plan_hash() == compile_model(qm, codes).plan_hash()


def test_compile_tile_images_fill_unused_with_weight_zero():
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes)
    img = plan.tile_targets()[0]
    lp = plan.layers[0]
    assert img.shape == (TILE_SIZE, TILE_SIZE)
    assert np.all(img[lp.rows_used:, :] == 125)
    assert np.all(img[:, lp.cols_used:] == 125)
    assert np.array_equal(img[:lp.rows_used, :lp.cols_used], lp.levels.T)


def test_compile_capacity_errors():
    _, qm, codes = _quantized_toy()
    with pytest.raises(CapacityError, match="tiles"):
        compile_model(qm, codes, npu_count=3)
    # an in-dim of 256 needs 257 rows once the bias row is folded in
    qm.weight_codes[0] = np.zeros((8, 256), dtype=np.int8)
    with pytest.raises(CapacityError, match="tile"):
        compile_model(qm, np.zeros((4, 256), dtype=np.int64))


def test_compile_shift_override_and_calibration_error():
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes, shift_overrides=[None, None, None, None])
    pinned = compile_model(qm, codes,
                           shift_overrides=[lp.adc_shift for lp in plan.layers])
    assert [lp.adc_shift for lp in pinned.layers] == [lp.adc_shift for lp in plan.layers]
    with pytest.raises(CalibrationError, match="clamp"):
        compile_model(qm, codes, shift_overrides=[0, 0, 0, 0])


def test_plan_text_roundtrip(tmp_path):
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes)
    path = tmp_path / "plan.txt"
    plan.save(path)
    back = MappingPlan.load(path)
    assert back.fingerprint == plan.fingerprint
    assert back.to_text() == plan.to_text()
    for a, b in zip(back.layers, plan.layers):
        assert np.array_equal(a.levels, b.levels)
        assert a.input_scale == b.input_scale
        assert a.adc_shift == b.adc_shift


def test_plan_golden_file():
    model, qm, codes = _quantized_toy(dims=(4, 4, 3), seed=123, n_cal=16)
    plan = compile_model(qm, codes, npu_count=2)
    golden = open("tests/golden/plan_small.txt", encoding="utf-8").read()
    assert plan.to_text() == golden


def test_identity_single_cell_network_end_to_end():
    model = MlpModel(dims=(1, 1), seed=0)
    model.weights[0].data[:] = 1.0
    model.biases[0].data[:] = 0.0
    cal = np.linspace(-1, 1, 9).reshape(-1, 1)
    qm = quantize(model, cal)
    codes = qm.act_params[0].quant(cal)
    plan = compile_model(qm, codes, npu_count=1)
    lp = plan.layers[0]
    # w = 1.0 lands on the exact conductance endpoint and the bias column is
    # statically corrected, so the only deviation left is the centered ADC
    # truncation (at most half a step) plus the input quantization itself
    tol = ((1 << max(lp.adc_shift - 1, 0)) / lp.slope
           * lp.weight_scale * lp.input_scale) + lp.input_scale / 2
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.0, stuck_on_rate=0.0,
                          pulse_step_fraction=1.0)
    programmed = program_plan(plan, params, seed=1)
    from memsoc.runtime import infer
    for x in (-1.0, 0.0, 0.25, 1.0):
        code = qm.act_params[0].quant(np.array([x]))
        ref = reference_forward(plan, code.reshape(1, 1))
        _, sim, _ = infer(plan, programmed, code.reshape(1, 1), noise_on=False)
        assert np.array_equal(sim, ref)  # simulation reproduces the recipe exactly
        assert ref[0, 0] == pytest.approx(x, abs=tol)


def test_fingerprint_tracks_model_changes():
    _, qm, codes = _quantized_toy()
    fp = model_fingerprint(qm)
    qm.weight_codes[0][0, 0] += 1
    assert model_fingerprint(qm) != fp


# ---------------------------------------------------------------------------
# program_plan
# ---------------------------------------------------------------------------

def test_program_plan_zero_noise_exact():
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes)
    params = DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                          stuck_off_rate=0.0, stuck_on_rate=0.0,
                          pulse_step_fraction=1.0)
    programmed = program_plan(plan, params, seed=9)
    assert all(r.rmse_free == 0.0 for r in programmed.reports)
    assert programmed.fingerprint == plan.fingerprint
    for tile, target in zip(programmed.tiles, plan.tile_targets()):
        assert np.array_equal(tile.g, target)


def test_program_plan_default_params_within_criterion():
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes)
    programmed = program_plan(plan, DeviceParams(), seed=9)
    assert all(r.rmse_free <= 5.0 for r in programmed.reports)


def test_program_plan_reports_stuck_cells_under_weights():
    _, qm, codes = _quantized_toy()
    plan = compile_model(qm, codes)
    params = DeviceParams(stuck_off_rate=0.05, stuck_on_rate=0.05)
    programmed = program_plan(plan, params, seed=9)
    assert programmed.stuck_in_used, "expected stuck cells inside used regions"
    row = programmed.stuck_in_used[0]
    assert row["stuck_level"] in (0, 255)
    assert row["weight_error"] == pytest.approx(
        row["level_error"] / plan.layers[0].slope)
