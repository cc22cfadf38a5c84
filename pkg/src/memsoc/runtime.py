"""Execute a programmed MappingPlan on simulated tiles.

Layer dataflow per sample: drive the DAC codes (plus the full-scale bias
row), run one VMM pass per tile (two for the signed-split first layer),
reconstruct the accumulation from the ADC codes, apply the digital recipe
(offset correction, rescale, ReLU, requantization), and hand the codes to
the next layer. The final layer's real values are the logits.

Three environments share one test split: Float (the tape-based model),
QuantizedSim (the pure-integer reference), and SocSim (noisy tiles).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import BIAS_DAC_CODE, metrics_from_predictions
from .compiler import (apply_digital_recipe, reconstruct_acc, reference_forward,
                       requantize)
from .crossbar import TILE_SIZE, AdcConfig, vmm
from .errors import IntegrityError
from .mathcore.rng import subsystem_rng


@dataclass
class ExecutionTrace:
    vmm_count: int = 0
    mac_count: int = 0
    wall_time: float = 0.0
    layer_adc: list = field(default_factory=list)
    layer_real: list = field(default_factory=list)
    layer_codes: list = field(default_factory=list)


def infer(plan, programmed, input_codes, noise_on=True, rng_streams=None,
          collect=False):
    """Predicted classes for signed input codes (n, in_dim).

    rng_streams: one Generator per sample for read noise (defaults to the
    tiles' own streams); independent per-sample streams keep inference
    order-independent and reproducible.
    """
    if programmed.fingerprint != plan.fingerprint:
        raise IntegrityError(
            f"tiles were programmed from fingerprint {programmed.fingerprint[:12]}..., "
            f"plan is {plan.fingerprint[:12]}...")
    codes = np.atleast_2d(np.asarray(input_codes, dtype=np.int64))
    n = codes.shape[0]
    start = time.perf_counter()
    trace = ExecutionTrace()
    logits = np.empty((n, plan.layers[-1].out_dim))
    collected = [list() for _ in plan.layers] if collect else None

    for s in range(n):
        rng = None if rng_streams is None else rng_streams[s]
        x = codes[s]
        for li, lp in enumerate(plan.layers):
            tile = programmed.tiles[li]
            adc_cfg = AdcConfig(lp.adc_shift)
            if lp.input_split:
                plus = np.maximum(x, 0)
                minus = np.maximum(-x, 0)
                vp = np.zeros(TILE_SIZE, dtype=np.int64)
                vp[:lp.in_dim] = plus
                vp[lp.bias_row] = BIAS_DAC_CODE
                vm = np.zeros(TILE_SIZE, dtype=np.int64)
                vm[:lp.in_dim] = minus
                adc_p = vmm(tile, vp, adc_cfg, noise_on, rng)[:lp.cols_used].astype(np.int64)
                adc_m = vmm(tile, vm, adc_cfg, noise_on, rng)[:lp.cols_used].astype(np.int64)
                combined = (reconstruct_acc(lp, adc_p, vp.sum())
                            - reconstruct_acc(lp, adc_m, vm.sum()))
                sum_v = int(vp.sum() - vm.sum())
                trace.vmm_count += 2
            else:
                v = np.zeros(TILE_SIZE, dtype=np.int64)
                v[:lp.in_dim] = x
                v[lp.bias_row] = BIAS_DAC_CODE
                adc = vmm(tile, v, adc_cfg, noise_on, rng)[:lp.cols_used].astype(np.int64)
                combined = reconstruct_acc(lp, adc, v.sum())
                sum_v = int(v.sum())
                trace.vmm_count += 1
            trace.mac_count += lp.rows_used * lp.cols_used * lp.passes
            real = apply_digital_recipe(lp, combined, sum_v)
            if collect:
                collected[li].append(real)
            nxt = requantize(lp, real)
            if nxt is None:
                logits[s] = real
            else:
                x = nxt
    trace.wall_time = time.perf_counter() - start
    if collect:
        trace.layer_real = [np.vstack(rows) for rows in collected]
    predictions = np.argmax(logits, axis=1)
    return predictions, logits, trace


@dataclass
class EnvResult:
    environment: str
    metrics: object


def compare_environments(model, plan, programmed, test_features, test_codes,
                         test_labels, seed, noise_on=True):
    """Evaluate Float, QuantizedSim, and SocSim on one test split.

    Returns (EnvResult rows, residual stats, trace). Residuals compare the
    per-layer real-valued outputs of SocSim against the integer reference,
    the Fig-style hardware-vs-simulation check.
    """
    float_pred = model.predict(test_features)
    results = [EnvResult("float", metrics_from_predictions(float_pred, test_labels))]

    ref_logits, ref_reals = reference_forward(plan, test_codes, collect=True)
    results.append(EnvResult("quantized_sim", metrics_from_predictions(
        np.argmax(ref_logits, axis=1), test_labels)))

    streams = [subsystem_rng(seed, "device", 100, i) for i in range(len(test_codes))]
    soc_pred, _, trace = infer(plan, programmed, test_codes, noise_on=noise_on,
                               rng_streams=streams, collect=True)
    results.append(EnvResult("soc_sim", metrics_from_predictions(soc_pred, test_labels)))

    residuals = []
    for li, lp in enumerate(plan.layers):
        delta = np.abs(trace.layer_real[li] - ref_reals[li])
        residuals.append({"layer": li,
                          "mean_abs": float(delta.mean()),
                          "max_abs": float(delta.max()),
                          "rms": float(np.sqrt((delta ** 2).mean())),
                          "unit": lp.weight_scale * lp.input_scale * BIAS_DAC_CODE})
    return results, residuals, trace
