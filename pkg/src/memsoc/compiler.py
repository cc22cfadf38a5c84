"""Lower a quantized MLP onto crossbar tiles.

Passes, in order: fold each bias in as an extra weight column driven by the
full-scale DAC code; mark the first layer for signed-input splitting (the
chip accepts only unsigned inputs); encode signed int8 weights into the
[g_lo, g_hi] conductance window with a single zero-centered affine map; pick
the smallest per-layer ADC shift whose clamp rate on a calibration batch
stays within budget; record the digital recipe (offset correction, rescale,
ReLU, requantization) needed to recover real-valued layer outputs.

The digital offset correction inverts the affine encoding using the input
sum: acc_j = slope * sum_i(w_ij v_i) + g_zero * sum_i(v_i), so the signed
dot product is (acc - g_zero * sum(v)) / slope. g_zero is kept as a
fixed-point integer with 8 fractional bits so both the chip simulation and
the integer reference compute the identical correction.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .classifier import BIAS_DAC_CODE
from .crossbar import TILE_SIZE, CrossbarTile, program_closed_loop
from .errors import CalibrationError, CapacityError, IntegrityError
from .mathcore.rng import subsystem_rng

G_LO_DEFAULT = 50
G_HI_DEFAULT = 200
GZ_FRAC_BITS = 8
CLAMP_BUDGET = 0.01
CLAMP_FAIL = 0.10
MAX_SHIFT = 24


def fold_bias(w, b):
    """Append the bias as one extra column: y = W x + b becomes [W b] [x; 1]."""
    w = np.asarray(w)
    b = np.asarray(b)
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match weights {w.shape}")
    return np.concatenate([w, b[:, None]], axis=1)


def split_signed_input(x):
    """Split a signed vector into its positive and negative parts.

    W x == W x_plus - W x_minus for any W; exactly one of the two halves is
    nonzero per element. Inputs must fit signed 9 bits so each half is a
    valid uint8 DAC vector.
    """
    x = np.asarray(x)
    if np.any(np.abs(x) > 255):
        raise ValueError("signed input codes outside 9-bit range [-255, 255]")
    plus = np.maximum(x, 0).astype(np.uint8)
    minus = np.maximum(-x, 0).astype(np.uint8)
    return plus, minus


@dataclass
class EncodedColumnMeta:
    slope: float       # conductance levels per weight unit
    g_zero: float      # real level encoding weight zero (fractional)
    g_zero_fp: int     # fixed point, GZ_FRAC_BITS fractional bits

    def decode(self, levels):
        return (np.asarray(levels, dtype=np.float64)
                - self.g_zero_fp / (1 << GZ_FRAC_BITS)) / self.slope


def encode_conductance(w_q, g_lo=G_LO_DEFAULT, g_hi=G_HI_DEFAULT):
    """Map signed int8 weights into integer conductance levels in [g_lo, g_hi]."""
    if g_hi <= g_lo:
        raise ValueError(f"g_hi {g_hi} must exceed g_lo {g_lo}")
    if not (0 <= g_lo and g_hi <= 255):
        raise ValueError(f"conductance window [{g_lo}, {g_hi}] outside [0, 255]")
    w_q = np.asarray(w_q)
    if w_q.min() < -128 or w_q.max() > 127:
        raise ValueError("quantized weights outside int8 range")
    slope = (g_hi - g_lo) / 255.0
    levels = np.rint(g_lo + (w_q.astype(np.float64) + 128.0) * slope).astype(np.int16)
    g_zero = g_lo + 128.0 * slope
    meta = EncodedColumnMeta(slope=slope, g_zero=g_zero,
                             g_zero_fp=int(np.rint(g_zero * (1 << GZ_FRAC_BITS))))
    return levels, meta


@dataclass
class LayerPlan:
    index: int
    tile_id: int
    in_dim: int
    out_dim: int
    input_split: bool
    input_signed: bool
    input_bits: int
    input_scale: float
    weight_scale: float
    adc_shift: int
    slope: float
    g_zero_fp: int
    relu: bool
    requant_scale: float      # 0.0 on the final layer
    levels: np.ndarray = field(repr=False, default=None)  # (out, in+1) folded
    # static per-column correction: the bias column is driven by a constant,
    # so its conductance-encoding rounding error is known at compile time
    bias_correction: np.ndarray = field(repr=False, default=None)

    @property
    def rows_used(self):
        return self.in_dim + 1

    @property
    def cols_used(self):
        return self.out_dim

    @property
    def bias_row(self):
        return self.in_dim

    @property
    def passes(self):
        return 2 if self.input_split else 1


@dataclass
class MappingPlan:
    fingerprint: str
    npu_count: int
    g_lo: int
    g_hi: int
    layers: list

    def tile_targets(self):
        """Full tile images: used region plus weight-zero filler elsewhere."""
        filler = int(np.rint(self.g_lo + 128.0 * (self.g_hi - self.g_lo) / 255.0))
        images = []
        for lp in self.layers:
            img = np.full((TILE_SIZE, TILE_SIZE), filler, dtype=np.int16)
            img[:lp.rows_used, :lp.cols_used] = lp.levels.T
            images.append(img)
        return images

    def used_cells(self):
        return sum(lp.rows_used * lp.cols_used for lp in self.layers)

    def to_text(self):
        lines = ["plan v1", f"fingerprint {self.fingerprint}",
                 f"npu_count {self.npu_count}", f"g_lo {self.g_lo}",
                 f"g_hi {self.g_hi}", f"layers {len(self.layers)}"]
        for lp in self.layers:
            lines.append(f"layer {lp.index}")
            lines.append(f"  tile {lp.tile_id}")
            lines.append(f"  in_dim {lp.in_dim}")
            lines.append(f"  out_dim {lp.out_dim}")
            lines.append(f"  input_split {int(lp.input_split)}")
            lines.append(f"  input_signed {int(lp.input_signed)}")
            lines.append(f"  input_bits {lp.input_bits}")
            lines.append(f"  input_scale {float(lp.input_scale).hex()}")
            lines.append(f"  weight_scale {float(lp.weight_scale).hex()}")
            lines.append(f"  adc_shift {lp.adc_shift}")
            lines.append(f"  slope {float(lp.slope).hex()}")
            lines.append(f"  g_zero_fp {lp.g_zero_fp}")
            lines.append(f"  relu {int(lp.relu)}")
            lines.append(f"  requant_scale {float(lp.requant_scale).hex()}")
            lines.append("  bias_correction "
                         + " ".join(float(c).hex() for c in lp.bias_correction))
            lines.append(f"  levels {lp.levels.shape[0]}x{lp.levels.shape[1]}")
            for row in lp.levels:
                lines.append("  " + " ".join(str(int(v)) for v in row))
            lines.append("end layer")
        return "\n".join(lines) + "\n"

    def plan_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or lines[0] != "plan v1":
            raise IntegrityError("not a v1 plan file")
        head = {}
        i = 1
        while i < len(lines) and not lines[i].startswith("layer "):
            key, value = lines[i].split(None, 1)
            head[key] = value
            i += 1
        layers = []
        while i < len(lines):
            assert lines[i].startswith("layer ")
            index = int(lines[i].split()[1])
            i += 1
            fields = {}
            while not lines[i].lstrip().startswith("levels "):
                key, value = lines[i].split(None, 1)
                fields[key] = value
                i += 1
            rows, cols = (int(v) for v in lines[i].split()[1].split("x"))
            i += 1
            levels = np.array([[int(v) for v in lines[i + r].split()]
                               for r in range(rows)], dtype=np.int16)
            i += rows
            if lines[i] != "end layer":
                raise IntegrityError(f"malformed plan near line {i + 1}")
            i += 1
            layers.append(LayerPlan(
                index=index, tile_id=int(fields["tile"]), in_dim=int(fields["in_dim"]),
                out_dim=int(fields["out_dim"]), input_split=bool(int(fields["input_split"])),
                input_signed=bool(int(fields["input_signed"])),
                input_bits=int(fields["input_bits"]),
                input_scale=float.fromhex(fields["input_scale"]),
                weight_scale=float.fromhex(fields["weight_scale"]),
                adc_shift=int(fields["adc_shift"]), slope=float.fromhex(fields["slope"]),
                g_zero_fp=int(fields["g_zero_fp"]), relu=bool(int(fields["relu"])),
                requant_scale=float.fromhex(fields["requant_scale"]), levels=levels,
                bias_correction=np.array([float.fromhex(v) for v in
                                          fields["bias_correction"].split()])))
        return cls(fingerprint=head["fingerprint"], npu_count=int(head["npu_count"]),
                   g_lo=int(head["g_lo"]), g_hi=int(head["g_hi"]), layers=layers)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def model_fingerprint(qmodel):
    h = hashlib.sha256()
    h.update(np.asarray(qmodel.dims, dtype=np.int64).tobytes())
    for wq, bq, wp, ap in zip(qmodel.weight_codes, qmodel.bias_codes,
                              qmodel.weight_params, qmodel.act_params):
        h.update(wq.tobytes())
        h.update(bq.tobytes())
        h.update(np.float64(wp.scale).tobytes())
        h.update(np.float64(ap.scale).tobytes())
    return h.hexdigest()


def compile_model(qmodel, calibration_codes, npu_count=10,
                  g_lo=G_LO_DEFAULT, g_hi=G_HI_DEFAULT,
                  clamp_budget=CLAMP_BUDGET, shift_overrides=None):
    """Build the MappingPlan for a quantized model.

    calibration_codes: signed integer input codes (n, in_dim) used to pick
    each layer's ADC shift (smallest shift whose clamp rate is within
    clamp_budget). shift_overrides, when given, pins shifts per layer; an
    override whose clamp rate exceeds 10% raises CalibrationError.
    """
    n_layers = qmodel.n_layers
    if n_layers > npu_count:
        raise CapacityError(f"{n_layers} layers need more than {npu_count} tiles")
    for l in range(n_layers):
        out_dim, in_dim = qmodel.weight_codes[l].shape
        if in_dim + 1 > TILE_SIZE or out_dim > TILE_SIZE:
            raise CapacityError(f"layer {l} ({in_dim}+1 x {out_dim}) exceeds "
                                f"a {TILE_SIZE}x{TILE_SIZE} tile")

    codes = np.atleast_2d(np.asarray(calibration_codes, dtype=np.int64))
    layers = []
    for l in range(n_layers):
        wq = qmodel.weight_codes[l]
        folded = fold_bias(wq, qmodel.bias_codes[l])
        levels, meta = encode_conductance(folded, g_lo, g_hi)
        out_dim, in_dim = wq.shape
        split = bool(qmodel.act_params[l].signed)
        last = l == n_layers - 1

        accs = _layer_accumulations(levels, codes, split)
        if shift_overrides is not None and shift_overrides[l] is not None:
            shift = int(shift_overrides[l])
            rate = _clamp_rate(accs, shift)
            if rate > CLAMP_FAIL:
                raise CalibrationError(
                    f"layer {l}: pinned shift {shift} clamps {rate:.1%} of "
                    f"calibration accumulations (> {CLAMP_FAIL:.0%})")
        else:
            shift = _smallest_shift(accs, clamp_budget)
            if shift is None:
                raise CalibrationError(f"layer {l}: no ADC shift meets the "
                                       f"{clamp_budget:.1%} clamp budget")

        bias_levels = levels[:, -1].astype(np.float64)
        bias_corr = BIAS_DAC_CODE * (
            bias_levels - meta.g_zero_fp / (1 << GZ_FRAC_BITS)
            - meta.slope * qmodel.bias_codes[l].astype(np.float64))
        lp = LayerPlan(
            index=l, tile_id=l, in_dim=in_dim, out_dim=out_dim,
            input_split=split, input_signed=split,
            input_bits=qmodel.act_params[l].bits,
            input_scale=qmodel.act_params[l].scale,
            weight_scale=qmodel.weight_params[l].scale,
            adc_shift=shift, slope=meta.slope, g_zero_fp=meta.g_zero_fp,
            relu=not last,
            requant_scale=0.0 if last else qmodel.act_params[l + 1].scale,
            levels=levels, bias_correction=bias_corr)
        layers.append(lp)
        codes = _reference_layer(lp, codes)[2]

    return MappingPlan(fingerprint=model_fingerprint(qmodel), npu_count=npu_count,
                       g_lo=g_lo, g_hi=g_hi, layers=layers)


def _layer_accumulations(levels, codes, split):
    """Raw integer accumulations of every calibration sample and pass."""
    lt = levels.T.astype(np.int64)  # (in+1, out)
    if split:
        plus = np.maximum(codes, 0)
        minus = np.maximum(-codes, 0)
        vp = np.concatenate([plus, np.full((len(codes), 1), BIAS_DAC_CODE,
                                           dtype=np.int64)], axis=1)
        vm = np.concatenate([minus, np.zeros((len(codes), 1), dtype=np.int64)], axis=1)
        return np.concatenate([vp @ lt, vm @ lt])
    v = np.concatenate([codes, np.full((len(codes), 1), BIAS_DAC_CODE,
                                       dtype=np.int64)], axis=1)
    return v @ lt


def _clamp_rate(accs, shift):
    return float(((accs >> np.int64(shift)) > 255).mean())


def _smallest_shift(accs, budget):
    for shift in range(MAX_SHIFT + 1):
        if _clamp_rate(accs, shift) <= budget:
            return shift
    return None


def _reference_layer(lp, codes):
    """Exact integer dataflow of one layer: ADC codes, real outputs, next codes.

    This is the pure-integer reference the simulated chip must reproduce
    bit for bit at zero noise: per-pass clamp(floor(acc / 2^shift)) ADC,
    fixed-point offset correction, dequantization, ReLU, requantization.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    lt = lp.levels.T.astype(np.int64)
    bias = np.full((len(codes), 1), BIAS_DAC_CODE, dtype=np.int64)
    if lp.input_split:
        vp = np.concatenate([np.maximum(codes, 0), bias], axis=1)
        vm = np.concatenate([np.maximum(-codes, 0), np.zeros_like(bias)], axis=1)
        adc_p = np.clip((vp @ lt) >> np.int64(lp.adc_shift), 0, 255)
        adc_m = np.clip((vm @ lt) >> np.int64(lp.adc_shift), 0, 255)
        adc = np.stack([adc_p, adc_m])
        combined = (reconstruct_acc(lp, adc_p, vp.sum(axis=1))
                    - reconstruct_acc(lp, adc_m, vm.sum(axis=1)))
        sum_v = (vp.sum(axis=1) - vm.sum(axis=1))[:, None]
    else:
        v = np.concatenate([codes, bias], axis=1)
        adc = np.clip((v @ lt) >> np.int64(lp.adc_shift), 0, 255)
        combined = reconstruct_acc(lp, adc, v.sum(axis=1))
        sum_v = v.sum(axis=1)[:, None]
    real = apply_digital_recipe(lp, combined, sum_v)
    return adc, real, requantize(lp, real)


def reconstruct_acc(lp, adc, pass_sum):
    """Estimate the raw accumulation of one pass from its ADC code: shift
    back up and add half a step so the truncation error is centered. A pass
    whose drive sum is zero accumulated exactly zero, so it gets no half
    step (the second VMM of a split layer often sees an all-zero vector).
    """
    shift = np.int64(lp.adc_shift)
    half = np.int64(1 << (lp.adc_shift - 1)) if lp.adc_shift > 0 else np.int64(0)
    rec = (np.asarray(adc, dtype=np.int64) << shift) + half
    driven = np.asarray(pass_sum) > 0
    if driven.ndim == rec.ndim - 1:
        driven = driven[..., None]
    return np.where(driven, rec, 0)


def requantize(lp, real):
    """Real layer outputs to the next boundary's uint8 codes; None on the
    final layer, whose real values are the logits."""
    if lp.requant_scale <= 0:
        return None
    return np.clip(np.rint(real / lp.requant_scale), 0, 255).astype(np.int64)


def apply_digital_recipe(lp, combined, sum_v):
    """Offset-correct raw accumulations and rescale to real units.

    combined: reconstructed accumulation (ADC codes shifted back up),
    sum_v: digital sum of the driven input codes (net of the two passes for
    a split layer). The per-column bias_correction removes the static
    encode-rounding of the constant-driven bias column. ReLU is applied
    when the layer calls for it.
    """
    corrected = (combined - (lp.g_zero_fp * sum_v) / (1 << GZ_FRAC_BITS)
                 - lp.bias_correction) / lp.slope
    real = corrected * lp.weight_scale * lp.input_scale
    if lp.relu:
        real = np.maximum(real, 0.0)
    return real


def reference_forward(plan, input_codes, collect=False):
    """Run the integer reference across all layers.

    Returns the final-layer real-valued logits; with collect=True, also the
    per-layer real outputs.
    """
    codes = np.atleast_2d(np.asarray(input_codes, dtype=np.int64))
    reals = []
    logits = None
    for lp in plan.layers:
        _, logits, codes = _reference_layer(lp, codes)
        if collect:
            reals.append(logits)
    return (logits, reals) if collect else logits


@dataclass
class ProgrammedTiles:
    tiles: list
    reports: list
    stuck_in_used: list
    fingerprint: str


def program_plan(plan, device_params, seed):
    """Program one tile per layer; fails the build on any RMSE miss.

    Each tile gets its own device stream derived from (seed, tile id), so
    programming one tile never perturbs another. The stuck-cell report
    lists every stuck cell under a used weight with its level and
    weight-unit error contribution.
    """
    tiles, reports, stuck_rows = [], [], []
    for lp, target in zip(plan.layers, plan.tile_targets()):
        tile = CrossbarTile(device_params, subsystem_rng(seed, "device", lp.tile_id))
        report = program_closed_loop(tile, target)  # raises on RMSE miss
        reports.append(report)
        tiles.append(tile)
        used = np.zeros_like(tile.stuck, dtype=bool)
        used[:lp.rows_used, :lp.cols_used] = True
        for r, c in zip(*np.nonzero((tile.stuck != 0) & used)):
            stuck_level = 0 if tile.stuck[r, c] == -1 else 255
            level_err = float(stuck_level - target[r, c])
            stuck_rows.append({
                "tile": lp.tile_id, "row": int(r), "col": int(c),
                "target_level": int(target[r, c]), "stuck_level": stuck_level,
                "level_error": level_err, "weight_error": level_err / lp.slope,
            })
    return ProgrammedTiles(tiles=tiles, reports=reports, stuck_in_used=stuck_rows,
                           fingerprint=plan.fingerprint)
