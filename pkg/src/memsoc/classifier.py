"""Four-layer MLP disease classifier: float training, optional
quantization-aware training, int8 export with calibrated activation ranges.

Quantization scheme (the chip consumes this):
- weights: symmetric signed int8 per tensor, scale = max|W|/127, no zero point
- first-layer inputs: symmetric signed 9-bit codes in [-255, 255] so the
  positive/negative split yields two full uint8 vectors
- hidden activations (post-ReLU): unsigned uint8, zero_point 0, scale from
  the 99.9th percentile of a calibration batch, so real 0.0 is code 0 exactly
- bias: int8 column folded next to the weights, driven by the full-scale DAC
  code 255, so its effective scale is weight_scale * input_scale * 255
"""

from dataclasses import dataclass, field

import numpy as np

from . import mathcore as mc
from .errors import DataError, TrainingDivergenceError
from .mathcore import Tape, Tensor, backward, cross_entropy, fake_quant, relu
from .mathcore.rng import subsystem_rng

DIMS = (128, 240, 96, 48, 3)
MAX_ROWS = 256   # crossbar mappability: in+1 bias row
MAX_COLS = 256
BIAS_DAC_CODE = 255
CAL_PERCENTILE = 99.9
CAL_PERCENTILE_LO = 0.1
WEIGHT_PERCENTILE = 99.7  # outlier weights clip so typical codes fill int8


@dataclass
class QuantParams:
    scale: float
    zero_point: int
    bits: int
    signed: bool

    @property
    def qmin(self):
        return -(2 ** (self.bits - 1) - 1) if self.signed else 0

    @property
    def qmax(self):
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    def quant(self, x):
        return np.clip(np.rint(np.asarray(x) / self.scale) + self.zero_point,
                       self.qmin, self.qmax).astype(np.int64)

    def dequant(self, q):
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale


@dataclass
class TrainConfig:
    lambda_l2: float = 1e-4
    epochs: int = 120
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    qat_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lambda_l2 < 0:
            raise DataError(f"lambda must be >= 0, got {self.lambda_l2}")


class MlpModel:
    """ReLU MLP over PCA features; dims fixed so every layer fits one tile."""

    def __init__(self, dims=DIMS, seed=0, rng=None):
        self.dims = tuple(int(d) for d in dims)
        for d_in, d_out in zip(self.dims, self.dims[1:]):
            if d_in + 1 > MAX_ROWS or d_out > MAX_COLS:
                raise DataError(f"layer {d_in}->{d_out} exceeds the "
                                f"{MAX_ROWS}x{MAX_COLS} tile")
        rng = rng if rng is not None else subsystem_rng(seed, "init")
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(self.dims, self.dims[1:]):
            w = rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(d_out), requires_grad=True))

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x, qat=False):
        """Logits for a (batch, in_dim) tensor; qat inserts fake quantization."""
        a = x if isinstance(x, Tensor) else Tensor(x)
        for l in range(self.n_layers):
            w = self.weights[l]
            if qat:
                a = _fake_quant_activation(a, signed=(l == 0))
                w_scale = _weight_scale(w.data)
                if w_scale > 0:
                    w = fake_quant(w, w_scale, 0, -127, 127)
            a = mc.add(mc.matmul(a, mc.transpose(w)), self.biases[l])
            if l < self.n_layers - 1:
                a = relu(a)
        return a

    def predict(self, features):
        logits = self.forward(Tensor(np.atleast_2d(features)))
        return np.argmax(logits.data, axis=1)

    def state(self):
        out = {"dims": np.asarray(self.dims, dtype=np.int64)}
        for l in range(self.n_layers):
            out[f"layer{l}.weight"] = self.weights[l].data.copy()
            out[f"layer{l}.bias"] = self.biases[l].data.copy()
        return out

    @classmethod
    def from_state(cls, state):
        dims = tuple(int(d) for d in state["dims"])
        model = cls.__new__(cls)
        model.dims = dims
        model.weights = [Tensor(state[f"layer{l}.weight"], requires_grad=True)
                         for l in range(len(dims) - 1)]
        model.biases = [Tensor(state[f"layer{l}.bias"], requires_grad=True)
                        for l in range(len(dims) - 1)]
        return model


def _weight_scale(w):
    """Per-tensor int8 weight scale from a high percentile of |W|.

    Calibrating on the absolute max lets a single outlier shrink every
    other code; the few weights beyond the percentile clip instead.
    """
    m = float(np.percentile(np.abs(w), WEIGHT_PERCENTILE))
    if m == 0.0:
        m = float(np.max(np.abs(w)))
    return m / 127.0


def _fake_quant_activation(a, signed):
    if signed:
        s = float(np.percentile(np.abs(a.data), CAL_PERCENTILE)) / 255.0
        if s <= 0:
            return a
        return fake_quant(a, s, 0, -255, 255)
    s = float(np.percentile(a.data, CAL_PERCENTILE)) / 255.0
    if s <= 0:
        return a
    return fake_quant(a, s, 0, 0, 255)


def loss(model, features, labels, lambda_l2, qat=False):
    """Cross-entropy plus lambda * sum of squared weights (biases excluded)."""
    logits = model.forward(features, qat=qat)
    total = cross_entropy(logits, labels)
    if lambda_l2 > 0:
        for w in model.weights:
            total = mc.add(total, mc.scale(mc.tsum(mc.multiply(w, w)), lambda_l2))
    return total


def weight_norm_sq(model):
    return float(sum(np.sum(w.data ** 2) for w in model.weights))


@dataclass
class TrainingCurves:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1


def train(train_features, train_labels, val_features, val_labels, config,
          dims=DIMS):
    """Train and return the best-validation-accuracy checkpoint plus curves.

    Ties on validation accuracy break toward lower validation loss, then
    the earlier epoch.
    """
    model = MlpModel(dims=dims, seed=config.seed)
    rng = subsystem_rng(config.seed, "init", 1)
    opt = mc.make_optimizer(config.optimizer, model.parameters(),
                            lr=config.learning_rate)
    curves = TrainingCurves()
    n = train_features.shape[0]
    best = None
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with Tape():
                batch_loss = loss(model, Tensor(train_features[idx]),
                                  train_labels[idx], config.lambda_l2,
                                  qat=config.qat_enabled)
                value = float(batch_loss.data)
                if not np.isfinite(value):
                    raise TrainingDivergenceError(epoch, value)
                backward(batch_loss)
            opt.step()
            epoch_loss += value
            batches += 1
        train_logits = model.forward(Tensor(train_features)).data
        val_logits = model.forward(Tensor(val_features)).data
        val_ce = _mean_ce(val_logits, val_labels)
        if not np.isfinite(val_ce):
            raise TrainingDivergenceError(epoch, val_ce)
        tacc = float((np.argmax(train_logits, 1) == train_labels).mean())
        vacc = float((np.argmax(val_logits, 1) == val_labels).mean())
        curves.train_loss.append(epoch_loss / max(batches, 1))
        curves.val_loss.append(val_ce)
        curves.train_acc.append(tacc)
        curves.val_acc.append(vacc)
        key = (vacc, -val_ce, -epoch)
        if best is None or key > best[0]:
            best = (key, model.state())
            curves.best_epoch = epoch
    assert best is not None
    return MlpModel.from_state(best[1]), curves


def _mean_ce(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

@dataclass
class QuantizedModel:
    dims: tuple
    weight_codes: list      # int8 (out, in) per layer
    bias_codes: list        # int8 (out,) per layer
    weight_params: list     # QuantParams per layer (signed 8-bit)
    act_params: list        # QuantParams per boundary 0..n_layers-1 (inputs of each layer)

    @property
    def n_layers(self):
        return len(self.weight_codes)


def quantize(model, calibration_features):
    """Freeze int8 weights and calibrated activation ranges.

    Calibration must use Train-split features. Activation scales come from
    the 99.9th percentile so stray outliers do not stretch the 8-bit range.
    """
    cal = np.asarray(calibration_features, dtype=np.float64)
    weight_params, weight_codes = [], []
    for w in model.weights:
        if float(np.max(np.abs(w.data))) == 0.0:
            raise DataError("degenerate quantization scale: all-zero weight tensor")
        qp = QuantParams(scale=_weight_scale(w.data), zero_point=0, bits=8, signed=True)
        weight_params.append(qp)
        weight_codes.append(qp.quant(w.data).astype(np.int8))

    act_params = []
    a = cal
    for l in range(model.n_layers):
        if l == 0:
            s = float(np.percentile(np.abs(a), CAL_PERCENTILE)) / 255.0
            if s <= 0:
                raise DataError("degenerate input scale during calibration")
            act_params.append(QuantParams(scale=s, zero_point=0, bits=9, signed=True))
        else:
            hi = float(np.percentile(a, CAL_PERCENTILE))
            if hi <= 0:
                hi = float(np.max(a)) or 1.0
            act_params.append(QuantParams(scale=hi / 255.0, zero_point=0,
                                          bits=8, signed=False))
        a = a @ model.weights[l].data.T + model.biases[l].data
        if l < model.n_layers - 1:
            a = np.maximum(a, 0.0)

    bias_codes = []
    for l in range(model.n_layers):
        s_bias = weight_params[l].scale * act_params[l].scale * BIAS_DAC_CODE
        bias_codes.append(np.clip(np.rint(model.biases[l].data / s_bias),
                                  -127, 127).astype(np.int8))
    return QuantizedModel(model.dims, weight_codes, bias_codes,
                          weight_params, act_params)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    overall: float
    per_class: np.ndarray   # recall per true class
    confusion: np.ndarray   # rows true, cols predicted
    support: np.ndarray

    def csv_row(self, env):
        cells = [env, repr(self.overall)]
        cells.extend(repr(float(x)) for x in self.per_class)
        return ",".join(cells)


def metrics_from_predictions(predictions, labels, n_classes=3):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot evaluate an empty split")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), 0.0)
    overall = float(np.trace(confusion) / labels.size)
    return Metrics(overall, per_class, confusion, support)


def evaluate(model, features, labels):
    return metrics_from_predictions(model.predict(features), labels)
