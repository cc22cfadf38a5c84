"""Functional simulator of one 256x256 1T1R memristor NPU.

Conductance and DAC codes are modeled as integer levels (0..255); physical
units are out of scope, which makes the zero-noise vector-matrix product an
exact integer oracle. Noise and programming dynamics run through the
_kernels backend (compiled when available, numpy otherwise).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ProgrammingFailureError

TILE_SIZE = 256
LEVEL_MAX = 255
STUCK_FREE, STUCK_OFF, STUCK_ON = 0, -1, 1


@dataclass
class DeviceParams:
    levels: int = 256
    program_noise_sigma: float = 1.2
    read_noise_sigma: float = 0.3
    stuck_off_rate: float = 0.0005
    stuck_on_rate: float = 0.0005
    pulse_step_fraction: float = 0.3
    max_program_iters: int = 100
    program_tolerance: int = 1
    rmse_criterion: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.pulse_step_fraction <= 1.0):
            raise ValueError(f"pulse step fraction {self.pulse_step_fraction} "
                             "outside (0, 1]")
        for name in ("program_noise_sigma", "read_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("stuck_off_rate", "stuck_on_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be a probability")

    def to_vector(self):
        return np.array([self.levels, self.program_noise_sigma, self.read_noise_sigma,
                         self.stuck_off_rate, self.stuck_on_rate,
                         self.pulse_step_fraction, self.max_program_iters,
                         self.program_tolerance, self.rmse_criterion])

    @classmethod
    def from_vector(cls, v):
        return cls(levels=int(v[0]), program_noise_sigma=float(v[1]),
                   read_noise_sigma=float(v[2]), stuck_off_rate=float(v[3]),
                   stuck_on_rate=float(v[4]), pulse_step_fraction=float(v[5]),
                   max_program_iters=int(v[6]), program_tolerance=int(v[7]),
                   rmse_criterion=float(v[8]))


@dataclass
class AdcConfig:
    shift: int = 0

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError(f"ADC shift must be >= 0, got {self.shift}")


@dataclass
class ProgrammingReport:
    rmse_all: float
    rmse_free: float
    iterations: int
    stuck_count: int
    criterion: float
    converged_fraction: float


class CrossbarTile:
    """One crossbar array: integer levels, a stuck-cell mask, a noise stream.

    The stuck mask is drawn from the tile's rng at construction; StuckOff
    cells behave as level 0 and StuckOn as 255 regardless of programming.
    """

    def __init__(self, params, rng, rows=TILE_SIZE, cols=TILE_SIZE):
        self.params = params
        self.rng = rng
        self.g = np.zeros((rows, cols), dtype=np.int16)
        u = rng.random((rows, cols))
        self.stuck = np.zeros((rows, cols), dtype=np.int8)
        self.stuck[u < params.stuck_off_rate] = STUCK_OFF
        self.stuck[(u >= params.stuck_off_rate)
                   & (u < params.stuck_off_rate + params.stuck_on_rate)] = STUCK_ON

    @property
    def shape(self):
        return self.g.shape

    def effective_levels(self):
        out = self.g.copy()
        out[self.stuck == STUCK_OFF] = 0
        out[self.stuck == STUCK_ON] = LEVEL_MAX
        return out


def program_closed_loop(tile, target):
    """Pulse-and-read every free cell until it reads within tolerance.

    Raises ProgrammingFailureError (carrying the report) when the free-cell
    RMSE misses the configured criterion after max iterations.
    """
    target = np.asarray(target)
    if target.shape != tile.g.shape:
        raise ValueError(f"target shape {target.shape} != tile {tile.g.shape}")
    if target.min() < 0 or target.max() > LEVEL_MAX:
        raise ValueError("target levels outside [0, 255]")
    target = np.ascontiguousarray(target, dtype=np.int16)
    p = tile.params
    iterations = _kernels.closed_loop_program(
        tile.g, tile.stuck, target, p.pulse_step_fraction, p.program_noise_sigma,
        p.read_noise_sigma, p.program_tolerance, p.max_program_iters, tile.rng)
    free = tile.stuck == STUCK_FREE
    err = (tile.effective_levels().astype(np.float64) - target) ** 2
    rmse_all = float(np.sqrt(err.mean()))
    rmse_free = float(np.sqrt(err[free].mean())) if free.any() else 0.0
    within = np.abs(tile.g[free] - target[free]) <= p.program_tolerance
    report = ProgrammingReport(
        rmse_all=rmse_all, rmse_free=rmse_free, iterations=iterations,
        stuck_count=int((~free).sum()), criterion=p.rmse_criterion,
        converged_fraction=float(within.mean()) if free.any() else 1.0)
    if rmse_free > p.rmse_criterion:
        raise ProgrammingFailureError(report)
    return report


def read_conductance(tile, row, col, rng=None):
    """Single-cell 8-bit readout: stuck level or g, plus read noise."""
    rows, cols = tile.g.shape
    if not (0 <= row < rows and 0 <= col < cols):
        raise IndexError(f"cell ({row}, {col}) outside {rows}x{cols} tile")
    rng = rng if rng is not None else tile.rng
    level = float(tile.effective_levels()[row, col])
    if tile.params.read_noise_sigma > 0:
        level += tile.params.read_noise_sigma * rng.standard_normal()
    return int(np.clip(np.rint(level), 0, LEVEL_MAX))


def vmm(tile, v, adc, noise_on=True, rng=None):
    """Analog vector-matrix pass: acc_j = sum_i read(g_ij) * v_i, then the
    ADC right-shift and clamp to [0, 255]."""
    v = np.asarray(v)
    if v.shape != (tile.g.shape[0],):
        raise ValueError(f"input vector shape {v.shape} != rows {tile.g.shape[0]}")
    if v.min() < 0 or v.max() > 255:
        raise ValueError("DAC codes outside [0, 255]")
    rng = rng if rng is not None else tile.rng
    sigma = tile.params.read_noise_sigma if noise_on else 0.0
    return _kernels.noisy_vmm(tile.effective_levels(), v.astype(np.uint8),
                              sigma, int(adc.shift), rng)


@dataclass
class CdfStudy:
    """Per-level empirical CDF of read-back conductances."""
    medians: np.ndarray            # (levels,)
    rows: list = field(repr=False, default_factory=list)  # (target, read, cumfrac)

    def to_csv_lines(self):
        lines = ["target_level,read_level,cumulative_fraction"]
        lines.extend(f"{t},{r},{repr(f)}" for t, r, f in self.rows)
        return lines


def conductance_cdf_study(params, rng, n_cells=TILE_SIZE * TILE_SIZE):
    """Program n_cells/256 cells to each of the 256 levels, read each back
    once, and tabulate the per-level cumulative distribution."""
    per_level = n_cells // 256
    tile = CrossbarTile(params, rng, rows=256, cols=per_level)
    target = np.repeat(np.arange(256, dtype=np.int16)[:, None], per_level, axis=1)
    try:
        program_closed_loop(tile, target)
    except ProgrammingFailureError:
        pass  # the study reports whatever the device achieved
    eff = tile.effective_levels().astype(np.float64)
    if params.read_noise_sigma > 0:
        eff = eff + params.read_noise_sigma * rng.standard_normal(eff.shape)
    reads = np.clip(np.rint(eff), 0, LEVEL_MAX).astype(np.int64)
    medians = np.median(reads, axis=1)
    rows = []
    for level in range(256):
        values, counts = np.unique(reads[level], return_counts=True)
        cum = np.cumsum(counts) / per_level
        rows.extend((level, int(val), float(c)) for val, c in zip(values, cum))
    return CdfStudy(medians=medians, rows=rows)
