"""Forward-diffusion constants and the two equivalent noising routes.

q_sample uses the closed-form marginal; iterate_forward applies the
per-step transition t times. Their distributional agreement is the key
consistency oracle for the schedule arithmetic.
"""

import numpy as np


class NoiseSchedule:
    """Per-step constants: beta_t, alpha_t = 1 - beta_t, and the running
    product alpha_bar_t, indexed by t in [1, T]."""

    def __init__(self, beta, validate=True):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ValueError("beta must be a non-empty vector")
        self.beta = beta
        self.alpha = 1.0 - beta
        self.alpha_bar = np.cumprod(self.alpha)
        if validate:
            if np.any(beta <= 0.0) or np.any(beta >= 1.0):
                raise ValueError("beta values must lie in (0, 1)")
            if np.any(np.diff(self.alpha_bar) >= 0.0):
                raise ValueError("alpha_bar must be strictly decreasing")
            if self.alpha_bar[-1] >= 0.05:
                raise ValueError(
                    f"terminal alpha_bar {self.alpha_bar[-1]:.4f} >= 0.05; "
                    "the chain does not reach near-pure noise")

    @property
    def steps(self):
        return self.beta.size

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ValueError(f"step t={t} outside [1, {self.steps}]")
        return t


def linear_schedule(steps=500, beta_lo=1e-4, beta_hi=0.02):
    return NoiseSchedule(np.linspace(beta_lo, beta_hi, steps))


def q_sample(x0, t, eps, schedule):
    """Closed-form marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t may be a scalar or one value per leading row of x0.
    """
    t = schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = schedule.alpha_bar[t - 1]
    if np.ndim(ab) > 0:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - np.ndim(ab)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def iterate_forward(x0, t, schedule, rng):
    """Apply the one-step transition t times; same marginal as q_sample."""
    t = int(schedule.check_t(t))
    x = np.array(x0, dtype=np.float64, copy=True)
    for k in range(t):
        beta = schedule.beta[k]
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.standard_normal(x.shape)
    return x
