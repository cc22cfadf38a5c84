"""Training objective and reverse-process sampling."""

import numpy as np

from .. import mathcore as mc
from ..errors import TrainingDivergenceError
from ..mathcore import Tape, Tensor, backward
from ..mathcore.rng import subsystem_rng
from .schedule import q_sample


def loss_conditional(net, x0_batch, cond_batch, schedule, rng):
    """Noise-prediction MSE, summed over the signal and averaged over the
    batch; t is drawn uniformly from [1, T] per example.

    With a conditioning-free net (k_cond == 0) this is the unconditional
    objective.
    """
    x0 = net.pad(x0_batch)
    b = x0.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, schedule)
    pred = net.forward(x_t, t, cond_batch)
    diff = mc.add(pred, Tensor(-eps))
    return mc.scale(mc.tsum(mc.multiply(diff, diff)), 1.0 / b)


def train_denoiser(net, x0_matrix, cond_matrix, schedule, config, seed,
                   log_every=0):
    """Adam training loop over standardized signals; returns loss per epoch.

    Normalization statistics (signal mean/std, conditioning mean/std) are
    computed here from the training set and frozen into the net.
    """
    x0 = np.asarray(x0_matrix, dtype=np.float64)
    mean, std = float(x0.mean()), float(x0.std()) or 1.0
    if cond_matrix is not None and net.k_cond > 0:
        cond = np.asarray(cond_matrix, dtype=np.float64)
        net.set_normalization(mean, std, cond.mean(axis=0), cond.std(axis=0))
    else:
        cond = None
        net.set_normalization(mean, std, np.zeros(net.k_cond), np.ones(net.k_cond))
    xs = (x0 - mean) / std

    opt = mc.Adam(net.parameters(), lr=config.learning_rate)
    data_rng = subsystem_rng(seed, "diffusion")
    n = xs.shape[0]
    losses = []
    for epoch in range(config.epochs):
        order = data_rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with Tape():
                loss = loss_conditional(net, xs[idx],
                                        None if cond is None else cond[idx],
                                        schedule, data_rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDivergenceError(epoch, value)
                backward(loss)
            opt.step()
            total += value
            batches += 1
        losses.append(total / max(batches, 1))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"  diffusion epoch {epoch + 1}/{config.epochs} "
                  f"loss {losses[-1]:.2f}")
    return losses


def p_sample_step(net, x_t, t, cond, schedule, rng):
    """One reverse step from x_t to x_{t-1} with fixed variance beta_t.

    net may be any callable (x_t, t, cond) -> predicted noise; at t == 1
    the step is deterministic (no noise is added).
    """
    schedule.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = schedule.beta[t - 1]
    alpha = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    eps_hat = np.asarray(net(x_t, t, cond), dtype=np.float64)
    mu = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mu
    return mu + np.sqrt(beta) * rng.standard_normal(x_t.shape)


def sample(net, cond, schedule, rng, snapshot_every=60):
    """Generate one spectrum from pure noise; returns (signal, snapshots).

    Snapshots record the de-standardized state at every snapshot_every
    steps, starting from the initial noise (9 snapshots plus the final
    output for T=500, every 60).
    """
    cond = None if cond is None else np.atleast_2d(cond)
    signals, snaps = sample_batch(net, cond, schedule, [rng],
                                  snapshot_every=snapshot_every)
    return signals[0], [(t, s[0]) for t, s in snaps]


def sample_batch(net, cond, schedule, rngs, snapshot_every=0):
    """Reverse-process generation for a batch, one RNG stream per sample so
    results do not depend on batch composition or order."""
    n = len(rngs)
    length = net.padded_len
    x = np.stack([r.standard_normal(length) for r in rngs])
    t_max = schedule.steps
    snapshots = []
    cache = net.cond_cache(cond)

    def record(t_now):
        snapshots.append((t_now, x * net.data_std + net.data_mean))

    for t in range(t_max, 0, -1):
        if snapshot_every and (t_max - t) % snapshot_every == 0:
            record(t)
        beta = schedule.beta[t - 1]
        alpha = schedule.alpha[t - 1]
        ab = schedule.alpha_bar[t - 1]
        eps_hat = net(x, np.full(n, t), cond, cache=cache)
        x = (x - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            x = x + np.sqrt(beta) * np.stack([r.standard_normal(length) for r in rngs])
    out = x * net.data_std + net.data_mean
    out = out[:, :net.config.signal_length]
    if snapshot_every:
        snapshots = [(t, s[:, :net.config.signal_length]) for t, s in snapshots]
    return out, snapshots
