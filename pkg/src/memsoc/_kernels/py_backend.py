"""Pure-numpy fallback for the device hot kernels.

Semantics, including the exact order of RNG draws, must match the compiled
backend bit for bit: one standard_normal batch per programming iteration
over the still-active cells in row-major order, and one full-matrix batch
per noisy VMM.
"""

import numpy as np

NAME = "python"


def closed_loop_program(g, stuck, target, eta, prog_sigma, read_sigma, tol, max_iters, rng):
    """Pulse-and-verify free cells toward target levels; returns iterations run.

    g (int16) is mutated in place. Per iteration every still-active cell
    receives a pulse of eta*(target-g) plus programming noise (rounded,
    clamped to [0, 255]) and is then read back with read noise; cells whose
    read lands within tol of the target drop out.
    """
    gf = g.reshape(-1)
    tf = target.reshape(-1)
    active = np.flatnonzero(stuck.reshape(-1) == 0)
    iterations = 0
    for _ in range(max_iters):
        if active.size == 0:
            break
        iterations += 1
        step = eta * (tf[active] - gf[active])
        if prog_sigma > 0.0:
            step = step + prog_sigma * rng.standard_normal(active.size)
        gf[active] = np.clip(np.rint(gf[active] + step), 0, 255).astype(np.int16)
        cur = gf[active].astype(np.float64)
        if read_sigma > 0.0:
            read = np.rint(cur + read_sigma * rng.standard_normal(active.size))
        else:
            read = np.rint(cur)
        read = np.clip(read, 0, 255)
        active = active[np.abs(read - tf[active]) > tol]
    return iterations


def noisy_vmm(g_eff, v, read_sigma, shift, rng):
    """One analog pass: noisy per-cell reads, integer accumulate, ADC shift+clamp.

    g_eff is the stuck-resolved level matrix (rows x cols, int16), v the
    uint8 DAC codes per row. Returns the 8-bit ADC output codes per column.
    """
    rows, cols = g_eff.shape
    if read_sigma > 0.0:
        noise = rng.standard_normal((rows, cols))
        read = np.clip(np.rint(g_eff + read_sigma * noise), 0, 255).astype(np.int64)
    else:
        read = g_eff.astype(np.int64)
    acc = v.astype(np.int64) @ read
    return np.clip(acc >> np.int64(shift), 0, 255).astype(np.uint8)
