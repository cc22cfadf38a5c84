import numpy as np
import pytest

from memsoc.mathcore import Tape, Tensor, backward


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.max(np.abs(a - b) / denom)


def tape_gradients(loss_fn, params):
    """Run one forward/backward pass; returns (loss value, grads per param)."""
    for p in params:
        p.grad = None
    with Tape():
        loss = loss_fn()
        value = float(loss.data)
        backward(loss)
    return value, [np.array(p.grad) for p in params]


def fd_gradients(loss_fn, params, h=1e-5):
    """Central finite differences, the independent oracle for the tape."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(loss_fn, params, tol=1e-4, h=1e-5):
    _, tape_g = tape_gradients(loss_fn, params)
    fd_g = fd_gradients(loss_fn, params, h=h)
    worst = max(rel_err(t, f) for t, f in zip(tape_g, fd_g))
    assert worst <= tol, f"gradient mismatch vs finite differences: {worst:.3e} > {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
