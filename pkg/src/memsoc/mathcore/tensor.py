"""Dense float64 tensors with a reverse-mode tape.

Design notes:
- data is always a contiguous row-major float64 ndarray
- one tape per forward/backward pass, confined to its thread; ops record a
  node only while a tape is active and some input requires grad
- no higher-order gradients: backward consumes and clears the tape
"""

import threading

import numpy as np

_tls = threading.local()


def _tape_stack():
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable ops; creation order is topological."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def record(self, out, inputs, vjp):
        out.node_id = len(self.nodes)
        self.nodes.append((out, inputs, vjp))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    # operator sugar; all routed through the op functions below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return multiply(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(out, inputs, vjp):
    tape = _active_tape()
    if tape is not None and any(t.requires_grad or t.node_id is not None for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def backward(loss):
    """Populate dLoss/dLeaf on every requires_grad leaf, then clear the tape.

    The loss must be a scalar recorded on the active tape.
    """
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active tape")
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    if loss.node_id is None:
        raise RuntimeError("loss was not recorded on the active tape")

    loss.grad = np.ones_like(loss.data)
    nodes = tape.nodes
    for out, inputs, vjp in reversed(nodes):
        g = out.grad
        if g is None:
            continue
        grads = vjp(g)
        for inp, gi in zip(inputs, grads):
            if gi is None:
                continue
            if inp.requires_grad:
                _accumulate(inp, gi)
        # node outputs are interior by construction; drop their buffers
        out.grad = None
    for out, _, _ in nodes:
        out.node_id = None
    tape.nodes = []


def _unbroadcast(g, shape):
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), vjp)


def multiply(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), vjp)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)

    def vjp(g):
        return (g * s,)

    return _record(out, (a,), vjp)


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _record(out, (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _record(out, (a,), vjp)


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    axes = tuple(axes)
    inverse = np.argsort(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))

    def vjp(g):
        return (g.transpose(inverse),)

    return _record(out, (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[i] for i in ax]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gaussian(shape, rng):
    """Standard-normal draw as a constant tensor (no gradient)."""
    return Tensor(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy @ semantics, including stacked batches."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ValueError(f"matmul needs matrices, got shapes {a.data.shape} and {b.data.shape}")
    inner = b.data.shape[-2] if b.data.ndim > 1 else b.data.shape[0]
    if a.data.shape[-1] != inner:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            da, db = g * bd, g * ad
        elif bd.ndim == 1:
            # (..., m, k) @ (k,) -> (..., m)
            da = np.multiply.outer(g, bd) if g.ndim == 1 else g[..., None] * bd
            db = np.swapaxes(ad, -1, -2) @ g if ad.ndim == 2 else (ad * g[..., None]).sum(
                axis=tuple(range(ad.ndim - 1)))
        elif ad.ndim == 1:
            # (k,) @ (..., k, n) -> (..., n)
            da = (bd * np.expand_dims(g, -2)).sum(axis=tuple(range(bd.ndim - 2)) + (bd.ndim - 1,))
            db = np.multiply.outer(ad, g) if g.ndim == 1 else np.expand_dims(ad, -1) * np.expand_dims(g, -2)
        else:
            da = g @ np.swapaxes(bd, -1, -2)
            db = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(np.asarray(da), ad.shape),
                _unbroadcast(np.asarray(db), bd.shape))

    return _record(out, (a, b), vjp)


def softmax(a, axis=-1):
    """Row-stochastic softmax with max subtraction for stability."""
    a = _as_tensor(a)
    x = a.data
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("softmax input contains non-finite values")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (a,), vjp)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis, then apply the learned scale and shift."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    n = x.shape[-1]

    def vjp(g):
        dgamma = _unbroadcast(g * xhat, gamma.data.shape)
        dbeta = _unbroadcast(g, beta.data.shape)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record(out, (a, gamma, beta), vjp)


def attention(q, k, v):
    """Scaled dot-product attention, softmax(q kT / sqrt(dk)) v.

    Fused forward and analytic backward; leading batch axes must agree
    between the three operands.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ValueError(
            f"attention key-dim mismatch: q {q.data.shape} vs k {k.data.shape}")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ValueError(
            f"attention length mismatch: k {k.data.shape} vs v {v.data.shape}")
    if q.data.shape[:-2] != k.data.shape[:-2] or k.data.shape[:-2] != v.data.shape[:-2]:
        raise ValueError(
            f"attention batch mismatch: {q.data.shape}, {k.data.shape}, {v.data.shape}")
    dk = q.data.shape[-1]
    inv_sqrt = 1.0 / np.sqrt(dk)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * inv_sqrt
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(weights @ v.data)

    def vjp(g):
        dv = np.swapaxes(weights, -1, -2) @ g
        dw = g @ np.swapaxes(v.data, -1, -2)
        dot = (dw * weights).sum(axis=-1, keepdims=True)
        ds = weights * (dw - dot) * inv_sqrt
        dq = ds @ k.data
        dkk = np.swapaxes(ds, -1, -2) @ q.data
        return dq, dkk, dv

    return _record(out, (q, k, v), vjp)


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    if x.ndim != 2:
        raise ValueError(f"cross_entropy expects batch x classes logits, got {x.shape}")
    n, c = x.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        raise IndexError(f"label {labels[bad][0]} outside [0, {c})")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + x.max(axis=1)
    picked = x[np.arange(n), labels]
    out = Tensor(np.mean(lse - picked))

    def vjp(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (float(g) * p / n,)

    return _record(out, (logits,), vjp)


def fake_quant(x, scale_value, zero_point, qmin, qmax):
    """Simulated integer quantization with a straight-through gradient.

    Forward rounds to the integer grid and clamps; backward passes the
    upstream gradient unchanged where the pre-clamp code was in range and
    zero where it clipped.
    """
    x = _as_tensor(x)
    s = float(scale_value)
    if s <= 0.0:
        raise ValueError(f"fake_quant scale must be positive, got {s}")
    code = np.rint(x.data / s) + zero_point
    in_range = (code >= qmin) & (code <= qmax)
    clipped = np.clip(code, qmin, qmax)
    out = Tensor((clipped - zero_point) * s)

    def vjp(g):
        return (g * in_range,)

    return _record(out, (x,), vjp)
