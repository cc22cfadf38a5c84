import numpy as np
import pytest

from conftest import check_gradients, rel_err, tape_gradients

from memsoc import mathcore as mc
from memsoc.mathcore import (
    Tape,
    Tensor,
    attention,
    backward,
    cross_entropy,
    fake_quant,
    gaussian,
    layer_norm,
    matmul,
    multiply,
    relu,
    reshape,
    softmax,
    tmean,
    transpose,
    tsum,
)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), a)
    assert np.array_equal(out.data, a.data)


def test_matmul_hand_case():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_against_triple_loop(rng):
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    want = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                want[i, j] += a[i, k] * b[k, j]
    got = matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_associativity(rng):
    a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
    left = matmul(matmul(Tensor(a), Tensor(b)), Tensor(c)).data
    right = matmul(Tensor(a), matmul(Tensor(b), Tensor(c))).data
    assert rel_err(left, right) < 1e-9


def test_matmul_batched_matches_loop(rng):
    a = rng.standard_normal((4, 5, 6))
    b = rng.standard_normal((4, 6, 3))
    got = matmul(Tensor(a), Tensor(b)).data
    for i in range(4):
        assert np.allclose(got[i], a[i] @ b[i], atol=1e-12)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_large_inputs_no_overflow():
    out = softmax(Tensor([1000.0, 1000.0, 1000.0]))
    assert np.allclose(out.data, [1 / 3] * 3)
    assert np.all(np.isfinite(out.data))


def test_softmax_rows_sum_to_one(rng):
    x = rng.uniform(-1e3, 1e3, size=(50, 9))
    s = softmax(Tensor(x), axis=-1).data
    assert np.max(np.abs(s.sum(axis=-1) - 1.0)) < 1e-9


def test_softmax_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        softmax(Tensor([np.inf, 0.0]))


def test_softmax_gradient(rng):
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))

    def loss():
        return tsum(multiply(softmax(x), Tensor(w)))

    check_gradients(loss, [x], tol=1e-5)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def test_attention_single_token_returns_value(rng):
    q = Tensor(rng.standard_normal((1, 4)))
    k = Tensor(rng.standard_normal((1, 4)))
    v = Tensor(rng.standard_normal((1, 6)))
    out = attention(q, k, v)
    assert np.allclose(out.data, v.data, atol=1e-12)


def test_attention_identical_keys_average_values(rng):
    q = Tensor(rng.standard_normal((1, 4)))
    row = rng.standard_normal(4)
    k = Tensor(np.stack([row, row]))
    v = Tensor(rng.standard_normal((2, 3)))
    out = attention(q, k, v)
    assert np.allclose(out.data[0], v.data.mean(axis=0), atol=1e-12)


def test_attention_matches_composition(rng):
    q = Tensor(rng.standard_normal((5, 4)))
    k = Tensor(rng.standard_normal((7, 4)))
    v = Tensor(rng.standard_normal((7, 6)))
    fused = attention(q, k, v).data
    composed = matmul(softmax(mc.scale(matmul(q, transpose(k)), 1 / np.sqrt(4))), v).data
    assert np.max(np.abs(fused - composed)) < 1e-12


def test_attention_shape_errors(rng):
    q = Tensor(np.zeros((2, 4)))
    with pytest.raises(ValueError, match="key-dim"):
        attention(q, Tensor(np.zeros((3, 5))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ValueError, match="length"):
        attention(q, Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 2))))


def test_attention_gradient(rng):
    q = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    k = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    v = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    w = rng.standard_normal((3, 2))

    def loss():
        return tsum(multiply(attention(q, k, v), Tensor(w)))

    check_gradients(loss, [q, k, v], tol=1e-4)


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform_two_class():
    out = cross_entropy(Tensor([[0.0, 0.0]]), [0])
    assert abs(float(out.data) - np.log(2)) < 1e-12


def test_cross_entropy_saturated():
    out = cross_entropy(Tensor([[1e6, 0.0]]), [0])
    assert float(out.data) < 1e-9


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_cross_entropy_gradient(rng):
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    labels = np.array([0, 2, 1, 1])

    def loss():
        return cross_entropy(x, labels)

    check_gradients(loss, [x], tol=1e-5)


# ---------------------------------------------------------------------------
# backward contracts
# ---------------------------------------------------------------------------

def test_backward_linear_map(rng):
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x = rng.standard_normal(4)
    _, (gw,) = tape_gradients(lambda: tsum(matmul(w, Tensor(x))), [w])
    assert np.allclose(gw, np.outer(np.ones(3), x), atol=1e-12)


def test_backward_squared_norm(rng):
    w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    _, (gw,) = tape_gradients(lambda: tsum(multiply(w, w)), [w])
    assert np.allclose(gw, 2 * w.data, atol=1e-12)


def test_backward_requires_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        y = multiply(w, w)
        with pytest.raises(ValueError, match="scalar"):
            backward(y)


def test_backward_requires_tape():
    with pytest.raises(RuntimeError, match="tape"):
        backward(Tensor(1.0))


def test_backward_clears_tape():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tp:
        loss = tsum(multiply(w, w))
        backward(loss)
        assert tp.nodes == []


def test_grad_accumulates_over_reuse(rng):
    w = Tensor(rng.standard_normal(5), requires_grad=True)
    # w used twice: d/dw sum(w*w + w) = 2w + 1
    _, (gw,) = tape_gradients(lambda: mc.add(tsum(multiply(w, w)), tsum(w)), [w])
    assert np.allclose(gw, 2 * w.data + 1, atol=1e-12)


# ---------------------------------------------------------------------------
# remaining ops: relu, layer_norm, reshape/transpose, fake_quant, rng
# ---------------------------------------------------------------------------

def test_relu_gradient(rng):
    # keep inputs away from the kink so finite differences are valid
    x = Tensor(rng.uniform(0.2, 2.0, size=7) * rng.choice([-1.0, 1.0], size=7),
               requires_grad=True)
    w = rng.standard_normal(7)
    check_gradients(lambda: tsum(multiply(relu(x), Tensor(w))), [x], tol=1e-5)


def test_layer_norm_normalizes(rng):
    x = rng.standard_normal((6, 8)) * 3 + 2
    d = 8
    out = layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d)))
    assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
    assert np.allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


def test_layer_norm_gradient(rng):
    x = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
    beta = Tensor(rng.standard_normal(6), requires_grad=True)
    w = rng.standard_normal((2, 6))

    def loss():
        return tsum(multiply(layer_norm(x, gamma, beta), Tensor(w)))

    check_gradients(loss, [x, gamma, beta], tol=1e-4)


def test_reshape_transpose_gradients(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = rng.standard_normal((4, 3))

    def loss():
        return tsum(multiply(transpose(reshape(x, (3, 4))), Tensor(w)))

    check_gradients(loss, [x], tol=1e-5)


def test_fake_quant_straight_through(rng):
    x = np.array([-2.0, -0.4, 0.0, 0.3, 1.5])
    t = Tensor(x, requires_grad=True)
    # scale 0.01 and int8 range: +-1.27 representable, so -2.0 and 1.5 clip
    _, (g,) = tape_gradients(
        lambda: tsum(fake_quant(t, 0.01, 0, -127, 127)), [t])
    assert np.array_equal(g, [0.0, 1.0, 1.0, 1.0, 0.0])


def test_fake_quant_roundtrip_error_bounded(rng):
    x = rng.uniform(-1.0, 1.0, 100)
    s = 1.0 / 127
    y = fake_quant(Tensor(x), s, 0, -127, 127).data
    assert np.max(np.abs(y - x)) <= s / 2 + 1e-12


def test_gaussian_determinism():
    from memsoc.mathcore import fixed_rng
    a = gaussian((4, 4), fixed_rng(11)).data
    b = gaussian((4, 4), fixed_rng(11)).data
    assert np.array_equal(a, b)


def test_subsystem_streams_independent():
    from memsoc.mathcore import subsystem_rng
    a = subsystem_rng(1, "data").standard_normal(8)
    b = subsystem_rng(1, "device").standard_normal(8)
    a2 = subsystem_rng(1, "data").standard_normal(8)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------------------
# composed graphs (depth >= 4) against the finite-difference oracle
# ---------------------------------------------------------------------------

def test_composed_mlp_graph(rng):
    w1 = Tensor(rng.standard_normal((6, 4)) * 0.5, requires_grad=True)
    b1 = Tensor(rng.standard_normal(6) * 0.1, requires_grad=True)
    w2 = Tensor(rng.standard_normal((3, 6)) * 0.5, requires_grad=True)
    b2 = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
    x = rng.standard_normal((5, 4))
    labels = np.array([0, 1, 2, 1, 0])

    def loss():
        h = relu(mc.add(matmul(Tensor(x), transpose(w1)), b1))
        logits = mc.add(matmul(h, transpose(w2)), b2)
        return cross_entropy(logits, labels)

    check_gradients(loss, [w1, b1, w2, b2], tol=1e-4)


def test_composed_attention_block(rng):
    d = 4
    wq = Tensor(rng.standard_normal((d, d)) * 0.5, requires_grad=True)
    wk = Tensor(rng.standard_normal((d, d)) * 0.5, requires_grad=True)
    wv = Tensor(rng.standard_normal((d, d)) * 0.5, requires_grad=True)
    gamma = Tensor(np.ones(d), requires_grad=True)
    beta = Tensor(np.zeros(d), requires_grad=True)
    x = rng.standard_normal((3, d))
    w = rng.standard_normal((3, d))

    def loss():
        xn = layer_norm(Tensor(x), gamma, beta)
        out = attention(matmul(xn, wq), matmul(xn, wk), matmul(xn, wv))
        res = mc.add(Tensor(x), out)
        return tsum(multiply(res, Tensor(w)))

    check_gradients(loss, [wq, wk, wv, gamma, beta], tol=1e-4)


def test_composed_mixed_graph(rng):
    a = Tensor(rng.standard_normal((4, 4)) * 0.7, requires_grad=True)
    b = Tensor(rng.standard_normal((4, 4)) * 0.7, requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    w = rng.standard_normal((4, 4))

    def loss():
        s = softmax(matmul(a, b), axis=-1)
        m = multiply(s, mc.add(a, b))
        n = layer_norm(m, g, Tensor(np.zeros(4)))
        return tmean(multiply(relu(n), Tensor(w)))

    check_gradients(loss, [a, b, g], tol=1e-4)


def test_determinism_same_seed_bit_identical():
    from memsoc.mathcore import Adam, fixed_rng

    def run():
        r = fixed_rng(99)
        w = Tensor(r.standard_normal((4, 4)), requires_grad=True)
        opt = Adam([w], lr=1e-2)
        for _ in range(5):
            opt.zero_grad()
            with Tape():
                x = gaussian((4, 4), r)
                loss = tsum(multiply(matmul(w, x), matmul(w, x)))
                backward(loss)
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())
