import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mixcast import diffnum as dn
from mixcast.diffnum import (NonDifferentiableError, NonFiniteError, Parameter, ShapeError,
                             Tensor, fd_check)


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(dn.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_sigmoid_zero():
    assert dn.sigmoid(Tensor(0.0)).item() == 0.5


def test_masked_squared_l2_ignores_hidden_dims():
    out = dn.squared_l2(Tensor([1.0, 2.0]), Tensor([1.0, 5.0]), mask=[1, 0])
    assert out.item() == 0.0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_on_simplex(v):
    p = dn.softmax(Tensor(v)).data
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(np.exp(dn.log_softmax(Tensor(v)).data), p, atol=1e-12)


def test_linear_gradient_is_outer_structure():
    rng = np.random.default_rng(0)
    W = Parameter(rng.normal(size=(3, 2)), "W")
    x = rng.normal(size=3)
    dn.grad(dn.tsum(dn.matmul(Tensor(x), W)), [W])
    np.testing.assert_allclose(W.grad, np.repeat(x[:, None], 2, axis=1))


def test_sigmoid_gradient_at_zero():
    w = Parameter(np.array(0.0), "w")
    dn.grad(dn.sigmoid(w) * 3.0, [w])
    assert w.grad == pytest.approx(0.75)


def test_gradients_accumulate_until_zeroed():
    w = Parameter(np.array([1.0, 2.0]), "w")
    dn.grad(dn.tsum(w * 2.0), [w])
    dn.grad(dn.tsum(w * 2.0), [w])
    np.testing.assert_allclose(w.grad, [4.0, 4.0])
    w.zero_grad()
    assert not w.grad.any()


def _three_layer(rng):
    W1 = Parameter(rng.normal(size=(4, 5)), "W1")
    b1 = Parameter(rng.normal(size=5), "b1")
    W2 = Parameter(rng.normal(size=(5, 3)), "W2")
    b2 = Parameter(rng.normal(size=3), "b2")
    W3 = Parameter(rng.normal(size=(3, 2)), "W3")
    x = Tensor(rng.normal(size=(6, 4)))
    params = [W1, b1, W2, b2, W3]

    def loss():
        h = dn.tanh(dn.affine(x, W1, b1))
        h = dn.sigmoid(dn.affine(h, W2, b2))
        out = dn.log_softmax(dn.matmul(h, W3))
        return dn.mean(dn.square(out)) + dn.tsum(dn.exp(dn.concat([h, h * 0.5], axis=-1))) * 0.01
    return loss, params


@pytest.mark.parametrize("seed", range(3))
def test_random_composition_matches_finite_differences(seed):
    loss, params = _three_layer(np.random.default_rng(seed))
    rep = fd_check(loss, params, h=1e-4, tol=1e-4)
    assert rep.passed, str(rep)


def test_fd_check_linear_is_near_exact():
    rng = np.random.default_rng(1)
    W = Parameter(rng.normal(size=(3, 3)), "W")
    c = rng.normal(size=(3, 3))
    rep = fd_check(lambda: dn.tsum(W * c), [W])
    assert rep.max_error < 1e-8


def test_fd_check_reports_failure_without_raising():
    W = Parameter(np.ones(2), "W")
    rep = fd_check(lambda: dn.tsum(W * W), [W], tol=0.0)
    assert not rep.passed
    assert "FAIL" in str(rep)


def test_fd_check_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        fd_check(lambda: None, [], h=0.0)


def test_nonscalar_loss_rejected():
    w = Parameter(np.ones(3), "w")
    with pytest.raises(ShapeError):
        dn.grad(w * 2.0, [w])


def test_nonfinite_surfaces_as_error():
    with pytest.raises(NonFiniteError):
        dn.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        dn.exp(Tensor([1000.0]))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        dn.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        dn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_hard_sample_blocks_gradient():
    logits = Parameter(np.array([0.3, -0.2]), "l")
    z = dn.hard_onehot(dn.softmax(logits), np.random.default_rng(0))
    assert z.data.sum() == 1.0
    with pytest.raises(NonDifferentiableError):
        dn.tsum(z * np.array([1.0, 2.0])).backward()


def test_transpose_and_getitem_gradients():
    rng = np.random.default_rng(2)
    a = Parameter(rng.normal(size=(2, 3, 4)), "a")
    c = rng.normal(size=(4, 2, 3))
    rep = fd_check(lambda: dn.tsum(dn.transpose(a, (2, 0, 1)) * c)
                   + dn.tsum(dn.square(a[:, [0, 0, 2], 1:])), [a])
    assert rep.passed, str(rep)


def test_lstm_cell_gradients():
    from mixcast.diffnum.nn import LSTMCell
    rng = np.random.default_rng(5)
    cell = LSTMCell(2, 3, rng, "l")
    x = Tensor(rng.normal(size=(2, 2)))
    s0 = Tensor(rng.normal(size=(2, 6)))
    rep = fd_check(lambda: dn.tsum(dn.square(cell(x, cell(x, s0)))), cell.parameters())
    assert rep.passed, str(rep)
