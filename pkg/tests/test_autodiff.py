import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvae import autodiff as ad
from fvae.autodiff import NumericalError, ShapeError, Tensor, backward, grad_check
from fvae.nets import ResidualMLP
from fvae.rng import Rng


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, a.data)


def test_split_concat_roundtrip():
    x = Tensor([1.0, 2.0, 3.0, 4.0])
    a, b = ad.split(x, 2)
    np.testing.assert_array_equal(a.data, [1, 2])
    np.testing.assert_array_equal(b.data, [3, 4])
    np.testing.assert_array_equal(ad.concat([a, b]).data, x.data)


def test_fixed_points():
    assert ad.tanh(Tensor([0.0])).data[0] == 0.0
    assert ad.exp(Tensor([0.0])).data[0] == 1.0


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_log_of_nonpositive_rejected():
    with pytest.raises(ValueError, match="log"):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(ValueError, match="log"):
        ad.log(Tensor([-1.0]))


def test_tensor_rejects_zero_extent():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_backward_square_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(ad.sum(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_tanh_at_zero():
    x = Tensor([0.0], requires_grad=True)
    backward(ad.sum(ad.tanh(x)))
    np.testing.assert_array_equal(x.grad, [1.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ad.square(x))


def test_backward_accepts_shape_one():
    x = Tensor([3.0], requires_grad=True)
    backward(ad.square(x))
    assert x.grad[0] == 6.0


def test_unused_leaf_gets_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([5.0, 5.0], requires_grad=True)
    a, _ = ad.split(ad.concat([x, y]), 2)
    backward(ad.sum(a))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
    np.testing.assert_array_equal(y.grad, [0.0, 0.0])


def test_fan_out_accumulates():
    # f = sum(x * x + tanh(x)) computed with x consumed three times
    xv = np.array([0.3, -1.2, 2.0])
    x = Tensor(xv, requires_grad=True)
    backward(ad.sum(ad.add(ad.mul(x, x), ad.tanh(x))))
    np.testing.assert_allclose(x.grad, 2 * xv + 1 - np.tanh(xv) ** 2, rtol=0, atol=1e-15)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ad.sum(x))
    backward(ad.sum(ad.scale(x, 2.0)))
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_tape_is_topological_and_replayed_in_reverse():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.tanh(ad.square(x))
    loss = ad.sum(ad.add(y, x))
    tape = ad.Tape.trace(loss)
    seqs = [n.seq for n in tape.nodes]
    assert seqs == sorted(seqs)
    assert [n.op for n in tape.nodes] == ["square", "tanh", "add", "sum"]


def _mlp_loss(d, rng):
    net = ResidualMLP(d, 8, 1, 1, rng)
    for p in net.parameters():
        p.data = rng.normal(p.shape) * 0.5

    def fn(x):
        return ad.sum(ad.tanh(net(x)))
    return fn


def test_two_layer_perceptron_matches_finite_differences():
    rng = Rng(3)
    fn = _mlp_loss(5, rng)
    assert grad_check(fn, rng.normal((4, 5)), 1e-5) < 1e-4


def test_grad_check_examples():
    assert grad_check(lambda x: ad.sum(ad.square(x)), [1.0, 2.0, 3.0], 1e-5) < 1e-7
    assert grad_check(lambda x: ad.constant(2.0, ()), [1.0, 2.0], 1e-5) == 0.0


def test_grad_check_reports_non_finite_coordinate():
    def fn(x):
        return ad.sum(ad.log(x))
    with pytest.raises(NumericalError) as info:
        grad_check(fn, [1.0, 1e-7], 1e-5)
    assert info.value.index == 1


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.sum(x), [1.0], 0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity_of_backward(a, b, seed):
    rng = Rng(seed)
    xv = rng.normal((3, 4))

    def l1(x):
        return ad.sum(ad.tanh(x))

    def l2(x):
        return ad.sum(ad.square(ad.relu(x)))

    def grad_of(f):
        x = Tensor(xv, requires_grad=True)
        backward(f(x))
        return x.grad

    combo = grad_of(lambda x: ad.add(ad.scale(l1(x), a), ad.scale(l2(x), b)))
    np.testing.assert_allclose(combo, a * grad_of(l1) + b * grad_of(l2), rtol=0, atol=1e-12)


def test_determinism_of_forward_and_backward():
    def run():
        rng = Rng(11)
        fn = _mlp_loss(3, rng)
        x = Tensor(rng.normal((5, 3)), requires_grad=True)
        out = fn(x)
        backward(out)
        return out.data.copy(), x.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes() and g1.tobytes() == g2.tobytes()


def test_broadcast_add_row_gradient():
    m = Tensor(np.ones((3, 2)), requires_grad=True)
    r = Tensor([1.0, -1.0], requires_grad=True)
    backward(ad.sum(ad.square(ad.broadcast_add_row(m, r))))
    np.testing.assert_array_equal(r.grad, [12.0, 0.0])
    np.testing.assert_array_equal(m.grad, [[4.0, 0.0]] * 3)


def test_mean_and_sum_axes():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    np.testing.assert_array_equal(ad.sum(x, axis=1).data, [3.0, 12.0])
    backward(ad.mean(x))
    np.testing.assert_allclose(x.grad, np.full((2, 3), 1 / 6))


def test_softplus_values():
    out = ad.softplus(Tensor([0.0, 1.0]))
    np.testing.assert_allclose(out.data, np.log1p(np.exp([0.0, 1.0])), rtol=1e-15)


def test_expand_scalar_shape_and_gradient():
    s = Tensor([[2.0]], requires_grad=True)
    out = ad.expand_scalar(s, 3, 4)
    assert out.shape == (3, 4)
    backward(ad.sum(out))
    assert s.grad[0, 0] == 12.0
