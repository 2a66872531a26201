import numpy as np
import pytest

from pis import autodiff as ad
from pis.autodiff import GradTape, NonFiniteError, ShapeError, Tensor, backward
from pis.gradcheck import fd_check

from fd_suite import op_checks


def test_matmul_identity():
    a = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    eye = Tensor(np.eye(3))
    out = ad.matmul(a, eye)
    np.testing.assert_array_equal(out.data, a.data)
    # associativity with identity on a 2x3 / 3x2 product
    b = Tensor(np.arange(6.0).reshape(3, 2))
    left = ad.matmul(ad.matmul(a, eye), b)
    right = ad.matmul(a, ad.matmul(eye, b))
    np.testing.assert_allclose(left.data, right.data)


def test_softmax_constant_vector():
    out = ad.softmax(Tensor(np.full(4, 1.3)), axis=-1)
    np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25], atol=1e-7)


def test_conv2d_all_ones_center():
    # hand convolution: 3x3 ones kernel over 3x3 ones input, pad 1 -> center sees all 9
    x = Tensor(np.ones((1, 3, 3, 1)))
    w = Tensor(np.ones((3, 3, 1, 1)))
    y = ad.conv2d(x, w, pad=1)
    assert y.shape == (1, 3, 3, 1)
    assert y.data[0, 1, 1, 0] == pytest.approx(9.0)
    assert y.data[0, 0, 0, 0] == pytest.approx(4.0)


def test_conv2d_linearity():
    rng = np.random.default_rng(3)
    x1 = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
    x2 = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
    w = Tensor(rng.standard_normal((3, 3, 2, 3)).astype(np.float32))
    lhs = ad.conv2d(Tensor(x1 + 2.0 * x2), w, pad=1).data
    rhs = ad.conv2d(Tensor(x1), w, pad=1).data + 2.0 * ad.conv2d(Tensor(x2), w, pad=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


def test_backward_quadratic():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with GradTape() as tape:
        loss = ad.tsum(ad.mul(w, w))
        backward(tape, loss)
    np.testing.assert_allclose(w.grad, [2.0, 4.0])


def test_backward_silu_matches_fd():
    rng = np.random.default_rng(0)
    w = Tensor(rng.uniform(-2, 2, 5).astype(np.float64), requires_grad=True)
    err = fd_check(lambda t: ad.mean(ad.silu(t)), [w])
    assert err < 1e-3


def test_detached_tensor_gets_no_grad():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    frozen = w.detach()
    with GradTape() as tape:
        loss = ad.tsum(ad.mul(frozen, frozen))
        with pytest.raises(ValueError):
            backward(tape, loss)  # nothing was recorded
    assert frozen.grad is None and w.grad is None


def test_backward_requires_scalar_loss():
    w = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        out = ad.mul(w, w)
        with pytest.raises(ShapeError):
            backward(tape, out)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="conv2d"):
        ad.conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))


def test_non_finite_forward_raises():
    big = Tensor(np.array([1e30], dtype=np.float32))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="mul"):
        ad.mul(big, big)


def test_group_norm_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 6, 6, 8)).astype(np.float32))
    gain = Tensor(np.ones(8, dtype=np.float32))
    bias = Tensor(np.zeros(8, dtype=np.float32))
    y = ad.group_norm(x, 4, gain, bias).data.reshape(2, 36, 4, 2)
    assert np.abs(y.mean(axis=(1, 3))).max() < 1e-5
    assert np.abs(y.var(axis=(1, 3)) - 1.0).max() < 1e-4


def test_upsample_bilinear_constant_and_corners():
    x = Tensor(np.full((1, 3, 3, 1), 2.5, dtype=np.float32))
    y = ad.upsample_bilinear(x, 8, 8)
    np.testing.assert_allclose(y.data, 2.5, atol=1e-6)
    ramp = Tensor(np.arange(9.0, dtype=np.float32).reshape(1, 3, 3, 1))
    z = ad.upsample_bilinear(ramp, 5, 5).data
    assert z[0, 0, 0, 0] == pytest.approx(0.0)
    assert z[0, -1, -1, 0] == pytest.approx(8.0)


def test_dropout_train_vs_eval():
    x = Tensor(np.ones((4, 4), dtype=np.float32))
    assert ad.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    y = ad.dropout(x, 0.5, np.random.default_rng(0), training=True)
    kept = y.data[y.data > 0]
    np.testing.assert_allclose(kept, 2.0)


def test_tape_isolation_between_contexts():
    w = Tensor(np.ones(2), requires_grad=True)
    out = ad.mul(w, w)  # no active tape: nothing recorded
    assert not out.requires_grad
    with GradTape() as tape:
        loss = ad.tsum(ad.mul(w, w))
    assert len(tape.nodes) == 2
    backward(tape, loss)
    assert not tape.nodes  # consumed


@pytest.mark.parametrize("name,fn,tensors", list(op_checks()), ids=lambda v: v if isinstance(v, str) else "")
def test_fd_every_op(name, fn, tensors):
    assert fd_check(fn, tensors) < 1e-3, name
