import numpy as np

from pis.autodiff import Tensor
from pis.optim import AdamState, adam_step, clip_grad_norm, global_grad_norm


def _scalar_adam_oracle(g, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    # independent scalar re-implementation of the update rule
    x, m, v = 0.0, 0.0, 0.0
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
    return x


def test_zero_gradient_leaves_params_but_decays_moments():
    p = {"w": Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)}
    st = AdamState(p, lr=1e-2)
    before = p["w"].data.copy()
    p["w"].grad = np.zeros(2, dtype=np.float32)
    adam_step(p, st)
    np.testing.assert_allclose(p["w"].data, before, atol=1e-7)
    assert st.step == 1
    # nonzero preexisting moments decay toward zero under a zero gradient
    st.m["w"][:] = 1.0
    adam_step(p, st)
    assert st.m["w"][0] < 1.0


def test_constant_gradient_matches_scalar_oracle():
    g = 0.37
    lr = 1e-3
    p = {"w": Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)}
    st = AdamState(p, lr=lr)
    for _ in range(50):
        p["w"].grad = np.full(1, g, dtype=np.float32)
        adam_step(p, st)
    expected = _scalar_adam_oracle(g, lr, 50)
    np.testing.assert_allclose(p["w"].data[0], expected, rtol=1e-4)
    # with constant gradient the per-step move approaches lr * sign(g)
    before = p["w"].data.copy()
    p["w"].grad = np.full(1, g, dtype=np.float32)
    adam_step(p, st)
    assert abs((p["w"].data - before)[0] + lr * np.sign(g)) < 0.1 * lr


def test_clip_scales_large_gradient():
    p = {"w": Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)}
    p["w"].grad = np.full(4, 5.0, dtype=np.float32)  # norm 10
    norm = clip_grad_norm(p, 1.0)
    assert abs(norm - 10.0) < 1e-6
    np.testing.assert_allclose(p["w"].grad, 0.5, rtol=1e-6)
    assert global_grad_norm(p) < 1.0 + 1e-6


def test_clip_leaves_small_gradient():
    p = {"w": Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)}
    p["w"].grad = np.full(4, 0.1, dtype=np.float32)
    clip_grad_norm(p, 1.0)
    np.testing.assert_allclose(p["w"].grad, 0.1)
