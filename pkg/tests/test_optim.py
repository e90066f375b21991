"""Adam update rule against closed-form expectations."""

import numpy as np
import pytest

from freqdistill.autodiff import Parameter
from freqdistill.optim import Adam


def make_param(value, shape=(1, 1, 1, 1)):
    return Parameter(np.full(shape, value, dtype=np.float32))


def test_first_step_moves_by_lr_regardless_of_gradient_scale():
    # bias correction makes m_hat = g and v_hat = g^2 on step one, so the
    # update is lr * g / (|g| + eps) = lr * sign(g) for any nonzero g
    for g, lr in ((3.7, 0.1), (-0.002, 0.05), (1e4, 0.01)):
        p = make_param(1.0)
        opt = Adam({"w": p}, lr=lr)
        p.grad[...] = g
        opt.step()
        want = 1.0 - lr * np.sign(g)
        assert p.value.data.reshape(-1)[0] == pytest.approx(want, abs=1e-6)


def test_two_steps_match_manual_recurrence():
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    grads = [0.5, -1.25]
    p = make_param(0.3)
    opt = Adam({"w": p}, lr=lr, beta1=b1, beta2=b2, eps=eps)

    x = 0.3
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        p.grad[...] = g
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        x -= lr * m_hat / (np.sqrt(v_hat) + eps)
    assert p.value.data.reshape(-1)[0] == pytest.approx(x, rel=1e-5)


def test_zero_gradient_leaves_value_unchanged():
    p = make_param(0.7)
    opt = Adam({"w": p}, lr=0.1)
    opt.step()
    assert p.value.data.reshape(-1)[0] == pytest.approx(0.7, abs=1e-7)


def test_frozen_parameter_is_skipped_entirely():
    p = make_param(1.0)
    q = make_param(1.0)
    opt = Adam({"p": p, "q": q}, lr=0.1)
    p.grad[...] = 1.0
    q.grad[...] = 1.0
    q.set_trainable(False)
    q.grad[...] = 1.0  # even a stale/injected gradient must be ignored
    opt.step()
    assert p.value.data.reshape(-1)[0] == pytest.approx(0.9, abs=1e-6)
    assert q.value.data.reshape(-1)[0] == 1.0


def test_moments_persist_when_parameter_refreezes():
    # freezing then unfreezing keeps the optimizer's moment history
    p = make_param(1.0)
    opt = Adam({"w": p}, lr=0.1)
    p.grad[...] = 1.0
    opt.step()
    m_after = opt._m["w"].copy()
    p.set_trainable(False)
    p.grad[...] = 0.0
    opt.step()
    np.testing.assert_array_equal(opt._m["w"], m_after)


def test_zero_grad_clears_all():
    p = make_param(1.0, shape=(1, 2, 2, 2))
    opt = Adam({"w": p})
    p.grad[...] = 3.0
    opt.zero_grad()
    assert np.all(p.grad == 0.0)


def test_lr_validation():
    with pytest.raises(ValueError):
        Adam({"w": make_param(1.0)}, lr=0.0)
    with pytest.raises(ValueError):
        Adam({"w": make_param(1.0)}, lr=-1e-3)


def test_step_counter_is_shared_across_parameters():
    p = make_param(1.0)
    q = make_param(1.0)
    opt = Adam({"p": p, "q": q}, lr=0.1)
    for _ in range(3):
        p.grad[...] = 1.0
        q.grad[...] = 1.0
        opt.step()
        opt.zero_grad()
    assert opt.t == 3
    assert p.value.data.reshape(-1)[0] == pytest.approx(q.value.data.reshape(-1)[0])
