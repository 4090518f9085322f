import numpy as np

from pysimba import optim
from pysimba.tensor import Tensor

from helpers import tiny_config

NAME = 'AdamW and Learning Rate Schedule'


def test_first_step_is_sign_step():
    w = Tensor([1.0, -2.0, 0.5])
    w.grad = np.array([0.3, -4.0, 1e-3])
    frozen = Tensor([2.0])
    lr, decay = 0.01, 0.1

    state = optim.optimizer_step({'w': w, 'frozen': frozen}, optim.AdamWState(), lr, weight_decay=decay, eps=0.0)

    expected = np.array([1.0, -2.0, 0.5]) * (1 - lr * decay) - lr * np.sign([0.3, -4.0, 1e-3])
    assert np.allclose(w.data, expected), 'First bias-corrected step should move by lr * sign(grad)'
    assert np.allclose(frozen.data, [2.0 * (1 - lr * decay)]), 'Parameters without gradient should still decay'
    assert state.step == 1

def test_state_restores_from_arrays():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=4) for _ in range(4)]

    straight = Tensor(np.ones(4))
    opt = optim.AdamW({'p': straight})
    for g in grads:
        straight.grad = g
        opt.step(1e-2)

    resumed = Tensor(np.ones(4))
    opt = optim.AdamW({'p': resumed})
    for g in grads[:2]:
        resumed.grad = g
        opt.step(1e-2)

    restored = optim.AdamW({'p': resumed})
    restored.state = optim.AdamWState.from_arrays(opt.state.step, opt.state.arrays())
    for g in grads[2:]:
        resumed.grad = g
        restored.step(1e-2)

    assert np.array_equal(straight.data, resumed.data), 'Resumed optimizer diverged from uninterrupted run'

def test_zero_grad():
    p = Tensor([1.0])
    p.grad = np.array([1.0])
    optim.AdamW({'p': p}).zero_grad()
    assert p.grad is None

def test_lr_schedule_shape():
    config = tiny_config(epochs=10, warmup_epochs=2, peak_lr=2e-4, min_lr=1e-5)

    assert optim.lr_schedule(0, config) == 0.0
    assert np.isclose(optim.lr_schedule(1, config), 1e-4), 'Warmup should be linear'
    assert np.isclose(optim.lr_schedule(2, config), 2e-4), 'Warmup should end at peak_lr'
    assert np.isclose(optim.lr_schedule(10, config), 1e-5), 'Schedule should end at min_lr'
    assert optim.lr_schedule(50, config) == 1e-5

    decay = [optim.lr_schedule(epoch, config) for epoch in np.linspace(2, 10, 17)]
    assert all(a >= b for a, b in zip(decay, decay[1:])), 'Cosine phase should be non-increasing'

def test_lr_schedule_short_run():
    config = tiny_config(epochs=2, warmup_epochs=20)
    assert np.isclose(optim.lr_schedule(1, config), config.peak_lr / 2), 'Warmup should shrink to the run length'


TESTS = [
    test_first_step_is_sign_step,
    test_state_restores_from_arrays,
    test_zero_grad,
    test_lr_schedule_shape,
    test_lr_schedule_short_run
]

def run():
    for test in TESTS:
        test()
        print('\t' + test.__name__ + ' passed')

    return True
