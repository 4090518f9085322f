import os
import csv

import numpy as np

from pysimba import diffusion, tensor
from pysimba.diffusion import NoisyField
from pysimba.errors import ConfigError, ContractError

from gradcheck import check_gradients
from helpers import scratch_dir, tiny_config

NAME = 'Transformation Field Diffusion'


def _oracle(z0, schedule):
    '''Predictor that returns the exact noise for a known clean field.'''
    def predictor(z, t, cond):
        z = z.data if isinstance(z, tensor.Tensor) else z
        alpha_bar = schedule.alpha_bar_at(t)
        return (z - np.sqrt(alpha_bar) * z0) / np.sqrt(1.0 - alpha_bar)

    return predictor

def _field(seed, n=8):
    return np.random.default_rng(seed).normal(size=(n, 12))


def test_schedule_tables():
    schedule = diffusion.build_schedule(100, 1e-4, 0.02)

    assert schedule.T == 100
    assert np.isclose(schedule.beta[0], 1e-4) and np.isclose(schedule.beta[-1], 0.02)
    assert np.allclose(schedule.alpha_bar, np.cumprod(1.0 - schedule.beta))
    assert (np.diff(schedule.alpha_bar) < 0).all(), 'alpha_bar should strictly decrease'
    assert schedule.alpha_bar_at(0) == 1.0
    assert np.isclose(schedule.sigma_at(1), 0.0), 'Posterior variance at t = 1 should vanish'

    for args in ((0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)):
        try:
            diffusion.build_schedule(*args)
            raise AssertionError('Invalid schedule accepted: ' + str(args))
        except ConfigError:
            pass

    try:
        schedule.alpha_at(101)
        raise AssertionError('Out of range timestep accepted')
    except ContractError:
        pass

def test_forward_then_recover_is_exact():
    schedule = diffusion.build_schedule(100)
    z0 = _field(0)
    eps = _field(1)

    for t in (1, 37, 100):
        zt = diffusion.forward_sample(z0, t, eps, schedule)
        assert zt.t == t
        assert np.allclose(diffusion.recover_clean(zt, eps, schedule), z0, atol=1e-9)

def test_samplers_with_oracle_predictor():
    schedule = diffusion.build_schedule(50)
    z0 = _field(2)
    noise = _field(3)
    predictor = _oracle(z0, schedule)

    for steps in (1, 7, 50):
        field = diffusion.sample_ddim(noise, predictor, None, schedule, steps)
        assert np.allclose(field.flatten(), z0, atol=1e-8), 'DDIM with exact noise should land on the clean field'

    field = diffusion.sample_ddpm(noise, predictor, None, schedule, np.random.default_rng(4))
    assert np.allclose(field.flatten(), z0, atol=1e-6), 'DDPM with exact noise should land on the clean field'

    config = tiny_config(sampler='ddpm', timesteps=50)
    field = diffusion.sample_field(noise, predictor, None, schedule, config, np.random.default_rng(5))
    assert np.allclose(field.flatten(), z0, atol=1e-6)

def test_ddim_timesteps():
    assert diffusion.ddim_timesteps(10, 5) == [10, 8, 6, 4, 2]
    steps = diffusion.ddim_timesteps(100, 25)
    assert steps[0] == 100 and steps[-1] == 4 and len(steps) == 25

    try:
        diffusion.ddim_timesteps(10, 11)
        raise AssertionError('More sampler steps than timesteps accepted')
    except ConfigError:
        pass

def test_timestep_weights():
    schedule = diffusion.build_schedule(100)
    weights = diffusion.build_timestep_weights(schedule, 10)
    assert weights.timesteps == tuple(range(10, 101, 10))
    assert (weights.weights <= 5.0).all() and weights.weights[0] == 5.0, 'SNR weight should clamp at early timesteps'
    assert (np.diff(weights.weights) <= 0).all()

    uniform = diffusion.build_timestep_weights(schedule, 4, mode='uniform')
    assert uniform.timesteps == (25, 50, 75, 100)
    assert np.array_equal(uniform.weights, np.ones(4))

    for kwargs in ({'k': 0}, {'k': 101}, {'mode': 'cosine'}):
        try:
            diffusion.build_timestep_weights(schedule, **kwargs)
            raise AssertionError('Invalid weighting accepted: ' + str(kwargs))
        except ConfigError:
            pass

def test_proxy_loss():
    schedule = diffusion.build_schedule(20)
    weights = diffusion.build_timestep_weights(schedule, 4)
    z0 = _field(6)

    exact = diffusion.proxy_loss(z0, _oracle(z0, schedule), None, weights, schedule, np.random.default_rng(7))
    assert exact.item() < 1e-18, 'Exact noise should give zero proxy loss'

    zero = diffusion.proxy_loss(z0, lambda z, t, cond: np.zeros_like(z), None, weights, schedule, np.random.default_rng(7))
    assert zero.item() > 0

    scale = tensor.Tensor([0.3], requires_grad=True)
    predictor = lambda z, t, cond: tensor.mul(scale, z)
    loss_fn = lambda: diffusion.proxy_loss(z0, predictor, None, weights, schedule, np.random.default_rng(8))
    check_gradients(loss_fn, {'scale': scale})

def test_differentiable_last_step():
    schedule = diffusion.build_schedule(10)
    z0 = _field(9)
    scale = tensor.Tensor([0.5], requires_grad=True)
    predictor = lambda z, t, cond: tensor.mul(scale, z)

    plain = diffusion.ddim_trajectory(_field(10), predictor, None, schedule, 5)
    assert isinstance(plain, np.ndarray)
    assert len(tensor.get_tape()) == 0, 'Non-final sampler steps should not record'

    last = diffusion.ddim_trajectory(_field(10), predictor, None, schedule, 5, differentiable_last=True)
    assert isinstance(last, tensor.Tensor) and last.requires_grad
    assert np.allclose(last.data, plain)

    tensor.backward(((last - z0) ** 2).mean())
    assert scale.grad is not None and np.abs(scale.grad).sum() > 0

def test_contract_errors():
    schedule = diffusion.build_schedule(10)
    z0 = _field(11)

    def cases():
        yield lambda: diffusion.forward_sample(z0, 3, np.zeros((8, 9)), schedule)
        yield lambda: diffusion.sample_ddim(z0, lambda z, t, c: np.zeros((8, 3)), None, schedule, 2)
        yield lambda: diffusion.reverse_step_ddpm(NoisyField(z0, 0), z0, schedule)
        yield lambda: diffusion.reverse_step_ddpm(NoisyField(z0, 4), z0, schedule)
        yield lambda: NoisyField(z0, -1)

    for fn in cases():
        try:
            fn()
            raise AssertionError('Contract violation accepted')
        except ContractError:
            pass

def test_schedule_csv():
    schedule = diffusion.build_schedule(12)

    with scratch_dir() as folder:
        path = diffusion.dump_schedule_csv(schedule, os.path.join(folder, 'schedule.csv'))
        with open(path, 'r', newline='', encoding='utf-8') as fd:
            rows = list(csv.reader(fd))

    assert rows[0] == ['t', 'beta', 'alpha', 'alpha_bar', 'sigma']
    assert len(rows) == 13
    assert float(rows[5][3]) == schedule.alpha_bar[4], 'CSV values should round-trip exactly'


TESTS = [
    test_schedule_tables,
    test_forward_then_recover_is_exact,
    test_samplers_with_oracle_predictor,
    test_ddim_timesteps,
    test_timestep_weights,
    test_proxy_loss,
    test_differentiable_last_step,
    test_contract_errors,
    test_schedule_csv
]

def run():
    for test in TESTS:
        tensor.get_tape().clear()
        test()
        print('\t' + test.__name__ + ' passed')

    return True
