# MIT License
# 
# Copyright (c) 2025 pysimba contributors
# 
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
# 
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
# 
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

'''Denoising diffusion over flattened transformation fields.

A transformation field of N keypoints is diffused as an [N, 12] array (9 affine values row-major, then 3 translation values). The forward process is

    z_t = sqrt(alpha_bar_t) * z_0 + sqrt(1 - alpha_bar_t) * eps

and a noise estimate eps_hat recovers the clean field in closed form:

    z_0_hat = (z_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)

Timesteps are 1-based, t in [1, T]. All randomness is passed in explicitly as arrays or *numpy.random.Generator* objects.

Predictors are callables *predictor(z, t, cond)* returning a noise estimate with the shape of *z*, either a *pysimba.tensor.Tensor* or a numpy array.

Typical usage example:

    ```
    schedule = build_schedule(100, 1e-4, 0.02)
    weights = build_timestep_weights(schedule, k=10)
    loss = proxy_loss(target_field, model.predict_noise, cond, weights, schedule, rng)
    field = sample_ddim(rng.standard_normal((128, 12)), model.predict_noise, cond, schedule, steps=25)
    ```
'''

__docformat__ = 'google'


import csv
import math

import numpy as np

from pysimba import tensor
from pysimba.geometry import TransformField
from pysimba.errors import ConfigError, ContractError, NumericError


class DiffusionSchedule:
    '''Noise schedule tables indexed by 1-based timestep.

    Array element *i* holds the value for timestep *t = i + 1*.
    '''

    def __init__(self, beta):
        '''Initialize schedule from beta values.

        Args:
            beta (array_like): Variances beta_1 .. beta_T

        Raises:
            ConfigError: A beta value is outside (0, 1) or the sequence decreases
        '''
        beta = np.array(beta, dtype=np.float64)

        if beta.ndim != 1 or beta.size == 0:
            raise ConfigError('Diffusion schedule needs at least one timestep')
        if not ((beta > 0).all() and (beta < 1).all()):
            raise ConfigError('Diffusion betas must lie in (0, 1)')
        if (np.diff(beta) < 0).any():
            raise ConfigError('Diffusion betas must be non-decreasing')

        self.T = beta.size
        '''int: Number of timesteps'''
        self.beta = beta
        '''numpy.ndarray: beta_t'''
        self.alpha = 1.0 - beta
        '''numpy.ndarray: alpha_t = 1 - beta_t'''
        self.alpha_bar = np.cumprod(self.alpha)
        '''numpy.ndarray: alpha_bar_t, running product of alpha'''
        alpha_bar_prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        self.sigma = np.sqrt((1.0 - alpha_bar_prev) / (1.0 - self.alpha_bar) * beta)
        '''numpy.ndarray: sigma_t, square root of the reverse posterior variance'''

    def check(self, t):
        '''Raise *ContractError* unless 1 <= t <= T.'''
        if not 1 <= t <= self.T:
            raise ContractError('Timestep {} outside [1, {}]'.format(t, self.T))

    def alpha_bar_at(self, t):
        '''alpha_bar for timestep *t*, with alpha_bar_0 = 1.'''
        if t == 0:
            return 1.0

        self.check(t)
        return float(self.alpha_bar[t - 1])

    def alpha_at(self, t):
        self.check(t)
        return float(self.alpha[t - 1])

    def sigma_at(self, t):
        self.check(t)
        return float(self.sigma[t - 1])


def build_schedule(T=100, beta_start=1e-4, beta_end=0.02):
    '''Build a linear beta schedule.

    Args:
        T (int): Number of timesteps, defaults to 100
        beta_start (float): beta_1, defaults to 1e-4
        beta_end (float): beta_T, defaults to 0.02

    Returns:
        DiffusionSchedule: Schedule tables

    Raises:
        ConfigError: *T* < 1 or not 0 < beta_start <= beta_end < 1
    '''
    if T < 1:
        raise ConfigError('Diffusion schedule needs T >= 1, got ' + str(T))
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError('Require 0 < beta_start <= beta_end < 1, got {} and {}'.format(beta_start, beta_end))

    return DiffusionSchedule(np.linspace(beta_start, beta_end, T))


def schedule_from_config(config):
    '''Build the schedule described by a *PipelineConfig*.'''
    return build_schedule(config.timesteps, config.beta_start, config.beta_end)


class NoisyField:
    '''Flattened field at a diffusion timestep.

    Attributes:
        z (numpy.ndarray): Field values, shape [N, 12]; may be a *pysimba.tensor.Tensor* inside differentiable sampling
        t (int): Timestep, 0 for a clean field
    '''

    def __init__(self, z, t):
        if not isinstance(z, tensor.Tensor):
            z = np.asarray(z, dtype=np.float64)

            if not np.isfinite(z).all():
                raise NumericError('Non-finite noisy field value at timestep ' + str(t))

        if t < 0:
            raise ContractError('Timestep must be non-negative, got ' + str(t))

        self.z = z
        self.t = int(t)

    @property
    def shape(self):
        return self.z.shape


class TimestepWeights:
    '''Fixed timestep subset and per-timestep loss weights.'''

    def __init__(self, timesteps, weights):
        '''Initialize timestep weights.

        Raises:
            ConfigError: Empty timestep set, length mismatch, or non-positive weight
        '''
        timesteps = tuple(int(t) for t in timesteps)
        weights = np.array(weights, dtype=np.float64)

        if not timesteps:
            raise ConfigError('Proxy loss needs at least one timestep')
        if weights.shape != (len(timesteps),):
            raise ConfigError('Expected {} timestep weights, got {}'.format(len(timesteps), weights.shape))
        if not (weights > 0).all():
            raise ConfigError('Timestep weights must be positive')

        self.timesteps = timesteps
        '''tuple: Selected timesteps'''
        self.weights = weights
        '''numpy.ndarray: lambda(t) per selected timestep'''

    def __iter__(self):
        return iter(zip(self.timesteps, self.weights.tolist()))

    def __len__(self):
        return len(self.timesteps)


def build_timestep_weights(schedule, k=10, mode='snr', clamp=5.0):
    '''Select *k* evenly spaced timesteps and their weights.

    Timesteps are round(T * i / k) for i = 1 .. k, so T=100 and k=10 gives 10, 20, .., 100.

    Args:
        schedule (DiffusionSchedule): Schedule tables
        k (int): Number of timesteps, defaults to 10
        mode (str): 'snr' for lambda(t) = min(alpha_bar_t / (1 - alpha_bar_t), clamp), 'uniform' for lambda(t) = 1, defaults to 'snr'
        clamp (float): Upper bound of the SNR weight, defaults to 5.0

    Returns:
        TimestepWeights: Selected timesteps and weights

    Raises:
        ConfigError: Invalid *k* or *mode*
    '''
    if not 1 <= k <= schedule.T:
        raise ConfigError('Proxy timestep count must be in [1, {}], got {}'.format(schedule.T, k))

    timesteps = [int(math.floor(schedule.T * i / k + 0.5)) for i in range(1, k + 1)]
    alpha_bar = np.array([schedule.alpha_bar_at(t) for t in timesteps])

    if mode == 'snr':
        weights = np.minimum(alpha_bar / (1.0 - alpha_bar), clamp)
    elif mode == 'uniform':
        weights = np.ones(k)
    else:
        raise ConfigError('Unknown timestep weighting \'' + str(mode) + '\'')

    return TimestepWeights(timesteps, weights)


def _check_shapes(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError('{} shape {} does not match field shape {}'.format(what, tuple(b.shape), tuple(a.shape)))


def forward_sample(z0, t, eps, schedule):
    '''Sample the noisy field at timestep *t* by reparameterization.

    Args:
        z0 (numpy.ndarray): Clean field, shape [N, 12]
        t (int): Timestep in [1, T]
        eps (numpy.ndarray): Standard normal noise, same shape as *z0*
        schedule (DiffusionSchedule): Schedule tables

    Returns:
        NoisyField: sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps

    Raises:
        ContractError: Shape mismatch or timestep out of range
    '''
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_shapes(z0, eps, 'Noise')
    alpha_bar = schedule.alpha_bar_at(t)
    schedule.check(t)
    return NoisyField(math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps, t)


def recover_clean(zt, eps_pred, schedule):
    '''Invert the forward process with a noise estimate.

    Args:
        zt (NoisyField): Noisy field
        eps_pred (numpy.ndarray): Noise estimate, or a Tensor to differentiate through
        schedule (DiffusionSchedule): Schedule tables

    Returns:
        numpy.ndarray: Clean field estimate, a Tensor when either input is a Tensor

    Raises:
        ContractError: Shape mismatch
    '''
    _check_shapes(zt, eps_pred, 'Noise estimate')
    alpha_bar = schedule.alpha_bar_at(zt.t)
    noise_scale = math.sqrt(1.0 - alpha_bar)
    inverse = 1.0 / math.sqrt(alpha_bar)

    if isinstance(zt.z, tensor.Tensor) or isinstance(eps_pred, tensor.Tensor):
        return tensor.sub(zt.z, tensor.mul(eps_pred, noise_scale)) * inverse

    return (zt.z - noise_scale * np.asarray(eps_pred)) * inverse


def reverse_step_ddpm(zt, eps_pred, schedule, noise=None):
    '''Single ancestral reverse step from t to t - 1.

    z_{t-1} = (z_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t) + sigma_t * noise

    The noise term is omitted at t = 1.

    Args:
        zt (NoisyField): Field at timestep t >= 1
        eps_pred (numpy.ndarray): Noise estimate
        schedule (DiffusionSchedule): Schedule tables
        noise (numpy.ndarray): Standard normal noise, required for t > 1

    Returns:
        NoisyField: Field at timestep t - 1

    Raises:
        ContractError: t = 0, missing noise, or shape mismatch
    '''
    if zt.t == 0:
        raise ContractError('Cannot take a reverse step from timestep 0')

    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    _check_shapes(zt, eps_pred, 'Noise estimate')
    alpha = schedule.alpha_at(zt.t)
    alpha_bar = schedule.alpha_bar_at(zt.t)
    mean = (zt.z - (1.0 - alpha) / math.sqrt(1.0 - alpha_bar) * eps_pred) / math.sqrt(alpha)

    if zt.t > 1:
        if noise is None:
            raise ContractError('Reverse step at timestep {} requires noise'.format(zt.t))

        noise = np.asarray(noise, dtype=np.float64)
        _check_shapes(zt, noise, 'Noise')
        mean = mean + schedule.sigma_at(zt.t) * noise

    return NoisyField(mean, zt.t - 1)


def ddim_timesteps(T, steps):
    '''Evenly spaced sampler timesteps from T down, inclusive of T.

    Timestep i is round(T - i * T / steps), so T=100 and 25 steps gives 100, 96, .., 4.

    Raises:
        ConfigError: *steps* outside [1, T]
    '''
    if not 1 <= steps <= T:
        raise ConfigError('Sampler steps must be in [1, {}], got {}'.format(T, steps))

    return [int(math.floor(T - i * T / steps + 0.5)) for i in range(steps)]


def _predict(predictor, z, t, cond):
    eps = predictor(z, t, cond)
    _check_shapes(z, eps, 'Predictor output')
    return eps


def ddim_step(zt, eps_pred, t_prev, schedule):
    '''Deterministic (eta = 0) step from timestep zt.t to *t_prev*.

    Works on numpy arrays and on Tensors.

    Returns:
        NoisyField: Field at *t_prev*
    '''
    clean = recover_clean(zt, eps_pred, schedule)
    alpha_bar_prev = schedule.alpha_bar_at(t_prev)

    if t_prev == 0:
        return NoisyField(clean, 0)

    signal = math.sqrt(alpha_bar_prev)
    noise_scale = math.sqrt(1.0 - alpha_bar_prev)

    if isinstance(clean, tensor.Tensor):
        return NoisyField(tensor.add(clean * signal, tensor.mul(eps_pred, noise_scale)), t_prev)

    return NoisyField(signal * clean + noise_scale * np.asarray(eps_pred), t_prev)


def ddim_trajectory(noise_init, predictor, cond, schedule, steps, differentiable_last=False):
    '''Run the deterministic accelerated sampler and return the final flattened field.

    All predictor calls run without gradient recording, except the final step when *differentiable_last* is set.

    Args:
        noise_init (numpy.ndarray): Initial Gaussian field, shape [N, 12]
        predictor (func): Noise predictor *predictor(z, t, cond)*
        cond (object): Conditioning passed through to the predictor
        schedule (DiffusionSchedule): Schedule tables
        steps (int): Number of sampler steps
        differentiable_last (bool): Record the last step on the tape, defaults to False

    Returns:
        numpy.ndarray: Clean field [N, 12], or a Tensor when *differentiable_last* is set

    Raises:
        ContractError: Predictor output shape mismatch
        ConfigError: Invalid step count
    '''
    timesteps = ddim_timesteps(schedule.T, steps)
    zt = NoisyField(noise_init, timesteps[0])

    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        last = t_prev == 0

        if last and differentiable_last:
            eps = tensor.as_tensor(_predict(predictor, zt.z, t, cond))
            return ddim_step(NoisyField(zt.z, t), eps, 0, schedule).z

        with tensor.no_grad():
            eps = _predict(predictor, zt.z, t, cond)

        if isinstance(eps, tensor.Tensor):
            eps = eps.data

        zt = ddim_step(NoisyField(zt.z, t), eps, t_prev, schedule)

    return zt.z


def sample_ddim(noise_init, predictor, cond, schedule, steps=25):
    '''Deterministic accelerated sampling of a transformation field.

    Args:
        noise_init (numpy.ndarray): Initial Gaussian field, shape [N, 12]
        predictor (func): Noise predictor *predictor(z, t, cond)*
        cond (object): Conditioning passed through to the predictor
        schedule (DiffusionSchedule): Schedule tables
        steps (int): Number of sampler steps, defaults to 25

    Returns:
        pysimba.geometry.TransformField: Sampled field

    Raises:
        ContractError: Predictor output shape mismatch
    '''
    return TransformField.from_flat(ddim_trajectory(np.asarray(noise_init, dtype=np.float64), predictor, cond, schedule, steps))


def sample_ddpm(noise_init, predictor, cond, schedule, rng):
    '''Full ancestral sampling over all T timesteps.

    Args:
        noise_init (numpy.ndarray): Initial Gaussian field, shape [N, 12]
        predictor (func): Noise predictor *predictor(z, t, cond)*
        cond (object): Conditioning passed through to the predictor
        schedule (DiffusionSchedule): Schedule tables
        rng (numpy.random.Generator): Source of per-step noise

    Returns:
        pysimba.geometry.TransformField: Sampled field
    '''
    zt = NoisyField(noise_init, schedule.T)

    with tensor.no_grad():
        while zt.t > 0:
            eps = _predict(predictor, zt.z, zt.t, cond)

            if isinstance(eps, tensor.Tensor):
                eps = eps.data

            noise = rng.standard_normal(zt.shape) if zt.t > 1 else None
            zt = reverse_step_ddpm(zt, eps, schedule, noise)

    return TransformField.from_flat(zt.z)


def sample_field(noise_init, predictor, cond, schedule, config, rng):
    '''Sample with the sampler selected by *config.sampler*.'''
    if config.sampler == 'ddpm':
        return sample_ddpm(noise_init, predictor, cond, schedule, rng)

    return sample_ddim(noise_init, predictor, cond, schedule, config.sampler_steps)


def proxy_loss(z0_target, predictor, cond, weights, schedule, rng):
    '''Timestep-weighted mean squared error between the target and recovered clean fields.

    For every selected timestep t a fresh noise sample eps is drawn from *rng*, the noisy field z_t is formed, the predictor estimates the noise, and the clean field is recovered in closed form. The loss is the sum over timesteps of lambda(t) times the mean squared entry of (target - recovered).

    Args:
        z0_target (numpy.ndarray): Target field, shape [N, 12]
        predictor (func): Noise predictor returning a Tensor
        cond (object): Conditioning passed through to the predictor
        weights (TimestepWeights): Timesteps and weights
        schedule (DiffusionSchedule): Schedule tables
        rng (numpy.random.Generator): Noise source

    Returns:
        pysimba.tensor.Tensor: Scalar loss

    Raises:
        ConfigError: Empty timestep set
    '''
    if len(weights) == 0:
        raise ConfigError('Proxy loss needs at least one timestep')

    z0_target = np.asarray(z0_target, dtype=np.float64)
    total = None

    for t, weight in weights:
        eps = rng.standard_normal(z0_target.shape)
        zt = forward_sample(z0_target, t, eps, schedule)
        recovered = recover_clean(zt, tensor.as_tensor(_predict(predictor, zt.z, t, cond)), schedule)
        diff = recovered - z0_target
        term = (diff * diff).mean() * weight
        total = term if total is None else total + term

    return total


def dump_schedule_csv(schedule, path):
    '''Write schedule tables as CSV with columns t, beta, alpha, alpha_bar, sigma.

    Values use 17 significant digits so they round-trip exactly.
    '''
    with open(path, 'w', newline='', encoding='utf-8') as fd:
        writer = csv.writer(fd, lineterminator='\n')
        writer.writerow(['t', 'beta', 'alpha', 'alpha_bar', 'sigma'])

        for i in range(schedule.T):
            writer.writerow([i + 1] + ['{:.17g}'.format(float(table[i])) for table in
                (schedule.beta, schedule.alpha, schedule.alpha_bar, schedule.sigma)])

    return path
