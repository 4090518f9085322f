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

'''AdamW optimizer and warmup-cosine learning rate schedule.

Both stages use the same optimization recipe: AdamW with decoupled weight decay 5e-4, and a learning rate that warms up linearly for 20 epochs to 2e-4 and then follows a cosine curve down to 1e-5 at the final epoch. The scheduler accepts fractional epochs so the trainer can update the rate every step.
'''

__docformat__ = 'google'


import math

import numpy as np


class AdamWState:
    '''Optimizer moments and step count.

    Moments are keyed by parameter name so the state can be written to and restored from a checkpoint.
    '''

    def __init__(self):
        self.step = 0
        '''int: Number of updates applied'''
        self.m = {}
        '''dict: First moment estimate per parameter name'''
        self.v = {}
        '''dict: Second moment estimate per parameter name'''

    def arrays(self):
        '''Get moment arrays as a flat name mapping.

        Returns:
            dict: *{'m/<name>': array, 'v/<name>': array, ...}*
        '''
        arrays = {}

        for name in self.m:
            arrays['m/' + name] = self.m[name]
            arrays['v/' + name] = self.v[name]

        return arrays

    @staticmethod
    def from_arrays(step, arrays):
        '''Rebuild state from *arrays()* output.

        Args:
            step (int): Update count
            arrays (dict): Moment arrays keyed as in *arrays()*

        Returns:
            pysimba.optim.AdamWState: Restored state
        '''
        state = AdamWState()
        state.step = int(step)

        for key, value in arrays.items():
            kind, name = key.split('/', 1)
            getattr(state, kind)[name] = np.array(value, dtype=np.float64)

        return state


def optimizer_step(params, state, lr, weight_decay=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    '''Apply one AdamW update.

    Decay is decoupled from the adaptive step: each parameter first shrinks by *lr * weight_decay * w*, then moves by the bias-corrected moment ratio. Parameters without a gradient still decay. Parameter values are replaced, not mutated, and gradients are left in place.

    Args:
        params (dict): Parameter name to *Tensor* mapping
        state (AdamWState): Optimizer state, updated in place
        lr (float): Learning rate supplied by the scheduler
        weight_decay (float): Decoupled decay coefficient, defaults to 5e-4
        beta1 (float): First moment coefficient, defaults to 0.9
        beta2 (float): Second moment coefficient, defaults to 0.999
        eps (float): Denominator offset, defaults to 1e-8

    Returns:
        AdamWState: The updated state
    '''
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        adaptive = (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data = param.data - lr * weight_decay * param.data - lr * adaptive

    return state


class AdamW:
    '''AdamW optimizer bound to a parameter set.'''

    def __init__(self, params, weight_decay=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        '''Initialize optimizer.

        Args:
            params (dict): Parameter name to *Tensor* mapping
            weight_decay (float): Decoupled decay coefficient, defaults to 5e-4
            beta1 (float): First moment coefficient, defaults to 0.9
            beta2 (float): Second moment coefficient, defaults to 0.999
            eps (float): Denominator offset, defaults to 1e-8
        '''
        self.params = params
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamWState()

    def step(self, lr):
        '''Apply one update with learning rate *lr*.'''
        optimizer_step(self.params, self.state, lr, self.weight_decay, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        '''Clear gradients of all bound parameters.'''
        for param in self.params.values():
            param.zero_grad()


def lr_schedule(epoch, config):
    '''Learning rate at a (possibly fractional) epoch.

    Linear warmup from 0 at epoch 0 to *peak_lr* at *warmup_epochs*, then cosine decay to *min_lr* at *epochs*. Epochs beyond *epochs* return *min_lr*. When the run is shorter than the warmup, the warmup is shortened to the run length.

    Args:
        epoch (float): Epoch position, 0 at the start of training
        config (pysimba.settings.PipelineConfig): Supplies *warmup_epochs*, *peak_lr*, *min_lr*, *epochs*

    Returns:
        float: Learning rate
    '''
    total = config.epochs
    warmup = min(config.warmup_epochs, total)

    if epoch >= total:
        return config.min_lr

    if epoch < warmup:
        return config.peak_lr * epoch / warmup

    progress = (epoch - warmup) / (total - warmup)
    return config.min_lr + 0.5 * (config.peak_lr - config.min_lr) * (1.0 + math.cos(math.pi * progress))
