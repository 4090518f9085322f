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

'''Dense float64 tensors with tape-based reverse-mode automatic differentiation.

A *Tensor* wraps a row-major numpy float64 array. Operations on tensors that require gradients are recorded on the tape of the calling thread in execution order, so every node appears after its parents. *backward()* walks the tape once in reverse, populates *grad* on every leaf that requires gradients, and clears the tape. Tapes are per forward pass and single use.

Broadcasting follows numpy rules for operands whose dimensions are equal, one, or missing on the left, which covers the trailing-dimension and scalar expansion used by the network blocks.

Typical usage example:

    ```
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = (x * x).sum()
    backward(loss)
    x.grad  # array([2., 4., 6.])
    ```
'''

__docformat__ = 'google'


import math
import threading
import contextlib

import numpy as np
from scipy import special

from pysimba.errors import DimensionError, NumericError, ContractError


class _Node:
    '''Single tape entry: output tensor, parent tensors, and local gradient closure.'''
    __slots__ = ('out', 'parents', 'backward', 'generation')

    def __init__(self, out, parents, backward, generation):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.generation = generation


class Tape:
    '''Ordered record of differentiable operations for one forward pass.

    Each thread owns one tape (see *get_tape()*). Nodes are appended as operations execute, which keeps the record in topological order.
    '''

    def __init__(self):
        '''Initialize empty tape.

        Returns:
            pysimba.tensor.Tape: Constructed tape object
        '''
        self.nodes = []
        '''list: Recorded nodes in execution order'''
        self.generation = 0
        '''int: Incremented each time the tape is cleared'''
        self.enabled = True
        '''bool: Whether operations are recorded, see *no_grad()*'''

    def record(self, out, parents, backward):
        '''Append an operation to the tape.

        Args:
            out (Tensor): Operation result
            parents (tuple): Input tensors
            backward (func): Maps the output gradient to a tuple of input gradients

        Returns:
            _Node: Recorded node
        '''
        node = _Node(out, parents, backward, self.generation)
        self.nodes.append(node)
        return node

    def clear(self):
        '''Drop all recorded nodes and start a new generation.'''
        self.nodes = []
        self.generation += 1

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def get_tape():
    '''Get the tape of the calling thread.

    Returns:
        pysimba.tensor.Tape: Thread-local tape
    '''
    tape = getattr(_local, 'tape', None)

    if tape is None:
        tape = Tape()
        _local.tape = tape

    return tape


@contextlib.contextmanager
def no_grad():
    '''Context manager that disables tape recording on the calling thread.'''
    tape = get_tape()
    previous = tape.enabled
    tape.enabled = False

    try:
        yield
    finally:
        tape.enabled = previous


def _first_bad_index(mask):
    return tuple(int(i) for i in np.argwhere(mask)[0])


class Tensor:
    '''Dense n-dimensional float64 value with optional gradient tracking.

    Tensors are treated as immutable values once constructed. Leaf tensors that require gradients receive a *grad* array with the same shape as *data* after *backward()*.
    '''

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        '''Initialize tensor from external data.

        Args:
            data (array_like): Values, copied and converted to float64
            requires_grad (bool): Whether gradients are accumulated for this leaf, defaults to False

        Raises:
            DimensionError: Data has a zero-length dimension
            NumericError: Data contains NaN or Inf
        '''
        data = np.array(data, dtype=np.float64)

        if data.size == 0:
            raise DimensionError('Tensor dimensions must be positive, got shape ' + str(data.shape))

        finite = np.isfinite(data)
        if not finite.all():
            raise NumericError('Non-finite tensor value at index ' + str(_first_bad_index(~finite)))

        self.data = data
        '''numpy.ndarray: Row-major float64 values'''
        self.requires_grad = bool(requires_grad)
        '''bool: Whether this tensor participates in gradient computation'''
        self.grad = None
        '''numpy.ndarray: Accumulated gradient, or None'''
        self._node = None

    @classmethod
    def _result(cls, data, parents, backward):
        '''Wrap an operation result and record it on the tape when needed.'''
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out._node = None
        tape = get_tape()
        out.requires_grad = tape.enabled and any(parent.requires_grad for parent in parents)

        if out.requires_grad:
            out._node = tape.record(out, parents, backward)

        return out

    @staticmethod
    def zeros(shape, requires_grad=False):
        '''Create a zero-filled tensor.'''
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @property
    def shape(self):
        '''tuple: Dimension sizes'''
        return self.data.shape

    @property
    def ndim(self):
        '''int: Number of dimensions'''
        return self.data.ndim

    @property
    def size(self):
        '''int: Number of values'''
        return self.data.size

    @property
    def T(self):
        '''Tensor: Transpose of the last two dimensions'''
        return transpose(self)

    def numpy(self):
        '''Get a copy of the values.

        Returns:
            numpy.ndarray: Copy of *data*
        '''
        return self.data.copy()

    def item(self):
        '''Get the value of a single-element tensor.

        Returns:
            float: Tensor value
        '''
        return float(self.data.reshape(-1)[0])

    def detach(self):
        '''Get a constant tensor sharing these values.

        Returns:
            Tensor: Tensor that does not require gradients
        '''
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out._node = None
        out.requires_grad = False
        return out

    def zero_grad(self):
        '''Reset the accumulated gradient.'''
        self.grad = None

    def __repr__(self):
        return '<Tensor shape={} requires_grad={}>'.format(self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=-1, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def take(self, indices, axis=0):
        return take(self, indices, axis=axis)


def as_tensor(value):
    '''Convert a value to a constant tensor unless it already is one.'''
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError('Cannot broadcast shapes ' + str(a.shape) + ' and ' + str(b.shape)) from None


def _unbroadcast(grad, shape):
    '''Sum a gradient over broadcast dimensions so it matches *shape*.'''
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


# binary arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor._result(a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor._result(a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor._result(a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    zero = b.data == 0
    if zero.any():
        raise NumericError('Division by zero at index ' + str(_first_bad_index(zero)))

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._result(a.data / b.data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    '''Raise to a constant real exponent.'''
    a = as_tensor(a)
    exponent = float(exponent)

    if not exponent.is_integer() and (a.data < 0).any():
        raise NumericError('Negative base for exponent ' + str(exponent) + ' at index ' + str(_first_bad_index(a.data < 0)))
    if exponent < 1 and (a.data == 0).any():
        raise NumericError('Zero base for exponent ' + str(exponent) + ' at index ' + str(_first_bad_index(a.data == 0)))

    out = a.data ** exponent
    return Tensor._result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def matmul(a, b):
    '''Matrix product over the last two dimensions.

    Leading dimensions, when present, must agree exactly.

    Args:
        a (Tensor): Shape [..., m, k]
        b (Tensor): Shape [..., k, n]

    Returns:
        Tensor: Shape [..., m, n]

    Raises:
        DimensionError: Inner or leading dimensions do not agree
    '''
    a, b = as_tensor(a), as_tensor(b)

    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul shape mismatch: ' + str(a.shape) + ' and ' + str(b.shape))

    def backward(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return Tensor._result(a.data @ b.data, (a, b), backward)


# unary elementwise

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    '''Exact Gaussian error linear unit, x * Phi(x).'''
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return Tensor._result(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def exp(x):
    x = as_tensor(x)

    with np.errstate(over='ignore'):
        out = np.exp(x.data)

    overflow = ~np.isfinite(out)
    if overflow.any():
        raise NumericError('exp overflow at index ' + str(_first_bad_index(overflow)))

    return Tensor._result(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    invalid = x.data <= 0

    if invalid.any():
        raise NumericError('log of non-positive value at index ' + str(_first_bad_index(invalid)))

    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    return power(x, 0.5)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    out = special.expit(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    '''log(1 + exp(x)), computed without overflow.'''
    x = as_tensor(x)
    return Tensor._result(np.logaddexp(0.0, x.data), (x,), lambda g: (g * special.expit(x.data),))


def softmax(x):
    '''Softmax over the last dimension.'''
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


_ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'relu': relu,
    'gelu': gelu,
    'exp': exp,
    'log': log,
    'softmax_lastdim': softmax,
}


def elementwise(op, *args):
    '''Apply an elementwise operation by name.

    Args:
        op (str): One of 'add', 'mul', 'sub', 'relu', 'gelu', 'exp', 'log', 'softmax_lastdim'
        *args (Tensor): Operands

    Returns:
        Tensor: Result

    Raises:
        ContractError: Unknown operation name
    '''
    if op not in _ELEMENTWISE:
        raise ContractError('Unknown elementwise operation \'' + str(op) + '\'')

    return _ELEMENTWISE[op](*args)


# reductions

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)

    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)

    return np.broadcast_to(g, shape)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return Tensor._result(out, (x,), lambda g: (_expand_reduced(g, x.shape, axis, keepdims).copy(),))


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[ax] for ax in axes]))

    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def tmax(x, axis=-1, keepdims=False):
    '''Maximum along one axis; the gradient goes to the first maximal entry.'''
    x = as_tensor(x)
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis)

    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return Tensor._result(out, (x,), backward)


def row_norm(x):
    '''Euclidean norm over the last dimension.

    The gradient at a zero vector is defined as zero.
    '''
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1))

    def backward(g):
        safe = np.where(norm > 0, norm, 1.0)
        scale = np.where(norm > 0, g / safe, 0.0)
        return (x.data * scale[..., None],)

    return Tensor._result(norm, (x,), backward)


# shape manipulation

def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError('Cannot reshape ' + str(x.shape) + ' to ' + str(tuple(shape))) from None

    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    '''Permute dimensions, by default swapping the last two.'''
    x = as_tensor(x)

    if axes is None:
        axes = list(range(x.ndim))
        if x.ndim >= 2:
            axes[-1], axes[-2] = axes[-2], axes[-1]

    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=0):
    '''Join tensors along an existing axis.'''
    tensors = [as_tensor(t) for t in tensors]

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError('Cannot concatenate shapes ' + ', '.join(str(t.shape) for t in tensors)) from None

    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(tensors), backward)


def take(x, indices, axis=0):
    '''Gather entries along an axis; repeated indices accumulate gradient.'''
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        grad = np.zeros_like(x.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return Tensor._result(out, (x,), backward)


def getitem(x, key):
    '''Basic and integer-array indexing.'''
    x = as_tensor(x)
    out = np.array(x.data[key], dtype=np.float64)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, key, g)
        return (grad,)

    return Tensor._result(out, (x,), backward)


# scan

def affine_scan(a, b):
    '''Inclusive scan of h_t = a_t * h_{t-1} + b_t along axis 0, with h_{-1} = 0.

    Work-efficient (up-sweep / down-sweep) scan over the associative composition of affine maps. Each sweep level is one vectorized numpy update, so the reduction order is fixed and results are deterministic.

    Args:
        a (numpy.ndarray): Multipliers, shape [L, ...]
        b (numpy.ndarray): Offsets, same shape as *a*

    Returns:
        numpy.ndarray: States h, same shape as *a*
    '''
    length = a.shape[0]
    size = 1
    while size < length:
        size *= 2

    mult = np.ones((size,) + a.shape[1:])
    offs = np.zeros((size,) + a.shape[1:])
    mult[:length] = a
    offs[:length] = b

    step = 1
    while step < size:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        offs[right] = mult[right] * offs[left] + offs[right]
        mult[right] = mult[left] * mult[right]
        step *= 2

    # exclusive prefixes
    mult[size - 1] = 1.0
    offs[size - 1] = 0.0
    step = size // 2
    while step >= 1:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        left_mult = mult[left].copy()
        left_offs = offs[left].copy()
        mult[left] = mult[right]
        offs[left] = offs[right]
        offs[right] = left_mult * offs[right] + left_offs
        mult[right] = mult[right] * left_mult
        step //= 2

    return a * offs[:length] + b


def linear_scan(a, b):
    '''Differentiable linear recurrence h_t = a_t * h_{t-1} + b_t along axis 0.

    The backward pass is itself a reversed scan: g_t = dL/dh_t + a_{t+1} * g_{t+1}, then dL/da_t = g_t * h_{t-1} and dL/db_t = g_t.

    Args:
        a (Tensor): Multipliers, shape [L, ...]
        b (Tensor): Offsets, same shape as *a*

    Returns:
        Tensor: States, same shape as *a*

    Raises:
        DimensionError: Shapes differ
    '''
    a, b = as_tensor(a), as_tensor(b)

    if a.shape != b.shape:
        raise DimensionError('linear_scan shape mismatch: ' + str(a.shape) + ' and ' + str(b.shape))

    h = affine_scan(a.data, b.data)

    def backward(g):
        shifted = np.concatenate([a.data[1:], np.zeros((1,) + a.shape[1:])], axis=0)
        carried = affine_scan(shifted[::-1], g[::-1])[::-1]
        previous = np.concatenate([np.zeros((1,) + a.shape[1:]), h[:-1]], axis=0)
        return (carried * previous, carried)

    return Tensor._result(h, (a, b), backward)


# autodiff

def backward(loss):
    '''Populate gradients of a scalar loss on every leaf that requires them.

    Each tape node is visited at most once, newest first. Leaf gradients accumulate across calls until *zero_grad()*. The tape is cleared afterwards.

    Args:
        loss (Tensor): Scalar result recorded on the current tape

    Raises:
        ContractError: Loss is not scalar or is not on the current tape
    '''
    if loss.size != 1:
        raise ContractError('backward requires a scalar loss, got shape ' + str(loss.shape))

    tape = get_tape()

    if loss._node is None or loss._node.generation != tape.generation:
        raise ContractError('Loss is not on the current tape')

    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(tape.nodes):
        grad = grads.pop(id(node.out), None)

        if grad is None:
            continue

        for parent, parent_grad in zip(node.parents, node.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue

            if parent._node is None:
                parent.grad = parent_grad.copy() if parent.grad is None else parent.grad + parent_grad
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad

    for node in tape.nodes:
        node.out._node = None

    tape.clear()
