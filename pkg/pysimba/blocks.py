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

'''Learnable network blocks shared by both training stages.

Blocks are *Module* subclasses holding *pysimba.tensor.Tensor* parameters. Parameters are discovered by attribute order, which fixes the parameter manifest written to checkpoints. Linear weights are initialized uniformly in +/- sqrt(6 / (fan_in + fan_out)) and biases to zero, from an explicit *numpy.random.Generator*.

Point features travel as *FeatureSet* objects: an [N, D] feature tensor and the N anchor points it describes.

Blocks:
- *MLP*: shared per-point linear layers with GELU between layers
- *CrossAttention*: multi-head scaled dot-product attention from query rows to guide rows
- *McaFusion*: base features attend to keypoint and symmetric-point guidance separately, the two results are concatenated and mixed by an MLP
- *MlpFusion*: base features concatenated with max-pooled guidance, mixed by an MLP
- *SsmBlock*: pre-normalized selective state-space block with a residual connection, computed by a parallel scan
- *MambaFusion*: base and guide tokens interleaved in spatial order and mixed by an *SsmBlock*
- *MambaForward*: MLP, *SsmBlock*, then replicate-and-offset upsampling

Typical usage example:

    ```
    rng = np.random.default_rng(0)
    fusion = McaFusion(64, heads=2, rng=rng)
    forward = MambaForward(64, state_dim=8, up_factor=2, radius=0.1, rng=rng)
    fused = fusion(base, keypoint_features, symmetric_features)
    points, features = forward(fused)
    ```
'''

__docformat__ = 'google'


import math

import numpy as np

from pysimba import tensor
from pysimba.tensor import Tensor
from pysimba.geometry import PointCloud, UNIT_BOUND
from pysimba.settings import FUSION_KINDS
from pysimba.errors import CardinalityError, CheckpointError, ConfigError, ContractError


MORTON_BITS = 10
'''int: Quantization bits per axis for spatial serialization'''


def init_uniform(rng, fan_in, fan_out, shape=None):
    '''Uniform initialization in +/- sqrt(6 / (fan_in + fan_out)).

    Args:
        rng (numpy.random.Generator): Random source
        fan_in (int): Input width
        fan_out (int): Output width
        shape (tuple): Result shape, defaults to (fan_in, fan_out)

    Returns:
        Tensor: Parameter tensor that requires gradients
    '''
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    '''Base class for blocks with named parameters.

    Parameters are attributes holding Tensors that require gradients. Child modules are attributes holding *Module* objects or lists of them. Names are dotted attribute paths in attribute definition order.
    '''

    def named_parameters(self, prefix=''):
        '''Get parameters in manifest order.

        Args:
            prefix (str): Prepended to every name, defaults to ''

        Returns:
            list: (name, Tensor) tuples
        '''
        params = []

        for name, value in vars(self).items():
            if name.startswith('_'):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                params.append((prefix + name, value))
            elif isinstance(value, Module):
                params.extend(value.named_parameters(prefix + name + '.'))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.extend(item.named_parameters(prefix + name + '.' + str(i) + '.'))

        return params

    def parameters(self):
        '''Get parameters as a name to Tensor dict.'''
        return dict(self.named_parameters())

    def parameter_count(self):
        '''Total number of learnable values.'''
        return sum(param.size for _, param in self.named_parameters())

    def arrays(self, prefix=''):
        '''Get parameter values as a name to numpy array dict for checkpointing.'''
        return {name: param.data for name, param in self.named_parameters(prefix)}

    def load_arrays(self, arrays, prefix=''):
        '''Replace parameter values from a name to array mapping.

        Args:
            arrays (dict): Arrays keyed by *prefix* + parameter name
            prefix (str): Name prefix, defaults to ''

        Raises:
            CheckpointError: Missing parameter or shape mismatch
        '''
        for name, param in self.named_parameters(prefix):
            if name not in arrays:
                raise CheckpointError('Checkpoint is missing parameter ' + name)

            value = np.asarray(arrays[name], dtype=np.float64)

            if value.shape != param.shape:
                raise CheckpointError('Parameter {} has shape {} in checkpoint, expected {}'.format(name, value.shape, param.shape))

            param.data = value.copy()

    def zero_grad(self):
        for _, param in self.named_parameters():
            param.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class FeatureSet:
    '''Per-point feature vectors and the anchor points they describe.'''

    def __init__(self, features, coords):
        '''Initialize feature set.

        Args:
            features (Tensor): Shape [N, D]
            coords (pysimba.geometry.PointCloud): N anchor points

        Raises:
            CardinalityError: Row count differs from the anchor count
        '''
        features = tensor.as_tensor(features)

        if features.ndim != 2 or features.shape[0] != len(coords):
            raise CardinalityError('Feature rows {} do not match {} anchor points'.format(features.shape, len(coords)))

        self.features = features
        '''Tensor: Feature rows, shape [N, D]'''
        self.coords = coords
        '''pysimba.geometry.PointCloud: Anchor points'''

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def with_features(self, features):
        return FeatureSet(features, self.coords)


class Linear(Module):
    '''Affine map over the last dimension, x @ weight + bias.'''

    def __init__(self, in_dim, out_dim, rng, bias=True):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError('Linear layer widths must be positive, got {} -> {}'.format(in_dim, out_dim))

        self.weight = init_uniform(rng, in_dim, out_dim)
        self.bias = Tensor.zeros(out_dim, requires_grad=True) if bias else None

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def forward(self, x):
        x = tensor.as_tensor(x)
        lead = x.shape[:-1]

        if x.ndim != 2:
            x = x.reshape(-1, x.shape[-1])

        out = x @ self.weight

        if self.bias is not None:
            out = out + self.bias

        if len(lead) != 1:
            out = out.reshape(lead + (self.out_dim,))

        return out


class LayerNorm(Module):
    '''Normalization over the last dimension with learned scale and shift.'''

    def __init__(self, dim, eps=1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor.zeros(dim, requires_grad=True)
        self._eps = eps

    def forward(self, x):
        centered = x - x.mean(axis=-1, keepdims=True)
        variance = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * tensor.power(variance + self._eps, -0.5) * self.gamma + self.beta


class MLP(Module):
    '''Shared-weight per-point perceptron.

    Layer widths are given as [in, hidden.., out]. GELU follows every layer except the last.
    '''

    def __init__(self, widths, rng):
        '''Initialize perceptron.

        Args:
            widths (list): Layer widths including the input width
            rng (numpy.random.Generator): Initialization source

        Raises:
            ConfigError: Fewer than two widths or a width below 1
        '''
        widths = list(widths)

        if len(widths) < 2:
            raise ConfigError('MLP needs an input and at least one output width, got ' + str(widths))
        for width in widths:
            if width < 1:
                raise ConfigError('MLP layer widths must be positive, got ' + str(widths))

        self.layers = [Linear(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)

            if i < len(self.layers) - 1:
                x = tensor.gelu(x)

        return x

    def forward_set(self, feature_set):
        '''Apply to a *FeatureSet*; coordinates pass through unchanged.'''
        return feature_set.with_features(self.forward(feature_set.features))


def mlp_forward(x, mlp):
    '''Apply *mlp* to a *FeatureSet*.'''
    return mlp.forward_set(x)


def _broadcast_rows(row, count):
    '''Repeat a [1, D] or [D] tensor to [count, D].'''
    if row.ndim == 1:
        row = row.reshape(1, row.shape[0])

    return row.take(np.zeros(count, dtype=np.int64), axis=0)


class CrossAttention(Module):
    '''Multi-head scaled dot-product cross-attention.

    Every query row attends over all guide rows. The heads are concatenated and passed through a final *output* projection, so a block computes output(softmax(Q K^T / sqrt(d)) V) with Q, K and V the *query*, *key* and *value* projections. There is no residual connection; the output has one row per query row.
    '''

    def __init__(self, dim, heads, rng):
        '''Initialize attention block.

        Args:
            dim (int): Feature width of queries, guides, and output
            heads (int): Number of heads
            rng (numpy.random.Generator): Initialization source

        Raises:
            ConfigError: *dim* not divisible by *heads*
        '''
        if heads < 1 or dim % heads != 0:
            raise ConfigError('Feature width {} is not divisible by {} heads'.format(dim, heads))

        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)
        self._heads = heads
        self._dim = dim

    def attend(self, query, guide):
        '''Run attention on feature tensors.

        Args:
            query (Tensor): Shape [Nq, D]
            guide (Tensor): Shape [Ng, D]

        Returns:
            tuple: (output Tensor [Nq, D], attention weights numpy.ndarray [heads, Nq, Ng])

        Raises:
            DimensionError: Feature widths do not match the block width
        '''
        heads = self._heads
        head_dim = self._dim // heads
        nq = query.shape[0]
        ng = guide.shape[0]

        q = tensor.transpose(self.query(query).reshape(nq, heads, head_dim), (1, 0, 2))
        k = tensor.transpose(self.key(guide).reshape(ng, heads, head_dim), (1, 0, 2))
        v = tensor.transpose(self.value(guide).reshape(ng, heads, head_dim), (1, 0, 2))

        weights = tensor.softmax((q @ k.T) * (1.0 / math.sqrt(head_dim)))
        mixed = tensor.transpose(weights @ v, (1, 0, 2)).reshape(nq, self._dim)
        return self.output(mixed), weights.data

    def forward(self, query, guide):
        '''Attend from *query* rows to *guide* rows.

        Args:
            query (FeatureSet): Query features; its anchors are kept
            guide (FeatureSet): Guidance features

        Returns:
            FeatureSet: One output row per query row
        '''
        out, _ = self.attend(query.features, guide.features)
        return query.with_features(out)


def cross_attention(query, guide, block):
    '''Apply a *CrossAttention* block to feature sets, including its output projection.'''
    return block(query, guide)


class McaFusion(Module):
    '''Cross-attention fusion of base features with two guidance sources.

    The same attention block attends from the base features to each guidance source; the two results are concatenated and mixed by an MLP.
    '''

    def __init__(self, dim, heads, rng):
        self.attention = CrossAttention(dim, heads, rng)
        self.psi = MLP([2 * dim, dim, dim], rng)

    def forward(self, base, keypoints, symmetric):
        '''Fuse guidance into base features.

        Args:
            base (FeatureSet): Base features on the current cloud
            keypoints (FeatureSet): Keypoint guidance features
            symmetric (FeatureSet): Symmetric-point guidance features

        Returns:
            FeatureSet: Fused features on the base anchors
        '''
        first = self.attention(base, keypoints).features
        second = self.attention(base, symmetric).features
        return base.with_features(self.psi(tensor.concat([first, second], axis=1)))


def mca_fusion(base, keypoints, symmetric, block):
    '''Fuse keypoint and symmetric-point guidance into *base* with a *McaFusion* block.'''
    return block(base, keypoints, symmetric)


class MlpFusion(Module):
    '''MLP fusion: base features concatenated with max-pooled guidance from each source.'''

    def __init__(self, dim, rng):
        self.psi = MLP([3 * dim, dim, dim], rng)

    def forward(self, base, keypoints, symmetric):
        count = len(base)
        first = _broadcast_rows(keypoints.features.max(axis=0), count)
        second = _broadcast_rows(symmetric.features.max(axis=0), count)
        return base.with_features(self.psi(tensor.concat([base.features, first, second], axis=1)))


# spatial serialization

def _part1by2(n):
    n = n & 0x000003FF
    n = (n | (n << 16)) & 0x030000FF
    n = (n | (n << 8)) & 0x0300F00F
    n = (n | (n << 4)) & 0x030C30C3
    n = (n | (n << 2)) & 0x09249249
    return n


def quantize(points, bits=MORTON_BITS):
    '''Map normalized coordinates to integer grid cells in [0, 2**bits).'''
    cells = 1 << bits
    return np.clip(np.floor((points + UNIT_BOUND) * cells), 0, cells - 1).astype(np.int64)


def morton_codes(points):
    '''30-bit Morton codes of normalized points, x in the most significant bit of each triple.'''
    cells = quantize(points)
    return (_part1by2(cells[:, 0]) << 2) | (_part1by2(cells[:, 1]) << 1) | _part1by2(cells[:, 2])


def serialize_points(coords, order='morton'):
    '''Deterministic spatial ordering of normalized points.

    Args:
        coords (pysimba.geometry.PointCloud): Points in the normalized unit cube, or an [N, 3] array
        order (str): 'morton' for Z-order codes on 10-bit quantized coordinates, 'axis' for lexicographic x, y, z order, defaults to 'morton'

    Returns:
        numpy.ndarray: Permutation; ties keep the original index order

    Raises:
        ContractError: Points outside the unit cube or unknown order
    '''
    points = coords.points if isinstance(coords, PointCloud) else np.asarray(coords, dtype=np.float64)

    if np.abs(points).max() > UNIT_BOUND + 1e-9:
        raise ContractError('Serialization requires normalized coordinates, max |coordinate| = ' + str(np.abs(points).max()))

    if order == 'morton':
        return np.argsort(morton_codes(points), kind='stable')
    if order == 'axis':
        return np.lexsort((np.arange(points.shape[0]), points[:, 2], points[:, 1], points[:, 0]))

    raise ContractError('Unknown serialization order \'' + str(order) + '\'')


def _serialization_points(points):
    return np.clip(points, -UNIT_BOUND, UNIT_BOUND)


# selective state space

class SsmBlock(Module):
    '''Selective state-space block with pre-normalization and a residual connection.

    For an input sequence u of L tokens of width D, with per-token step size delta = softplus(u W_delta + b_delta), input and output projections B = u W_B and C = u W_C, and per-channel state matrix A = -exp(A_log):

        h_t = exp(delta_t A) * h_{t-1} + delta_t B_t u_t
        y_t = C_t . h_t + D * u_t

    The block output is x + scan(norm(x)).
    '''

    def __init__(self, dim, state_dim, rng):
        '''Initialize state-space block.

        Args:
            dim (int): Token width D
            state_dim (int): State size per channel
            rng (numpy.random.Generator): Initialization source

        Raises:
            ConfigError: *state_dim* < 1
        '''
        if state_dim < 1:
            raise ConfigError('State dimension must be at least 1, got ' + str(state_dim))

        self.norm = LayerNorm(dim)
        self.a_log = Tensor(np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (dim, 1))), requires_grad=True)
        self.delta = Linear(dim, dim, rng)
        # initial step sizes in [1e-3, 1e-1]
        step = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=dim))
        self.delta.bias = Tensor(step + np.log(-np.expm1(-step)), requires_grad=True)
        self.proj_b = Linear(dim, state_dim, rng, bias=False)
        self.proj_c = Linear(dim, state_dim, rng, bias=False)
        self.skip = Tensor(np.ones(dim), requires_grad=True)

    @property
    def state_dim(self):
        return self.a_log.shape[1]

    def scan(self, u):
        '''Selective scan without normalization or residual.

        Args:
            u (Tensor): Sequence, shape [L, D]

        Returns:
            Tensor: Shape [L, D]

        Raises:
            ContractError: Empty sequence
        '''
        length, dim = u.shape
        state = self.state_dim

        step = tensor.softplus(self.delta(u))
        decay = -tensor.exp(self.a_log)
        a = tensor.exp(step.reshape(length, dim, 1) * decay.reshape(1, dim, state))
        b = step.reshape(length, dim, 1) * self.proj_b(u).reshape(length, 1, state) * u.reshape(length, dim, 1)
        h = tensor.linear_scan(a, b)
        y = (h * self.proj_c(u).reshape(length, 1, state)).sum(axis=-1)
        return y + u * self.skip

    def forward(self, x):
        '''Residual block output x + scan(norm(x)) for a [L, D] sequence.'''
        if x.shape[0] == 0:
            raise ContractError('State-space block needs a nonempty sequence')

        return x + self.scan(self.norm(x))


def ssm_scan(x, block):
    '''Apply an *SsmBlock* to a [L, D] sequence.'''
    return block(x)


def interleave_slots(n_base, n_guide):
    '''Sequence slots for strictly alternating base and guide streams.

    Tokens alternate base, guide, base, guide, .. until the shorter stream runs out; the rest of the longer stream is appended.

    Returns:
        tuple: (base slots [n_base], guide slots [n_guide])
    '''
    paired = min(n_base, n_guide)
    base = np.concatenate([2 * np.arange(paired), 2 * paired + np.arange(n_base - paired)])
    guide = np.concatenate([2 * np.arange(paired) + 1, 2 * paired + np.arange(n_guide - paired)])
    return base.astype(np.int64), guide.astype(np.int64)


class MambaFusion(Module):
    '''State-space fusion of base features with guidance features.

    Coordinates are injected through a learned positional MLP added to the features. Base and guide tokens are each put in spatial order, interleaved, mixed by a state-space block, and the base positions are gathered back in their original row order. Both guidance sources go through the same mixer and the two results are combined by an MLP.
    '''

    def __init__(self, dim, state_dim, rng, order='morton'):
        self.position = MLP([3, dim, dim], rng)
        self.ssm = SsmBlock(dim, state_dim, rng)
        self.psi = MLP([2 * dim, dim, dim], rng)
        self._order = order

    def _tokens(self, feature_set):
        points = _serialization_points(feature_set.coords.points)
        return feature_set.features + self.position(points), serialize_points(points, self._order)

    def mix(self, base, guide=None):
        '''Fuse one guidance source into the base features.

        Args:
            base (FeatureSet): Base features
            guide (FeatureSet): Guidance features, or None to run the state-space block over the base tokens alone

        Returns:
            Tensor: Fused features, one row per base row in base order
        '''
        base_tokens, base_order = self._tokens(base)
        n_base = len(base)

        if guide is None:
            sequence = base_tokens.take(base_order, axis=0)
            slots = np.empty(n_base, dtype=np.int64)
            slots[base_order] = np.arange(n_base)
            return self.ssm(sequence).take(slots, axis=0)

        guide_tokens, guide_order = self._tokens(guide)
        n_guide = len(guide)
        base_slots, guide_slots = interleave_slots(n_base, n_guide)

        # row of the stacked [base; guide] tokens placed in each sequence slot
        source = np.empty(n_base + n_guide, dtype=np.int64)
        source[base_slots] = base_order
        source[guide_slots] = n_base + guide_order

        sequence = tensor.concat([base_tokens, guide_tokens], axis=0).take(source, axis=0)
        mixed = self.ssm(sequence)

        slot_of_base = np.empty(n_base, dtype=np.int64)
        slot_of_base[base_order] = base_slots
        return mixed.take(slot_of_base, axis=0)

    def forward(self, base, keypoints, symmetric):
        first = self.mix(base, keypoints)
        second = self.mix(base, symmetric)
        return base.with_features(self.psi(tensor.concat([first, second], axis=1)))


def mamba_fusion(base, guide, block):
    '''Fuse one guidance source into *base* with a *MambaFusion* block.'''
    return base.with_features(block.mix(base, guide))


def make_fusion(kind, dim, heads, state_dim, rng, order='morton'):
    '''Construct the fusion block for an ablation kind ('CA', 'MFusion', or 'MLP').

    Raises:
        ConfigError: Unknown kind
    '''
    if kind == 'CA':
        return McaFusion(dim, heads, rng)
    if kind == 'MFusion':
        return MambaFusion(dim, state_dim, rng, order)
    if kind == 'MLP':
        return MlpFusion(dim, rng)

    raise ConfigError('Unknown fusion kind \'' + str(kind) + '\', expected one of ' + ', '.join(FUSION_KINDS))


class MambaForward(Module):
    '''Refine fused features and upsample the anchor points.

    Features pass through an MLP and a state-space block (over the points in spatial order). Each point is then replicated *up_factor* times and each replica is displaced by a learned offset r * tanh(v) / sqrt(3), so no replica moves farther than *radius* from its parent.
    '''

    def __init__(self, dim, state_dim, up_factor, radius, rng, order='morton'):
        '''Initialize refine-and-upsample unit.

        Args:
            dim (int): Feature width
            state_dim (int): State size of the state-space block
            up_factor (int): Replicas per point, a power of two >= 2
            radius (float): Maximum replica displacement
            rng (numpy.random.Generator): Initialization source
            order (str): Serialization order, defaults to 'morton'

        Raises:
            ConfigError: Invalid factor or radius
        '''
        if up_factor < 2 or up_factor & (up_factor - 1):
            raise ConfigError('Upsampling factor must be a power of two >= 2, got ' + str(up_factor))
        if radius <= 0:
            raise ConfigError('Offset radius must be positive, got ' + str(radius))

        self.mlp = MLP([dim, dim, dim], rng)
        self.ssm = SsmBlock(dim, state_dim, rng)
        self.offset = Linear(dim, 3 * up_factor, rng)
        self._up_factor = up_factor
        self._radius = radius
        self._order = order

    @property
    def up_factor(self):
        return self._up_factor

    @property
    def radius(self):
        return self._radius

    def forward(self, fused, parents=None):
        '''Refine and upsample.

        Args:
            fused (FeatureSet): Fused features on the parent points
            parents (Tensor): Parent coordinates [N, 3] to differentiate through, defaults to the anchors of *fused*

        Returns:
            tuple: (points Tensor [N * up_factor, 3], features Tensor [N * up_factor, D] repeating each parent row)
        '''
        count = len(fused)
        factor = self._up_factor

        if parents is None:
            parents = Tensor(fused.coords.points)

        order = serialize_points(_serialization_points(fused.coords.points), self._order)
        slots = np.empty(count, dtype=np.int64)
        slots[order] = np.arange(count)

        hidden = self.mlp(fused.features)
        hidden = self.ssm(hidden.take(order, axis=0)).take(slots, axis=0)

        offsets = tensor.tanh(self.offset(hidden)) * (self._radius / math.sqrt(3.0))
        points = parents.reshape(count, 1, 3) + offsets.reshape(count, factor, 3)
        repeat = np.repeat(np.arange(count), factor)
        return points.reshape(count * factor, 3), hidden.take(repeat, axis=0)


def mamba_forward(fused, block, parents=None):
    '''Run a *MambaForward* block and return the upsampled cloud as a PointCloud.'''
    points, _ = block(fused, parents)
    return PointCloud(points.data, label=fused.coords.label, source='refined')
