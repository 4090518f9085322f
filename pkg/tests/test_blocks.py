import numpy as np

from pysimba import blocks, tensor
from pysimba.tensor import Tensor
from pysimba.geometry import PointCloud
from pysimba.blocks import FeatureSet
from pysimba.errors import CardinalityError, CheckpointError, ConfigError, ContractError

from gradcheck import check_gradients

NAME = 'Network Blocks'


def _features(n, dim, seed, scale=0.4):
    rng = np.random.default_rng(seed)
    return FeatureSet(Tensor(rng.normal(size=(n, dim))), PointCloud(rng.uniform(-scale, scale, size=(n, 3))))

def _softplus(x):
    return np.logaddexp(0.0, x)


def test_linear_and_mlp_shapes():
    rng = np.random.default_rng(0)
    linear = blocks.Linear(4, 3, rng)
    assert linear(Tensor(np.ones((5, 4)))).shape == (5, 3)
    assert linear(Tensor(np.ones((2, 5, 4)))).shape == (2, 5, 3)
    assert np.array_equal(linear.bias.data, np.zeros(3)), 'Biases should start at zero'
    assert np.abs(linear.weight.data).max() <= np.sqrt(6.0 / 7.0)

    mlp = blocks.MLP([3, 8, 2], rng)
    assert mlp(Tensor(np.ones((6, 3)))).shape == (6, 2)

    for widths in ([3], [3, 0, 2]):
        try:
            blocks.MLP(widths, rng)
            raise AssertionError('Invalid MLP widths accepted: ' + str(widths))
        except ConfigError:
            pass

def test_layer_norm():
    x = Tensor(np.random.default_rng(1).normal(3.0, 5.0, size=(4, 16)))
    y = blocks.LayerNorm(16)(x).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)

def test_module_parameter_manifest():
    mlp = blocks.MLP([3, 4, 2], np.random.default_rng(2))
    names = [name for name, _ in mlp.named_parameters('m/')]
    assert names == ['m/layers.0.weight', 'm/layers.0.bias', 'm/layers.1.weight', 'm/layers.1.bias']
    assert mlp.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2

    other = blocks.MLP([3, 4, 2], np.random.default_rng(3))
    other.load_arrays(mlp.arrays('m/'), 'm/')
    assert all(np.array_equal(a, b) for a, b in zip(mlp.arrays().values(), other.arrays().values()))

    arrays = mlp.arrays()
    arrays['layers.0.weight'] = np.zeros((4, 4))
    for broken in ({}, arrays):
        try:
            other.load_arrays(broken)
            raise AssertionError('Incompatible arrays accepted')
        except CheckpointError:
            pass

def test_cross_attention():
    rng = np.random.default_rng(4)
    block = blocks.CrossAttention(8, 2, rng)
    query = _features(5, 8, 5)
    guide = _features(7, 8, 6)

    out, weights = block.attend(query.features, guide.features)
    assert out.shape == (5, 8)
    assert weights.shape == (2, 5, 7)
    assert np.allclose(weights.sum(axis=-1), 1.0), 'Attention weights should sum to one per query'

    shuffled = guide.features.take(np.random.default_rng(7).permutation(7), axis=0)
    assert np.allclose(block.attend(query.features, shuffled)[0].data, out.data), 'Output should not depend on guide order'

    result = block(query, guide)
    assert result.coords is query.coords

    try:
        blocks.CrossAttention(8, 3, rng)
        raise AssertionError('Indivisible head count accepted')
    except ConfigError:
        pass

def test_cross_attention_composed_form():
    rng = np.random.default_rng(24)
    block = blocks.CrossAttention(4, 2, rng)
    query = _features(3, 4, 25)
    guide = _features(6, 4, 26)

    def project(layer, x):
        return x @ layer.weight.data + layer.bias.data

    q = project(block.query, query.features.data)
    k = project(block.key, guide.features.data)
    v = project(block.value, guide.features.data)
    mixed = np.zeros((3, 4))

    for head in (slice(0, 2), slice(2, 4)):
        scores = q[:, head] @ k[:, head].T / np.sqrt(2.0)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        mixed[:, head] = (weights / weights.sum(axis=1, keepdims=True)) @ v[:, head]

    expected = project(block.output, mixed)
    assert np.allclose(blocks.cross_attention(query, guide, block).features.data, expected, atol=1e-12)

    # a single guide row takes all the weight, leaving the value and output projections
    single = FeatureSet(guide.features.take(np.array([0]), axis=0), guide.coords.subset(np.array([0])))
    out = blocks.cross_attention(query, single, block).features.data
    assert np.allclose(out, np.tile(project(block.output, v[:1]), (3, 1)), atol=1e-12)

def test_cross_attention_gradient():
    rng = np.random.default_rng(8)
    block = blocks.CrossAttention(4, 2, rng)
    query = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    guide = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    params = {'query': query, 'guide': guide, 'wq': block.query.weight, 'wv': block.value.weight}
    check_gradients(lambda: (block.attend(query, guide)[0] ** 2).sum(), params)

def test_feature_set_cardinality():
    try:
        FeatureSet(Tensor(np.ones((4, 2))), PointCloud(np.zeros((5, 3))))
        raise AssertionError('Mismatched feature rows accepted')
    except CardinalityError:
        pass

def test_morton_codes():
    assert blocks._part1by2(np.array([1]))[0] == 1
    assert blocks._part1by2(np.array([2]))[0] == 8
    assert blocks._part1by2(np.array([3]))[0] == 9

    # centers of grid cells (1, 0, 0), (0, 1, 0), (0, 0, 1) and (1, 1, 1)
    cell = 1.0 / (1 << blocks.MORTON_BITS)
    low = -0.5 + 0.5 * cell
    points = np.array([[low + cell, low, low], [low, low + cell, low], [low, low, low + cell], [low + cell, low + cell, low + cell]])
    assert list(blocks.morton_codes(points)) == [4, 2, 1, 7]
    assert list(blocks.serialize_points(points)) == [2, 1, 0, 3]

def test_serialization_orders():
    points = np.array([[0.1, 0.0, 0.0], [-0.1, 0.2, 0.0], [-0.1, 0.1, 0.3], [0.1, 0.0, 0.0]])
    assert list(blocks.serialize_points(points, 'axis')) == [2, 1, 0, 3], 'Ties should keep the original order'

    order = blocks.serialize_points(PointCloud(np.random.default_rng(9).uniform(-0.5, 0.5, size=(50, 3))))
    assert sorted(order) == list(range(50))

    for args in ((np.array([[0.6, 0.0, 0.0]]),), (points, 'hilbert')):
        try:
            blocks.serialize_points(*args)
            raise AssertionError('Invalid serialization accepted')
        except ContractError:
            pass

def test_ssm_scan_matches_recurrence():
    rng = np.random.default_rng(10)
    block = blocks.SsmBlock(3, 2, rng)
    u = rng.normal(size=(9, 3))

    step = _softplus(u @ block.delta.weight.data + block.delta.bias.data)
    decay = -np.exp(block.a_log.data)
    b_proj = u @ block.proj_b.weight.data
    c_proj = u @ block.proj_c.weight.data
    h = np.zeros((3, 2))
    expected = np.zeros_like(u)

    for t in range(u.shape[0]):
        h = np.exp(step[t][:, None] * decay) * h + step[t][:, None] * b_proj[t][None, :] * u[t][:, None]
        expected[t] = (h * c_proj[t][None, :]).sum(axis=-1) + block.skip.data * u[t]

    assert np.allclose(block.scan(Tensor(u)).data, expected, atol=1e-12), 'Parallel scan differs from the recurrence'

    initial_steps = _softplus(block.delta.bias.data)
    assert (initial_steps >= 1e-3 - 1e-12).all() and (initial_steps <= 1e-1 + 1e-12).all()

def test_ssm_gradient():
    rng = np.random.default_rng(11)
    block = blocks.SsmBlock(2, 2, rng)
    x = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    params = {'x': x, 'a_log': block.a_log, 'delta': block.delta.weight, 'proj_b': block.proj_b.weight, 'skip': block.skip}
    check_gradients(lambda: (block(x) ** 2).sum(), params)

def test_interleave_slots():
    base, guide = blocks.interleave_slots(3, 5)
    assert list(base) == [0, 2, 4]
    assert list(guide) == [1, 3, 5, 6, 7]

    base, guide = blocks.interleave_slots(4, 1)
    assert list(base) == [0, 2, 3, 4] and list(guide) == [1]

def test_fusion_blocks():
    rng = np.random.default_rng(12)
    base = _features(10, 4, 13)
    keypoints = _features(6, 4, 14)
    symmetric = _features(6, 4, 15)

    for kind in ('CA', 'MFusion', 'MLP'):
        block = blocks.make_fusion(kind, 4, 2, 2, rng)
        fused = block(base, keypoints, symmetric)
        assert fused.features.shape == (10, 4), kind + ' changed the row count'
        assert fused.coords is base.coords

    mca = blocks.McaFusion(4, 2, rng)
    attended = mca.attention(base, keypoints).features
    expected = mca.psi(tensor.concat([attended, attended], axis=1)).data
    assert np.allclose(blocks.mca_fusion(base, keypoints, keypoints, mca).features.data, expected, atol=1e-12)

    mamba = blocks.MambaFusion(4, 2, rng)
    assert mamba.mix(base).shape == (10, 4)
    assert blocks.mamba_fusion(base, keypoints, mamba).features.shape == (10, 4)

    try:
        blocks.make_fusion('GRU', 4, 2, 2, rng)
        raise AssertionError('Unknown fusion kind accepted')
    except ConfigError:
        pass

def test_mamba_fusion_row_order():
    # permuting base rows permutes the fused rows the same way
    rng = np.random.default_rng(16)
    block = blocks.MambaFusion(4, 2, rng)
    base = _features(8, 4, 17)
    guide = _features(5, 4, 18)
    perm = np.random.default_rng(19).permutation(8)
    permuted = FeatureSet(base.features.take(perm, axis=0), base.coords.subset(perm))

    assert np.allclose(block.mix(permuted, guide).data, block.mix(base, guide).data[perm], atol=1e-12)

def test_mamba_forward_upsampling():
    rng = np.random.default_rng(20)
    block = blocks.MambaForward(4, 2, 4, 0.05, rng)
    fused = _features(6, 4, 21)
    parents = Tensor(fused.coords.points, requires_grad=True)

    points, features = block(fused, parents)
    assert points.shape == (24, 3) and features.shape == (24, 4)

    offsets = points.data.reshape(6, 4, 3) - fused.coords.points[:, None, :]
    assert np.sqrt((offsets ** 2).sum(axis=-1)).max() <= 0.05 + 1e-12, 'Replica moved beyond the radius'
    assert np.array_equal(features.data[0], features.data[3])

    tensor.backward(points.sum())
    assert np.allclose(parents.grad, 4.0), 'Each parent should receive the gradient of its replicas'

    for factor, radius in ((3, 0.1), (1, 0.1), (2, 0.0)):
        try:
            blocks.MambaForward(4, 2, factor, radius, rng)
            raise AssertionError('Invalid upsampling accepted')
        except ConfigError:
            pass

def test_mlp_gradient():
    rng = np.random.default_rng(22)
    mlp = blocks.MLP([3, 4, 2], rng)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    params = {'x': x, 'w0': mlp.layers[0].weight, 'b0': mlp.layers[0].bias, 'w1': mlp.layers[1].weight}
    check_gradients(lambda: (mlp(x) ** 2).sum(), params)

def test_mamba_forward_gradient():
    rng = np.random.default_rng(23)
    block = blocks.MambaForward(3, 2, 2, 0.1, rng)
    coords = PointCloud(rng.uniform(-0.4, 0.4, size=(5, 3)))
    features = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    parents = Tensor(coords.points, requires_grad=True)
    target = rng.normal(size=(10, 3))

    def loss():
        points, hidden = block(FeatureSet(features, coords), parents)
        return ((points - target) ** 2).sum() + (hidden ** 2).sum()

    params = {'features': features, 'parents': parents, 'offset': block.offset.weight, 'mlp': block.mlp.layers[0].weight, 'a_log': block.ssm.a_log}
    check_gradients(loss, params)


TESTS = [
    test_linear_and_mlp_shapes,
    test_layer_norm,
    test_module_parameter_manifest,
    test_cross_attention,
    test_cross_attention_composed_form,
    test_cross_attention_gradient,
    test_feature_set_cardinality,
    test_morton_codes,
    test_serialization_orders,
    test_ssm_scan_matches_recurrence,
    test_ssm_gradient,
    test_interleave_slots,
    test_fusion_blocks,
    test_mamba_fusion_row_order,
    test_mamba_forward_upsampling,
    test_mlp_gradient,
    test_mamba_forward_gradient
]

def run():
    for test in TESTS:
        tensor.get_tape().clear()
        test()
        print('\t' + test.__name__ + ' passed')

    return True
