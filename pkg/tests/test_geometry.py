import os

import numpy as np

from pysimba import geometry, tensor
from pysimba.geometry import PointCloud, TransformField, Source
from pysimba.errors import CardinalityError, ContractError, DimensionError, NumericError, PointCloudFormatError

from gradcheck import check_gradients
from helpers import scratch_dir

NAME = 'Point Cloud Geometry'


def _cloud(n, seed, scale=1.0):
    return PointCloud(np.random.default_rng(seed).uniform(-scale, scale, size=(n, 3)))


def test_cloud_validation():
    for points, error in (([], CardinalityError),
                          (np.zeros((0, 3)), CardinalityError),
                          (np.zeros((4, 2)), DimensionError),
                          ([[0.0, float('inf'), 0.0]], NumericError)):
        try:
            PointCloud(points)
            raise AssertionError('Invalid cloud accepted: ' + str(points))
        except error:
            pass

    try:
        PointCloud([[0.0, 0.6, 0.0]], normalized=True)
        raise AssertionError('Normalized cloud outside the unit cube accepted')
    except ContractError:
        pass

def test_fps_oracle():
    points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    order = geometry.farthest_point_indices(points, 4)
    # 1 and 2 tie at squared distance 1 after three picks
    assert list(order) == [0, 4, 3, 1], 'Unexpected FPS order ' + str(list(order))

def test_fps_properties():
    cloud = _cloud(300, 1)
    keypoints = geometry.farthest_point_sample(cloud, 32)

    assert len(keypoints) == 32
    assert keypoints.source == Source.KEYPOINTS
    assert len(np.unique(keypoints.points, axis=0)) == 32, 'FPS selected a point twice'
    assert np.array_equal(keypoints.points, geometry.farthest_point_sample(cloud, 32).points), 'FPS is not deterministic'
    assert len(geometry.farthest_point_sample(cloud, 300)) == 300

    try:
        geometry.farthest_point_sample(cloud, 301)
        raise AssertionError('Oversampling accepted')
    except CardinalityError:
        pass

def test_transform_field_identity_and_mirror():
    keypoints = _cloud(10, 2)
    same = geometry.apply_transform_field(keypoints, TransformField.identity(10))
    assert np.allclose(same.points, keypoints.points)
    assert same.source == Source.SYMMETRIC

    reflect = np.tile(np.diag([-1.0, 1.0, 1.0]), (10, 1, 1))
    mirrored = geometry.apply_transform_field(keypoints, TransformField(reflect, np.zeros((10, 3))))
    assert np.allclose(mirrored.points, geometry.mirror_x(keypoints).points)

    try:
        geometry.apply_transform_field(keypoints, TransformField.identity(9))
        raise AssertionError('Mismatched field accepted')
    except CardinalityError:
        pass

def test_transform_field_flat_layout():
    flat = np.arange(24.0).reshape(2, 12)
    field = TransformField.from_flat(flat)
    assert np.array_equal(field.affine[1], np.arange(12.0, 21.0).reshape(3, 3)), 'Affine should be row-major first nine values'
    assert np.array_equal(field.translation[0], [9.0, 10.0, 11.0])
    assert np.array_equal(field.flatten(), flat)

    try:
        TransformField.from_flat(np.zeros((2, 9)))
        raise AssertionError('Short flat field accepted')
    except DimensionError:
        pass

def test_transform_points_tensor():
    points = _cloud(5, 3).points
    flat = tensor.Tensor(np.random.default_rng(4).normal(size=(5, 12)), requires_grad=True)
    expected = geometry.apply_transform_field(PointCloud(points), TransformField.from_flat(flat.data)).points
    assert np.allclose(geometry.transform_points_tensor(points, flat).data, expected)
    check_gradients(lambda: (geometry.transform_points_tensor(points, flat) ** 2).sum(), {'flat': flat})

def test_normalize_round_trip():
    cloud = PointCloud(np.random.default_rng(5).uniform(3, 9, size=(200, 3)))
    normalized, centroid, scale = geometry.normalize(cloud)

    assert normalized.normalized and normalized.in_unit_cube()
    assert np.isclose(np.abs(normalized.points).max(), 0.5), 'Largest coordinate should touch the cube boundary'
    assert np.allclose(normalized.points.mean(axis=0), 0.0)
    assert np.allclose(geometry.denormalize(normalized, centroid, scale).points, cloud.points)
    assert np.allclose(geometry.apply_normalization(cloud, centroid, scale).points, normalized.points)

    single, _, scale = geometry.normalize(PointCloud([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
    assert scale == 1.0 and np.allclose(single.points, 0.0), 'Degenerate cloud should get unit scale'

def test_nearest_neighbors_modes():
    p = _cloud(400, 6).points
    q = _cloud(300, 7).points
    expected = ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=-1)

    squared, index = geometry.nearest_neighbors(p, q)
    assert np.allclose(squared, expected.min(axis=1))
    assert np.array_equal(index, expected.argmin(axis=1))

    limit = geometry.BRUTE_FORCE_LIMIT
    geometry.BRUTE_FORCE_LIMIT = 10
    try:
        tree_squared, _ = geometry.nearest_neighbors(p, q)
    finally:
        geometry.BRUTE_FORCE_LIMIT = limit

    assert np.allclose(tree_squared, squared), 'k-d tree and brute force disagree'

def test_knn_indices():
    points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    index = geometry.knn_indices(points, np.array([[0.1, 0.0, 0.0]]), 5)
    assert index.shape == (1, 5)
    assert list(index[0]) == [0, 1, 2, 2, 2], 'Short neighborhoods should repeat the farthest neighbor'

def test_union_and_mirror():
    a = _cloud(4, 8)
    b = geometry.mirror_x(a)
    merged = geometry.union(a, b)
    assert len(merged) == 8 and merged.source == Source.COARSE
    assert np.allclose(merged.points[4:, 0], -a.points[:, 0])
    assert np.allclose(merged.points[:4], a.points)

def test_read_write_files():
    cloud = PointCloud(np.random.default_rng(9).normal(size=(20, 3)), label='box', source=Source.REFINED)

    with scratch_dir() as folder:
        ply = geometry.write_point_cloud(os.path.join(folder, 'a.ply'), cloud, comments={'config_hash': 'abc'})
        xyz = geometry.write_point_cloud(os.path.join(folder, 'a.xyz'), cloud)

        from_ply = geometry.read_point_cloud(ply)
        from_xyz = geometry.read_point_cloud(xyz, label='other')

        with open(ply, 'r', encoding='utf-8') as fd:
            header = fd.read()

    assert from_ply.label == 'box', 'PLY label comment not read back'
    assert from_xyz.label == 'other'
    assert np.allclose(from_ply.points, cloud.points, rtol=1e-8, atol=1e-12)
    assert np.allclose(from_xyz.points, cloud.points, rtol=1e-8, atol=1e-12)
    assert 'comment config_hash abc' in header
    assert 'comment source refined' in header

def test_malformed_files():
    cases = {
        'short.xyz': ('1 2\n', 1),
        'text.xyz': ('1 2 3\n4 five 6\n', 2),
        'truncated.ply': ('ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n', 10),
        'binary.ply': ('ply\nformat binary_little_endian 1.0\nend_header\n', 2),
        'empty.xyz': ('# nothing\n', None),
    }

    with scratch_dir() as folder:
        for name, (text, line) in cases.items():
            path = os.path.join(folder, name)
            with open(path, 'w', encoding='utf-8') as fd:
                fd.write(text)

            try:
                geometry.read_point_cloud(path)
                raise AssertionError('Malformed file accepted: ' + name)
            except PointCloudFormatError as e:
                assert e.line == line, 'Wrong line for {}: {}'.format(name, e.line)
                assert name in str(e), 'Error message should name the file'


TESTS = [
    test_cloud_validation,
    test_fps_oracle,
    test_fps_properties,
    test_transform_field_identity_and_mirror,
    test_transform_field_flat_layout,
    test_transform_points_tensor,
    test_normalize_round_trip,
    test_nearest_neighbors_modes,
    test_knn_indices,
    test_union_and_mirror,
    test_read_write_files,
    test_malformed_files
]

def run():
    for test in TESTS:
        test()
        print('\t' + test.__name__ + ' passed')

    return True
