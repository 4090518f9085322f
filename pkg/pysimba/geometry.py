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

'''Point cloud containers, sampling, transformation fields, and point cloud file I/O.

Point coordinates are float64 arrays of shape [N, 3]. Clouds carry a *Source* tag recording where they came from in the completion pipeline (partial input, ground truth, keypoints, symmetric keypoints, coarse, refined).

Supported file formats:
- XYZ: one "x y z" triple per line, blank lines and lines starting with '#' are skipped
- PLY: ASCII vertex-only PLY, extra vertex properties and trailing elements are ignored on read

Writers emit 9 significant digits.

Typical usage example:

    ```
    cloud = read_point_cloud('chair.ply')
    normalized, centroid, scale = normalize(cloud)
    keypoints = farthest_point_sample(normalized, 128)
    symmetric = apply_transform_field(keypoints, TransformField.identity(128))
    ```
'''

__docformat__ = 'google'


import os
import enum
import logging

import numpy as np
from scipy import spatial

from pysimba import tensor
from pysimba.errors import CardinalityError, ContractError, DimensionError, NumericError, PointCloudFormatError


UNIT_BOUND = 0.5
'''float: Half-width of the normalized unit cube'''
BOUND_TOLERANCE = 1e-9
BRUTE_FORCE_LIMIT = 1 << 22
'''int: Largest |p|*|q| pair count searched by brute force, larger searches use a k-d tree'''

log = logging.getLogger(__name__)


class Source(enum.Enum):
    '''Provenance of a point cloud within the pipeline.'''
    PARTIAL_INPUT = 'partial_input'
    GROUND_TRUTH = 'ground_truth'
    KEYPOINTS = 'keypoints'
    SYMMETRIC = 'symmetric'
    COARSE = 'coarse'
    REFINED = 'refined'


class PointCloud:
    '''Ordered set of 3D points with provenance metadata.

    Attributes:
        points (numpy.ndarray): Coordinates, shape [N, 3]
        label (str): Optional category tag
        source (Source): Provenance tag
        normalized (bool): Whether the points are in normalized model units
    '''

    def __init__(self, points, label=None, source=Source.PARTIAL_INPUT, normalized=False):
        '''Initialize point cloud.

        Args:
            points (array_like): Coordinates, shape [N, 3], copied as float64
            label (str): Category tag, defaults to None
            source (Source): Provenance tag, defaults to Source.PARTIAL_INPUT
            normalized (bool): Check that all points lie in the unit cube centered at the origin, defaults to False

        Raises:
            DimensionError: Points are not shaped [N, 3]
            CardinalityError: Cloud is empty
            NumericError: Non-finite coordinate
            ContractError: Normalized cloud leaves the unit cube
        '''
        points = np.array(points, dtype=np.float64)

        if points.ndim != 2 or points.shape[1] != 3:
            if points.size == 0:
                raise CardinalityError('Point cloud is empty')
            raise DimensionError('Point cloud must be shaped [N, 3], got ' + str(points.shape))

        if points.shape[0] == 0:
            raise CardinalityError('Point cloud is empty')

        finite = np.isfinite(points)
        if not finite.all():
            raise NumericError('Non-finite coordinate at point ' + str(int(np.argwhere(~finite)[0][0])))

        if normalized and np.abs(points).max() > UNIT_BOUND + BOUND_TOLERANCE:
            raise ContractError('Normalized point cloud exceeds the unit cube, max |coordinate| = ' + str(np.abs(points).max()))

        self.points = points
        self.label = label
        self.source = Source(source)
        self.normalized = bool(normalized)

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return '<PointCloud n={} source={} label={}>'.format(len(self), self.source.value, self.label)

    def copy(self, points=None, source=None, normalized=None):
        '''Get a copy with optionally replaced fields.'''
        return PointCloud(
            self.points if points is None else points,
            label = self.label,
            source = self.source if source is None else source,
            normalized = self.normalized if normalized is None else normalized
        )

    def subset(self, indices, source=None):
        '''Get the points at *indices*, in that order.'''
        return self.copy(points=self.points[np.asarray(indices, dtype=np.int64)], source=source)

    def in_unit_cube(self):
        '''Whether every coordinate lies within the normalized unit cube.'''
        return bool(np.abs(self.points).max() <= UNIT_BOUND + BOUND_TOLERANCE)


class TransformField:
    '''Per-keypoint affine transformations, one 3x3 matrix and one translation per keypoint.

    The flattened layout of one entry is the 9 affine values in row-major order followed by the 3 translation values.
    '''

    def __init__(self, affine, translation):
        '''Initialize transformation field.

        Args:
            affine (array_like): Matrices, shape [N, 3, 3]
            translation (array_like): Translations, shape [N, 3]

        Raises:
            DimensionError: Shapes are inconsistent
            NumericError: Non-finite value
        '''
        affine = np.array(affine, dtype=np.float64)
        translation = np.array(translation, dtype=np.float64)

        if affine.ndim != 3 or affine.shape[1:] != (3, 3) or translation.shape != (affine.shape[0], 3):
            raise DimensionError('Transform field shapes ' + str(affine.shape) + ' and ' + str(translation.shape) + ' are inconsistent')

        if not (np.isfinite(affine).all() and np.isfinite(translation).all()):
            raise NumericError('Non-finite transform field value')

        self.affine = affine
        '''numpy.ndarray: Affine matrices A_i, shape [N, 3, 3]'''
        self.translation = translation
        '''numpy.ndarray: Translations T_i, shape [N, 3]'''

    def __len__(self):
        return self.affine.shape[0]

    @staticmethod
    def identity(n):
        '''Get a field of *n* identity transformations.'''
        return TransformField(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)))

    @staticmethod
    def from_flat(flat):
        '''Build a field from flattened entries.

        Args:
            flat (array_like): Shape [N, 12]

        Returns:
            TransformField: Unflattened field

        Raises:
            DimensionError: Input is not shaped [N, 12]
        '''
        flat = np.asarray(flat, dtype=np.float64)

        if flat.ndim != 2 or flat.shape[1] != 12:
            raise DimensionError('Flattened transform field must be shaped [N, 12], got ' + str(flat.shape))

        return TransformField(flat[:, :9].reshape(-1, 3, 3), flat[:, 9:])

    def flatten(self):
        '''Get the flattened field, shape [N, 12].'''
        return np.concatenate([self.affine.reshape(-1, 9), self.translation], axis=1)


def farthest_point_indices(points, n, seed_index=0):
    '''Greedy max-min subset selection.

    Each step selects the point with the largest squared distance to the already selected set. Ties go to the lowest index.

    Args:
        points (numpy.ndarray): Coordinates, shape [N, 3]
        n (int): Number of points to select
        seed_index (int): First selected point, defaults to 0

    Returns:
        numpy.ndarray: Selected indices in selection order

    Raises:
        CardinalityError: *n* exceeds the number of points
        ContractError: *seed_index* out of range
    '''
    count = points.shape[0]

    if n > count:
        raise CardinalityError('Cannot sample {} points from a cloud of {}'.format(n, count))
    if not 0 <= seed_index < count:
        raise ContractError('Seed index {} out of range for {} points'.format(seed_index, count))

    selected = np.empty(n, dtype=np.int64)
    distance = np.full(count, np.inf)
    current = seed_index

    for i in range(n):
        selected[i] = current
        delta = points - points[current]
        distance = np.minimum(distance, (delta * delta).sum(axis=1))
        distance[selected[:i + 1]] = -1.0
        current = int(np.argmax(distance))

    return selected


def farthest_point_sample(cloud, n, seed_index=0):
    '''Sample keypoints by farthest point sampling.

    Args:
        cloud (PointCloud): Input cloud
        n (int): Number of keypoints
        seed_index (int): First selected point, defaults to 0

    Returns:
        PointCloud: Keypoints in selection order, tagged Source.KEYPOINTS

    Raises:
        CardinalityError: *n* exceeds the cloud size
    '''
    indices = farthest_point_indices(cloud.points, n, seed_index)
    return cloud.subset(indices, source=Source.KEYPOINTS)


def apply_transform_field(keypoints, field):
    '''Map each keypoint through its own affine transformation, A_i p_i + T_i.

    Args:
        keypoints (PointCloud): Keypoints
        field (TransformField): One transformation per keypoint

    Returns:
        PointCloud: Transformed points tagged Source.SYMMETRIC

    Raises:
        CardinalityError: Keypoint and field entry counts differ
    '''
    if len(keypoints) != len(field):
        raise CardinalityError('{} keypoints but {} transform field entries'.format(len(keypoints), len(field)))

    points = np.einsum('nij,nj->ni', field.affine, keypoints.points) + field.translation
    return PointCloud(points, label=keypoints.label, source=Source.SYMMETRIC)


def transform_points_tensor(points, flat_field):
    '''Differentiable form of *apply_transform_field()*.

    Args:
        points (numpy.ndarray): Keypoint coordinates, shape [N, 3]
        flat_field (tensor.Tensor): Flattened field, shape [N, 12]

    Returns:
        tensor.Tensor: Transformed points, shape [N, 3]

    Raises:
        CardinalityError: Point and field counts differ
    '''
    if flat_field.shape != (points.shape[0], 12):
        raise CardinalityError('Field shape {} does not match {} points'.format(flat_field.shape, points.shape[0]))

    affine = flat_field[:, :9].reshape(points.shape[0], 3, 3)
    rotated = (affine * points[:, None, :]).sum(axis=-1)
    return rotated + flat_field[:, 9:]


def union(first, second, source=Source.COARSE):
    '''Concatenate two clouds, *first* then *second*.'''
    return PointCloud(np.concatenate([first.points, second.points], axis=0), label=first.label, source=source)


def normalize(cloud):
    '''Center a cloud at its centroid and scale it into the unit cube.

    Args:
        cloud (PointCloud): Input cloud

    Returns:
        tuple: (normalized PointCloud, centroid numpy.ndarray [3], scale float), where *points = (original - centroid) / scale*. A degenerate cloud whose points all coincide gets scale 1.
    '''
    centroid = cloud.points.mean(axis=0)
    centered = cloud.points - centroid
    extent = np.abs(centered).max()
    scale = 2.0 * extent if extent > 0 else 1.0
    points = np.clip(centered / scale, -UNIT_BOUND, UNIT_BOUND)
    return cloud.copy(points=points, normalized=True), centroid, float(scale)


def apply_normalization(cloud, centroid, scale):
    '''Map a cloud into the frame of another cloud's *normalize()* parameters.

    The result is not flagged normalized because it may leave the unit cube.
    '''
    return cloud.copy(points=(cloud.points - centroid) / scale, normalized=False)


def denormalize(cloud, centroid, scale):
    '''Invert *normalize()*.'''
    return cloud.copy(points=cloud.points * scale + centroid, normalized=False)


def mirror_x(cloud):
    '''Reflect a cloud about the x = 0 plane.'''
    points = cloud.points.copy()
    points[:, 0] = -points[:, 0]
    return cloud.copy(points=points)


def nearest_neighbors(p, q):
    '''Exact nearest neighbor in *q* for every point of *p*.

    Small searches are brute force in chunks, large ones use a k-d tree; both are exact.

    Args:
        p (numpy.ndarray): Query points, shape [N, 3]
        q (numpy.ndarray): Reference points, shape [M, 3]

    Returns:
        tuple: (squared distances [N], indices [N]); ties go to the lowest reference index in brute force mode
    '''
    if p.shape[0] * q.shape[0] > BRUTE_FORCE_LIMIT:
        distance, index = spatial.cKDTree(q).query(p, k=1)
        return distance * distance, index.astype(np.int64)

    squared = np.empty(p.shape[0])
    index = np.empty(p.shape[0], dtype=np.int64)
    chunk = max(1, BRUTE_FORCE_LIMIT // (8 * q.shape[0]))

    for start in range(0, p.shape[0], chunk):
        delta = p[start:start + chunk, None, :] - q[None, :, :]
        d2 = (delta * delta).sum(axis=-1)
        index[start:start + chunk] = np.argmin(d2, axis=1)
        squared[start:start + chunk] = d2[np.arange(d2.shape[0]), index[start:start + chunk]]

    return squared, index


def nearest_distances(p, q):
    '''Euclidean distance from every point of *p* to its nearest point in *q*.'''
    squared, _ = nearest_neighbors(p, q)
    return np.sqrt(squared)


def knn_indices(points, queries, k):
    '''Indices of the *k* nearest *points* to each query, nearest first.

    When the cloud has fewer than *k* points, the farthest found neighbor is repeated to fill *k* columns.

    Args:
        points (numpy.ndarray): Reference points, shape [N, 3]
        queries (numpy.ndarray): Query points, shape [M, 3]
        k (int): Neighbor count

    Returns:
        numpy.ndarray: Shape [M, k]
    '''
    if k < 1:
        raise ContractError('Neighbor count must be positive, got ' + str(k))

    available = min(k, points.shape[0])
    _, index = spatial.cKDTree(points).query(queries, k=available)
    index = np.asarray(index, dtype=np.int64).reshape(queries.shape[0], available)

    if available < k:
        index = np.concatenate([index, np.repeat(index[:, -1:], k - available, axis=1)], axis=1)

    return index


# file I/O

def _parse_triple(fields, path, line_number):
    if len(fields) < 3:
        raise PointCloudFormatError('expected 3 coordinates, got ' + str(len(fields)), path, line_number)

    try:
        return [float(value) for value in fields[:3]]
    except ValueError:
        raise PointCloudFormatError('invalid coordinate in \'' + ' '.join(fields) + '\'', path, line_number) from None


def _read_xyz(lines, path):
    points = []

    for line_number, line in enumerate(lines, start=1):
        line = line.strip()

        if not line or line.startswith('#'):
            continue

        fields = line.split()
        if len(fields) != 3:
            raise PointCloudFormatError('expected 3 coordinates, got ' + str(len(fields)), path, line_number)

        points.append(_parse_triple(fields, path, line_number))

    return points


def _read_ply(lines, path, comments):
    vertex_count = None
    properties = []
    in_vertex = False
    line_number = 0

    for line_number, line in enumerate(lines, start=1):
        fields = line.split()

        if fields and fields[0] == 'comment' and len(fields) >= 3:
            comments[fields[1]] = ' '.join(fields[2:])
            continue
        if not fields or fields[0] in ('ply', 'comment', 'obj_info'):
            continue
        if fields[0] == 'format':
            if len(fields) < 2 or fields[1] != 'ascii':
                raise PointCloudFormatError('only ASCII PLY is supported', path, line_number)
        elif fields[0] == 'element':
            in_vertex = len(fields) == 3 and fields[1] == 'vertex'
            if in_vertex:
                try:
                    vertex_count = int(fields[2])
                except ValueError:
                    raise PointCloudFormatError('invalid vertex count', path, line_number) from None
        elif fields[0] == 'property':
            if in_vertex:
                properties.append(fields[-1])
        elif fields[0] == 'end_header':
            break
        else:
            raise PointCloudFormatError('unexpected header line \'' + line.strip() + '\'', path, line_number)
    else:
        raise PointCloudFormatError('missing end_header', path, line_number)

    if vertex_count is None:
        raise PointCloudFormatError('missing vertex element', path, line_number)

    try:
        columns = [properties.index(axis) for axis in ('x', 'y', 'z')]
    except ValueError:
        raise PointCloudFormatError('vertex element lacks x, y, z properties', path, line_number) from None

    header_lines = line_number
    points = []

    for line_number, line in enumerate(lines[header_lines:header_lines + vertex_count], start=header_lines + 1):
        fields = line.split()

        if len(fields) != len(properties):
            raise PointCloudFormatError('expected {} vertex values, got {}'.format(len(properties), len(fields)), path, line_number)

        points.append(_parse_triple([fields[c] for c in columns], path, line_number))

    if len(points) != vertex_count:
        raise PointCloudFormatError('expected {} vertices, found {}'.format(vertex_count, len(points)), path, header_lines + len(points) + 1)

    return points


def read_point_cloud(path, source=Source.PARTIAL_INPUT, label=None):
    '''Read an XYZ or ASCII PLY point cloud file.

    The format is detected from the 'ply' magic line. A PLY 'comment label <name>' header line supplies the label when *label* is None.

    Args:
        path (str): File path
        source (Source): Provenance tag of the result, defaults to Source.PARTIAL_INPUT
        label (str): Category tag, defaults to None

    Returns:
        PointCloud: Cloud in file order

    Raises:
        PointCloudFormatError: Malformed file, message includes path and line number
        OSError: File cannot be read
    '''
    with open(path, 'r', encoding='utf-8') as fd:
        lines = fd.read().splitlines()

    comments = {}

    if lines and lines[0].strip() == 'ply':
        points = _read_ply(lines, path, comments)
    else:
        points = _read_xyz(lines, path)

    if not points:
        raise PointCloudFormatError('no points', path)

    try:
        return PointCloud(points, label=comments.get('label') if label is None else label, source=source)
    except NumericError as e:
        raise PointCloudFormatError(str(e), path) from e


def write_point_cloud(path, cloud, fmt=None, comments=None):
    '''Write a point cloud as XYZ or ASCII PLY with 9 significant digits.

    Args:
        path (str): File path
        cloud (PointCloud): Cloud to write
        fmt (str): 'ply' or 'xyz', defaults to the file extension ('.xyz' or '.txt' select XYZ, anything else PLY)
        comments (dict): Extra PLY header comments as name to value, defaults to None

    Returns:
        str: *path*
    '''
    if fmt is None:
        fmt = 'xyz' if os.path.splitext(str(path))[1].lower() in ('.xyz', '.txt') else 'ply'

    rows = '\n'.join('{:.9g} {:.9g} {:.9g}'.format(*point) for point in cloud.points.tolist())

    with open(path, 'w', encoding='utf-8', newline='\n') as fd:
        if fmt == 'ply':
            fd.write('ply\nformat ascii 1.0\n')
            fd.write('comment source ' + cloud.source.value + '\n')

            if cloud.label:
                fd.write('comment label ' + str(cloud.label) + '\n')

            for name, value in (comments or {}).items():
                fd.write('comment ' + name + ' ' + str(value) + '\n')

            fd.write('element vertex ' + str(len(cloud)) + '\n')
            fd.write('property double x\nproperty double y\nproperty double z\nend_header\n')
        elif fmt != 'xyz':
            raise ContractError('Unknown point cloud format \'' + str(fmt) + '\'')

        fd.write(rows + '\n')

    log.debug('Wrote %d points to %s', len(cloud), path)
    return path
