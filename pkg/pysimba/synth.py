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

'''Procedural (partial, complete) point cloud pairs.

Shapes are triangle meshes sampled uniformly by area: each triangle receives a multinomial share of the points proportional to its area, and points are placed by uniform barycentric sampling. Every shape is normalized analytically by the bounding box of its mesh vertices, so the largest dimension spans [-0.5, 0.5].

Shape families:
- box: rectangular box, parameters sx, sy, sz
- cylinder: cylinder along y, parameters radius, height
- mirrored-composite: body box with one arm, folded to x >= 0 and mirrored, so the cloud is exactly symmetric about x = 0
- wing-profile: symmetric four-digit airfoil section extruded along x, parameters thickness, span
- asymmetric-composite: cube body with a single arm along +x, never symmetric about x = 0

Occlusion modes:
- half-space: remove all points beyond a plane, the plane offset chosen so the removed fraction matches the severity
- viewpoint: keep camera-facing points (surface normal towards the view direction) nearest to a camera at twice the view direction
- patch: remove the points nearest to a random surface point

Dataset layout:

    <root>/manifest.txt
    <root>/complete/<id>.ply
    <root>/partial/<id>.ply

The manifest starts with '#' comment lines, followed by one line per shape of tab-separated key=value fields: id, split, family, seed, n_points, params, occlusion, severity, direction, complete, partial. Paths are relative to the dataset root. Splits are assigned 8:1:1 to train, val, test by the SHA-1 of the shape id.

Typical usage example:

    ```
    manifest = build_dataset('data', n_shapes=100, families=FAMILIES, occlusion='half-space', severity=0.5, seed=0)
    dataset = Dataset('data')
    partial, complete = dataset.load(dataset.entries('train')[0])
    ```
'''

__docformat__ = 'google'


import os
import math
import hashlib
import logging
import concurrent.futures

import numpy as np
import psutil

from pysimba.geometry import PointCloud, Source, read_point_cloud, write_point_cloud
from pysimba.settings import FAMILIES, OCCLUSION_MODES
from pysimba.errors import ConfigError, ContractError


MIN_POINTS = 512
CYLINDER_SEGMENTS = 64
AIRFOIL_STATIONS = 32
MANIFEST_NAME = 'manifest.txt'
MANIFEST_FIELDS = ('id', 'split', 'family', 'seed', 'n_points', 'params', 'occlusion', 'severity', 'direction', 'complete', 'partial')
SPLITS = ('train',) * 8 + ('val', 'test')

PARAM_RANGES = {
    'box': (('sx', 0.4, 1.0), ('sy', 0.4, 1.0), ('sz', 0.4, 1.0)),
    'cylinder': (('radius', 0.15, 0.5), ('height', 0.3, 1.0)),
    'mirrored-composite': (('body_x', 0.3, 0.5), ('body_y', 0.2, 0.4), ('body_z', 0.3, 0.6),
                           ('arm_length', 0.2, 0.4), ('arm_y', 0.05, 0.1), ('arm_z', 0.1, 0.25),
                           ('arm_offset', -0.04, 0.04)),
    'wing-profile': (('thickness', 0.08, 0.2), ('span', 1.0, 2.0)),
    'asymmetric-composite': (('body', 0.25, 0.35), ('arm_length', 0.45, 0.65), ('arm_width', 0.12, 0.18)),
}
'''dict: Family to (name, low, high) parameter ranges'''

log = logging.getLogger(__name__)


class ShapeSpec:
    '''Procedural shape description.

    Attributes:
        family (str): Shape family, see *FAMILIES*
        params (tuple): Family parameters in *PARAM_RANGES* order
        n_points (int): Surface sample count
        seed (int): Sampling seed
    '''

    def __init__(self, family, params, n_points=4096, seed=0):
        '''Initialize shape spec.

        Raises:
            ConfigError: Unknown family, too few points, or parameter out of range
        '''
        if family not in FAMILIES:
            raise ConfigError('Unknown shape family \'' + str(family) + '\', expected one of ' + ', '.join(FAMILIES))
        if n_points < MIN_POINTS:
            raise ConfigError('Shapes need at least {} points, got {}'.format(MIN_POINTS, n_points))

        ranges = PARAM_RANGES[family]
        params = tuple(float(value) for value in params)

        if len(params) != len(ranges):
            raise ConfigError('{} takes {} parameters, got {}'.format(family, len(ranges), len(params)))

        for value, (name, low, high) in zip(params, ranges):
            if not low <= value <= high:
                raise ConfigError('{} parameter {} = {} outside [{}, {}]'.format(family, name, value, low, high))

        self.family = family
        self.params = params
        self.n_points = int(n_points)
        self.seed = int(seed)

    def __repr__(self):
        return '<ShapeSpec {} {} n={} seed={}>'.format(self.family, self.params, self.n_points, self.seed)


def random_spec(family, rng, n_points=4096):
    '''Draw a shape spec with uniformly random parameters and sampling seed.'''
    if family not in PARAM_RANGES:
        raise ConfigError('Unknown shape family \'' + str(family) + '\'')

    params = [rng.uniform(low, high) for _, low, high in PARAM_RANGES[family]]
    return ShapeSpec(family, params, n_points, int(rng.integers(0, 2**31 - 1)))


# meshes: triangles [F, 3, 3] with outward normals [F, 3]

def _rectangle(corner, edge1, edge2, normal):
    corner, edge1, edge2 = np.asarray(corner, float), np.asarray(edge1, float), np.asarray(edge2, float)
    triangles = [
        [corner, corner + edge1, corner + edge1 + edge2],
        [corner, corner + edge1 + edge2, corner + edge2],
    ]
    return triangles, [normal, normal]


def _box(low, high, skip=()):
    '''Triangles of an axis-aligned box; *skip* lists faces as (axis, side) with side 0 = low, 1 = high.'''
    low = np.asarray(low, float)
    high = np.asarray(high, float)
    size = high - low
    triangles = []
    normals = []

    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]

        for side in (0, 1):
            if (axis, side) in skip:
                continue

            corner = low.copy()
            corner[axis] = high[axis] if side else low[axis]
            edge1 = np.zeros(3)
            edge2 = np.zeros(3)
            edge1[u] = size[u]
            edge2[v] = size[v]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            tris, norms = _rectangle(corner, edge1, edge2, normal)
            triangles += tris
            normals += norms

    return triangles, normals


def _cylinder(radius, height):
    angles = np.linspace(0.0, 2.0 * math.pi, CYLINDER_SEGMENTS + 1)
    ring = np.stack([radius * np.cos(angles), np.zeros_like(angles), radius * np.sin(angles)], axis=1)
    ring[-1] = ring[0]
    bottom = ring + [0.0, -height / 2, 0.0]
    top = ring + [0.0, height / 2, 0.0]
    triangles = []
    normals = []

    for k in range(CYLINDER_SEGMENTS):
        middle = 0.5 * (angles[k] + angles[k + 1])
        side = np.array([math.cos(middle), 0.0, math.sin(middle)])
        triangles += [[bottom[k], bottom[k + 1], top[k + 1]], [bottom[k], top[k + 1], top[k]]]
        normals += [side, side]
        triangles.append([[0.0, height / 2, 0.0], top[k], top[k + 1]])
        normals.append(np.array([0.0, 1.0, 0.0]))
        triangles.append([[0.0, -height / 2, 0.0], bottom[k + 1], bottom[k]])
        normals.append(np.array([0.0, -1.0, 0.0]))

    return triangles, normals


def _airfoil_half_thickness(x, thickness):
    return 5.0 * thickness * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2 + 0.2843 * x**3 - 0.1036 * x**4)


def _wing(thickness, span):
    stations = 0.5 * (1.0 - np.cos(np.linspace(0.0, math.pi, AIRFOIL_STATIONS + 1)))
    half = _airfoil_half_thickness(stations, thickness)
    half[0] = half[-1] = 0.0
    z = stations - 0.5
    upper = np.stack([z, half], axis=1)
    lower = np.stack([z, -half], axis=1)
    triangles = []
    normals = []

    def point(x, zy):
        return np.array([x, zy[1], zy[0]])

    for surface, sign in ((upper, 1.0), (lower, -1.0)):
        for k in range(AIRFOIL_STATIONS):
            a = [point(-span / 2, surface[k]), point(span / 2, surface[k])]
            b = [point(-span / 2, surface[k + 1]), point(span / 2, surface[k + 1])]
            normal = np.cross(b[0] - a[0], [1.0, 0.0, 0.0])
            length = np.linalg.norm(normal)

            if length == 0:
                continue

            normal = normal / length
            if normal[1] * sign < 0:
                normal = -normal

            triangles += [[a[0], a[1], b[1]], [a[0], b[1], b[0]]]
            normals += [normal, normal]

    for x, sign in ((-span / 2, -1.0), (span / 2, 1.0)):
        for k in range(AIRFOIL_STATIONS):
            quad = [point(x, upper[k]), point(x, upper[k + 1]), point(x, lower[k + 1]), point(x, lower[k])]
            cap = np.array([sign, 0.0, 0.0])
            triangles += [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]]
            normals += [cap, cap]

    return triangles, normals


def _mirrored_half(body_x, body_y, body_z, arm_length, arm_y, arm_z, arm_offset):
    '''The x >= 0 half of the mirrored composite, without faces on the x = 0 plane.'''
    body = _box([0.0, -body_y / 2, -body_z / 2], [body_x / 2, body_y / 2, body_z / 2], skip=((0, 0),))
    arm = _box([body_x / 2, arm_offset - arm_y / 2, -arm_z / 2], [body_x / 2 + arm_length, arm_offset + arm_y / 2, arm_z / 2], skip=((0, 0),))
    return body[0] + arm[0], body[1] + arm[1]


def _asymmetric(body, arm_length, arm_width):
    cube = _box([-body / 2] * 3, [body / 2] * 3)
    arm = _box([body / 2, -arm_width / 2, -arm_width / 2], [body / 2 + arm_length, arm_width / 2, arm_width / 2], skip=((0, 0),))
    return cube[0] + arm[0], cube[1] + arm[1]


def triangle_areas(triangles):
    return 0.5 * np.linalg.norm(np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0]), axis=1)


def sample_mesh(triangles, normals, n, rng):
    '''Area-uniform surface samples.

    Args:
        triangles (numpy.ndarray): Shape [F, 3, 3]
        normals (numpy.ndarray): Shape [F, 3]
        n (int): Sample count
        rng (numpy.random.Generator): Random source

    Returns:
        tuple: (points [n, 3], normals [n, 3], triangle index [n])
    '''
    areas = triangle_areas(triangles)
    counts = rng.multinomial(n, areas / areas.sum())
    face = np.repeat(np.arange(len(triangles)), counts)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    weights = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    points = np.einsum('nk,nkd->nd', weights, triangles[face])
    return points, normals[face], face


def shape_mesh(spec):
    '''Triangle mesh of a shape before normalization.

    For the mirrored composite this is the x >= 0 half only.

    Returns:
        tuple: (triangles [F, 3, 3], normals [F, 3])
    '''
    builders = {
        'box': lambda sx, sy, sz: _box([-sx / 2, -sy / 2, -sz / 2], [sx / 2, sy / 2, sz / 2]),
        'cylinder': _cylinder,
        'mirrored-composite': _mirrored_half,
        'wing-profile': _wing,
        'asymmetric-composite': _asymmetric,
    }
    triangles, normals = builders[spec.family](*spec.params)
    return np.asarray(triangles, dtype=np.float64), np.asarray(normals, dtype=np.float64)


def generate_shape_with_normals(spec):
    '''Sample a normalized shape and its per-point surface normals.

    Args:
        spec (ShapeSpec): Shape description

    Returns:
        tuple: (PointCloud tagged ground truth, normals numpy.ndarray [n, 3])
    '''
    rng = np.random.default_rng(spec.seed)
    triangles, face_normals = shape_mesh(spec)

    if spec.family == 'mirrored-composite':
        half, half_normals, _ = sample_mesh(triangles, face_normals, spec.n_points // 2, rng)
        flip = np.array([-1.0, 1.0, 1.0])
        points = [half, half * flip]
        normals = [half_normals, half_normals * flip]

        if spec.n_points % 2:
            # one point on the symmetry plane, at the center of the body's top face
            points.append([[0.0, spec.params[1] / 2, 0.0]])
            normals.append([[0.0, 1.0, 0.0]])

        points = np.concatenate(points, axis=0)
        normals = np.concatenate(normals, axis=0)
        vertices = np.concatenate([triangles.reshape(-1, 3), triangles.reshape(-1, 3) * flip], axis=0)
    else:
        points, normals, _ = sample_mesh(triangles, face_normals, spec.n_points, rng)
        vertices = triangles.reshape(-1, 3)

    low = vertices.min(axis=0)
    high = vertices.max(axis=0)
    center = 0.5 * (low + high)
    scale = float((high - low).max())
    order = rng.permutation(points.shape[0])
    points = np.clip((points[order] - center) / scale, -0.5, 0.5)
    cloud = PointCloud(points, label=spec.family, source=Source.GROUND_TRUTH, normalized=True)
    return cloud, normals[order]


def generate_shape(spec):
    '''Sample a normalized shape.

    Args:
        spec (ShapeSpec): Shape description

    Returns:
        PointCloud: *spec.n_points* surface samples tagged ground truth, labeled with the family

    Raises:
        ConfigError: Invalid spec
    '''
    return generate_shape_with_normals(spec)[0]


class OcclusionSpec:
    '''Occlusion description.

    Attributes:
        mode (str): One of *OCCLUSION_MODES*
        severity (float): Fraction of points removed, 0 or within [0.25, 0.75]
        direction (numpy.ndarray): Unit cut normal or view direction, random per seed when None
        min_retained (int): Smallest allowed partial cloud
    '''

    def __init__(self, mode='half-space', severity=0.5, direction=None, min_retained=128):
        '''Initialize occlusion spec.

        Raises:
            ConfigError: Unknown mode, severity out of range, or zero direction
        '''
        if mode not in OCCLUSION_MODES:
            raise ConfigError('Unknown occlusion mode \'' + str(mode) + '\', expected one of ' + ', '.join(OCCLUSION_MODES))
        if severity != 0 and not 0.25 <= severity <= 0.75:
            raise ConfigError('Occlusion severity must be 0 or within [0.25, 0.75], got ' + str(severity))

        if direction is not None:
            direction = np.asarray(direction, dtype=np.float64)
            norm = np.linalg.norm(direction)

            if direction.shape != (3,) or norm == 0:
                raise ConfigError('Occlusion direction must be a nonzero 3-vector')

            direction = direction / norm

        self.mode = mode
        self.severity = float(severity)
        self.direction = direction
        self.min_retained = int(min_retained)


def random_direction(rng):
    '''Uniform random unit vector.'''
    while True:
        vector = rng.standard_normal(3)
        norm = np.linalg.norm(vector)

        if norm > 1e-12:
            return vector / norm


def occlude(cloud, spec, seed, normals=None):
    '''Remove part of a cloud.

    Args:
        cloud (PointCloud): Complete cloud
        spec (OcclusionSpec): Occlusion description
        seed (int): Seed for the random direction or patch center
        normals (numpy.ndarray): Per-point surface normals, required for the viewpoint mode

    Returns:
        PointCloud: Retained points in original order, tagged partial input

    Raises:
        ConfigError: Fewer than *spec.min_retained* points would remain
        ContractError: Viewpoint mode without normals
    '''
    if spec.severity == 0:
        return cloud.copy(source=Source.PARTIAL_INPUT)

    rng = np.random.default_rng(seed)
    direction = spec.direction if spec.direction is not None else random_direction(rng)
    count = len(cloud)
    target = int(round(count * (1.0 - spec.severity)))
    points = cloud.points

    if spec.mode == 'half-space':
        signed = points @ direction
        threshold = np.sort(signed)[target - 1]
        keep = signed <= threshold
    elif spec.mode == 'viewpoint':
        if normals is None:
            raise ContractError('Viewpoint occlusion requires surface normals')

        facing = np.flatnonzero(normals @ direction >= 0)
        camera = 2.0 * direction
        distance = np.linalg.norm(points[facing] - camera, axis=1)
        nearest = facing[np.argsort(distance, kind='stable')[:target]]
        keep = np.zeros(count, dtype=bool)
        keep[nearest] = True
    else:
        center = points[int(rng.integers(count))]
        distance = np.linalg.norm(points - center, axis=1)
        dropped = np.argsort(distance, kind='stable')[:count - target]
        keep = np.ones(count, dtype=bool)
        keep[dropped] = False

    retained = int(keep.sum())

    if retained < spec.min_retained:
        raise ConfigError('Occlusion leaves {} points, at least {} required'.format(retained, spec.min_retained))

    return cloud.copy(points=points[keep], source=Source.PARTIAL_INPUT)


def split_for(shape_id):
    '''Dataset split of a shape id, 8:1:1 train, val, test by SHA-1.'''
    digest = hashlib.sha1(shape_id.encode('utf-8')).digest()
    return SPLITS[int.from_bytes(digest[:8], 'big') % 10]


class ManifestEntry:
    '''One dataset record.

    Attributes:
        id (str): Shape id
        split (str): 'train', 'val', or 'test'
        family (str): Shape family
        fields (dict): All manifest fields as strings
        complete_path (str): Absolute path of the complete cloud
        partial_path (str): Absolute path of the partial cloud
    '''

    def __init__(self, fields, root):
        self.fields = fields
        self.id = fields['id']
        self.split = fields['split']
        self.family = fields['family']
        self.complete_path = os.path.join(root, fields['complete'])
        self.partial_path = os.path.join(root, fields['partial'])


def _format_vector(values):
    return ','.join('{:.9g}'.format(float(value)) for value in values)


def _build_one(root, index, family, occlusion, severity, seed, n_points, min_retained):
    rng = np.random.default_rng([seed, index])
    spec = random_spec(family, rng, n_points)
    cloud, normals = generate_shape_with_normals(spec)
    direction = random_direction(rng)
    occlusion_spec = OcclusionSpec(occlusion, severity, direction, min_retained)
    partial = occlude(cloud, occlusion_spec, int(rng.integers(0, 2**31 - 1)), normals)

    shape_id = 'shape-{:05d}'.format(index)
    complete_rel = os.path.join('complete', shape_id + '.ply')
    partial_rel = os.path.join('partial', shape_id + '.ply')
    write_point_cloud(os.path.join(root, complete_rel), cloud)
    write_point_cloud(os.path.join(root, partial_rel), partial)

    return {
        'id': shape_id,
        'split': split_for(shape_id),
        'family': family,
        'seed': str(spec.seed),
        'n_points': str(spec.n_points),
        'params': _format_vector(spec.params),
        'occlusion': occlusion,
        'severity': '{:.9g}'.format(severity),
        'direction': _format_vector(direction),
        'complete': complete_rel.replace(os.sep, '/'),
        'partial': partial_rel.replace(os.sep, '/'),
    }


def build_dataset(root, n_shapes, families=FAMILIES, occlusion='half-space', severity=0.5, seed=0, n_points=4096, workers=0, force=False, min_retained=128, comments=None):
    '''Generate (partial, complete) pairs and their manifest.

    Shape *i* uses family *families[i % len(families)]* and draws everything from *numpy.random.default_rng([seed, i])*, so the dataset is fully determined by the arguments.

    Args:
        root (str): Output directory
        n_shapes (int): Number of shapes
        families (tuple): Shape families cycled over, defaults to all
        occlusion (str): Occlusion mode, defaults to 'half-space'
        severity (float): Removed fraction, defaults to 0.5
        seed (int): Dataset seed, defaults to 0
        n_points (int): Points per complete cloud, defaults to 4096
        workers (int): Worker threads, defaults to the CPU count
        force (bool): Overwrite an existing dataset, defaults to False
        min_retained (int): Smallest allowed partial cloud, defaults to 128
        comments (dict): Extra manifest header comments as name to value, defaults to None

    Returns:
        str: Manifest path

    Raises:
        ConfigError: Invalid arguments
        FileExistsError: Dataset exists and *force* is False
        OSError: Files cannot be written
    '''
    if n_shapes < 1:
        raise ConfigError('Dataset needs at least one shape')
    if not families:
        raise ConfigError('Dataset needs at least one shape family')

    for family in families:
        if family not in FAMILIES:
            raise ConfigError('Unknown shape family \'' + str(family) + '\'')

    OcclusionSpec(occlusion, severity, min_retained=min_retained)
    manifest_path = os.path.join(root, MANIFEST_NAME)

    if os.path.exists(manifest_path) and not force:
        raise FileExistsError('Dataset already exists at ' + str(root) + ', use force to overwrite')

    os.makedirs(os.path.join(root, 'complete'), exist_ok=True)
    os.makedirs(os.path.join(root, 'partial'), exist_ok=True)

    workers = workers or psutil.cpu_count() or 1
    log.info('Generating %d shapes in %s with %d workers', n_shapes, root, workers)

    with concurrent.futures.ThreadPoolExecutor(max_workers = workers) as pool:
        futures = [pool.submit(_build_one, root, i, families[i % len(families)], occlusion, severity, seed, n_points, min_retained)
                   for i in range(n_shapes)]
        records = [future.result() for future in futures]

    with open(manifest_path, 'w', encoding='utf-8', newline='\n') as fd:
        fd.write('# pysimba dataset manifest v1\n')
        fd.write('# fields: ' + ' '.join(MANIFEST_FIELDS) + '\n')

        for name, value in (comments or {}).items():
            fd.write('# ' + name + ' ' + str(value) + '\n')

        for record in records:
            fd.write('\t'.join(key + '=' + record[key] for key in MANIFEST_FIELDS) + '\n')

    return manifest_path


def manifest_hash(path):
    '''SHA-256 hex digest of a manifest file.'''
    with open(path, 'rb') as fd:
        return hashlib.sha256(fd.read()).hexdigest()


class Dataset:
    '''Reader for a generated dataset directory.'''

    def __init__(self, root):
        '''Read the manifest of a dataset.

        Args:
            root (str): Dataset directory

        Raises:
            OSError: Manifest cannot be read
            ConfigError: Malformed manifest line
        '''
        self.root = root
        self.manifest_path = os.path.join(root, MANIFEST_NAME)
        self._entries = []

        with open(self.manifest_path, 'r', encoding='utf-8') as fd:
            for line_number, line in enumerate(fd, start=1):
                line = line.rstrip('\n')

                if not line or line.startswith('#'):
                    continue

                try:
                    fields = dict(field.split('=', 1) for field in line.split('\t'))
                except ValueError:
                    raise ConfigError('{}: line {}: malformed manifest record'.format(self.manifest_path, line_number)) from None

                missing = [key for key in MANIFEST_FIELDS if key not in fields]
                if missing:
                    raise ConfigError('{}: line {}: missing fields {}'.format(self.manifest_path, line_number, ', '.join(missing)))

                self._entries.append(ManifestEntry(fields, root))

    def __len__(self):
        return len(self._entries)

    def entries(self, split=None):
        '''Manifest entries in file order, optionally restricted to one split.'''
        return [entry for entry in self._entries if split is None or entry.split == split]

    def load(self, entry):
        '''Read a (partial, complete) pair.

        Returns:
            tuple: (partial PointCloud, complete PointCloud), labeled with the family
        '''
        partial = read_point_cloud(entry.partial_path, source=Source.PARTIAL_INPUT, label=entry.family)
        complete = read_point_cloud(entry.complete_path, source=Source.GROUND_TRUTH, label=entry.family)
        return partial, complete
