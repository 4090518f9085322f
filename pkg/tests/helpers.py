'''Small configurations and scratch directories shared by the test modules.'''

import shutil
import tempfile
import contextlib

import numpy as np

from pysimba.settings import PipelineConfig


def tiny_config(**changes):
    '''Configuration small enough to train in seconds on a laptop CPU.'''
    config = PipelineConfig().replace(
        n_keypoints = 16,
        feature_dim = 8,
        heads = 2,
        state_dim = 2,
        group_size = 4,
        timesteps = 10,
        sampler_steps = 5,
        proxy_timesteps = 3,
        epochs = 2,
        warmup_epochs = 1,
        batch_size = 2,
        n_shapes = 6,
        n_points = 512,
        radius = 0.2
    )
    return config.replace(**changes) if changes else config


@contextlib.contextmanager
def scratch_dir():
    path = tempfile.mkdtemp(prefix='pysimba-test-')

    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


def tiny_pairs(count=4, seed=0, n_points=512):
    '''(partial, complete) pairs generated in memory, half-space occluded at severity 0.5.'''
    from pysimba import synth

    rng = np.random.default_rng(seed)
    families = ('mirrored-composite', 'box', 'cylinder', 'asymmetric-composite')
    pairs = []

    for i in range(count):
        spec = synth.random_spec(families[i % len(families)], rng, n_points)
        complete = synth.generate_shape(spec)
        partial = synth.occlude(complete, synth.OcclusionSpec('half-space', 0.5, min_retained=16), seed=i)
        pairs.append((partial, complete))

    return pairs

def mirrored_pair(n_points=16, seed=0):
    '''(partial, complete) pair whose complete cloud is the partial plus its mirror image across x = 0.

    With *n_points* equal to the keypoint count every partial point is a keypoint, so a field that
    mirrors each keypoint drives the Chamfer losses to zero.
    '''
    from pysimba.geometry import PointCloud, Source

    rng = np.random.default_rng(seed)
    points = rng.uniform([0.1, -0.4, -0.4], [0.4, 0.4, 0.4], size=(n_points, 3))
    mirrored = points * np.array([-1.0, 1.0, 1.0])
    partial = PointCloud(points, source=Source.PARTIAL_INPUT)
    complete = PointCloud(np.concatenate([points, mirrored], axis=0), source=Source.GROUND_TRUTH)
    return partial, complete
