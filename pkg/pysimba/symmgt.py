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

'''Stage-1 symmetry teacher.

The teacher sees both the partial input and the complete ground truth. A single feature extractor encodes both clouds; keypoint features of the partial input cross-attend to the ground-truth anchor features, and a regression head outputs one 12-value transformation field entry per keypoint. The affine part of every entry is the identity plus the raw head output, and the head's last layer starts at zero, so an untrained teacher maps every keypoint onto itself.

Training minimizes the l1 Chamfer distance between the union of keypoints and transformed keypoints and the ground truth. Both clouds are normalized by the centroid and scale of the partial input.

Typical usage example:

    ```
    config = PipelineConfig()
    trainer = train_stage1(Dataset('data'), config, 'runs')
    model, _ = load_symmgt(trainer.checkpoint_path)
    keypoints, field = regress_target_field(model, partial, complete)
    ```
'''

__docformat__ = 'google'


import logging

import numpy as np

from pysimba import tensor
from pysimba.tensor import Tensor
from pysimba.blocks import Module, FeatureSet, MLP, CrossAttention, LayerNorm
from pysimba.geometry import (Source, TransformField, farthest_point_indices, knn_indices,
                              normalize, apply_normalization, transform_points_tensor)
from pysimba.metrics import chamfer_tensor
from pysimba.checkpoint import load_checkpoint
from pysimba.trainer import Trainer
from pysimba.errors import CardinalityError, CheckpointError, ConfigError, ContractError


PREFIX = 'symmgt/'
IDENTITY_FLAT = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
'''numpy.ndarray: Flattened identity field entry, row-major affine then translation'''
MODEL_FIELDS = ('n_keypoints', 'feature_dim', 'heads', 'group_size')
'''tuple: Config fields the teacher architecture depends on'''

log = logging.getLogger(__name__)


class FeatureExtractor(Module):
    '''Local grouping followed by self-attention over anchors.

    For every anchor the *k* nearest cloud points are expressed relative to the anchor, lifted by a shared MLP, and max-pooled. One residual self-attention block then mixes information across anchors.
    '''

    def __init__(self, dim, k, heads, rng):
        '''Initialize extractor.

        Args:
            dim (int): Feature width
            k (int): Neighbors per anchor
            heads (int): Attention heads
            rng (numpy.random.Generator): Initialization source
        '''
        if k < 1:
            raise ConfigError('Group size must be positive, got ' + str(k))

        self.group = MLP([3, dim, dim], rng)
        self.attention = CrossAttention(dim, heads, rng)
        self.norm = LayerNorm(dim)
        self._k = k

    def forward(self, cloud, n_keypoints=None, anchors=None):
        return self.extract(cloud, n_keypoints, anchors)

    def extract(self, cloud, n_keypoints=None, anchors=None):
        '''Encode a cloud at farthest-point anchors.

        Args:
            cloud (pysimba.geometry.PointCloud): Input cloud
            n_keypoints (int): Number of anchors selected by farthest point sampling from index 0
            anchors (pysimba.geometry.PointCloud): Explicit anchors, used instead of sampling when given

        Returns:
            FeatureSet: One feature row per anchor

        Raises:
            CardinalityError: Cloud has fewer than *n_keypoints* points
            ContractError: Neither *n_keypoints* nor *anchors* given
        '''
        if anchors is None:
            if n_keypoints is None:
                raise ContractError('Feature extraction needs a keypoint count or explicit anchors')
            if len(cloud) < n_keypoints:
                raise CardinalityError('Cloud of {} points cannot provide {} keypoints'.format(len(cloud), n_keypoints))

            anchors = cloud.subset(farthest_point_indices(cloud.points, n_keypoints), source=Source.KEYPOINTS)

        neighbors = knn_indices(cloud.points, anchors.points, self._k)
        relative = cloud.points[neighbors] - anchors.points[:, np.newaxis, :]
        local = self.group(Tensor(relative)).max(axis=1)
        attended, _ = self.attention.attend(local, local)
        return FeatureSet(self.norm(local + attended), anchors)


def extract_features(cloud, n_keypoints, extractor):
    '''Encode *cloud* at *n_keypoints* farthest-point anchors with *extractor*.'''
    return extractor.extract(cloud, n_keypoints)


def global_feature(feature_set):
    '''Mean-pooled and max-pooled features concatenated, shape [1, 2D].'''
    features = feature_set.features
    return tensor.concat([features.mean(axis=0).reshape(1, -1), features.max(axis=0).reshape(1, -1)], axis=1)


class SymmGtModel(Module):
    '''Stage-1 teacher network.

    The extractor is stored once and applied to both clouds.
    '''

    def __init__(self, config, rng=None):
        '''Initialize teacher.

        Args:
            config (pysimba.settings.PipelineConfig): Model configuration
            rng (numpy.random.Generator): Initialization source, defaults to one derived from *config.seed*
        '''
        rng = np.random.default_rng([config.seed, 1]) if rng is None else rng
        dim = config.feature_dim
        self.extractor = FeatureExtractor(dim, config.group_size, config.heads, rng)
        self.fusion = CrossAttention(dim, config.heads, rng)
        self.head = MLP([3 * dim, dim, 12], rng)
        self._n_keypoints = config.n_keypoints

        last = self.head.layers[-1]
        last.weight.data[:] = 0.0
        last.bias.data[:] = 0.0

    @property
    def n_keypoints(self):
        return self._n_keypoints

    def forward(self, p_in, p_gt):
        '''Regress a differentiable field.

        Args:
            p_in (pysimba.geometry.PointCloud): Normalized partial input
            p_gt (pysimba.geometry.PointCloud): Ground truth in the same frame

        Returns:
            tuple: (keypoints PointCloud, flattened field Tensor [N_k, 12])
        '''
        keypoint_features = self.extractor.extract(p_in, self._n_keypoints)
        gt_features = self.extractor.extract(p_gt, min(self._n_keypoints, len(p_gt)))
        attended, _ = self.fusion.attend(keypoint_features.features, gt_features.features)
        fused = keypoint_features.features + attended

        count = len(keypoint_features)
        pooled = global_feature(gt_features).take(np.zeros(count, dtype=np.int64), axis=0)
        raw = self.head(tensor.concat([fused, pooled], axis=1))
        return keypoint_features.coords, raw + IDENTITY_FLAT


def regress_target_field(model, p_in, p_gt):
    '''Teacher field for a (partial, complete) pair, without gradient recording.

    Args:
        model (SymmGtModel): Teacher
        p_in (pysimba.geometry.PointCloud): Normalized partial input
        p_gt (pysimba.geometry.PointCloud): Ground truth normalized with the same parameters

    Returns:
        tuple: (keypoints PointCloud, TransformField)
    '''
    with tensor.no_grad():
        keypoints, flat = model(p_in, p_gt)

    return keypoints, TransformField.from_flat(flat.data)


def stage1_loss(p_k, field, p_gt, kind='l1'):
    '''Chamfer distance from keypoints plus transformed keypoints to the ground truth.

    Args:
        p_k (pysimba.geometry.PointCloud): Keypoints
        field (Tensor): Flattened field, shape [N_k, 12]
        p_gt (pysimba.geometry.PointCloud): Ground truth
        kind (str): Chamfer kind, defaults to 'l1'

    Returns:
        Tensor: Scalar loss

    Raises:
        CardinalityError: Field entry count differs from the keypoint count
    '''
    field = tensor.as_tensor(field)

    if field.shape[0] != len(p_k):
        raise CardinalityError('{} field entries for {} keypoints'.format(field.shape[0], len(p_k)))

    symmetric = transform_points_tensor(p_k.points, field)
    # copies first, nearest-neighbor ties with their keypoint must go to the learnable copy
    union = tensor.concat([symmetric, Tensor(p_k.points)], axis=0)
    return chamfer_tensor(union, p_gt.points, kind)


def normalized_pairs(dataset, split='train'):
    '''Normalize (partial, complete) pairs by the partial input.

    Args:
        dataset (pysimba.synth.Dataset): Dataset, or a list of (partial, complete) PointCloud pairs
        split (str): Dataset split, ignored for lists, defaults to 'train'

    Returns:
        list: (normalized partial, complete in the same frame, centroid, scale) tuples

    Raises:
        ConfigError: No pairs
    '''
    if isinstance(dataset, (list, tuple)):
        pairs = list(dataset)
    else:
        pairs = [dataset.load(entry) for entry in dataset.entries(split)]

    if not pairs:
        raise ConfigError('No training pairs in split \'' + str(split) + '\'')

    items = []

    for partial, complete in pairs:
        p_in, centroid, scale = normalize(partial)
        items.append((p_in, apply_normalization(complete, centroid, scale), centroid, scale))

    return items


def train_stage1(dataset, config, out_dir, resume=None, epochs=None, progress=None):
    '''Train the teacher.

    Args:
        dataset (pysimba.synth.Dataset): Training data, or a list of (partial, complete) pairs
        config (pysimba.settings.PipelineConfig): Run configuration
        out_dir (str): Output directory for *stage1.ckpt* and *stage1-metrics.csv*
        resume (str): Epoch checkpoint to continue from, defaults to None
        epochs (int): Total epochs, replaces *config.epochs* so the learning rate schedule and the config hash follow it, defaults to None
        progress (func): Per-epoch callback *progress(epoch, loss, lr)*, defaults to None

    Returns:
        Trainer: Finished trainer, its *checkpoint_path* holds the result

    Raises:
        TrainingAborted: Non-finite loss
        CheckpointError: Unusable resume checkpoint
    '''
    if epochs is not None:
        config = config.replace(epochs=epochs)

    config.validate()
    items = normalized_pairs(dataset)
    model = SymmGtModel(config)
    log.info('Stage 1: %d pairs, %d parameters', len(items), model.parameter_count())

    def loss_fn(index, rng):
        p_in, p_gt, _, _ = items[index]
        keypoints, field = model(p_in, p_gt)
        return stage1_loss(keypoints, field, p_gt)

    trainer = Trainer('stage1', model, config, out_dir, len(items), loss_fn, prefix=PREFIX, metadata={'stage': 1})

    if resume:
        trainer.resume(resume)

    trainer.run(progress=progress)
    return trainer


def check_model_fields(stage1_config, config):
    '''Raise ConfigError when *config* disagrees with a teacher config on architecture fields.'''
    for name in MODEL_FIELDS:
        if getattr(stage1_config, name) != getattr(config, name):
            raise ConfigError('Stage-1 checkpoint has {} = {}, configuration has {}'.format(name, getattr(stage1_config, name), getattr(config, name)))


def load_symmgt(path, config=None):
    '''Load a teacher from a Stage-1 or Stage-2 checkpoint.

    Args:
        path (str): Checkpoint path
        config (pysimba.settings.PipelineConfig): When given, its architecture fields must match the checkpoint

    Returns:
        tuple: (SymmGtModel, pysimba.checkpoint.Checkpoint)

    Raises:
        CheckpointError: Unreadable checkpoint or missing teacher arrays
        ConfigError: Architecture mismatch with *config*
    '''
    ckpt = load_checkpoint(path)

    if config is not None:
        check_model_fields(ckpt.config, config)

    model = SymmGtModel(ckpt.config)
    model.load_arrays(ckpt.arrays, prefix=PREFIX)
    return model, ckpt


def teacher_arrays(ckpt):
    '''Teacher parameter arrays of a checkpoint, under their *symmgt/* names.

    Raises:
        CheckpointError: Checkpoint holds no teacher parameters
    '''
    arrays = {name: array for name, array in ckpt.arrays.items() if name.startswith(PREFIX)}

    if not arrays:
        raise CheckpointError(str(ckpt.path) + ' holds no Stage-1 parameters')

    return arrays
