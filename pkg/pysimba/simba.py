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

'''Stage-2 completion pipeline.

A completion runs in three steps, all in the frame normalized by the partial input:

1. Farthest point sampling picks N_k keypoints of the partial input and the extractor encodes them as condition features.
2. The predictor produces a transformation field for the keypoints, either by diffusion sampling from Gaussian noise or by direct regression. The transformed keypoints are the symmetric points; keypoints and symmetric points together form the coarse cloud of 2 N_k points.
3. The refiner runs a cascade of blocks. Each block fuses keypoint and symmetric-point guidance into the features of the current cloud, then refines and upsamples it. With the default schedule the cloud grows 2N_k -> 4N_k -> 8N_k -> 32N_k.

Training keeps the Stage-1 teacher frozen. The teacher field of every training pair is computed once before the first epoch and serves as the clean diffusion target. The loss is the proxy loss of the predictor plus the Chamfer distance of every refiner output to the ground truth.

Typical usage example:

    ```
    trainer = train_stage2('runs/stage1.ckpt', Dataset('data'), config, 'runs')
    pipeline = load_pipeline(trainer.checkpoint_path)
    result = complete(pipeline, partial, seed=0)
    result.write('out', 'shape-00000')
    ```
'''

__docformat__ = 'google'


import os
import math
import logging

import numpy as np

from pysimba import tensor
from pysimba.tensor import Tensor
from pysimba.blocks import Module, FeatureSet, Linear, MLP, CrossAttention, MambaForward, make_fusion
from pysimba.geometry import (PointCloud, Source, TransformField, apply_transform_field, transform_points_tensor,
                              union, normalize, denormalize, write_point_cloud)
from pysimba.diffusion import (schedule_from_config, build_timestep_weights, proxy_loss, sample_field,
                               ddim_trajectory, NoisyField)
from pysimba.metrics import chamfer_tensor
from pysimba.symmgt import (FeatureExtractor, IDENTITY_FLAT, load_symmgt, teacher_arrays,
                            normalized_pairs, regress_target_field)
from pysimba.checkpoint import load_checkpoint, file_digest
from pysimba.trainer import Trainer
from pysimba.errors import CardinalityError, CheckpointError, ContractError


PREFIX = 'simba/'

log = logging.getLogger(__name__)


def timestep_embedding(t, dim):
    '''Sinusoidal embedding of a timestep, shape [dim].'''
    half = dim // 2
    frequencies = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = float(t) * frequencies
    embedding = np.concatenate([np.sin(angles), np.cos(angles)])

    if dim % 2:
        embedding = np.concatenate([embedding, [0.0]])

    return embedding


class SymDiffuserModel(Module):
    '''Conditional noise predictor over transformation fields.

    Each keypoint's noisy field entry is projected to the feature width, the timestep embedding and the keypoint's condition feature are added, the result cross-attends to all condition features, and a per-keypoint MLP trunk outputs the 12-value noise estimate.
    '''

    def __init__(self, dim, heads, rng):
        self.time_mlp = MLP([dim, dim, dim], rng)
        self.in_proj = Linear(12, dim, rng)
        self.attention = CrossAttention(dim, heads, rng)
        self.trunk = MLP([dim, dim, 12], rng)
        self._dim = dim

    def predict_noise(self, z, t, cond):
        '''Estimate the noise in a noisy field.

        Args:
            z (NoisyField): Noisy field, or its [N_k, 12] array or Tensor
            t (int): Timestep
            cond (FeatureSet): Condition features on the keypoints

        Returns:
            Tensor: Noise estimate, shape [N_k, 12]

        Raises:
            ContractError: Field shape does not match the condition
        '''
        if isinstance(z, NoisyField):
            z = z.z

        z = tensor.as_tensor(z)

        if z.shape != (len(cond), 12):
            raise ContractError('Noisy field shape {} does not match {} condition rows'.format(z.shape, len(cond)))

        time = self.time_mlp(Tensor(timestep_embedding(t, self._dim).reshape(1, self._dim)))
        hidden = self.in_proj(z) + time + cond.features
        attended, _ = self.attention.attend(hidden, cond.features)
        return self.trunk(hidden + attended)

    def forward(self, z, t, cond):
        return self.predict_noise(z, t, cond)


def predict_noise(model, zt, t, cond):
    '''Noise estimate of *model* for *zt* at timestep *t*.'''
    return model.predict_noise(zt, t, cond)


class RegressionPredictor(Module):
    '''Direct field regression from condition features.

    One self-attention block over the condition features feeds a per-keypoint head; like the teacher, the head starts at zero on top of the identity field.
    '''

    def __init__(self, dim, heads, rng):
        self.attention = CrossAttention(dim, heads, rng)
        self.head = MLP([dim, dim, 12], rng)

        last = self.head.layers[-1]
        last.weight.data[:] = 0.0
        last.bias.data[:] = 0.0

    def predict_field(self, cond):
        '''Flattened field Tensor [N_k, 12] for the condition keypoints.'''
        attended, _ = self.attention.attend(cond.features, cond.features)
        return self.head(cond.features + attended) + IDENTITY_FLAT

    def forward(self, cond):
        return self.predict_field(cond)


class RefinerBlock(Module):
    '''One fusion step followed by refine-and-upsample.

    Blocks after the first re-encode the upsampled points from (coordinate, parent feature) pairs before fusing.
    '''

    def __init__(self, kind, up_factor, radius, config, rng, first=False):
        dim = config.feature_dim
        self.propagate = None if first else MLP([3 + dim, dim, dim], rng)
        self.fusion = make_fusion(kind, dim, config.heads, config.state_dim, rng, config.serialization)
        self.upsample = MambaForward(dim, config.state_dim, up_factor, radius, rng, config.serialization)
        self.kind = kind

    def forward(self, base, keypoints, symmetric, parents):
        fused = self.fusion(base, keypoints, symmetric)
        return self.upsample(fused, parents)


class MbaRefinerModel(Module):
    '''Cascade of refiner blocks, one per upsampling factor.

    The offset radius of block l is *config.radius* / 2**l.
    '''

    def __init__(self, config, rng):
        self.blocks = [
            RefinerBlock(kind, factor, config.radius / 2**i, config, rng, first=(i == 0))
            for i, (factor, kind) in enumerate(zip(config.upsampling, config.fusion))
        ]

    @property
    def factors(self):
        return [block.upsample.up_factor for block in self.blocks]

    def refine(self, p_init, feats, parents=None):
        '''Upsample the coarse cloud through every block.

        Args:
            p_init (pysimba.geometry.PointCloud): Coarse cloud of 2 N_k points
            feats (dict): FeatureSets under 'keypoints', 'symmetric', and 'coarse' (the coarse cloud's own features)
            parents (Tensor): Differentiable coarse coordinates, defaults to constants from *p_init*

        Returns:
            list: Point Tensors, one per block

        Raises:
            CardinalityError: Coarse cloud is not twice the keypoint count
        '''
        if len(p_init) != 2 * len(feats['keypoints']):
            raise CardinalityError('Coarse cloud of {} points for {} keypoints'.format(len(p_init), len(feats['keypoints'])))

        base = feats['coarse']
        points = Tensor(p_init.points) if parents is None else parents
        outputs = []

        for block in self.blocks:
            if block.propagate is not None:
                cloud = PointCloud(points.data, label=p_init.label, source=Source.REFINED)
                base = FeatureSet(block.propagate(tensor.concat([points, features], axis=1)), cloud)

            points, features = block(base, feats['keypoints'], feats['symmetric'], points)
            outputs.append(points)

        return outputs

    def forward(self, p_init, feats, parents=None):
        return self.refine(p_init, feats, parents)


def refine(refiner, p_init, feats):
    '''Run *refiner* on a coarse cloud and return the outputs as PointClouds.'''
    with tensor.no_grad():
        outputs = refiner.refine(p_init, feats)

    return [PointCloud(points.data, label=p_init.label, source=Source.REFINED) for points in outputs]


class SimbaModel(Module):
    '''Stage-2 model: extractor, field predictor, and refiner.'''

    def __init__(self, config, rng=None):
        '''Initialize the Stage-2 model.

        Args:
            config (pysimba.settings.PipelineConfig): Model configuration
            rng (numpy.random.Generator): Initialization source, defaults to one derived from *config.seed*
        '''
        config.validate()
        rng = np.random.default_rng([config.seed, 2]) if rng is None else rng
        dim = config.feature_dim
        self.extractor = FeatureExtractor(dim, config.group_size, config.heads, rng)

        if config.predictor == 'diffusion':
            self.predictor = SymDiffuserModel(dim, config.heads, rng)
        else:
            self.predictor = RegressionPredictor(dim, config.heads, rng)

        self.refiner = MbaRefinerModel(config, rng)
        self.config = config

    def parameter_counts(self):
        '''Learnable value counts per component and in total.'''
        counts = {
            'extractor': self.extractor.parameter_count(),
            'predictor': self.predictor.parameter_count(),
            'refiner': self.refiner.parameter_count(),
        }
        counts['total'] = sum(counts.values())
        return counts


class CoarseResult:
    '''Coarse completion of one input.

    Attributes:
        keypoints (pysimba.geometry.PointCloud): N_k keypoints
        symmetric (pysimba.geometry.PointCloud): Transformed keypoints
        coarse (pysimba.geometry.PointCloud): Keypoints then symmetric points
        field (pysimba.geometry.TransformField): Sampled field
        cond (pysimba.blocks.FeatureSet): Condition features on the keypoints
    '''

    def __init__(self, keypoints, symmetric, coarse, field, cond):
        self.keypoints = keypoints
        self.symmetric = symmetric
        self.coarse = coarse
        self.field = field
        self.cond = cond


def _sample_flat(model, cond, schedule, rng, differentiable=False):
    '''Predicted flattened field, a Tensor when *differentiable*, else an array.'''
    config = model.config
    n_keypoints = len(cond)

    if config.predictor == 'regression':
        if differentiable:
            return model.predictor.predict_field(cond)

        with tensor.no_grad():
            return model.predictor.predict_field(cond).data

    noise = rng.standard_normal((n_keypoints, 12))

    if differentiable and config.sampler == 'ddim':
        return ddim_trajectory(noise, model.predictor, cond, schedule, config.sampler_steps, differentiable_last=True)

    return sample_field(noise, model.predictor, cond, schedule, config, rng).flatten()


def coarse_complete(model, p_in, rng, schedule=None):
    '''Keypoints, sampled field, and coarse cloud for a normalized partial input.

    Args:
        model (SimbaModel): Stage-2 model
        p_in (pysimba.geometry.PointCloud): Normalized partial input
        rng (numpy.random.Generator): Noise source
        schedule (pysimba.diffusion.DiffusionSchedule): Schedule, defaults to the model config's

    Returns:
        CoarseResult: Coarse completion, |coarse| = 2 N_k

    Raises:
        CardinalityError: Fewer input points than keypoints
    '''
    schedule = schedule_from_config(model.config) if schedule is None else schedule
    cond = model.extractor.extract(p_in, model.config.n_keypoints)
    keypoints = cond.coords
    field = TransformField.from_flat(_sample_flat(model, cond, schedule, rng))
    symmetric = apply_transform_field(keypoints, field)
    return CoarseResult(keypoints, symmetric, union(keypoints, symmetric), field, cond)


def guidance_features(model, symmetric, coarse, cond):
    '''Feature sets consumed by the refiner.'''
    return {
        'keypoints': cond,
        'symmetric': model.extractor.extract(symmetric, anchors=symmetric),
        'coarse': model.extractor.extract(coarse, anchors=coarse),
    }


def stage2_loss(proxy, refined, p_gt, kind='l1'):
    '''Composite Stage-2 loss.

    Args:
        proxy (Tensor): Predictor loss, or None to leave it out
        refined (list): Refiner output point Tensors
        p_gt (pysimba.geometry.PointCloud): Ground truth
        kind (str): Chamfer kind, defaults to 'l1'

    Returns:
        Tensor: proxy + sum of Chamfer distances of every refined cloud to *p_gt*

    Raises:
        ContractError: No refined clouds
    '''
    if not refined:
        raise ContractError('Stage-2 loss needs at least one refined cloud')

    total = proxy

    for points in refined:
        term = chamfer_tensor(points, p_gt.points, kind)
        total = term if total is None else total + term

    return total


class Stage2Step:
    '''Differentiable Stage-2 forward pass for one training pair.

    Attributes:
        proxy (Tensor): Predictor loss
        refined (list): Refiner output point Tensors
        loss (Tensor): Total loss
    '''

    def __init__(self, model, p_in, p_gt, target, rng, schedule, weights, include_proxy=True):
        '''Run the forward pass.

        Args:
            model (SimbaModel): Stage-2 model
            p_in (pysimba.geometry.PointCloud): Normalized partial input
            p_gt (pysimba.geometry.PointCloud): Ground truth in the same frame
            target (numpy.ndarray): Teacher field [N_k, 12]
            rng (numpy.random.Generator): Noise source
            schedule (pysimba.diffusion.DiffusionSchedule): Schedule
            weights (pysimba.diffusion.TimestepWeights): Proxy timesteps
            include_proxy (bool): Add the predictor loss to *loss*, defaults to True
        '''
        config = model.config
        cond = model.extractor.extract(p_in, config.n_keypoints)
        keypoints = cond.coords

        if config.predictor == 'diffusion':
            self.proxy = proxy_loss(target, model.predictor, cond, weights, schedule, rng)
        else:
            diff = model.predictor.predict_field(cond) - target
            self.proxy = (diff * diff).mean()

        flat = _sample_flat(model, cond, schedule, rng, differentiable=config.joint_backprop)

        if isinstance(flat, Tensor):
            moved = transform_points_tensor(keypoints.points, flat)
            parents = tensor.concat([Tensor(keypoints.points), moved], axis=0)
            symmetric = keypoints.copy(points=moved.data, source=Source.SYMMETRIC, normalized=False)
        else:
            symmetric = apply_transform_field(keypoints, TransformField.from_flat(flat))
            parents = None

        coarse = union(keypoints, symmetric)
        feats = guidance_features(model, symmetric, coarse, cond)
        self.refined = model.refiner.refine(coarse, feats, parents)
        self.loss = stage2_loss(self.proxy if include_proxy else None, self.refined, p_gt, config.chamfer)


def train_stage2(symmgt_ckpt, dataset, config, out_dir, resume=None, epochs=None, progress=None):
    '''Train the Stage-2 model against a frozen teacher.

    Args:
        symmgt_ckpt (str): Stage-1 checkpoint path
        dataset (pysimba.synth.Dataset): Training data, or a list of (partial, complete) pairs
        config (pysimba.settings.PipelineConfig): Run configuration; architecture fields must match the teacher's
        out_dir (str): Output directory for *stage2.ckpt* and *stage2-metrics.csv*
        resume (str): Epoch checkpoint to continue from, defaults to None
        epochs (int): Total epochs, replaces *config.epochs* so the learning rate schedule and the config hash follow it, defaults to None
        progress (func): Per-epoch callback *progress(epoch, loss, lr)*, defaults to None

    Returns:
        Trainer: Finished trainer

    Raises:
        CheckpointError: Missing or unreadable Stage-1 checkpoint
        ConfigError: Teacher architecture differs from *config*
        TrainingAborted: Non-finite loss
    '''
    if epochs is not None:
        config = config.replace(epochs=epochs)

    config.validate()

    if not os.path.isfile(symmgt_ckpt):
        raise CheckpointError('Stage-1 checkpoint not found: ' + str(symmgt_ckpt))

    teacher, teacher_ckpt = load_symmgt(symmgt_ckpt, config)
    items = normalized_pairs(dataset)
    targets = []

    for p_in, p_gt, _, _ in items:
        _, field = regress_target_field(teacher, p_in, p_gt)
        targets.append(field.flatten())

    model = SimbaModel(config)
    schedule = schedule_from_config(config)
    weights = build_timestep_weights(schedule, config.proxy_timesteps, config.lambda_mode, config.lambda_clamp)
    log.info('Stage 2: %d pairs, %d parameters, predictor %s, fusion %s', len(items), model.parameter_count(), config.predictor, ','.join(config.fusion))

    def loss_fn(index, rng):
        p_in, p_gt, _, _ = items[index]
        return Stage2Step(model, p_in, p_gt, targets[index], rng, schedule, weights).loss

    metadata = {'stage': 2, 'stage1_digest': file_digest(symmgt_ckpt)}
    trainer = Trainer('stage2', model, config, out_dir, len(items), loss_fn, prefix=PREFIX,
                      frozen_arrays=teacher_arrays(teacher_ckpt), metadata=metadata)

    if resume:
        trainer.resume(resume)

    trainer.run(progress=progress)
    return trainer


class Pipeline:
    '''Loaded Stage-2 checkpoint ready for inference.

    Attributes:
        model (SimbaModel): Stage-2 model
        config (pysimba.settings.PipelineConfig): Embedded configuration
        path (str): Checkpoint path
    '''

    def __init__(self, model, config, path=None):
        self.model = model
        self.config = config
        self.path = path
        self.schedule = schedule_from_config(config)


def load_pipeline(path, expected_config=None):
    '''Load a Stage-2 checkpoint.

    Args:
        path (str): Checkpoint path
        expected_config (pysimba.settings.PipelineConfig): When given, the embedded config hash must match

    Returns:
        Pipeline: Loaded pipeline

    Raises:
        CheckpointError: Unreadable file, hash mismatch, or missing Stage-2 arrays
    '''
    ckpt = load_checkpoint(path, expected_config)

    if ckpt.metadata.get('stage') != 2:
        raise CheckpointError(str(path) + ' is not a Stage-2 checkpoint')

    model = SimbaModel(ckpt.config)
    model.load_arrays(ckpt.arrays, prefix=PREFIX)
    return Pipeline(model, ckpt.config, path)


class Completion:
    '''Completion of one partial input, in the input's original frame.

    Attributes:
        output (pysimba.geometry.PointCloud): Final cloud, 32 N_k points with the default schedule
        keypoints (pysimba.geometry.PointCloud): Keypoints
        symmetric (pysimba.geometry.PointCloud): Symmetric points
        coarse (pysimba.geometry.PointCloud): Coarse cloud
        refined (list): Every refiner block output, the last one equal to *output*
        config_hash (str): Hash of the configuration that produced the clouds
    '''

    def __init__(self, keypoints, symmetric, coarse, refined, config_hash=None):
        self.keypoints = keypoints
        self.symmetric = symmetric
        self.coarse = coarse
        self.refined = refined
        self.output = refined[-1]
        self.config_hash = config_hash

    def intermediates(self):
        '''Named clouds in pipeline order.'''
        named = [('keypoints', self.keypoints), ('symmetric', self.symmetric), ('coarse', self.coarse)]
        named += [('refined{}'.format(i + 1), cloud) for i, cloud in enumerate(self.refined)]
        return named

    def write(self, out_dir, stem, intermediates=False):
        '''Write *<stem>.ply* and optionally *intermediates/<stem>-<name>.ply* for every intermediate cloud.

        Returns:
            list: Written paths, the final output first
        '''
        os.makedirs(out_dir, exist_ok=True)
        comments = {'config_hash': self.config_hash} if self.config_hash else None
        paths = [write_point_cloud(os.path.join(out_dir, stem + '.ply'), self.output, comments=comments)]

        if intermediates:
            folder = os.path.join(out_dir, 'intermediates')
            os.makedirs(folder, exist_ok=True)

            for name, cloud in self.intermediates():
                paths.append(write_point_cloud(os.path.join(folder, stem + '-' + name + '.ply'), cloud, comments=comments))

        return paths


def complete(pipeline, p_in, seed=0):
    '''Complete a partial cloud.

    Args:
        pipeline (Pipeline): Loaded Stage-2 checkpoint, or a checkpoint path
        p_in (pysimba.geometry.PointCloud): Partial input in any frame
        seed (int): Sampling seed, defaults to 0

    Returns:
        Completion: Final and intermediate clouds, denormalized to the input frame

    Raises:
        CheckpointError: Unusable checkpoint
        CardinalityError: Fewer input points than keypoints
    '''
    if not isinstance(pipeline, Pipeline):
        pipeline = load_pipeline(pipeline)

    model = pipeline.model
    normalized, centroid, scale = normalize(p_in)
    rng = np.random.default_rng(seed)

    with tensor.no_grad():
        result = coarse_complete(model, normalized, rng, pipeline.schedule)
        feats = guidance_features(model, result.symmetric, result.coarse, result.cond)

    refined = refine(model.refiner, result.coarse, feats)

    def restore(cloud, source):
        return denormalize(cloud, centroid, scale).copy(source=source)

    return Completion(
        restore(result.keypoints, Source.KEYPOINTS),
        restore(result.symmetric, Source.SYMMETRIC),
        restore(result.coarse, Source.COARSE),
        [restore(cloud, Source.REFINED) for cloud in refined],
        pipeline.config.config_hash()
    )
