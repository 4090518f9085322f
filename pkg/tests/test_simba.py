import os

import numpy as np

from pysimba import simba, symmgt, tensor, metrics, checkpoint
from pysimba.geometry import PointCloud, Source, normalize, nearest_neighbors, read_point_cloud
from pysimba.blocks import FeatureSet
from pysimba.tensor import Tensor
from pysimba.diffusion import schedule_from_config, build_timestep_weights
from pysimba.settings import ABLATIONS
from pysimba.errors import CardinalityError, CheckpointError, ConfigError, ContractError

from gradcheck import check_gradients
from helpers import scratch_dir, tiny_config, tiny_pairs, mirrored_pair

NAME = 'Stage-2 Completion Pipeline'

# refiner output sizes for 16 keypoints
BLOCK_SIZES = {
    'B1': [64, 128, 512],
    'B2': [512],
    'B3': [64, 512],
    'B4': [128, 512],
}


def _pipeline(config):
    return simba.Pipeline(simba.SimbaModel(config), config)

def _partial(seed=0):
    return tiny_pairs(1, seed)[0][0]

def _step(config, model=None, include_proxy=True, seed=0):
    model = model or simba.SimbaModel(config)
    p_in, p_gt, _, _ = symmgt.normalized_pairs(tiny_pairs(1, seed))[0]
    target = np.tile(symmgt.IDENTITY_FLAT, (config.n_keypoints, 1))
    schedule = schedule_from_config(config)
    weights = build_timestep_weights(schedule, config.proxy_timesteps)
    return model, simba.Stage2Step(model, p_in, p_gt, target, np.random.default_rng(seed), schedule, weights, include_proxy)


def test_timestep_embedding():
    embedding = simba.timestep_embedding(7, 9)
    assert embedding.shape == (9,) and embedding[-1] == 0.0
    assert np.isclose(embedding[0], np.sin(7.0)) and np.isclose(embedding[4], np.cos(7.0))

def test_sym_diffuser_gradient():
    rng = np.random.default_rng(4)
    model = simba.SymDiffuserModel(4, 2, rng)
    cond = FeatureSet(Tensor(rng.normal(size=(5, 4)), requires_grad=True), PointCloud(rng.uniform(-0.4, 0.4, size=(5, 3))))
    z = Tensor(rng.normal(size=(5, 12)), requires_grad=True)

    params = {
        'z': z,
        'cond': cond.features,
        'in_proj': model.in_proj.weight,
        'time': model.time_mlp.layers[0].weight,
        'key': model.attention.key.weight,
        'trunk': model.trunk.layers[0].weight,
    }
    check_gradients(lambda: (model.predict_noise(z, 7, cond) ** 2).sum(), params)

def test_completion_cardinalities():
    partial = _partial()

    for ablation_id, sizes in BLOCK_SIZES.items():
        config = tiny_config().with_ablation(ablation_id)
        result = simba.complete(_pipeline(config), partial)

        assert len(result.keypoints) == 16 and len(result.symmetric) == 16 and len(result.coarse) == 32
        assert [len(cloud) for cloud in result.refined] == sizes, ablation_id + ' produced the wrong block sizes'
        assert len(result.output) == 512 and result.output.source == Source.REFINED
        assert not result.output.normalized

def test_regression_oracle_mirrors_nothing():
    # an untrained regression predictor outputs the identity field
    config = tiny_config(predictor='regression')
    result = simba.complete(_pipeline(config), _partial(1))
    assert np.allclose(result.symmetric.points, result.keypoints.points, atol=1e-12)
    assert np.allclose(result.coarse.points[16:], result.coarse.points[:16], atol=1e-12)

def test_zero_offsets_replicate_parents():
    config = tiny_config(predictor='regression')
    pipeline = _pipeline(config)

    for block in pipeline.model.refiner.blocks:
        block.upsample.offset.weight.data[:] = 0.0
        block.upsample.offset.bias.data[:] = 0.0

    result = simba.complete(pipeline, _partial(2))
    distances = nearest_neighbors(result.output.points, result.coarse.points)[0]
    assert distances.max() < 1e-20, 'Replicas should sit on their coarse parents'
    assert len(np.unique(result.output.points, axis=0)) == len(np.unique(result.coarse.points, axis=0))

def test_completion_frame_and_determinism():
    config = tiny_config()
    pipeline = _pipeline(config)
    partial = _partial(3)

    first = simba.complete(pipeline, partial, seed=5)
    again = simba.complete(pipeline, partial, seed=5)
    other = simba.complete(pipeline, partial, seed=6)
    assert np.array_equal(first.output.points, again.output.points), 'Same seed should give the same completion'
    assert not np.array_equal(first.output.points, other.output.points), 'Diffusion sampling should depend on the seed'

    shifted = simba.complete(pipeline, partial.copy(points=partial.points * 3.0 + [10.0, -4.0, 2.0]), seed=5)
    assert np.allclose(shifted.output.points, first.output.points * 3.0 + [10.0, -4.0, 2.0], atol=1e-8), 'Completion should follow the input frame'

    assert first.config_hash == config.config_hash()
    assert [name for name, _ in first.intermediates()] == ['keypoints', 'symmetric', 'coarse', 'refined1', 'refined2', 'refined3']

def test_completion_errors():
    config = tiny_config()
    pipeline = _pipeline(config)

    try:
        simba.complete(pipeline, PointCloud(np.random.default_rng(0).normal(size=(10, 3))))
        raise AssertionError('Input smaller than the keypoint count accepted')
    except CardinalityError:
        pass

    p_in, _, _ = normalize(_partial(4))
    coarse = simba.coarse_complete(pipeline.model, p_in, np.random.default_rng(0))
    feats = simba.guidance_features(pipeline.model, coarse.symmetric, coarse.coarse, coarse.cond)

    try:
        simba.refine(pipeline.model.refiner, coarse.keypoints, feats)
        raise AssertionError('Coarse cloud of the wrong size accepted')
    except CardinalityError:
        pass

    try:
        simba.predict_noise(pipeline.model.predictor, np.zeros((15, 12)), 3, coarse.cond)
        raise AssertionError('Noisy field of the wrong size accepted')
    except ContractError:
        pass

    try:
        simba.stage2_loss(None, [], coarse.coarse)
        raise AssertionError('Empty refined list accepted')
    except ContractError:
        pass

def test_stage2_loss_terms():
    config = tiny_config()
    _, step = _step(config, include_proxy=False)
    p_gt = symmgt.normalized_pairs(tiny_pairs(1, 0))[0][1]
    expected = sum(metrics.chamfer_l1(points.data, p_gt.points) for points in step.refined)
    assert np.isclose(step.loss.item(), expected, rtol=1e-10)
    assert step.proxy.item() > 0

def test_joint_backprop_gradient_path():
    for predictor, trunk in (('diffusion', lambda m: m.predictor.trunk.layers[-1].weight),
                             ('regression', lambda m: m.predictor.head.layers[-1].weight)):
        for joint in (False, True):
            tensor.get_tape().clear()
            config = tiny_config(predictor=predictor, joint_backprop=joint)
            model, step = _step(config, include_proxy=False)
            tensor.backward(step.loss)

            grad = trunk(model).grad
            reached = grad is not None and np.abs(grad).sum() > 0
            assert reached == joint, '{} predictor with joint_backprop={}: gradient reached={}'.format(predictor, joint, reached)
            assert model.refiner.blocks[0].upsample.offset.weight.grad is not None

def test_ablation_smoke_matrix():
    partial = _partial(5)

    for ablation_id in sorted(ABLATIONS):
        tensor.get_tape().clear()
        config = tiny_config().with_ablation(ablation_id)
        model, step = _step(config)
        assert np.isfinite(step.loss.item()), ablation_id + ' loss is not finite'
        tensor.backward(step.loss)

        counts = model.parameter_counts()
        assert counts['total'] == model.parameter_count() == sum(counts[key] for key in ('extractor', 'predictor', 'refiner'))
        assert len(simba.complete(simba.Pipeline(model, config), partial).output) == 512

def test_train_stage2_freezes_teacher():
    config = tiny_config(epochs=1)
    pairs = tiny_pairs(2, 6)

    with scratch_dir() as folder:
        stage1 = symmgt.train_stage1(pairs, config, os.path.join(folder, 'one')).checkpoint_path
        trainer = simba.train_stage2(stage1, pairs, config, os.path.join(folder, 'two'))

        teacher = checkpoint.load_checkpoint(stage1)
        student = checkpoint.load_checkpoint(trainer.checkpoint_path, expected_config=config)
        assert student.metadata['stage'] == 2
        assert student.metadata['stage1_digest'] == checkpoint.file_digest(stage1)

        frozen = symmgt.teacher_arrays(teacher)
        for name, array in frozen.items():
            assert student.arrays[name].tobytes() == array.tobytes(), 'Teacher parameter changed: ' + name

        pipeline = simba.load_pipeline(trainer.checkpoint_path, config)
        result = simba.complete(pipeline, pairs[0][0])
        assert len(result.output) == 512

        paths = result.write(os.path.join(folder, 'out'), 'shape', intermediates=True)
        assert len(paths) == 7 and all(os.path.isfile(path) for path in paths)
        assert len(read_point_cloud(paths[0])) == 512

        with open(paths[0], 'r', encoding='utf-8') as fd:
            assert 'comment config_hash ' + config.config_hash() in fd.read()

        try:
            simba.load_pipeline(stage1)
            raise AssertionError('Stage-1 checkpoint loaded as a pipeline')
        except CheckpointError:
            pass

        try:
            simba.train_stage2(os.path.join(folder, 'missing.ckpt'), pairs, config, os.path.join(folder, 'three'))
            raise AssertionError('Missing teacher checkpoint accepted')
        except CheckpointError:
            pass

        try:
            simba.train_stage2(stage1, pairs, config.replace(feature_dim=16), os.path.join(folder, 'four'))
            raise AssertionError('Teacher with another feature width accepted')
        except ConfigError:
            pass

def test_completion_file_is_reproducible():
    config = tiny_config()
    pipeline = _pipeline(config)
    partial = _partial(7)

    with scratch_dir() as folder:
        first = simba.complete(pipeline, partial, seed=1).write(os.path.join(folder, 'a'), 'x')[0]
        second = simba.complete(pipeline, partial, seed=1).write(os.path.join(folder, 'b'), 'x')[0]
        assert checkpoint.file_digest(first) == checkpoint.file_digest(second)

def test_stage2_overfits_single_pair():
    # regression predictor, the diffusion proxy term is a random-timestep estimate
    config = tiny_config(epochs=150, warmup_epochs=5, peak_lr=1e-2, min_lr=1e-4).with_ablation('A2')
    pairs = [mirrored_pair(config.n_keypoints)]

    with scratch_dir() as folder:
        stage1 = symmgt.train_stage1(pairs, config, os.path.join(folder, 'one')).checkpoint_path
        trainer = simba.train_stage2(stage1, pairs, config, os.path.join(folder, 'two'))

    losses = [loss for _, loss, _ in trainer.rows]
    assert losses[-1] < 0.1 * losses[0], 'Loss fell from {:.4g} to only {:.4g}'.format(losses[0], losses[-1])


TESTS = [
    test_timestep_embedding,
    test_sym_diffuser_gradient,
    test_completion_cardinalities,
    test_regression_oracle_mirrors_nothing,
    test_zero_offsets_replicate_parents,
    test_completion_frame_and_determinism,
    test_completion_errors,
    test_stage2_loss_terms,
    test_joint_backprop_gradient_path,
    test_ablation_smoke_matrix,
    test_train_stage2_freezes_teacher,
    test_completion_file_is_reproducible,
    test_stage2_overfits_single_pair
]

def run():
    for test in TESTS:
        tensor.get_tape().clear()
        test()
        print('\t' + test.__name__ + ' passed')

    return True
