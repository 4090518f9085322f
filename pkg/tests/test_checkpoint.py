import os

import numpy as np

from pysimba import checkpoint
from pysimba.errors import CheckpointError

from helpers import scratch_dir, tiny_config

NAME = 'Checkpoint Files'


def _arrays():
    rng = np.random.default_rng(0)
    return {'symmgt/head.weight': rng.normal(size=(3, 4)), 'simba/bias': rng.normal(size=5), 'scalar': np.array(2.5)}


def test_round_trip_is_exact():
    config = tiny_config()
    arrays = _arrays()

    with scratch_dir() as folder:
        path = checkpoint.save_checkpoint(os.path.join(folder, 'a.ckpt'), arrays, config, {'stage': 1, 'epoch': 2})
        ckpt = checkpoint.load_checkpoint(path, expected_config=config)
        assert not os.path.exists(path + '.tmp'), 'Temporary file left behind'

    assert ckpt.config == config
    assert ckpt.metadata == {'stage': 1, 'epoch': 2}
    assert list(ckpt.arrays) == list(arrays), 'Manifest order not preserved'
    for name, array in arrays.items():
        assert np.array_equal(ckpt.arrays[name], array) and ckpt.arrays[name].shape == array.shape

    assert list(ckpt.subset('symmgt/')) == ['head.weight']

def test_identical_inputs_give_identical_bytes():
    config = tiny_config()

    with scratch_dir() as folder:
        first = checkpoint.save_checkpoint(os.path.join(folder, 'a.ckpt'), _arrays(), config, {'stage': 2})
        second = checkpoint.save_checkpoint(os.path.join(folder, 'b.ckpt'), _arrays(), config, {'stage': 2})
        assert checkpoint.file_digest(first) == checkpoint.file_digest(second)

        with open(first, 'rb') as fd:
            assert fd.read(len(checkpoint.MAGIC)) == checkpoint.MAGIC

def test_config_mismatch():
    config = tiny_config()

    with scratch_dir() as folder:
        path = checkpoint.save_checkpoint(os.path.join(folder, 'a.ckpt'), _arrays(), config)

        try:
            checkpoint.load_checkpoint(path, expected_config=config.replace(seed=7))
            raise AssertionError('Mismatched configuration accepted')
        except CheckpointError as e:
            assert 'Config hash mismatch' in str(e)

def test_corrupt_files():
    config = tiny_config()

    with scratch_dir() as folder:
        path = checkpoint.save_checkpoint(os.path.join(folder, 'a.ckpt'), _arrays(), config)

        with open(path, 'rb') as fd:
            raw = fd.read()

        cases = {
            'truncated.ckpt': raw[:-8],
            'trailing.ckpt': raw + b'\x00' * 8,
            'magic.ckpt': b'NOTACKPT\n' + raw[9:],
            'header.ckpt': raw[:14] + b'#' + raw[15:],
        }

        for name, data in cases.items():
            bad = os.path.join(folder, name)
            with open(bad, 'wb') as fd:
                fd.write(data)

            try:
                checkpoint.load_checkpoint(bad)
                raise AssertionError('Corrupt checkpoint accepted: ' + name)
            except CheckpointError:
                pass

        try:
            checkpoint.load_checkpoint(os.path.join(folder, 'missing.ckpt'))
            raise AssertionError('Missing checkpoint accepted')
        except CheckpointError:
            pass


TESTS = [
    test_round_trip_is_exact,
    test_identical_inputs_give_identical_bytes,
    test_config_mismatch,
    test_corrupt_files
]

def run():
    for test in TESTS:
        test()
        print('\t' + test.__name__ + ' passed')

    return True
