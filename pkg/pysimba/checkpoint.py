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

'''Checkpoint file format.

A checkpoint holds named float64 arrays plus the configuration that produced them. Byte layout:

    offset  size  content
    0       10    magic b'SIMBACKPT\\n'
    10      4     header length H, unsigned 32-bit little-endian
    14      H     UTF-8 JSON header
    14+H    ...   arrays as raw little-endian float64 values, row-major, in manifest order

The JSON header has the keys:

    format_version  int, currently 1
    config_hash     SHA-256 hex digest of the canonical configuration JSON
    config          PipelineConfig.to_dict() output
    manifest        list of {"name": str, "shape": [int, ...]}
    metadata        free-form dict (stage, epoch, optimizer step, metric rows)

Files are written to a temporary path and renamed into place, so a crash never leaves a truncated checkpoint under the final name.

Typical usage example:

    ```
    save_checkpoint('stage1.ckpt', model.arrays(prefix='symmgt/'), config, {'stage': 1})
    ckpt = load_checkpoint('stage1.ckpt', expected_config=config)
    model.load_arrays(ckpt.arrays, prefix='symmgt/')
    ```
'''

__docformat__ = 'google'


import os
import json
import struct
import hashlib
import logging

import numpy as np

from pysimba.errors import CheckpointError, ConfigError
from pysimba.settings import PipelineConfig


MAGIC = b'SIMBACKPT\n'
FORMAT_VERSION = 1

log = logging.getLogger(__name__)


class Checkpoint:
    '''Contents of a loaded checkpoint file.'''

    def __init__(self, config, arrays, metadata, path=None):
        self.config = config
        '''PipelineConfig: Configuration embedded in the file'''
        self.arrays = arrays
        '''dict: Array name to numpy.ndarray, in manifest order'''
        self.metadata = metadata
        '''dict: Free-form metadata'''
        self.path = path
        '''str: Source file path, or None'''

    def subset(self, prefix):
        '''Get arrays whose names start with *prefix*, prefix removed.'''
        return {name[len(prefix):]: array for name, array in self.arrays.items() if name.startswith(prefix)}


def save_checkpoint(path, arrays, config, metadata=None):
    '''Write named arrays and configuration to a checkpoint file.

    Args:
        path (str): Destination file path
        arrays (dict): Array name to array-like, written in iteration order
        config (PipelineConfig): Configuration to embed
        metadata (dict): JSON-serializable extra data, defaults to None

    Returns:
        str: *path*

    Raises:
        CheckpointError: Duplicate or empty names, or the file cannot be written
    '''
    manifest = []
    payload = []

    for name, array in arrays.items():
        if not name:
            raise CheckpointError('Checkpoint array names must be nonempty')

        array = np.asarray(array, dtype='<f8')
        manifest.append({'name': name, 'shape': list(array.shape)})
        payload.append(array.tobytes(order='C'))

    header = {
        'format_version': FORMAT_VERSION,
        'config_hash': config.config_hash(),
        'config': config.to_dict(),
        'manifest': manifest,
        'metadata': metadata or {},
    }
    header = json.dumps(header, sort_keys=True).encode('utf-8')
    tmp_path = str(path) + '.tmp'

    try:
        with open(tmp_path, 'wb') as fd:
            fd.write(MAGIC)
            fd.write(struct.pack('<I', len(header)))
            fd.write(header)

            for chunk in payload:
                fd.write(chunk)

        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError('Cannot write checkpoint ' + str(path) + ': ' + str(e)) from e

    log.debug('Wrote checkpoint %s (%d arrays)', path, len(manifest))
    return path


def load_checkpoint(path, expected_config=None):
    '''Read a checkpoint file.

    Args:
        path (str): Checkpoint file path
        expected_config (PipelineConfig): When given, the embedded config hash must match, defaults to None

    Returns:
        Checkpoint: Loaded contents

    Raises:
        CheckpointError: Missing file, bad magic or version, truncated data, or config hash mismatch
    '''
    try:
        with open(path, 'rb') as fd:
            raw = fd.read()
    except OSError as e:
        raise CheckpointError('Cannot read checkpoint ' + str(path) + ': ' + str(e)) from e

    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 4:
        raise CheckpointError(str(path) + ' is not a checkpoint file')

    offset = len(MAGIC)
    header_length = struct.unpack('<I', raw[offset:offset + 4])[0]
    offset += 4

    try:
        header = json.loads(raw[offset:offset + header_length].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError('Corrupt checkpoint header in ' + str(path)) from e

    offset += header_length

    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError('Unsupported checkpoint format version ' + str(header.get('format_version')))

    try:
        config = PipelineConfig.from_dict(header['config'])
    except ConfigError as e:
        raise CheckpointError('Invalid configuration in ' + str(path) + ': ' + str(e)) from e

    if config.config_hash() != header['config_hash']:
        raise CheckpointError('Embedded configuration of ' + str(path) + ' does not match its hash')

    if expected_config is not None and expected_config.config_hash() != header['config_hash']:
        raise CheckpointError('Config hash mismatch: checkpoint {} has {}, expected {}'.format(
            path, header['config_hash'][:12], expected_config.config_hash()[:12]))

    arrays = {}

    for entry in header['manifest']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count

        if end > len(raw):
            raise CheckpointError('Truncated checkpoint ' + str(path) + ' at array ' + entry['name'])

        arrays[entry['name']] = np.frombuffer(raw, dtype='<f8', count=count, offset=offset).astype(np.float64).reshape(shape)
        offset = end

    if offset != len(raw):
        raise CheckpointError('Trailing data in checkpoint ' + str(path))

    return Checkpoint(config, arrays, header['metadata'], path=path)


def file_digest(path):
    '''Get the SHA-256 hex digest of a file's bytes.'''
    digest = hashlib.sha256()

    with open(path, 'rb') as fd:
        for chunk in iter(lambda: fd.read(1 << 20), b''):
            digest.update(chunk)

    return digest.hexdigest()
