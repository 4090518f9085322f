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

'''Training loop shared by both stages.

The trainer runs epochs of shuffled items, accumulates gradients over *batch_size* items per optimizer step, sets the learning rate every step from the warmup-cosine schedule, writes a checkpoint and a metrics CSV after every epoch, and aborts with a diagnostic dump when the loss becomes non-finite.

Randomness is derived per epoch from *numpy.random.default_rng([seed, epoch])*, and the optimizer moments are stored in the checkpoint, so resuming from an epoch checkpoint reproduces the uninterrupted run bit for bit.

Metrics CSV columns: epoch, loss, lr (loss is the mean item loss of the epoch, lr the rate of the last step).
'''

__docformat__ = 'google'


import os
import csv
import json
import math
import time
import logging

import numpy as np

from pysimba import tensor
from pysimba.optim import AdamW, AdamWState, lr_schedule
from pysimba.checkpoint import save_checkpoint, load_checkpoint
from pysimba.errors import CheckpointError, NumericError, TrainingAborted


log = logging.getLogger(__name__)


class Trainer:
    '''Epoch loop over a fixed item list.

    Attributes:
        name (str): Run name, used for output file names
        model (pysimba.blocks.Module): Trained model
        config (pysimba.settings.PipelineConfig): Run configuration
        rows (list): Metric rows (epoch, loss, lr) of completed epochs
        timings (list): Wall-clock seconds per epoch trained by this process
    '''

    def __init__(self, name, model, config, out_dir, item_count, loss_fn, prefix='', frozen_arrays=None, metadata=None):
        '''Initialize trainer.

        Args:
            name (str): Run name; files are *<out_dir>/<name>.ckpt* and *<out_dir>/<name>-metrics.csv*
            model (pysimba.blocks.Module): Model whose parameters are optimized
            config (pysimba.settings.PipelineConfig): Run configuration
            out_dir (str): Output directory, created if missing
            item_count (int): Number of training items
            loss_fn (func): *loss_fn(index, rng)* returning a scalar Tensor for item *index*
            prefix (str): Checkpoint name prefix of the model parameters, defaults to ''
            frozen_arrays (dict): Extra arrays copied into every checkpoint unchanged, defaults to None
            metadata (dict): Extra checkpoint metadata, defaults to None
        '''
        self.name = name
        self.model = model
        self.config = config
        self.out_dir = out_dir
        self.rows = []
        self.timings = []
        self._item_count = item_count
        self._loss_fn = loss_fn
        self._prefix = prefix
        self._frozen_arrays = frozen_arrays or {}
        self._metadata = metadata or {}
        self._params = model.parameters()
        self.optimizer = AdamW(self._params, config.weight_decay, config.beta1, config.beta2, config.adam_eps)
        self.start_epoch = 0

        os.makedirs(out_dir, exist_ok=True)

    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, self.name + '.ckpt')

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, self.name + '-metrics.csv')

    @property
    def dump_path(self):
        return os.path.join(self.out_dir, self.name + '-abort.json')

    def resume(self, path):
        '''Restore parameters, optimizer state, and metric rows from an epoch checkpoint.

        Raises:
            CheckpointError: Unreadable checkpoint, config mismatch, or missing arrays
        '''
        ckpt = load_checkpoint(path, expected_config=self.config)
        self.model.load_arrays(ckpt.arrays, prefix=self._prefix)

        if 'step' not in ckpt.metadata or 'epoch' not in ckpt.metadata:
            raise CheckpointError(str(path) + ' has no optimizer state to resume from')

        self.optimizer.state = AdamWState.from_arrays(ckpt.metadata['step'], ckpt.subset('optim/'))
        self.rows = [tuple(row) for row in ckpt.metadata.get('rows', [])]
        self.start_epoch = int(ckpt.metadata['epoch'])
        log.warning('Resuming %s from %s at epoch %d', self.name, path, self.start_epoch)

    def _abort(self, epoch, step, index, value, error=None):
        norms = {name: float(np.linalg.norm(param.data)) for name, param in self._params.items()}
        dump = {
            'run': self.name,
            'epoch': epoch,
            'step': step,
            'item': int(index),
            'loss': repr(value),
            'error': str(error) if error else None,
            'lr': lr_schedule(epoch, self.config),
            'config_hash': self.config.config_hash(),
            'parameter_norms': norms,
            'rows': self.rows,
        }

        with open(self.dump_path, 'w', encoding='utf-8') as fd:
            json.dump(dump, fd, indent=2, sort_keys=True)

        tensor.get_tape().clear()
        log.error('Non-finite loss in %s at epoch %d, item %d; diagnostic dump written to %s', self.name, epoch, index, self.dump_path)
        raise TrainingAborted('Non-finite loss at epoch {}, item {}'.format(epoch, index), dump_path=self.dump_path)

    def _item_loss(self, epoch, index, rng, scale):
        try:
            loss = self._loss_fn(index, rng)
            value = loss.item()

            if not math.isfinite(value):
                self._abort(epoch, self.optimizer.state.step, index, value)

            tensor.backward(loss * scale)
        except NumericError as e:
            self._abort(epoch, self.optimizer.state.step, index, float('nan'), e)

        for name, param in self._params.items():
            if param.grad is not None and not np.isfinite(param.grad).all():
                self._abort(epoch, self.optimizer.state.step, index, value, 'non-finite gradient for ' + name)

        return value

    def run_epoch(self, epoch):
        '''Train one epoch.

        Each optimizer step uses the rate at the epoch position it completes, so the last step of a run uses *min_lr*.

        Returns:
            tuple: (mean item loss, learning rate of the last step)
        '''
        rng = np.random.default_rng([self.config.seed, epoch])
        order = rng.permutation(self._item_count)
        batch_size = min(self.config.batch_size, self._item_count)
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        losses = []
        lr = lr_schedule(epoch, self.config)

        for step, batch in enumerate(batches):
            self.optimizer.zero_grad()
            tensor.get_tape().clear()

            for index in batch:
                losses.append(self._item_loss(epoch, index, rng, 1.0 / len(batch)))

            lr = lr_schedule(epoch + (step + 1) / len(batches), self.config)
            self.optimizer.step(lr)

        self.optimizer.zero_grad()
        return float(np.mean(losses)), lr

    def run(self, epochs=None, progress=None):
        '''Train until *epochs* epochs are complete.

        The learning rate schedule always spans *config.epochs*; a smaller *epochs* stops the run early
        the way an interruption would, so a later *resume* continues on the same schedule.

        Args:
            epochs (int): Epoch to stop at, defaults to *config.epochs*
            progress (func): Called as *progress(epoch, loss, lr)* after every epoch, defaults to None

        Returns:
            str: Checkpoint path

        Raises:
            TrainingAborted: Loss or gradient became non-finite
        '''
        epochs = self.config.epochs if epochs is None else epochs

        for epoch in range(self.start_epoch, epochs):
            started = time.perf_counter()
            loss, lr = self.run_epoch(epoch)
            self.timings.append(time.perf_counter() - started)
            self.rows.append((epoch, loss, lr))
            log.info('%s epoch %d: loss %.6g, lr %.6g', self.name, epoch, loss, lr)
            self.save(epoch + 1)

            if progress is not None:
                progress(epoch, loss, lr)

        return self.checkpoint_path

    def save(self, epoch):
        '''Write the epoch checkpoint and the metrics CSV.'''
        arrays = dict(self.model.arrays(self._prefix))
        arrays.update(self._frozen_arrays)

        for name, array in self.optimizer.state.arrays().items():
            arrays['optim/' + name] = array

        metadata = dict(self._metadata)
        metadata.update({
            'epoch': epoch,
            'step': self.optimizer.state.step,
            'rows': [list(row) for row in self.rows],
        })
        save_checkpoint(self.checkpoint_path, arrays, self.config, metadata)
        write_metrics_csv(self.metrics_path, self.rows)


def write_metrics_csv(path, rows):
    '''Write (epoch, loss, lr) rows with a header line.'''
    with open(path, 'w', newline='', encoding='utf-8') as fd:
        writer = csv.writer(fd, lineterminator='\n')
        writer.writerow(['epoch', 'loss', 'lr'])

        for epoch, loss, lr in rows:
            writer.writerow([epoch, '{:.17g}'.format(loss), '{:.17g}'.format(lr)])

    return path
