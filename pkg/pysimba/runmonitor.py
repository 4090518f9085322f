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

'''Resource monitoring and run records.

*ResourceMonitor* samples the resident memory of the current process on a background thread while a command runs. *RunRecord* collects what is needed to account for a run afterwards: configuration hash, source revision, seed, per-epoch metrics, wall-clock timings, peak memory, and parameter counts. Run records are written as JSON beside the checkpoint they describe.

Typical usage example:

    ```
    monitor = ResourceMonitor()
    monitor.enable()
    trainer = train_stage1(dataset, config, 'runs')
    monitor.disable()

    record = RunRecord.from_trainer(trainer, monitor)
    record.write('runs/stage1-run.json')
    ```
'''

__docformat__ = 'google'


import os
import json
import time
import logging
import threading
import subprocess

import psutil


log = logging.getLogger(__name__)


class ResourceMonitor:
    '''Track peak resident memory of the current process.

    Sampling runs on a daemon thread every *interval* seconds while enabled.
    '''

    def __init__(self, interval=0.1):
        '''Initialize resource monitor.

        Args:
            interval (float): Seconds between samples, defaults to 0.1
        '''
        self._process = psutil.Process(os.getpid())
        self._interval = interval
        self._enabled = False
        self._peak_rss = 0
        self._lock = threading.Lock()

    def enabled(self):
        '''Get enabled status.

        Returns:
            bool: True if enabled, False if disabled
        '''
        return self._enabled

    def enable(self):
        '''Start sampling.'''
        if self._enabled:
            return

        self._enabled = True
        self.sample()

        thread = threading.Thread(target = self._monitor)
        thread.daemon = True
        thread.start()

    def disable(self):
        '''Stop sampling after one final sample.'''
        if self._enabled:
            self.sample()

        self._enabled = False

    def sample(self):
        '''Record the current resident memory.

        Returns:
            int: Resident memory in bytes
        '''
        rss = self._process.memory_info().rss

        with self._lock:
            self._peak_rss = max(self._peak_rss, rss)

        return rss

    @property
    def peak_rss(self):
        '''int: Largest sampled resident memory in bytes'''
        with self._lock:
            return self._peak_rss

    def peak_mib(self):
        '''Largest sampled resident memory in MiB, rounded to one decimal place.'''
        return round(self.peak_rss / 2**20, 1)

    def _monitor(self):
        while self._enabled:
            try:
                self.sample()
            except psutil.Error as e:
                log.debug('Memory sample failed: %s', e)

            time.sleep(self._interval)


def git_describe(path=None):
    '''Source revision as reported by *git describe*, or 'unknown' outside a repository.'''
    path = path or os.path.dirname(os.path.abspath(__file__))

    try:
        result = subprocess.run(['git', 'describe', '--always', '--dirty'], cwd=path, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return 'unknown'

    if result.returncode != 0:
        return 'unknown'

    return result.stdout.strip() or 'unknown'


class RunRecord:
    '''Account of one training or evaluation run.

    Attributes:
        name (str): Run name
        config_hash (str): SHA-256 of the canonical configuration
        seed (int): Run seed
        revision (str): Source revision
        rows (list): Metric rows (epoch, loss, lr)
        timings (list): Wall-clock seconds per epoch
        peak_rss_mib (float): Peak resident memory in MiB
        parameter_counts (dict): Learnable values per component
        extra (dict): Additional fields
    '''

    def __init__(self, name, config, rows=None, timings=None, peak_rss_mib=None, parameter_counts=None, extra=None):
        self.name = name
        self.config_hash = config.config_hash()
        self.seed = config.seed
        self.revision = git_describe()
        self.rows = [list(row) for row in rows or []]
        self.timings = list(timings or [])
        self.peak_rss_mib = peak_rss_mib
        self.parameter_counts = dict(parameter_counts or {})
        self.extra = dict(extra or {})

    @staticmethod
    def from_trainer(trainer, monitor=None, extra=None):
        '''Build a record from a finished *pysimba.trainer.Trainer*.'''
        model = trainer.model

        if hasattr(model, 'parameter_counts'):
            counts = model.parameter_counts()
        else:
            counts = {'total': model.parameter_count()}

        return RunRecord(
            trainer.name,
            trainer.config,
            rows = trainer.rows,
            timings = trainer.timings,
            peak_rss_mib = monitor.peak_mib() if monitor else None,
            parameter_counts = counts,
            extra = extra
        )

    def to_dict(self):
        record = {
            'name': self.name,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'revision': self.revision,
            'rows': self.rows,
            'timings': self.timings,
            'total_seconds': sum(self.timings),
            'peak_rss_mib': self.peak_rss_mib,
            'parameter_counts': self.parameter_counts,
        }
        record.update(self.extra)
        return record

    def write(self, path):
        '''Write the record as indented JSON.

        Returns:
            str: *path*
        '''
        with open(path, 'w', encoding='utf-8') as fd:
            json.dump(self.to_dict(), fd, indent=2, sort_keys=True)
            fd.write('\n')

        return path
