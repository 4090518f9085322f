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

'''Ablation sweeps.

Every ablation id is trained under the same budget from the same Stage-1 teacher, then completes the held-out shapes of the dataset. The sweep writes one CSV row per id:

    ablation, predictor, upsampling, fusion, cd_l1, cd_l2, f_score, parameters, peak_rss_mib, train_seconds, config_hash

Chamfer columns are x 1000 means over the evaluated shapes. *peak_rss_mib* and *train_seconds* are measurements and differ between runs; all other columns are deterministic.
'''

__docformat__ = 'google'


import os
import csv
import logging

from pysimba.simba import train_stage2, load_pipeline, complete
from pysimba.evaluate import shape_metrics, summarize
from pysimba.runmonitor import ResourceMonitor, RunRecord
from pysimba.settings import ABLATIONS
from pysimba.errors import ConfigError


CSV_COLUMNS = ('ablation', 'predictor', 'upsampling', 'fusion', 'cd_l1', 'cd_l2', 'f_score', 'parameters', 'peak_rss_mib', 'train_seconds', 'config_hash')

log = logging.getLogger(__name__)


def evaluation_entries(dataset, limit=None):
    '''Held-out entries: the test split, or the validation split when the test split is empty.'''
    entries = dataset.entries('test') or dataset.entries('val')

    if not entries:
        raise ConfigError('Dataset has no held-out shapes to evaluate')

    return entries[:limit] if limit else entries


def run_ablation(ablation_id, stage1_ckpt, dataset, config, out_dir, epochs=None, limit=None):
    '''Train and evaluate one ablation.

    Args:
        ablation_id (str): One of *pysimba.settings.ABLATIONS*
        stage1_ckpt (str): Stage-1 checkpoint shared by every ablation
        dataset (pysimba.synth.Dataset): Dataset
        config (pysimba.settings.PipelineConfig): Base configuration
        out_dir (str): Sweep output directory; this ablation uses *<out_dir>/<ablation_id>*
        epochs (int): Stage-2 epochs, replaces *config.epochs* in the ablation config, defaults to None
        limit (int): Evaluate at most this many held-out shapes, defaults to all

    Returns:
        dict: CSV row values
    '''
    ablation_config = config.with_ablation(ablation_id)

    if epochs is not None:
        ablation_config = ablation_config.replace(epochs=epochs)

    run_dir = os.path.join(out_dir, ablation_id)
    monitor = ResourceMonitor()
    monitor.enable()

    try:
        trainer = train_stage2(stage1_ckpt, dataset, ablation_config, run_dir)
    finally:
        monitor.disable()

    record = RunRecord.from_trainer(trainer, monitor, extra={'ablation': ablation_id})
    record.write(os.path.join(run_dir, 'stage2-run.json'))

    pipeline = load_pipeline(trainer.checkpoint_path, ablation_config)
    rows = []

    for entry in evaluation_entries(dataset, limit):
        partial, gt = dataset.load(entry)
        rows.append(shape_metrics(entry.id, complete(pipeline, partial, ablation_config.seed).output, gt))

    overall = summarize(rows).aggregates[-1]
    log.info('Ablation %s: CD-l1 %.4f, CD-l2 %.4f, F-Score %.4f', ablation_id, overall['cd_l1'], overall['cd_l2'], overall['f_score'])

    return {
        'ablation': ablation_id,
        'predictor': ablation_config.predictor,
        'upsampling': 'x'.join(str(factor) for factor in ablation_config.upsampling),
        'fusion': '/'.join(ablation_config.fusion),
        'cd_l1': '{:.9g}'.format(overall['cd_l1']),
        'cd_l2': '{:.9g}'.format(overall['cd_l2']),
        'f_score': '{:.9g}'.format(overall['f_score']),
        'parameters': pipeline.model.parameter_count(),
        'peak_rss_mib': monitor.peak_mib(),
        'train_seconds': round(sum(trainer.timings), 3),
        'config_hash': ablation_config.config_hash(),
    }


def run_sweep(ablation_ids, stage1_ckpt, dataset, config, out_dir, epochs=None, limit=None):
    '''Run several ablations and write *<out_dir>/ablation.csv*.

    Args:
        ablation_ids (list): Ablation ids, defaults to all when empty

    Returns:
        str: CSV path

    Raises:
        ConfigError: Unknown ablation id
    '''
    ablation_ids = list(ablation_ids) or list(ABLATIONS)

    for ablation_id in ablation_ids:
        if ablation_id not in ABLATIONS:
            raise ConfigError('Unknown ablation \'' + str(ablation_id) + '\', expected one of ' + ', '.join(ABLATIONS))

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, 'ablation.csv')

    with open(path, 'w', newline='', encoding='utf-8') as fd:
        writer = csv.DictWriter(fd, fieldnames=CSV_COLUMNS, lineterminator='\n')
        writer.writeheader()

        for ablation_id in ablation_ids:
            writer.writerow(run_ablation(ablation_id, stage1_ckpt, dataset, config, out_dir, epochs, limit))
            fd.flush()

    return path
