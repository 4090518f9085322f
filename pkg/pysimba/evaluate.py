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

'''Evaluation of predicted clouds against ground truth.

Predictions and ground truth are paired by file name stem: *<pred_dir>/<id>.ply* is compared with *<gt_dir>/<id>.ply* (XYZ files with '.xyz' or '.txt' extensions are accepted too). The shape family is taken from the 'comment label' header of the ground-truth PLY file, or 'unknown'.

CSV columns:

    scope     'shape' for per-shape rows, 'family' for per-family means, 'all' for the overall mean
    id        shape id, family name, or 'all'
    family    shape family
    count     number of shapes in the row
    cd_l1     l1 Chamfer distance x 1000
    cd_l2     l2 Chamfer distance x 1000
    f_score   F-Score with a threshold of 1% of the ground truth's largest bounding-box side
    mmd       minimum matching distance x 1000 over the group (l2 Chamfer), empty for shape rows or when not requested

Aggregate rows are plain means of the shape rows they cover. Shape rows are sorted by id, family rows by family name.

Typical usage example:

    ```
    report = evaluate_dirs('out', 'data/complete', with_mmd=True)
    report.write_csv('metrics.csv')
    ```
'''

__docformat__ = 'google'


import os
import csv
import logging
import concurrent.futures

import numpy as np
import psutil

from pysimba.geometry import Source, read_point_cloud
from pysimba.metrics import chamfer_l1, chamfer_l2, f_score, mmd, DEFAULT_TAU


CLOUD_EXTENSIONS = ('.ply', '.xyz', '.txt')
CSV_COLUMNS = ('scope', 'id', 'family', 'count', 'cd_l1', 'cd_l2', 'f_score', 'mmd')
SCALE = 1000.0

log = logging.getLogger(__name__)


def list_clouds(folder):
    '''Map file stems to paths for every point cloud file directly inside *folder*.'''
    clouds = {}

    for name in sorted(os.listdir(folder)):
        path = os.path.join(folder, name)
        stem, extension = os.path.splitext(name)

        if os.path.isfile(path) and extension.lower() in CLOUD_EXTENSIONS:
            clouds.setdefault(stem, path)

    return clouds


def _format(value):
    return '' if value is None else '{:.17g}'.format(value)


class EvalReport:
    '''Per-shape and aggregate metrics.

    Attributes:
        rows (list): Per-shape dicts with id, family, cd_l1, cd_l2, f_score
        aggregates (list): Per-family and overall dicts with the same keys plus count and mmd
        unmatched (list): Ids present in only one of the two folders
    '''

    def __init__(self, rows, aggregates, unmatched):
        self.rows = rows
        self.aggregates = aggregates
        self.unmatched = unmatched

    def write_csv(self, path):
        '''Write the report, shape rows first.

        Returns:
            str: *path*
        '''
        with open(path, 'w', newline='', encoding='utf-8') as fd:
            writer = csv.writer(fd, lineterminator='\n')
            writer.writerow(CSV_COLUMNS)

            for row in self.rows:
                writer.writerow(['shape', row['id'], row['family'], 1, _format(row['cd_l1']), _format(row['cd_l2']), _format(row['f_score']), ''])

            for row in self.aggregates:
                writer.writerow([row['scope'], row['id'], row['family'], row['count'], _format(row['cd_l1']),
                                 _format(row['cd_l2']), _format(row['f_score']), _format(row['mmd'])])

        return path


def gt_extent(gt):
    '''Largest side of the ground-truth bounding box, 1 for a cloud whose points coincide.'''
    points = gt.points
    extent = float(np.ptp(points, axis=0).max()) if len(points) else 0.0
    return extent if extent > 0 else 1.0


def shape_metrics(shape_id, pred, gt, tau=DEFAULT_TAU):
    '''Metrics of one prediction.

    Args:
        shape_id (str): Shape id
        pred (pysimba.geometry.PointCloud): Prediction
        gt (pysimba.geometry.PointCloud): Ground truth
        tau (float): F-Score threshold as a fraction of *gt_extent(gt)*, defaults to 0.01

    Returns:
        dict: id, family, cd_l1, cd_l2 (both x 1000), f_score, plus the clouds under 'pred' and 'gt'
    '''
    return {
        'id': shape_id,
        'family': gt.label or 'unknown',
        'cd_l1': chamfer_l1(pred, gt) * SCALE,
        'cd_l2': chamfer_l2(pred, gt) * SCALE,
        'f_score': f_score(pred, gt, tau * gt_extent(gt)),
        'pred': pred,
        'gt': gt,
    }


def load_pair(shape_id, pred_path, gt_path, tau=DEFAULT_TAU):
    '''Read a prediction and its ground truth and compute *shape_metrics()*.'''
    pred = read_point_cloud(pred_path, source=Source.REFINED)
    gt = read_point_cloud(gt_path, source=Source.GROUND_TRUTH)
    return shape_metrics(shape_id, pred, gt, tau)


def _aggregate(scope, name, family, rows, with_mmd):
    return {
        'scope': scope,
        'id': name,
        'family': family,
        'count': len(rows),
        'cd_l1': float(np.mean([row['cd_l1'] for row in rows])),
        'cd_l2': float(np.mean([row['cd_l2'] for row in rows])),
        'f_score': float(np.mean([row['f_score'] for row in rows])),
        'mmd': mmd([row['pred'] for row in rows], [row['gt'] for row in rows]) * SCALE if with_mmd else None,
    }


def evaluate_dirs(pred_dir, gt_dir, with_mmd=False, tau=DEFAULT_TAU, workers=0):
    '''Evaluate every prediction that has a ground-truth file with the same stem.

    Args:
        pred_dir (str): Folder of predicted clouds
        gt_dir (str): Folder of ground-truth clouds
        with_mmd (bool): Add minimum matching distance to aggregate rows, defaults to False
        tau (float): F-Score threshold as a fraction of each ground truth's extent, defaults to 0.01
        workers (int): Worker threads, defaults to the CPU count

    Returns:
        EvalReport: Metrics; *unmatched* lists ids found in only one folder

    Raises:
        OSError: Folder or file cannot be read
        pysimba.errors.PointCloudFormatError: Malformed cloud file
    '''
    predictions = list_clouds(pred_dir)
    truths = list_clouds(gt_dir)
    unmatched = sorted(set(predictions) ^ set(truths))
    ids = sorted(set(predictions) & set(truths))
    workers = workers or psutil.cpu_count() or 1
    log.info('Evaluating %d shapes, %d unmatched', len(ids), len(unmatched))

    with concurrent.futures.ThreadPoolExecutor(max_workers = workers) as pool:
        rows = list(pool.map(lambda shape_id: load_pair(shape_id, predictions[shape_id], truths[shape_id], tau), ids))

    return summarize(rows, with_mmd, unmatched)


def summarize(rows, with_mmd=False, unmatched=None):
    '''Build a report with per-family and overall means of *shape_metrics()* rows.'''
    rows = sorted(rows, key=lambda row: row['id'])
    aggregates = []

    for family in sorted({row['family'] for row in rows}):
        members = [row for row in rows if row['family'] == family]
        aggregates.append(_aggregate('family', family, family, members, with_mmd))

    if rows:
        aggregates.append(_aggregate('all', 'all', '', rows, with_mmd))

    return EvalReport(rows, aggregates, unmatched or [])
