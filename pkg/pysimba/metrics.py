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

'''Point cloud distance metrics.

Chamfer distances average the two directed mean nearest-neighbor distances:

    CD(P, Q) = 1/2 * (mean_p min_q d(p, q) + mean_q min_p d(p, q))

where *d* is the Euclidean distance (CD-l1) or the squared Euclidean distance (CD-l2). Both are symmetric in their arguments and zero exactly when the two point sets are equal as sets. Tables usually report values multiplied by 1000.

MMD is the minimum matching distance: for each reference cloud, the smallest CD-l2 to any predicted cloud, averaged over references.

Typical usage example:

    ```
    cd = chamfer_l1(prediction, ground_truth) * 1e3
    fs = f_score(prediction, ground_truth, tau=0.01)
    ```
'''

__docformat__ = 'google'


import numpy as np

from pysimba import tensor
from pysimba.geometry import PointCloud, nearest_neighbors
from pysimba.errors import ContractError


DEFAULT_TAU = 0.01
'''float: F-Score threshold, absolute here and a fraction of the ground-truth extent in *pysimba.evaluate*'''


def _points(cloud, name):
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)

    if points.ndim != 2 or points.shape[0] == 0:
        raise ContractError(name + ' point cloud is empty')

    return points


def _directed(p, q, name_p='first', name_q='second'):
    p = _points(p, name_p)
    q = _points(q, name_q)
    return nearest_neighbors(p, q)[0], nearest_neighbors(q, p)[0]


def chamfer_l1(p, q):
    '''Chamfer distance with Euclidean point distances.

    Args:
        p (PointCloud): First cloud, or an [N, 3] array
        q (PointCloud): Second cloud, or an [M, 3] array

    Returns:
        float: Distance

    Raises:
        ContractError: Either cloud is empty
    '''
    forward, reverse = _directed(p, q)
    return 0.5 * (float(np.sqrt(forward).mean()) + float(np.sqrt(reverse).mean()))


def chamfer_l2(p, q):
    '''Chamfer distance with squared Euclidean point distances.

    Raises:
        ContractError: Either cloud is empty
    '''
    forward, reverse = _directed(p, q)
    return 0.5 * (float(forward.mean()) + float(reverse.mean()))


def chamfer(p, q, kind='l1'):
    '''Chamfer distance selected by *kind* ('l1' or 'l2').'''
    if kind == 'l1':
        return chamfer_l1(p, q)
    if kind == 'l2':
        return chamfer_l2(p, q)

    raise ContractError('Unknown Chamfer kind \'' + str(kind) + '\'')


def precision_recall(pred, gt, tau=DEFAULT_TAU):
    '''Fraction of *pred* within *tau* of *gt*, and of *gt* within *tau* of *pred*.

    A point exactly *tau* away counts as a match.

    Returns:
        tuple: (precision, recall)
    '''
    if tau <= 0:
        raise ContractError('F-Score threshold must be positive, got ' + str(tau))

    forward, reverse = _directed(pred, gt, 'predicted', 'ground truth')
    return float((np.sqrt(forward) <= tau).mean()), float((np.sqrt(reverse) <= tau).mean())


def f_score(pred, gt, tau=DEFAULT_TAU):
    '''Harmonic mean of precision and recall at distance threshold *tau*.

    Args:
        pred (PointCloud): Predicted cloud
        gt (PointCloud): Ground truth cloud
        tau (float): Distance threshold, defaults to 0.01

    Returns:
        float: Score in [0, 1], 0 when precision and recall are both 0

    Raises:
        ContractError: Empty cloud or non-positive *tau*
    '''
    precision, recall = precision_recall(pred, gt, tau)

    if precision + recall == 0:
        return 0.0

    return 2.0 * precision * recall / (precision + recall)


def mmd(preds, refs):
    '''Minimum matching distance of reference clouds against predictions.

    Args:
        preds (list): Predicted PointCloud objects
        refs (list): Reference PointCloud objects

    Returns:
        float: Mean over *refs* of the smallest CD-l2 to any prediction

    Raises:
        ContractError: Either list is empty
    '''
    if not preds or not refs:
        raise ContractError('MMD requires nonempty prediction and reference lists')

    return float(np.mean([min(chamfer_l2(pred, ref) for pred in preds) for ref in refs]))


def chamfer_tensor(pred, target, kind='l1'):
    '''Differentiable Chamfer distance from predicted points to a constant target.

    Nearest-neighbor assignments are computed on the current values and held fixed; gradients flow through the distances of the assigned pairs.

    Args:
        pred (tensor.Tensor): Predicted points, shape [N, 3]
        target (numpy.ndarray): Target points, shape [M, 3]
        kind (str): 'l1' or 'l2', defaults to 'l1'

    Returns:
        tensor.Tensor: Scalar distance

    Raises:
        ContractError: Unknown kind or empty cloud
    '''
    target = _points(target, 'target')
    pred = tensor.as_tensor(pred)

    if pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError('Predicted points must be shaped [N, 3], got ' + str(pred.shape))

    _, to_target = nearest_neighbors(pred.data, target)
    _, to_pred = nearest_neighbors(target, pred.data)

    forward = pred - target[to_target]
    reverse = pred.take(to_pred, axis=0) - target

    if kind == 'l1':
        return 0.5 * (tensor.row_norm(forward).mean() + tensor.row_norm(reverse).mean())
    if kind == 'l2':
        return 0.5 * ((forward * forward).sum(axis=-1).mean() + (reverse * reverse).sum(axis=-1).mean())

    raise ContractError('Unknown Chamfer kind \'' + str(kind) + '\'')
