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

'''
.. include:: ../README.md
.. include:: ../VERSION.md
.. include:: ../ROADMAP.md
'''

__docformat__ = 'google'
__version__ = '0.1.0'


import os
import logging

from pysimba.errors import SimbaError, DimensionError, NumericError, ContractError, CardinalityError
from pysimba.errors import ConfigError, CheckpointError, PointCloudFormatError, TrainingAborted
from pysimba.settings import PipelineConfig, ABLATIONS
from pysimba.tensor import Tensor, backward, no_grad
from pysimba.geometry import PointCloud, Source, TransformField
# modules importing geometry
from pysimba.metrics import chamfer_l1, chamfer_l2, f_score, mmd
from pysimba.diffusion import DiffusionSchedule, build_schedule, build_timestep_weights
from pysimba.checkpoint import save_checkpoint, load_checkpoint
from pysimba.synth import ShapeSpec, OcclusionSpec, Dataset, generate_shape, occlude, build_dataset
from pysimba.symmgt import SymmGtModel, train_stage1, regress_target_field
from pysimba.simba import SimbaModel, train_stage2, load_pipeline, complete
from pysimba.runmonitor import ResourceMonitor, RunRecord


LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def enable_logging(path=None, debug=False):
    '''Log pysimba messages to a file.

    Log file location: *~/pysimba.log* unless *path* is given.

    Args:
        path (str): Log file path, defaults to *~/pysimba.log*
        debug (bool): Log DEBUG messages too, defaults to False

    Returns:
        logging.Handler: The attached file handler
    '''
    path = path or os.path.join(os.path.expanduser('~'), 'pysimba.log')
    handler = logging.FileHandler(path, encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logger = logging.getLogger('pysimba')
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    return handler


def enable_debugging():
    '''Print DEBUG and higher pysimba messages to stderr.'''
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logger = logging.getLogger('pysimba')
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)
    return handler
