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

'''Exception types raised by pysimba.

Every exception derives from *SimbaError* and from the closest builtin exception, so callers can catch either. The command line interface maps these types to exit codes (see pysimba.__main__).
'''

__docformat__ = 'google'


class SimbaError(Exception):
    '''Base class for all pysimba errors.'''


class DimensionError(SimbaError, ValueError):
    '''Tensor shapes are incompatible for the requested operation.'''


class NumericError(SimbaError, ArithmeticError):
    '''A value left the domain of an operation, or a non-finite value was found.'''


class ContractError(SimbaError, ValueError):
    '''A function precondition was violated by the caller.'''


class CardinalityError(SimbaError, ValueError):
    '''A point cloud or field has the wrong number of entries.'''


class ConfigError(SimbaError, ValueError):
    '''Invalid configuration value, section, or option.'''


class CheckpointError(SimbaError, RuntimeError):
    '''A checkpoint could not be read or does not match the expected model.'''


class PointCloudFormatError(SimbaError, ValueError):
    '''Malformed XYZ or PLY point cloud file.

    Attributes:
        path (str): File path, or None when parsing text directly
        line (int): One-based line number of the offending line
    '''

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line

        if line is not None:
            message = 'line ' + str(line) + ': ' + message
        if path is not None:
            message = str(path) + ': ' + message

        super().__init__(message)


class TrainingAborted(SimbaError, RuntimeError):
    '''Training stopped because the loss became non-finite.

    Attributes:
        dump_path (str): Path of the diagnostic dump written before aborting
    '''

    def __init__(self, message, dump_path=None):
        self.dump_path = dump_path
        super().__init__(message)
