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

'''Pipeline configuration.

Every hyperparameter and ablation switch lives in *PipelineConfig*. Configurations are read from ini files with strict parsing: unknown sections or options are errors, so ablation configs cannot silently drift. The configuration is embedded in every checkpoint together with its hash.

Example settings file:

    ```
    [model]
    n_keypoints=128
    feature_dim=64
    heads=2
    state_dim=8
    group_size=16
    predictor=diffusion

    [diffusion]
    timesteps=100
    beta_start=0.0001
    beta_end=0.02
    sampler=ddim
    sampler_steps=25
    lambda_mode=snr
    lambda_clamp=5.0
    proxy_timesteps=10
    joint_backprop=false

    [refiner]
    upsampling=2, 2, 4
    upsampling_total=16
    fusion=CA, CA, MFusion
    radius=0.1
    serialization=morton
    chamfer=l1

    [training]
    epochs=300
    warmup_epochs=20
    peak_lr=0.0002
    min_lr=0.00001
    weight_decay=0.0005
    batch_size=4
    seed=0

    [data]
    n_shapes=100
    families=box, cylinder, mirrored-composite, wing-profile, asymmetric-composite
    n_points=4096
    occlusion=half-space
    severity=0.5
    ```
'''

__docformat__ = 'google'


import json
import hashlib
import dataclasses
import configparser

from pysimba.errors import ConfigError


FUSION_KINDS = ('CA', 'MFusion', 'MLP')
PREDICTOR_KINDS = ('diffusion', 'regression')
FAMILIES = ('box', 'cylinder', 'mirrored-composite', 'wing-profile', 'asymmetric-composite')
OCCLUSION_MODES = ('half-space', 'viewpoint', 'patch')

ABLATIONS = {
    # (A) transformation prediction module
    'A1': {'predictor': 'diffusion'},
    'A2': {'predictor': 'regression'},
    # (B) progressive upsampling schedule, 16x total
    'B1': {'upsampling': (2, 2, 4), 'fusion': ('CA', 'CA', 'MFusion')},
    'B2': {'upsampling': (16,), 'fusion': ('MFusion',)},
    'B3': {'upsampling': (2, 8), 'fusion': ('CA', 'MFusion')},
    'B4': {'upsampling': (4, 4), 'fusion': ('CA', 'MFusion')},
    # (C) fusion strategy per refiner block
    'C1': {'upsampling': (2, 2, 4), 'fusion': ('CA', 'CA', 'MFusion')},
    'C2': {'upsampling': (2, 2, 4), 'fusion': ('MLP', 'MLP', 'MFusion')},
    'C3': {'upsampling': (2, 2, 4), 'fusion': ('CA', 'CA', 'MLP')},
    'C4': {'upsampling': (2, 2, 4), 'fusion': ('CA', 'CA', 'CA')},
    'C5': {'upsampling': (2, 2, 4), 'fusion': ('MFusion', 'MFusion', 'MFusion')},
}
'''dict: Ablation id to configuration overrides'''


def _bool(value):
    value = value.strip().lower()

    if value in ('true', 'yes', 'on', '1'):
        return True
    if value in ('false', 'no', 'off', '0'):
        return False

    raise ValueError('expected true or false')


def _int_tuple(value):
    return tuple(int(part) for part in value.split(',') if part.strip())


def _str_tuple(value):
    return tuple(part.strip() for part in value.split(',') if part.strip())


def _str(value):
    return value.strip()


# ini section -> option -> converter
_SETTINGS_MAP = {
    'model': {
        'n_keypoints': int,
        'feature_dim': int,
        'heads': int,
        'state_dim': int,
        'group_size': int,
        'predictor': _str,
    },
    'diffusion': {
        'timesteps': int,
        'beta_start': float,
        'beta_end': float,
        'sampler': _str,
        'sampler_steps': int,
        'lambda_mode': _str,
        'lambda_clamp': float,
        'proxy_timesteps': int,
        'joint_backprop': _bool,
    },
    'refiner': {
        'upsampling': _int_tuple,
        'upsampling_total': int,
        'fusion': _str_tuple,
        'radius': float,
        'serialization': _str,
        'chamfer': _str,
    },
    'training': {
        'epochs': int,
        'warmup_epochs': int,
        'peak_lr': float,
        'min_lr': float,
        'weight_decay': float,
        'beta1': float,
        'beta2': float,
        'adam_eps': float,
        'batch_size': int,
        'seed': int,
    },
    'data': {
        'n_shapes': int,
        'families': _str_tuple,
        'n_points': int,
        'occlusion': _str,
        'severity': float,
        'workers': int,
    },
}


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    '''All hyperparameters and ablation switches of both training stages.

    Instances are immutable; use *replace()* or *with_ablation()* to derive variants.
    '''
    # model
    n_keypoints: int = 128
    feature_dim: int = 64
    heads: int = 2
    state_dim: int = 8
    group_size: int = 16
    predictor: str = 'diffusion'
    # diffusion
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampler: str = 'ddim'
    sampler_steps: int = 25
    lambda_mode: str = 'snr'
    lambda_clamp: float = 5.0
    proxy_timesteps: int = 10
    joint_backprop: bool = False
    # refiner
    upsampling: tuple = (2, 2, 4)
    upsampling_total: int = 16
    fusion: tuple = ('CA', 'CA', 'MFusion')
    radius: float = 0.1
    serialization: str = 'morton'
    chamfer: str = 'l1'
    # training
    epochs: int = 300
    warmup_epochs: int = 20
    peak_lr: float = 2e-4
    min_lr: float = 1e-5
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    # data
    n_shapes: int = 100
    families: tuple = FAMILIES
    n_points: int = 4096
    occlusion: str = 'half-space'
    severity: float = 0.5
    workers: int = 0

    def validate(self):
        '''Check configuration invariants.

        Returns:
            PipelineConfig: This configuration, for chaining

        Raises:
            ConfigError: An invariant is violated
        '''
        product = 1
        for factor in self.upsampling:
            if factor < 2 or factor & (factor - 1):
                raise ConfigError('Upsampling factors must be powers of two >= 2, got ' + str(self.upsampling))
            product *= factor

        if product != self.upsampling_total:
            raise ConfigError('Upsampling factors {} multiply to {}, expected {}'.format(self.upsampling, product, self.upsampling_total))
        if len(self.fusion) != len(self.upsampling):
            raise ConfigError('Fusion list {} does not match {} refiner blocks'.format(self.fusion, len(self.upsampling)))
        for kind in self.fusion:
            if kind not in FUSION_KINDS:
                raise ConfigError('Unknown fusion kind \'' + kind + '\', expected one of ' + ', '.join(FUSION_KINDS))
        if self.predictor not in PREDICTOR_KINDS:
            raise ConfigError('Unknown predictor kind \'' + self.predictor + '\'')
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError('Require 0 < beta_start <= beta_end < 1, got {} and {}'.format(self.beta_start, self.beta_end))
        if self.sampler not in ('ddim', 'ddpm'):
            raise ConfigError('Unknown sampler \'' + self.sampler + '\'')
        if not 1 <= self.sampler_steps <= self.timesteps:
            raise ConfigError('sampler_steps must be in [1, timesteps], got ' + str(self.sampler_steps))
        if self.lambda_mode not in ('snr', 'uniform'):
            raise ConfigError('Unknown lambda_mode \'' + self.lambda_mode + '\'')
        if not 1 <= self.proxy_timesteps <= self.timesteps:
            raise ConfigError('proxy_timesteps must be in [1, timesteps], got ' + str(self.proxy_timesteps))
        if self.feature_dim < 1 or self.feature_dim % self.heads != 0:
            raise ConfigError('feature_dim {} is not divisible by heads {}'.format(self.feature_dim, self.heads))
        if self.state_dim < 1:
            raise ConfigError('state_dim must be at least 1')
        if self.n_keypoints < 1 or self.group_size < 1:
            raise ConfigError('n_keypoints and group_size must be positive')
        if self.serialization not in ('morton', 'axis'):
            raise ConfigError('Unknown serialization \'' + self.serialization + '\'')
        if self.chamfer not in ('l1', 'l2'):
            raise ConfigError('Unknown chamfer kind \'' + self.chamfer + '\'')
        if self.radius <= 0:
            raise ConfigError('radius must be positive')
        if self.epochs < 1 or self.warmup_epochs < 0 or self.batch_size < 1:
            raise ConfigError('epochs and batch_size must be positive, warmup_epochs non-negative')
        if not 0 < self.min_lr <= self.peak_lr:
            raise ConfigError('Require 0 < min_lr <= peak_lr')
        for family in self.families:
            if family not in FAMILIES:
                raise ConfigError('Unknown shape family \'' + family + '\'')
        if self.occlusion not in OCCLUSION_MODES:
            raise ConfigError('Unknown occlusion mode \'' + self.occlusion + '\'')
        if self.severity != 0 and not 0.25 <= self.severity <= 0.75:
            raise ConfigError('severity must be 0 or in [0.25, 0.75], got ' + str(self.severity))
        if self.n_points < 512:
            raise ConfigError('n_points must be at least 512')

        return self

    def replace(self, **changes):
        '''Get a validated copy with some fields changed.

        Raises:
            ConfigError: Unknown field or invalid result
        '''
        names = {field.name for field in dataclasses.fields(self)}

        for name in changes:
            if name not in names:
                raise ConfigError('Unknown configuration field \'' + name + '\'')

        return dataclasses.replace(self, **changes).validate()

    def with_ablation(self, ablation_id):
        '''Get a copy configured for an ablation id (A1, A2, B1-B4, C1-C5).

        Raises:
            ConfigError: Unknown ablation id
        '''
        if ablation_id not in ABLATIONS:
            raise ConfigError('Unknown ablation \'' + str(ablation_id) + '\', expected one of ' + ', '.join(ABLATIONS))

        return self.replace(**ABLATIONS[ablation_id])

    def to_dict(self):
        '''Get a JSON-compatible dictionary (tuples become lists).'''
        return {key: list(value) if isinstance(value, tuple) else value for key, value in dataclasses.asdict(self).items()}

    @staticmethod
    def from_dict(values):
        '''Build a validated configuration from *to_dict()* output.

        Raises:
            ConfigError: Unknown field or invalid value
        '''
        values = {key: tuple(value) if isinstance(value, list) else value for key, value in values.items()}
        return PipelineConfig().replace(**values)

    def config_hash(self):
        '''Get the SHA-256 hex digest of the canonical JSON dump.'''
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def n_blocks(self):
        '''Number of refiner blocks.'''
        return len(self.upsampling)

    @staticmethod
    def load(path, base=None):
        '''Load a configuration from an ini file.

        Options missing from the file keep the values of *base*.

        Args:
            path (str): Settings file path
            base (PipelineConfig): Starting values, defaults to *PipelineConfig()*

        Returns:
            PipelineConfig: Validated configuration

        Raises:
            ConfigError: File unreadable, unknown section or option, or invalid value
        '''
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = lambda option: option

        try:
            with open(path, 'r', encoding='utf-8') as fd:
                parser.read_file(fd)
        except OSError as e:
            raise ConfigError('Cannot read settings file ' + str(path) + ': ' + str(e)) from e
        except configparser.Error as e:
            raise ConfigError('Malformed settings file ' + str(path) + ': ' + str(e)) from e

        return PipelineConfig.from_parser(parser, base=base)

    @staticmethod
    def from_parser(parser, base=None):
        '''Build a configuration from a populated *configparser.ConfigParser*.'''
        if base is None:
            base = PipelineConfig()

        changes = {}

        for section in parser.sections():
            if section not in _SETTINGS_MAP:
                raise ConfigError('Unknown settings section [' + section + ']')

            for option, value in parser.items(section):
                if option not in _SETTINGS_MAP[section]:
                    raise ConfigError('Unknown option \'' + option + '\' in section [' + section + ']')

                try:
                    changes[option] = _SETTINGS_MAP[section][option](value)
                except ValueError as e:
                    raise ConfigError('Invalid value \'{}\' for [{}] {}: {}'.format(value, section, option, e)) from e

        return base.replace(**changes)

    def write(self, path):
        '''Write this configuration as an ini file readable by *load()*.'''
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = lambda option: option
        values = self.to_dict()

        for section, options in _SETTINGS_MAP.items():
            parser.add_section(section)

            for option in options:
                value = values[option]

                if isinstance(value, list):
                    value = ', '.join(str(item) for item in value)
                elif isinstance(value, bool):
                    value = 'true' if value else 'false'

                parser.set(section, option, str(value))

        with open(path, 'w', encoding='utf-8') as fd:
            parser.write(fd, space_around_delimiters=False)
