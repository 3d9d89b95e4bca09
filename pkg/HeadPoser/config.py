"""This module implements the HeadPoser pipeline configuration.

Every free parameter of the pipeline lives in one JSON file; see
``headposer_config.json`` next to this module for a commented sample.
Values are resolved with the precedence *command-line flags > config file
> defaults*:

>>> config = PipelineConfig()
>>> config.measure, config.angle_bins, config.max_peaks_for('mouth')
('kullback', 8, 5)
>>> config.override(measure='l1', top_k=3).max_peaks_for('mouth')
3

Relative file paths in a config file are resolved against the directory
of that file.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
import collections
import copy
import logging
import os

from HeadPoser.constellation import ConstellationModel
from HeadPoser.errors import ConfigError
from HeadPoser.features import DEFAULT_ANGLE_BINS, DEFAULT_BRIGHTNESS_BINS, \
    DEFAULT_MODEL_FLOOR, MEASURE_KULLBACK, MEASURES
from HeadPoser.imaging import DEFAULT_EDGE_THRESHOLD
from HeadPoser.peaks import DEFAULT_MAX_PEAKS
from HeadPoser.pose import CameraModel, DEFAULT_NEAR_FRONTAL_EPSILON, \
    DEFAULT_SOLVER_TOL, TriangleModel

__version__ = "0.0.1"


DEFAULT_APPROXIMATE_TOL = 0.02
DEFAULT_SCALE_TOLERANCE = 0.5

# Keys of a feature entry.
FEATURE_KEYS = ('model', 'stencil', 'radius', 'max_peaks')

TOP_LEVEL_KEYS = ('edge_thresholds', 'angle_bins', 'brightness_bins', 'measure',
                  'model_floor', 'angle_interpolation', 'features', 'constellation',
                  'reference_head_height', 'scale_tolerance', 'camera', 'triangle',
                  'frontal_offset', 'near_frontal_epsilon', 'solver_tol', 'approximate_tol')


class FeatureConfig(object):
    """Per-feature settings: the model file, the training stencil, and
    the peak search parameters."""
    def __init__(self, name, model=None, stencil=None, radius=None, max_peaks=None):
        self.name = name
        self.model = model
        self.stencil = stencil
        self.radius = radius
        self.max_peaks = max_peaks

    def to_dict(self):
        return collections.OrderedDict((k, getattr(self, k)) for k in FEATURE_KEYS)

    def __repr__(self):
        return 'FeatureConfig({0}, model={1})'.format(self.name, self.model)


class PipelineConfig(object):
    """All parameters of a HeadPoser run."""
    def __init__(self):
        self.path = None
        self.edge_thresholds = None
        self.angle_bins = DEFAULT_ANGLE_BINS
        self.brightness_bins = DEFAULT_BRIGHTNESS_BINS
        self.measure = MEASURE_KULLBACK
        self.model_floor = DEFAULT_MODEL_FLOOR
        self.angle_interpolation = True
        self.features = collections.OrderedDict()
        self.max_peaks = DEFAULT_MAX_PEAKS
        self.constellation = None
        self.reference_head_height = None
        self.scale_tolerance = DEFAULT_SCALE_TOLERANCE
        self.focal = None
        self.principal_point = None
        self.triangle = None
        self.frontal_offset = (0.0, 0.0)
        self.near_frontal_epsilon = DEFAULT_NEAR_FRONTAL_EPSILON
        self.solver_tol = DEFAULT_SOLVER_TOL
        self.approximate_tol = DEFAULT_APPROXIMATE_TOL

    ##########################################################################
    # Loading

    @classmethod
    def from_file(cls, path):
        from HeadPoser.headposer_io import read_json
        data = read_json(path, what='config file')
        if not isinstance(data, dict):
            raise ConfigError('Config {0}: expected a JSON object'.format(path))
        config = cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
        config.path = path
        logging.info('PipelineConfig: loaded {0}'.format(path))
        return config

    @classmethod
    def from_dict(cls, data, base_dir=None):
        config = cls()
        unknown = [k for k in data if k not in TOP_LEVEL_KEYS and not k.startswith('_')]
        if unknown:
            raise ConfigError('Unknown config key(s): {0}'.format(', '.join(sorted(unknown))))

        def _path(p):
            if p is None or base_dir is None or os.path.isabs(p):
                return p
            return os.path.join(base_dir, p)

        thresholds = data.get('edge_thresholds')
        if thresholds is not None and not isinstance(thresholds, list):
            thresholds = [thresholds]
        config.edge_thresholds = thresholds
        config.angle_bins = data.get('angle_bins', config.angle_bins)
        config.brightness_bins = data.get('brightness_bins', config.brightness_bins)
        config.measure = data.get('measure', config.measure)
        config.model_floor = data.get('model_floor', config.model_floor)
        config.angle_interpolation = data.get('angle_interpolation', config.angle_interpolation)

        for name, entry in data.get('features', {}).items():
            if name.startswith('_'):
                continue
            if not isinstance(entry, dict):
                raise ConfigError('features.{0}: expected an object'.format(name))
            unknown = [k for k in entry if k not in FEATURE_KEYS and not k.startswith('_')]
            if unknown:
                raise ConfigError('features.{0}: unknown key(s) {1}'.format(name, unknown))
            config.features[name] = FeatureConfig(name, model=_path(entry.get('model')),
                                                  stencil=_path(entry.get('stencil')),
                                                  radius=entry.get('radius'),
                                                  max_peaks=entry.get('max_peaks'))

        if data.get('constellation') is not None:
            config.constellation = ConstellationModel.from_dict(data['constellation'])
        config.reference_head_height = data.get('reference_head_height')
        config.scale_tolerance = data.get('scale_tolerance', config.scale_tolerance)

        camera = data.get('camera') or {}
        config.focal = camera.get('focal')
        config.principal_point = camera.get('principal_point')

        triangle = data.get('triangle')
        if triangle is not None:
            try:
                config.triangle = TriangleModel(triangle['a'], triangle['b'], triangle['c'],
                                                ranges=triangle.get('ranges'))
            except KeyError as e:
                raise ConfigError('triangle: missing side {0}'.format(e))

        config.frontal_offset = tuple(data.get('frontal_offset', config.frontal_offset))
        config.near_frontal_epsilon = data.get('near_frontal_epsilon',
                                               config.near_frontal_epsilon)
        config.solver_tol = data.get('solver_tol', config.solver_tol)
        config.approximate_tol = data.get('approximate_tol', config.approximate_tol)

        config.validate()
        return config

    ##########################################################################
    # Overrides

    def override(self, measure=None, top_k=None, frontal_offset=None, focal=None,
                 approximate_tol=None):
        """A copy with the given (non-None) command-line values applied."""
        config = copy.deepcopy(self)
        if measure is not None:
            config.measure = measure
        if top_k is not None:
            config.max_peaks = top_k
            for feature in config.features.values():
                feature.max_peaks = None
        if frontal_offset is not None:
            config.frontal_offset = tuple(frontal_offset)
        if focal is not None:
            config.focal = focal
        if approximate_tol is not None:
            config.approximate_tol = approximate_tol
        config.validate()
        return config

    ##########################################################################
    # Validation

    def validate(self):
        def _positive_int(key, value):
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError('{0} must be a positive integer, got {1!r}'.format(key, value))

        def _positive(key, value, allow_none=False):
            if value is None and allow_none:
                return
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError('{0} must be a positive number, got {1!r}'.format(key, value))

        if self.edge_thresholds is not None:
            for t in self.edge_thresholds:
                if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 <= t <= 255:
                    raise ConfigError('edge_thresholds must lie in [0, 255], got {0!r}'
                                      ''.format(self.edge_thresholds))
        _positive_int('angle_bins', self.angle_bins)
        _positive_int('brightness_bins', self.brightness_bins)
        if self.brightness_bins > 256:
            raise ConfigError('brightness_bins must be at most 256')
        if self.measure not in MEASURES:
            raise ConfigError('measure must be one of {0}, got {1!r}'.format(MEASURES,
                                                                           self.measure))
        _positive('model_floor', self.model_floor)
        if self.model_floor >= 1:
            raise ConfigError('model_floor must be below 1')
        if not isinstance(self.angle_interpolation, bool):
            raise ConfigError('angle_interpolation must be true or false, got {0!r}'
                              ''.format(self.angle_interpolation))
        _positive_int('max_peaks', self.max_peaks)
        for name, feature in self.features.items():
            if feature.radius is not None:
                _positive_int('features.{0}.radius'.format(name), feature.radius)
            if feature.max_peaks is not None:
                _positive_int('features.{0}.max_peaks'.format(name), feature.max_peaks)
            if feature.stencil is not None and not os.path.isfile(feature.stencil):
                raise ConfigError('features.{0}.stencil: file not found: {1}'
                                  ''.format(name, feature.stencil))

        if self.constellation is not None and self.features:
            missing = [n for n in self.constellation.feature_names if n not in self.features]
            if missing:
                raise ConfigError('constellation.feature_names {0} have no features entry'
                                  ''.format(missing))
        _positive('reference_head_height', self.reference_head_height, allow_none=True)
        _positive('scale_tolerance', self.scale_tolerance)
        _positive('camera.focal', self.focal, allow_none=True)
        if self.principal_point is not None and len(self.principal_point) != 2:
            raise ConfigError('camera.principal_point must be [cx, cy]')
        if len(self.frontal_offset) != 2:
            raise ConfigError('frontal_offset must be [dx, dy]')
        _positive('near_frontal_epsilon', self.near_frontal_epsilon)
        _positive('solver_tol', self.solver_tol)
        _positive('approximate_tol', self.approximate_tol, allow_none=True)

    def require_models(self):
        """Checks that the settings needed for detection are present and
        that every model file exists."""
        if not self.features:
            raise ConfigError('features: no features configured')
        for name, feature in self.features.items():
            if feature.model is None:
                raise ConfigError('features.{0}.model: missing'.format(name))
            if not os.path.isfile(feature.model):
                raise ConfigError('features.{0}.model: file not found: {1}'
                                  ''.format(name, feature.model))
        if self.constellation is None:
            raise ConfigError('constellation: missing')
        self.require_pose()

    def require_pose(self):
        if self.focal is None:
            raise ConfigError('camera.focal: missing')
        if self.triangle is None:
            raise ConfigError('triangle: missing')

    def require_stencils(self):
        if not self.features:
            raise ConfigError('features: no features configured')
        for name, feature in self.features.items():
            if feature.stencil is None:
                raise ConfigError('features.{0}.stencil: missing'.format(name))
            if feature.model is None:
                raise ConfigError('features.{0}.model: missing output path'.format(name))

    ##########################################################################
    # Derived values

    @property
    def feature_names(self):
        if self.constellation is not None:
            return list(self.constellation.feature_names)
        return list(self.features.keys())

    def max_peaks_for(self, name):
        feature = self.features.get(name)
        if feature is not None and feature.max_peaks is not None:
            return feature.max_peaks
        return self.max_peaks

    def radius_for(self, name, mask):
        feature = self.features.get(name)
        if feature is not None and feature.radius is not None:
            return feature.radius
        return mask.suppression_radius()

    def thresholds_for(self, bands):
        if self.edge_thresholds is None:
            return [DEFAULT_EDGE_THRESHOLD] * bands
        if len(self.edge_thresholds) == 1:
            return list(self.edge_thresholds) * bands
        return list(self.edge_thresholds)

    def camera_for(self, width, height):
        return CameraModel.for_image(self.focal, width, height,
                                     principal_point=self.principal_point)

    def to_dict(self):
        d = collections.OrderedDict()
        d['edge_thresholds'] = self.edge_thresholds
        d['angle_bins'] = self.angle_bins
        d['brightness_bins'] = self.brightness_bins
        d['measure'] = self.measure
        d['model_floor'] = self.model_floor
        d['angle_interpolation'] = self.angle_interpolation
        d['features'] = collections.OrderedDict((n, f.to_dict())
                                                for n, f in self.features.items())
        d['constellation'] = None if self.constellation is None \
            else self.constellation.to_dict()
        d['reference_head_height'] = self.reference_head_height
        d['scale_tolerance'] = self.scale_tolerance
        d['camera'] = {'focal': self.focal,
                       'principal_point': None if self.principal_point is None
                       else list(self.principal_point)}
        d['triangle'] = None if self.triangle is None else self.triangle.to_dict()
        d['frontal_offset'] = list(self.frontal_offset)
        d['near_frontal_epsilon'] = self.near_frontal_epsilon
        d['solver_tol'] = self.solver_tol
        d['approximate_tol'] = self.approximate_tol
        return d
