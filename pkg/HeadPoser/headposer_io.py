"""This module implements reading and writing the JSON files of HeadPoser:
feature models, training sample lists, pose reports and run metadata.

All JSON output is written with sorted keys, so that identical content
always gives identical bytes. Run metadata (timestamps, durations) goes
to a separate ``<report>.meta.json`` file next to the report.
"""
from __future__ import print_function, unicode_literals, division

import codecs
import collections
import datetime
import json
import logging
import os
import sys
import time

import numpy

from HeadPoser.errors import ConfigError, HistogramError, InputFileError
from HeadPoser.features import FeatureMask, FeatureModel, SignatureHistogram

__version__ = "0.0.1"


FEATURE_MODEL_VERSION = 1
REPORT_SCHEMA_VERSION = 1

TIME_KEY = '-time-'
TIME_HUMAN_KEY = '-time-human-'


def format_timestamp(now):
    return '{:%Y-%m-%d__%H:%M:%S}'.format(now)


def _to_builtin(obj):
    """Converts numpy scalars and arrays so that json can write them."""
    if isinstance(obj, dict):
        return collections.OrderedDict((k, _to_builtin(v)) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, numpy.ndarray):
        return _to_builtin(obj.tolist())
    if isinstance(obj, numpy.bool_):
        return bool(obj)
    if isinstance(obj, numpy.integer):
        return int(obj)
    if isinstance(obj, numpy.floating):
        return float(obj)
    return obj


def dumps(data):
    return json.dumps(_to_builtin(data), sort_keys=True, indent=2) + '\n'


def read_json(path, what='file'):
    """Loads a JSON file. Missing files raise InputFileError, malformed
    ones ConfigError."""
    if not os.path.isfile(path):
        raise InputFileError(path, reason='{0} not found'.format(what))
    with codecs.open(path, 'r', 'utf-8') as hdl:
        try:
            return json.load(hdl)
        except ValueError as e:
            raise ConfigError('{0} {1} is not valid JSON: {2}'.format(what, path, e))


def write_json(data, path):
    dirname = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(dirname):
        os.makedirs(dirname)
    with codecs.open(path, 'w', 'utf-8') as hdl:
        hdl.write(dumps(data))
    logging.info('write_json: wrote {0}'.format(path))


##############################################################################
# Feature models


def feature_model_to_dict(model):
    mask = model.mask
    return collections.OrderedDict([
        ('version', FEATURE_MODEL_VERSION),
        ('name', model.name),
        ('mask', {'width': mask.width,
                  'height': mask.height,
                  'anchor': list(mask.anchor),
                  'offsets': mask.offsets.tolist()}),
        ('angle_bins', model.angle_bins),
        ('brightness_bins', model.brightness_bins),
        ('non_edge', model.signature.non_edge_bin),
        ('edge_bins', model.signature.edge_bins.ravel().tolist()),
        ('training_count', model.training_count),
        ('floor', model.floor),
        ('angle_interpolation', model.angle_interpolation),
    ])


def feature_model_from_dict(data, source='<dict>'):
    try:
        if data.get('version', FEATURE_MODEL_VERSION) != FEATURE_MODEL_VERSION:
            raise ConfigError('Feature model {0}: unsupported version {1}'
                              ''.format(source, data['version']))
        m = data['mask']
        mask = FeatureMask(data['name'], m['offsets'], width=m['width'],
                           height=m['height'], anchor=m['anchor'])
        signature = SignatureHistogram(data['angle_bins'], data['brightness_bins'],
                                       edge_bins=data['edge_bins'],
                                       non_edge_bin=data['non_edge'], normalized=True)
        return FeatureModel(mask, signature, training_count=data.get('training_count', 1),
                            floor=data.get('floor', 1e-6),
                            angle_interpolation=bool(data.get('angle_interpolation', False)))
    except KeyError as e:
        raise ConfigError('Feature model {0}: missing key {1}'.format(source, e))
    except HistogramError as e:
        raise ConfigError('Feature model {0}: {1}'.format(source, e))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError('Feature model {0}: {1}'.format(source, e))


def save_feature_model(model, path):
    write_json(feature_model_to_dict(model), path)


def load_feature_model(path):
    return feature_model_from_dict(read_json(path, what='feature model'), source=path)


##############################################################################
# Training samples


class LabeledSample(object):
    """A training image, its optional silhouette mask, and the anchor
    position of every labeled feature."""
    def __init__(self, image, anchors, mask=None):
        self.image = image
        self.mask = mask
        self.anchors = collections.OrderedDict(
            (name, (int(x), int(y))) for name, (x, y) in anchors.items())

    def to_dict(self):
        d = {'image': self.image,
             'anchors': {name: list(xy) for name, xy in self.anchors.items()}}
        if self.mask is not None:
            d['mask'] = self.mask
        return d

    def __repr__(self):
        return 'LabeledSample({0})'.format(self.image)


def load_samples(path):
    """Reads a JSON list of ``{"image", "mask" (optional), "anchors"}``
    records. Relative paths are resolved against the list's directory."""
    data = read_json(path, what='sample list')
    if isinstance(data, dict):
        data = data.get('samples', [])
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    samples = []
    for i, record in enumerate(data):
        try:
            samples.append(LabeledSample(_resolve(record['image']), record['anchors'],
                                         mask=_resolve(record.get('mask'))))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError('Sample list {0}, record {1}: {2}'.format(path, i, e))
    return samples


def save_samples(samples, path):
    write_json([s.to_dict() for s in samples], path)


##############################################################################
# Reports and run metadata


def save_report(report, path):
    """Writes a pose report. Reports contain no timing information, so
    repeated runs on the same inputs write identical files."""
    report = dict(report)
    report.setdefault('schema_version', REPORT_SCHEMA_VERSION)
    if path is None or path == '-':
        sys.stdout.write(dumps(report))
    else:
        write_json(report, path)


def metadata_path(report_path):
    return report_path + '.meta.json'


def run_metadata(command, argv, start_time, end_time, extra=None):
    d = collections.OrderedDict()
    d['headposer_version'] = __version__
    d['command'] = command
    d['argv'] = list(argv)
    d[TIME_KEY] = start_time
    d[TIME_HUMAN_KEY] = format_timestamp(datetime.datetime.fromtimestamp(start_time))
    d['duration_s'] = round(end_time - start_time, 6)
    if extra:
        d.update(extra)
    return d


def save_run_metadata(report_path, command, argv, start_time, end_time=None, extra=None):
    """Writes ``<report_path>.meta.json``; nothing when the report goes to
    standard output."""
    if report_path is None or report_path == '-':
        return None
    if end_time is None:
        end_time = time.time()
    path = metadata_path(report_path)
    write_json(run_metadata(command, argv, start_time, end_time, extra=extra), path)
    return path
