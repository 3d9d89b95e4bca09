"""This module implements the HeadPoser stages end to end, on top of the
individual modules:

* **training**: sharpen and detect edges in every labeled sample, then
  average the feature signatures under each feature's stencil
  (``train_feature_models``) and, given enough samples, estimate the
  constellation model (``train_constellation``);
* **detection**: sharpen, detect edges, build one likelihood map per
  feature, pick its peaks, find the best constellation, and solve and
  disambiguate the pose (``detect_pose``);
* **standalone pose**: solve the pose of three given image points
  (``solve_pose_query``).

The results know how to turn themselves into the JSON pose report.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
import collections
import logging
import time

import numpy

from HeadPoser.constellation import rank_constellations, scale_range_from_silhouette, \
    train_constellation_model
from HeadPoser.errors import ConfigError, HeadPoserError, NoEdgePointsError, TrainingError
from HeadPoser.features import build_likelihood_map, load_mask_stencil, train_model
from HeadPoser.headposer_io import REPORT_SCHEMA_VERSION, load_feature_model
from HeadPoser.imaging import SilhouetteMask, detect_color_edges, load_image, load_mask, \
    minmax_sharpen, render_overlay
from HeadPoser.peaks import find_peaks
from HeadPoser.pose import FEATURE_VERTICES, POINT_NAMES, ShiftVector, select_pose, \
    shift_vector, solve_triangle_pose

__version__ = "0.0.1"


# How many ranked constellations go into the report.
REPORTED_CONSTELLATIONS = 5

# Overlay arrow length, in pixels, for a normal lying in the image plane.
OVERLAY_ARROW_LENGTH = 60.0


def load_region(img, mask_path=None):
    """The silhouette from the mask file, or the full frame without one."""
    if mask_path is None:
        logging.info('load_region: no mask given, searching the full frame')
        return SilhouetteMask.full_frame(img.width, img.height)
    region = load_mask(mask_path)
    region.check_matches(img)
    return region


def extract_edges(img, region, config):
    """Min-max sharpening followed by the two-sided color edge detector."""
    sharpened = minmax_sharpen(img, region)
    return detect_color_edges(sharpened, region, config.thresholds_for(img.bands))


def triangle_projections(feature_names, positions):
    """Orders the feature positions as the pose solver's (M, L, R).

    Features named ``left_eye``, ``right_eye`` and ``mouth`` go to their
    vertices whatever their order in the config. Any other three names are
    read in config order as (left eye, right eye, mouth).

    >>> triangle_projections(['mouth', 'left_eye', 'right_eye'], ['m', 'l', 'r'])
    ['m', 'l', 'r']
    """
    if len(feature_names) != 3 or len(positions) != 3:
        raise ConfigError('Pose estimation needs exactly 3 features, got {0}'
                          ''.format(len(feature_names)))
    if set(feature_names) == set(FEATURE_VERTICES):
        by_vertex = dict((FEATURE_VERTICES[n], p) for n, p in zip(feature_names, positions))
        return [by_vertex[v] for v in POINT_NAMES]
    logging.info('triangle_projections: features {0} read as (left eye, right eye,'
                 ' mouth)'.format(list(feature_names)))
    left, right, mouth = positions
    return [mouth, left, right]


def _with_context(e, context):
    e.args = ('{0}: {1}'.format(context, e.args[0] if e.args else ''),) + tuple(e.args[1:])
    return e


##############################################################################
# Training


def train_feature_models(config, samples):
    """Trains one FeatureModel per configured feature.

    :param samples: A list of LabeledSample objects.

    :returns: An OrderedDict of FeatureModel objects keyed by feature name.
    """
    config.require_stencils()
    masks = collections.OrderedDict()
    for name, feature in config.features.items():
        try:
            masks[name] = load_mask_stencil(load_image(feature.stencil), name)
        except HeadPoserError as e:
            raise _with_context(e, 'feature {0}, stencil {1}'.format(name, feature.stencil))

    per_feature = collections.OrderedDict((name, []) for name in masks)
    for sample in samples:
        try:
            img = load_image(sample.image)
            region = load_region(img, sample.mask)
            edges = extract_edges(img, region, config)
        except HeadPoserError as e:
            raise _with_context(e, 'sample {0}'.format(sample.image))
        for name in masks:
            if name in sample.anchors:
                per_feature[name].append((sample, edges, region, sample.anchors[name]))

    models = collections.OrderedDict()
    for name, mask in masks.items():
        items = per_feature[name]
        if not items:
            raise TrainingError('feature {0}: no labeled sample'.format(name))
        for sample, edges, region, anchor in items:
            if not mask.fits_at(anchor[0], anchor[1], edges.width, edges.height):
                raise _with_context(
                    TrainingError('mask exits the frame at anchor {0}'.format(anchor)),
                    'sample {0}, feature {1}'.format(sample.image, name))
        try:
            models[name] = train_model([(e, r, a) for _, e, r, a in items], mask,
                                       config.angle_bins, config.brightness_bins,
                                       config.model_floor,
                                       config.angle_interpolation)
        except HeadPoserError as e:
            raise _with_context(e, 'feature {0}'.format(name))
    return models


def train_constellation(config, samples):
    """Estimates the constellation model from samples labeling every
    feature; None with fewer than two such samples."""
    names = config.feature_names
    complete = [[s.anchors[n] for n in names] for s in samples
                if all(n in s.anchors for n in names)]
    if len(complete) < 2:
        logging.info('train_constellation: {0} complete sample(s), constellation model'
                     ' not trained'.format(len(complete)))
        return None
    chirality = True if config.constellation is None else config.constellation.chirality_check
    return train_constellation_model(complete, names, chirality_check=chirality)


##############################################################################
# Detection


class DetectionResult(object):
    """Everything the detection pipeline found, stage by stage."""
    def __init__(self, feature_names, candidates, ranking, shift, solutions, selected,
                 edges=None, maps=None):
        self.feature_names = feature_names
        self.candidates = candidates
        self.ranking = ranking
        self.shift = shift
        self.solutions = solutions
        self.selected = selected
        self.edges = edges
        self.maps = maps

    @property
    def constellation(self):
        return self.ranking[0]

    @property
    def selected_solution(self):
        return self.solutions[self.selected]

    @property
    def angles(self):
        return self.selected_solution.angles

    def positions(self):
        return collections.OrderedDict(zip(self.feature_names, self.constellation.positions))

    def report(self):
        best = self.constellation
        report = pose_report(self.feature_names, best.positions, self.solutions,
                             self.selected, self.shift, peak_scores=best.peak_scores)
        report['candidates'] = collections.OrderedDict(
            (name, [p.to_dict() for p in self.candidates[name]]) for name in self.feature_names)
        report['rank'] = best.rank
        report['log_rank'] = best.log_rank if best.log_rank > -numpy.inf else None
        report['density'] = best.density
        report['scale'] = best.scale
        report['ranking'] = [c.to_dict() for c in self.ranking[:REPORTED_CONSTELLATIONS]]
        return report


def pose_report(feature_names, positions, solutions, selected, shift, peak_scores=None):
    """The pose report payload (without candidates and ranking)."""
    constellation = collections.OrderedDict()
    for i, (name, (x, y)) in enumerate(zip(feature_names, positions)):
        entry = collections.OrderedDict([('x', x), ('y', y)])
        if peak_scores is not None:
            entry['score'] = peak_scores[i]
        constellation[name] = entry
    yaw, pitch, roll = solutions[selected].angles
    return collections.OrderedDict([
        ('schema_version', REPORT_SCHEMA_VERSION),
        ('constellation', constellation),
        ('solutions', [s.to_dict() for s in solutions]),
        ('selected', selected),
        ('angles_deg', collections.OrderedDict([('yaw', yaw), ('pitch', pitch),
                                                ('roll', roll)])),
        ('shift_vector', shift.to_dict()),
    ])


def load_feature_models(config):
    config.require_models()
    models = collections.OrderedDict()
    for name in config.feature_names:
        model = load_feature_model(config.features[name].model)
        if model.name != name:
            logging.warning('load_feature_models: model file {0} is named {1}, used for'
                            ' feature {2}'.format(config.features[name].model, model.name,
                                                  name))
        if (model.angle_bins, model.brightness_bins) != (config.angle_bins,
                                                         config.brightness_bins):
            logging.info('load_feature_models: feature {0} uses its model\'s {1}x{2} bins'
                         ''.format(name, model.angle_bins, model.brightness_bins))
        if model.angle_interpolation != config.angle_interpolation:
            logging.info('load_feature_models: feature {0} votes the way its model was'
                         ' trained (angle_interpolation={1})'.format(name,
                                                                     model.angle_interpolation))
        models[name] = model
    return models


def detect_pose(img, region, config, models=None, keep_intermediates=False):
    """Runs the whole detection pipeline on one image.

    :param img: The input Image.

    :param region: The head SilhouetteMask; also the search region.

    :param models: Feature models keyed by name; loaded from the config
        when not given.

    :returns: A DetectionResult.
    """
    _start_time = time.time()
    if models is None:
        models = load_feature_models(config)
    else:
        config.require_pose()
    if config.constellation is None:
        raise ConfigError('constellation: missing')
    names = config.feature_names

    edges = extract_edges(img, region, config)
    if len(edges) == 0:
        raise NoEdgePointsError('detect_pose: no edge points in the search region')

    candidates = collections.OrderedDict()
    maps = collections.OrderedDict()
    for name in names:
        model = models[name]
        likelihood = build_likelihood_map(edges, region, model, config.measure)
        candidates[name] = find_peaks(likelihood, config.radius_for(name, model.mask),
                                      config.max_peaks_for(name))
        if keep_intermediates:
            maps[name] = likelihood

    constellation_model = config.constellation
    if config.reference_head_height is not None:
        scale_range = scale_range_from_silhouette(region, config.reference_head_height,
                                                  config.scale_tolerance)
        logging.info('detect_pose: admissible scale range {0:.3f} - {1:.3f}'
                     ''.format(*scale_range))
        constellation_model = constellation_model.with_scale_range(scale_range)
    ranking = rank_constellations(candidates, constellation_model)
    best = ranking[0]

    s = shift_vector(best.positions, region, config.frontal_offset,
                     config.near_frontal_epsilon)
    camera = config.camera_for(img.width, img.height)
    solutions = solve_triangle_pose(triangle_projections(names, best.positions), camera,
                                    config.triangle, tol=config.solver_tol,
                                    approximate_tol=config.approximate_tol)
    chosen = select_pose(solutions, s)
    selected = solutions.index(chosen)

    logging.info('detect_pose: done in {0:.3f} s, angles (yaw, pitch, roll) = {1}'
                 ''.format(time.time() - _start_time,
                           tuple(round(a, 3) for a in chosen.angles)))
    return DetectionResult(names, candidates, ranking, s, solutions, selected,
                           edges=edges if keep_intermediates else None,
                           maps=maps if keep_intermediates else None)


def render_detection_overlay(img, result):
    """The input image with the constellation circled and the selected
    normal drawn from the feature centroid."""
    positions = result.constellation.positions
    n = result.selected_solution.normal
    cx, cy = numpy.mean(numpy.asarray(positions, dtype=numpy.float64), axis=0)
    arrow = ((cx, cy), (cx + OVERLAY_ARROW_LENGTH * n[0], cy + OVERLAY_ARROW_LENGTH * n[1]))
    return render_overlay(img, positions, arrow=arrow)


##############################################################################
# Standalone pose


class PoseQueryResult(object):
    def __init__(self, feature_names, positions, solutions, selected, shift):
        self.feature_names = feature_names
        self.positions = positions
        self.solutions = solutions
        self.selected = selected
        self.shift = shift

    @property
    def selected_solution(self):
        return self.solutions[self.selected]

    @property
    def angles(self):
        return self.selected_solution.angles

    def report(self):
        return pose_report(self.feature_names, self.positions, self.solutions,
                           self.selected, self.shift)


def solve_pose_query(positions, config, image_size=None, shift=None):
    """Solves the pose of three labeled image points.

    :param positions: ``(x, y)`` of the left eye, right eye and mouth.

    :param image_size: ``(width, height)``, needed for the default
        principal point when the config gives none.

    :param shift: Optional ``(dx, dy)`` shift vector; near-frontal when
        not given.
    """
    config.require_pose()
    if config.principal_point is None and image_size is None:
        raise ConfigError('camera.principal_point: missing, and no image size given')
    width, height = image_size if image_size is not None else (1, 1)
    camera = config.camera_for(width, height)

    names = ['left_eye', 'right_eye', 'mouth']
    if config.constellation is not None and len(config.feature_names) == 3:
        names = config.feature_names
    positions = [(float(x), float(y)) for x, y in positions]
    if shift is None:
        s = ShiftVector.frontal()
    else:
        s = ShiftVector.from_vector(shift[0], shift[1], config.near_frontal_epsilon)

    solutions = solve_triangle_pose(triangle_projections(names, positions), camera,
                                    config.triangle, tol=config.solver_tol,
                                    approximate_tol=config.approximate_tol)
    selected = solutions.index(select_pose(solutions, s))
    return PoseQueryResult(names, positions, solutions, selected, s)
