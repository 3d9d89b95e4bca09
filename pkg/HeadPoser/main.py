#!/usr/bin/env python
"""HeadPoser estimates the orientation of a head from one image and its
silhouette mask. It locates both eyes and the mouth by edge-signature
matching, picks the best feature constellation, and solves the
perspective pose of the feature triangle.

Subcommands:

* ``train``  -- train feature models (and optionally the constellation
  model) from labeled images,
* ``detect`` -- run the whole pipeline on an image and write the pose
  report,
* ``pose``   -- solve the pose of three given image points,
* ``synth``  -- render synthetic fixtures with known ground truth.

Failures exit with a stable nonzero code and a one-line diagnostic on
standard error.
"""
from __future__ import print_function, unicode_literals, division

from builtins import range
import argparse
import collections
import logging
import os
import sys
import time

import numpy

from HeadPoser.config import PipelineConfig
from HeadPoser.errors import ConfigError, HeadPoserError
from HeadPoser.features import MEASURES
from HeadPoser.headposer_io import LabeledSample, load_samples, save_feature_model, \
    save_report, save_run_metadata, save_samples, write_json
from HeadPoser.imaging import load_image, save_image
from HeadPoser.pipeline import detect_pose, load_region, render_detection_overlay, \
    solve_pose_query, train_constellation, train_feature_models
from HeadPoser.pose import TriangleModel
from HeadPoser.synth import centered_translation, default_camera, generate_scene, \
    render_scene_fixture

__version__ = "0.0.1"


DEFAULT_SYNTH_TRIANGLE = (7.0, 7.0, 6.5)
DEFAULT_SYNTH_DEPTH = 40.0
DEFAULT_SYNTH_FOCAL = 320.0


##############################################################################


def _point(text):
    try:
        x, y = [float(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError('expected "x,y", got {0!r}'.format(text))
    return x, y


def _size(text):
    try:
        w, h = [int(v) for v in text.lower().split('x')]
    except ValueError:
        raise argparse.ArgumentTypeError('expected "WxH", got {0!r}'.format(text))
    return w, h


def build_argument_parser():
    parser = argparse.ArgumentParser(prog='headposer', description=__doc__, add_help=True,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)

    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Turn on INFO messages.')
    parser.add_argument('--debug', action='store_true',
                        help='Turn on DEBUG messages.')

    subparsers = parser.add_subparsers(dest='command')

    train = subparsers.add_parser('train', help='Train feature models.')
    train.add_argument('-c', '--config', required=True,
                       help='Pipeline config. Each feature needs a stencil and a model'
                            ' output path.')
    train.add_argument('-s', '--samples', required=True,
                       help='JSON list of labeled samples: image, optional mask,'
                            ' anchors per feature.')
    train.add_argument('--output-config',
                       help='Write a copy of the config with the trained constellation'
                            ' model here (needs at least 2 fully labeled samples).')

    detect = subparsers.add_parser('detect', help='Estimate the head pose in an image.')
    detect.add_argument('image', help='Input image (binary PGM or PPM).')
    detect.add_argument('-c', '--config', required=True, help='Pipeline config.')
    detect.add_argument('-m', '--mask',
                        help='Silhouette mask (binary PGM). Without it, the full frame'
                             ' is searched.')
    detect.add_argument('-o', '--output', default='-',
                        help='Pose report path; "-" writes to standard output.')
    detect.add_argument('--overlay', help='Write a PPM copy of the input with the'
                                          ' constellation and normal marked here.')
    detect.add_argument('--measure', choices=MEASURES, help='Histogram distance.')
    detect.add_argument('--top-k', type=int, help='Peaks kept per feature.')

    pose = subparsers.add_parser('pose', help='Solve the pose of three image points.')
    pose.add_argument('-c', '--config', required=True, help='Pipeline config.')
    pose.add_argument('--left-eye', type=_point, required=True, help='"x,y"')
    pose.add_argument('--right-eye', type=_point, required=True, help='"x,y"')
    pose.add_argument('--mouth', type=_point, required=True, help='"x,y"')
    pose.add_argument('--shift', type=_point,
                      help='Shift vector "dx,dy"; near-frontal when not given.')
    pose.add_argument('--image-size', type=_size,
                      help='"WxH", for the default principal point.')
    pose.add_argument('-o', '--output', default='-',
                      help='Pose report path; "-" writes to standard output.')

    synth = subparsers.add_parser('synth', help='Render synthetic fixtures.')
    synth.add_argument('-c', '--config',
                       help='Take the camera focal length and triangle from this config.')
    synth.add_argument('-o', '--output-dir', required=True)
    synth.add_argument('--name', default='fixture', help='File name prefix.')
    synth.add_argument('-n', '--count', type=int, default=1,
                       help='Number of fixtures. With more than one, or without'
                            ' explicit angles, the angles are drawn at random.')
    synth.add_argument('--yaw', type=float)
    synth.add_argument('--pitch', type=float)
    synth.add_argument('--roll', type=float)
    synth.add_argument('--depth', type=float, default=DEFAULT_SYNTH_DEPTH)
    synth.add_argument('--size', type=_size, default=(320, 240), help='"WxH"')
    synth.add_argument('--noise', type=int, default=0,
                       help='Uniform noise amplitude.')
    synth.add_argument('--seed', type=int, default=0)

    return parser


##############################################################################


def cmd_train(args):
    config = PipelineConfig.from_file(args.config)
    samples = load_samples(args.samples)
    models = train_feature_models(config, samples)
    for name, model in models.items():
        path = config.features[name].model
        save_feature_model(model, path)
        print('{0}: trained on {1} sample(s) -> {2}'.format(name, model.training_count, path))

    if args.output_config:
        constellation = train_constellation(config, samples)
        if constellation is None:
            raise ConfigError('--output-config: the constellation model needs at least'
                              ' 2 samples labeling every feature')
        config.constellation = constellation
        write_json(config.to_dict(), args.output_config)
        print('constellation: trained on {0} sample(s) -> {1}'
              ''.format(len(samples), args.output_config))
    return None


def cmd_detect(args):
    config = PipelineConfig.from_file(args.config).override(measure=args.measure,
                                                            top_k=args.top_k)
    img = load_image(args.image)
    region = load_region(img, args.mask)
    result = detect_pose(img, region, config)
    save_report(result.report(), args.output)
    if args.overlay:
        save_image(render_detection_overlay(img, result), args.overlay)
    return args.output


def cmd_pose(args):
    config = PipelineConfig.from_file(args.config)
    result = solve_pose_query([args.left_eye, args.right_eye, args.mouth], config,
                              image_size=args.image_size, shift=args.shift)
    save_report(result.report(), args.output)
    return args.output


def synth_rotations(args):
    """Explicit angles for a single fixture, random ones otherwise."""
    explicit = [args.yaw, args.pitch, args.roll]
    if args.count == 1 and any(a is not None for a in explicit):
        return [tuple(0.0 if a is None else a for a in explicit)]
    rng = numpy.random.RandomState(args.seed)
    return [(rng.uniform(-25, 25), rng.uniform(-20, 20), rng.uniform(-15, 15))
            for _ in range(args.count)]


def cmd_synth(args):
    width, height = args.size
    focal, sides = DEFAULT_SYNTH_FOCAL, DEFAULT_SYNTH_TRIANGLE
    if args.config:
        config = PipelineConfig.from_file(args.config)
        if config.focal is not None:
            focal = config.focal
        if config.triangle is not None:
            sides = config.triangle.sides
    tri = TriangleModel(*sides)
    camera = default_camera(width, height, focal)
    if not os.path.isdir(args.output_dir):
        os.makedirs(args.output_dir)

    samples = []
    for i, rotation in enumerate(synth_rotations(args)):
        scene = generate_scene(tri, rotation, centered_translation(tri, rotation, args.depth),
                               camera, seed=args.seed + i)
        fixture = render_scene_fixture(scene, width, height, noise=args.noise,
                                       seed=args.seed + i)
        stem = args.name if args.count == 1 else '{0}_{1:03d}'.format(args.name, i)
        image_path = os.path.join(args.output_dir, stem + '.ppm')
        mask_path = os.path.join(args.output_dir, stem + '_mask.pgm')
        save_image(fixture.image, image_path)
        save_image(fixture.silhouette.to_image(), mask_path)
        write_json(fixture.to_dict(), os.path.join(args.output_dir, stem + '.json'))
        samples.append(LabeledSample(os.path.basename(image_path), fixture.anchors,
                                     mask=os.path.basename(mask_path)))
        print('{0}: yaw {1:.3f}, pitch {2:.3f}, roll {3:.3f}'.format(stem, *fixture.scene.rotation))

    save_samples(samples, os.path.join(args.output_dir, args.name + '_samples.json'))
    return None


COMMANDS = collections.OrderedDict([('train', cmd_train),
                                    ('detect', cmd_detect),
                                    ('pose', cmd_pose),
                                    ('synth', cmd_synth)])


def main(args, argv=None):
    """Runs one subcommand. Returns the process exit code."""
    logging.info('Starting main...')
    _start_time = time.time()

    if args.command not in COMMANDS:
        sys.stderr.write('headposer: no subcommand given; use one of {0}\n'
                         ''.format(', '.join(COMMANDS)))
        return 2

    try:
        report_path = COMMANDS[args.command](args)
    except HeadPoserError as e:
        sys.stderr.write('headposer: {0}: {1}\n'.format(e.code_name, e))
        logging.debug('main: {0} failed'.format(args.command), exc_info=True)
        return e.exit_code

    _end_time = time.time()
    if report_path:
        save_run_metadata(report_path, args.command, argv or [], _start_time, _end_time)
    logging.info('headposer {0} done in {1:.3f} s'.format(args.command,
                                                         _end_time - _start_time))
    return 0


def run(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_argument_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.basicConfig(format='%(levelname)s: %(message)s', level=logging.INFO)
    if args.debug:
        logging.basicConfig(format='%(levelname)s: %(message)s', level=logging.DEBUG)

    return main(args, argv)


if __name__ == '__main__':
    sys.exit(run())
