import json
import os
import shutil
import tempfile
import unittest

from HeadPoser.errors import ConfigError, InputFileError
from HeadPoser.headposer_io import TIME_KEY, metadata_path
from HeadPoser.main import build_argument_parser, run
from HeadPoser.pose import TriangleModel
from HeadPoser.synth import centered_translation, default_camera, generate_scene


PACKAGE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
EYE_STENCIL = os.path.join(PACKAGE_DIR, 'data', 'stencils', 'eye.pgm')
MOUTH_STENCIL = os.path.join(PACKAGE_DIR, 'data', 'stencils', 'mouth.pgm')

CONSTELLATION = {'feature_names': ['left_eye', 'right_eye', 'mouth'],
                 'mean_distances': [52.0, 56.0, 56.0],
                 'covariance': [60.84, 0.0, 0.0, 0.0, 70.56, 0.0, 0.0, 0.0, 70.56]}


class ParserTest(unittest.TestCase):
    def test_subcommands(self):
        parser = build_argument_parser()
        args = parser.parse_args(['detect', 'face.ppm', '-c', 'c.json', '--top-k', '3'])
        self.assertEqual(args.command, 'detect')
        self.assertEqual(args.top_k, 3)
        self.assertEqual(args.output, '-')
        args = parser.parse_args(['pose', '-c', 'c.json', '--left-eye', '1,2',
                                  '--right-eye', '3.5,2', '--mouth', '2,5',
                                  '--image-size', '320x240'])
        self.assertEqual(args.right_eye, (3.5, 2.0))
        self.assertEqual(args.image_size, (320, 240))

    def test_bad_point(self):
        with self.assertRaises(SystemExit):
            build_argument_parser().parse_args(['pose', '-c', 'c.json', '--left-eye', '1',
                                                '--right-eye', '3,2', '--mouth', '2,5'])

    def test_no_subcommand(self):
        self.assertEqual(run([]), 2)


class CommandsTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def path(self, *parts):
        return os.path.join(self.tmpdir, *parts)

    def write_json(self, data, name):
        with open(self.path(name), 'w') as hdl:
            json.dump(data, hdl)
        return self.path(name)

    def features(self):
        return {'left_eye': {'stencil': EYE_STENCIL, 'model': 'models/left_eye.json'},
                'right_eye': {'stencil': EYE_STENCIL, 'model': 'models/right_eye.json'},
                'mouth': {'stencil': MOUTH_STENCIL, 'model': 'models/mouth.json'}}

    def test_synth_train_detect(self):
        self.assertEqual(run(['synth', '-o', self.path('train'), '-n', '4', '--seed', '3']), 0)
        samples = self.path('train', 'fixture_samples.json')
        for stem in ('fixture_000', 'fixture_003'):
            self.assertTrue(os.path.isfile(self.path('train', stem + '.ppm')))
            self.assertTrue(os.path.isfile(self.path('train', stem + '_mask.pgm')))

        self.assertEqual(run(['synth', '-o', self.path('query'), '--name', 'query',
                              '--yaw', '15', '--pitch', '5', '--roll', '3']), 0)
        with open(self.path('query', 'query.json')) as hdl:
            truth = json.load(hdl)

        config = self.write_json({'features': self.features(),
                                  'constellation': CONSTELLATION,
                                  'camera': {'focal': 320.0},
                                  'triangle': {'a': 7.0, 'b': 7.0, 'c': 6.5}},
                                 'config.json')
        trained = self.path('trained.json')
        self.assertEqual(run(['train', '-c', config, '-s', samples,
                              '--output-config', trained]), 0)
        for name in ('left_eye', 'right_eye', 'mouth'):
            self.assertTrue(os.path.isfile(self.path('models', name + '.json')))
        with open(trained) as hdl:
            self.assertEqual(json.load(hdl)['constellation']['feature_names'],
                             CONSTELLATION['feature_names'])

        reports = []
        for name in ('a.json', 'b.json'):
            self.assertEqual(run(['detect', self.path('query', 'query.ppm'), '-c', config,
                                  '-m', self.path('query', 'query_mask.pgm'),
                                  '-o', self.path(name),
                                  '--overlay', self.path(name + '.ppm')]), 0)
            with open(self.path(name), 'rb') as hdl:
                reports.append(hdl.read())
            self.assertTrue(os.path.isfile(self.path(name + '.ppm')))
            with open(metadata_path(self.path(name))) as hdl:
                self.assertIn(TIME_KEY, json.load(hdl))
        self.assertEqual(reports[0], reports[1])

        report = json.loads(reports[0].decode('utf-8'))
        for name, (x, y) in truth['anchors'].items():
            self.assertLessEqual(abs(report['constellation'][name]['x'] - x), 1)
            self.assertLessEqual(abs(report['constellation'][name]['y'] - y), 1)
        for key, expected in truth['rotation_deg'].items():
            self.assertAlmostEqual(report['angles_deg'][key], expected, delta=2.0)

    def test_pose(self):
        tri = TriangleModel(7.0, 7.0, 6.5)
        rotation = (15.0, 5.0, 3.0)
        scene = generate_scene(tri, rotation, centered_translation(tri, rotation, 40.0),
                               default_camera())
        (mx, my), (lx, ly), (rx, ry) = scene.projections
        config = self.write_json({'camera': {'focal': 320.0},
                                  'triangle': {'a': 7.0, 'b': 7.0, 'c': 6.5}},
                                 'pose.json')
        output = self.path('pose_report.json')
        n = scene.normal
        self.assertEqual(run(['pose', '-c', config,
                              '--left-eye', '{0:.17g},{1:.17g}'.format(float(lx), float(ly)),
                              '--right-eye', '{0:.17g},{1:.17g}'.format(float(rx), float(ry)),
                              '--mouth', '{0:.17g},{1:.17g}'.format(float(mx), float(my)),
                              '--shift', '{0:.17g},{1:.17g}'.format(float(40 * n[0]),
                                                                  float(40 * n[1])),
                              '--image-size', '320x240', '-o', output]), 0)
        with open(output) as hdl:
            angles = json.load(hdl)['angles_deg']
        self.assertAlmostEqual(angles['yaw'], 15.0, places=5)
        self.assertAlmostEqual(angles['pitch'], 5.0, places=5)
        self.assertAlmostEqual(angles['roll'], 3.0, places=5)

    def test_error_exit_codes(self):
        config = self.write_json({'features': self.features(),
                                  'constellation': CONSTELLATION,
                                  'camera': {'focal': 320.0},
                                  'triangle': {'a': 7.0, 'b': 7.0, 'c': 6.5}}, 'config.json')
        missing_image = self.path('missing.ppm')
        self.assertEqual(run(['detect', missing_image, '-c', config]),
                         InputFileError.exit_code)
        self.assertEqual(run(['detect', missing_image, '-c', self.path('nope.json')]),
                         InputFileError.exit_code)

        self.assertEqual(run(['synth', '-o', self.path('query'), '--name', 'query',
                              '--yaw', '10']), 0)
        self.assertEqual(run(['detect', self.path('query', 'query.ppm'), '-c', config]),
                         ConfigError.exit_code)
        self.assertEqual(run(['pose', '-c', config, '--left-eye', '130,100',
                              '--right-eye', '190,100', '--mouth', '160,150']),
                         ConfigError.exit_code)


if __name__ == '__main__':
    unittest.main()
