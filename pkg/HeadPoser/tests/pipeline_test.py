import collections
import os
import shutil
import tempfile
import unittest

import numpy

from HeadPoser.config import PipelineConfig
from HeadPoser.errors import ConfigError, MaskOutOfFrameError, NoEdgePointsError, \
    TrainingError
from HeadPoser.features import load_mask_stencil, train_model
from HeadPoser.headposer_io import LabeledSample
from HeadPoser.imaging import Image, SilhouetteMask, load_image, save_image
from HeadPoser.pipeline import detect_pose, extract_edges, render_detection_overlay, \
    solve_pose_query, train_constellation, train_feature_models, triangle_projections
from HeadPoser.pose import TriangleModel
from HeadPoser.synth import centered_translation, default_camera, generate_scene, \
    render_scene_fixture


PACKAGE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
STENCILS = {'left_eye': os.path.join(PACKAGE_DIR, 'data', 'stencils', 'eye.pgm'),
            'right_eye': os.path.join(PACKAGE_DIR, 'data', 'stencils', 'eye.pgm'),
            'mouth': os.path.join(PACKAGE_DIR, 'data', 'stencils', 'mouth.pgm')}

TRIANGLE = TriangleModel(7.0, 7.0, 6.5)
DEPTH = 40.0

CONSTELLATION = {'feature_names': ['left_eye', 'right_eye', 'mouth'],
                 'mean_distances': [52.0, 56.0, 56.0],
                 'covariance': [60.84, 0.0, 0.0, 0.0, 70.56, 0.0, 0.0, 0.0, 70.56]}


def make_fixture(rotation, noise=0, seed=0):
    scene = generate_scene(TRIANGLE, rotation, centered_translation(TRIANGLE, rotation, DEPTH),
                           default_camera(), seed=seed)
    return render_scene_fixture(scene, noise=noise, seed=seed)


def random_rotations(rng, count):
    """Poses far enough from frontal for the shift vector to pick a
    side."""
    rotations = []
    for _ in range(count):
        yaw = rng.choice([-1.0, 1.0]) * rng.uniform(8.0, 25.0)
        rotations.append((yaw, rng.uniform(-15.0, 15.0), rng.uniform(-12.0, 12.0)))
    return rotations


def fixture_config(fixture, **overrides):
    data = {'constellation': CONSTELLATION,
            'camera': {'focal': 320.0},
            'triangle': {'a': 7.0, 'b': 7.0, 'c': 6.5}}
    data.update(overrides)
    return PipelineConfig.from_dict(data)


def train_models_on(fixtures):
    config = PipelineConfig()
    models = collections.OrderedDict()
    edges = [(extract_edges(f.image, f.silhouette, config), f) for f in fixtures]
    for name, path in STENCILS.items():
        mask = load_mask_stencil(load_image(path), name)
        models[name] = train_model([(e, f.silhouette, f.anchors[name]) for e, f in edges],
                                   mask, angle_interpolation=config.angle_interpolation)
    return models


def max_feature_error(result, fixture):
    return max(max(abs(x - fixture.anchors[name][0]), abs(y - fixture.anchors[name][1]))
               for name, (x, y) in result.positions().items())


class DetectionTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.training = [make_fixture(r) for r in [(12.0, 5.0, 3.0), (-15.0, -6.0, -4.0),
                                                  (0.0, 0.0, 0.0)]]
        cls.models = train_models_on(cls.training)

    def test_noiseless_fixtures(self):
        rng = numpy.random.RandomState(42)
        for i, rotation in enumerate(random_rotations(rng, 20)):
            fixture = make_fixture(rotation, seed=i)
            result = detect_pose(fixture.image, fixture.silhouette, fixture_config(fixture),
                                 models=self.models)
            self.assertLessEqual(max_feature_error(result, fixture), 1, msg=str(rotation))
            for angle, expected in zip(result.angles, fixture.scene.rotation):
                self.assertAlmostEqual(angle, expected, delta=2.0, msg=str(rotation))

    def test_noisy_fixtures(self):
        rng = numpy.random.RandomState(43)
        located = 0
        for i, rotation in enumerate(random_rotations(rng, 20)):
            fixture = make_fixture(rotation, noise=10, seed=100 + i)
            result = detect_pose(fixture.image, fixture.silhouette, fixture_config(fixture),
                                 models=self.models)
            if max_feature_error(result, fixture) <= 2:
                located += 1
        self.assertGreaterEqual(located, 18)

    def test_report_contents(self):
        fixture = make_fixture((15.0, 4.0, -3.0))
        result = detect_pose(fixture.image, fixture.silhouette, fixture_config(fixture),
                             models=self.models, keep_intermediates=True)
        report = result.report()
        for key in ('constellation', 'solutions', 'selected', 'angles_deg',
                    'shift_vector', 'candidates', 'rank', 'density', 'scale', 'ranking'):
            self.assertIn(key, report)
        self.assertEqual(list(report['constellation']), ['left_eye', 'right_eye', 'mouth'])
        self.assertLessEqual(len(report['solutions']), 4)
        self.assertEqual(report['angles_deg']['yaw'], result.angles[0])
        self.assertEqual(sorted(result.maps), ['left_eye', 'mouth', 'right_eye'])
        self.assertGreater(len(result.edges), 0)

        overlay = render_detection_overlay(fixture.image, result)
        self.assertEqual((overlay.width, overlay.height, overlay.bands), (320, 240, 3))
        self.assertNotEqual(overlay, fixture.image)

    def test_reference_head_height_keeps_true_scale(self):
        fixture = make_fixture((10.0, -5.0, 2.0))
        top, _, bottom, _ = fixture.silhouette.bounding_box()
        config = fixture_config(fixture, reference_head_height=float(bottom - top))
        result = detect_pose(fixture.image, fixture.silhouette, config, models=self.models)
        self.assertLessEqual(max_feature_error(result, fixture), 1)

    def test_blank_image_has_no_edges(self):
        fixture = self.training[0]
        blank = Image.from_array(numpy.full((240, 320, 3), 128, dtype=numpy.uint8))
        with self.assertRaises(NoEdgePointsError):
            detect_pose(blank, SilhouetteMask.full_frame(320, 240), fixture_config(fixture),
                        models=self.models)

    def test_missing_constellation(self):
        fixture = self.training[0]
        config = PipelineConfig.from_dict({'camera': {'focal': 320.0},
                                           'triangle': {'a': 7, 'b': 7, 'c': 6.5}})
        with self.assertRaises(ConfigError):
            detect_pose(fixture.image, fixture.silhouette, config, models=self.models)


class TrainingTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def write_samples(self, rotations):
        samples = []
        for i, rotation in enumerate(rotations):
            fixture = make_fixture(rotation)
            image = os.path.join(self.tmpdir, 'f{0}.ppm'.format(i))
            mask = os.path.join(self.tmpdir, 'f{0}_mask.pgm'.format(i))
            save_image(fixture.image, image)
            save_image(fixture.silhouette.to_image(), mask)
            samples.append(LabeledSample(image, fixture.anchors, mask=mask))
        return samples

    def config(self):
        features = dict((name, {'stencil': path,
                                'model': os.path.join(self.tmpdir, name + '.json')})
                        for name, path in STENCILS.items())
        return PipelineConfig.from_dict({'features': features})

    def test_train_from_files(self):
        samples = self.write_samples([(10.0, 0.0, 0.0), (-10.0, 5.0, 2.0)])
        models = train_feature_models(self.config(), samples)
        self.assertEqual(list(models), ['left_eye', 'right_eye', 'mouth'])
        for model in models.values():
            self.assertEqual(model.training_count, 2)
            self.assertTrue(model.angle_interpolation)
            self.assertTrue(model.signature.is_normalized())
        self.assertTrue(numpy.allclose(models['left_eye'].signature.as_vector(),
                                       models['right_eye'].signature.as_vector()))

        constellation = train_constellation(self.config(), samples)
        self.assertEqual(constellation.feature_names, ['left_eye', 'right_eye', 'mouth'])
        self.assertIsNone(train_constellation(self.config(), samples[:1]))

    def test_unlabeled_feature(self):
        samples = self.write_samples([(5.0, 0.0, 0.0)])
        del samples[0].anchors['mouth']
        with self.assertRaises(TrainingError):
            train_feature_models(self.config(), samples)

    def test_anchor_out_of_frame(self):
        samples = self.write_samples([(5.0, 0.0, 0.0)])
        samples[0].anchors['mouth'] = (1, 1)
        with self.assertRaises((TrainingError, MaskOutOfFrameError)):
            train_feature_models(self.config(), samples)


class PoseQueryTest(unittest.TestCase):
    def test_fixture_points(self):
        fixture = make_fixture((18.0, 6.0, -5.0))
        config = fixture_config(fixture)
        anchors = fixture.anchors
        positions = [anchors['left_eye'], anchors['right_eye'], anchors['mouth']]
        n = fixture.scene.normal
        result = solve_pose_query(positions, config, image_size=(320, 240),
                                  shift=(50.0 * n[0], 50.0 * n[1]))
        for angle, expected in zip(result.angles, fixture.scene.rotation):
            self.assertAlmostEqual(angle, expected, places=4)
        report = result.report()
        self.assertEqual(report['constellation']['mouth'],
                         {'x': float(anchors['mouth'][0]), 'y': float(anchors['mouth'][1])})

    def test_needs_principal_point_or_size(self):
        config = PipelineConfig.from_dict({'camera': {'focal': 320.0},
                                           'triangle': {'a': 7, 'b': 7, 'c': 6.5}})
        with self.assertRaises(ConfigError):
            solve_pose_query([(130, 100), (190, 100), (160, 150)], config)

    def test_triangle_order(self):
        self.assertEqual(triangle_projections(['l', 'r', 'm'], ['L', 'R', 'M']),
                         ['M', 'L', 'R'])
        self.assertEqual(triangle_projections(['mouth', 'right_eye', 'left_eye'],
                                              ['M', 'R', 'L']),
                         ['M', 'L', 'R'])
        self.assertEqual(triangle_projections(['right_eye', 'left_eye', 'mouth'],
                                              ['R', 'L', 'M']),
                         ['M', 'L', 'R'])
        with self.assertRaises(ConfigError):
            triangle_projections(['l', 'r'], ['L', 'R'])


if __name__ == '__main__':
    unittest.main()
