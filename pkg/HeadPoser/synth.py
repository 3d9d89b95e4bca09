"""This module implements synthetic scenes: known feature triangles
projected through a known camera, and rendered images with planted
feature templates inside an elliptic head silhouette.

The frontal triangle lies in the head plane with the eyes on the ``x``
axis and the mouth below them (``y`` grows downwards, as in the image):

>>> tri = frontal_triangle(TriangleModel(5.0, 5.0, 6.0))
>>> [p.tolist() for p in tri]
[[0.0, 4.0, 0.0], [-3.0, 0.0, 0.0], [3.0, 0.0, 0.0]]

Scenes are deterministic; everything random draws from a
``numpy.random.RandomState`` seeded by the caller.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
import collections
import itertools
import logging
import math

import numpy
from skimage.draw import ellipse

from HeadPoser.errors import NoPositiveDepthError, PoseDegenerateError, \
    SceneGeometryError, TemplateOutOfSilhouetteError
from HeadPoser.imaging import Image, SilhouetteMask
from HeadPoser.pose import FEATURE_VERTICES, POINT_NAMES, CameraModel, TriangleModel, \
    check_projections, normal_angle_error, plane_normal, pose_angles, rotation_from_angles, \
    solve_triangle_pose

__version__ = "0.0.1"


DEFAULT_BACKGROUND = (30, 40, 50)
# Skin and template gray levels sit near the middle of the default 8
# brightness bins. Neighbouring colors differ per band either by more than
# 50 or by less than 10, so noise up to 10 never moves a pair across the
# default edge threshold.
DEFAULT_SKIN = (170, 140, 120)

# Degrees.
SNAP_MAX_NORMAL_CHANGE = 10.0


def frontal_triangle(tri):
    """M, L, R of the frontal triangle in the head frame."""
    a, b, c = tri.a, tri.b, tri.c
    x = (a * a - b * b) / (2.0 * c)
    y_sq = a * a - (x + c / 2.0) ** 2
    if y_sq <= 0:
        raise SceneGeometryError('frontal_triangle: sides {0} do not form a triangle'
                                 ''.format((a, b, c)))
    m = numpy.array([x, math.sqrt(y_sq), 0.0])
    l = numpy.array([-c / 2.0, 0.0, 0.0])
    r = numpy.array([c / 2.0, 0.0, 0.0])
    return m, l, r


def centered_translation(tri, rotation, depth):
    """Translation that puts the rotated triangle's centroid on the
    optical axis at the given depth."""
    rot = rotation_from_angles(*rotation)
    centroid = numpy.mean(frontal_triangle(tri), axis=0)
    return numpy.array([0.0, 0.0, float(depth)]) - rot.dot(centroid)


class SyntheticScene(object):
    """A triangle posed in front of a camera, with exact ground truth.

    :param points: Camera-frame M, L, R.

    :param rotation: Ground-truth ``(yaw, pitch, roll)`` in degrees.
    """
    def __init__(self, tri, rotation, translation, camera, points, seed=None):
        self.tri = tri
        self.rotation = tuple(float(r) for r in rotation)
        self.translation = numpy.asarray(translation, dtype=numpy.float64)
        self.camera = camera
        self.points = [numpy.asarray(p, dtype=numpy.float64) for p in points]
        self.projections = [camera.project(p) for p in self.points]
        self.depths = tuple(float(numpy.linalg.norm(p)) for p in self.points)
        self.normal = plane_normal(*self.points)
        self.seed = seed

    def feature_positions(self):
        """Projections keyed by feature name."""
        by_vertex = dict(zip(POINT_NAMES, self.projections))
        return collections.OrderedDict((name, by_vertex[v])
                                       for name, v in FEATURE_VERTICES.items())

    def to_dict(self):
        yaw, pitch, roll = self.rotation
        return {'triangle': self.tri.to_dict(),
                'camera': self.camera.to_dict(),
                'rotation_deg': {'yaw': yaw, 'pitch': pitch, 'roll': roll},
                'translation': self.translation.tolist(),
                'points': {n: p.tolist() for n, p in zip(POINT_NAMES, self.points)},
                'projections': {n: list(p) for n, p in zip(POINT_NAMES, self.projections)},
                'depths': dict(zip(POINT_NAMES, self.depths)),
                'normal': self.normal.tolist(),
                'seed': self.seed}

    def __repr__(self):
        return 'SyntheticScene(rotation={0}, depths={1})'.format(
            self.rotation, tuple(round(d, 4) for d in self.depths))


def generate_scene(tri, rotation, translation, camera, seed=None):
    """Poses the frontal triangle by ``Rz(roll) Ry(yaw) Rx(pitch)`` and the
    translation, and projects it.

    :param rotation: ``(yaw, pitch, roll)`` in degrees.
    """
    rot = rotation_from_angles(*rotation)
    translation = numpy.asarray(translation, dtype=numpy.float64)
    points = [rot.dot(p) + translation for p in frontal_triangle(tri)]
    for name, p in zip(POINT_NAMES, points):
        if p[2] <= 0:
            raise SceneGeometryError('generate_scene: vertex {0} at {1} is behind the'
                                     ' camera'.format(name, p.tolist()))
    scene = SyntheticScene(tri, rotation, translation, camera, points, seed=seed)
    try:
        check_projections(scene.projections)
    except PoseDegenerateError as e:
        raise SceneGeometryError('generate_scene: {0}'.format(e))
    return scene


def random_scene(rng, camera, max_yaw=45.0, max_pitch=45.0, max_roll=30.0,
                 depth_range=(5.0, 50.0), side_range=(0.3, 0.5)):
    """A random scene: random triangle with sides ``depth * U(side_range)``,
    random rotation within the bounds, centroid on the optical axis.

    :param rng: A ``numpy.random.RandomState``.
    """
    while True:
        depth = rng.uniform(*depth_range)
        a, b, c = depth * rng.uniform(side_range[0], side_range[1], size=3)
        if not (a < b + c and b < a + c and c < a + b):
            continue
        if min(a + b - c, a + c - b, b + c - a) < 0.05 * (a + b + c):
            continue
        tri = TriangleModel(a, b, c)
        rotation = (rng.uniform(-max_yaw, max_yaw), rng.uniform(-max_pitch, max_pitch),
                    rng.uniform(-max_roll, max_roll))
        try:
            return generate_scene(tri, rotation, centered_translation(tri, rotation, depth),
                                  camera)
        except SceneGeometryError:
            continue


def scene_from_solution(solution, tri, camera, seed=None):
    """The SyntheticScene of one pose solution of ``tri``."""
    rotation = pose_angles(solution)
    translation = solution.M - rotation_from_angles(*rotation).dot(frontal_triangle(tri)[0])
    return SyntheticScene(tri, rotation, translation, camera, solution.points, seed=seed)


def snap_scene_to_pixels(scene, max_normal_change=SNAP_MAX_NORMAL_CHANGE):
    """The scene re-posed so that its features project onto whole pixels,
    with the triangle unchanged.

    Every combination of rounding the projection coordinates down or up is
    solved for the pose of the scene's triangle. The solution whose normal
    is closest to the scene's normal wins; ties go to the rounding nearest
    to the exact projections.

    :raises SceneGeometryError: when no rounding admits a pose within
        ``max_normal_change`` degrees of the scene's normal.
    """
    cam = scene.camera
    exact = numpy.asarray(scene.projections, dtype=numpy.float64)
    choices = [sorted(set([math.floor(v), math.ceil(v)])) for v in exact.ravel()]
    best = None
    for coords in itertools.product(*choices):
        pixels = numpy.array(coords, dtype=numpy.float64).reshape(3, 2)
        try:
            solutions = solve_triangle_pose([tuple(p) for p in pixels], cam, scene.tri)
        except (NoPositiveDepthError, PoseDegenerateError):
            continue
        offset = float(((pixels - exact) ** 2).sum())
        for solution in solutions:
            key = (normal_angle_error(solution.normal, scene.normal), offset)
            if best is None or key < best[0]:
                best = (key, solution, pixels)
    if best is None or best[0][0] > max_normal_change:
        raise SceneGeometryError('snap_scene_to_pixels: no whole-pixel pose of {0} within'
                                 ' {1} deg of {2}'.format(scene.tri, max_normal_change,
                                                          scene))
    (change, _), solution, pixels = best
    try:
        snapped = scene_from_solution(solution, scene.tri, cam, seed=scene.seed)
    except PoseDegenerateError as e:
        raise SceneGeometryError('snap_scene_to_pixels: {0}'.format(e))
    snapped.projections = [(float(x), float(y)) for x, y in pixels]
    logging.debug('snap_scene_to_pixels: normal moved by {0:.3f} deg'.format(change))
    return snapped


##############################################################################
# Rendering


class Template(object):
    """An intensity pattern to stamp, anchored at its centre pixel
    ``(width // 2, height // 2)``.

    :param pattern: ``(height, width, bands)`` uint8 array.

    :param stencil: Optional ``(height, width)`` bool array of the pixels
        to stamp; all of them by default.
    """
    def __init__(self, name, pattern, stencil=None):
        pattern = numpy.asarray(pattern, dtype=numpy.uint8)
        if pattern.ndim == 2:
            pattern = pattern[:, :, numpy.newaxis]
        self.name = name
        self.pattern = pattern
        self.height, self.width, self.bands = pattern.shape
        if stencil is None:
            stencil = numpy.ones((self.height, self.width), dtype=bool)
        self.stencil = numpy.asarray(stencil, dtype=bool)
        if self.stencil.shape != (self.height, self.width):
            raise ValueError('Template {0}: stencil shape {1} does not match pattern'
                             ' {2}'.format(name, self.stencil.shape, pattern.shape[:2]))

    @property
    def anchor(self):
        return self.width // 2, self.height // 2

    def footprint(self, x, y):
        """Image coordinates ``(ys, xs)`` of the stamped pixels at anchor (x, y)."""
        ty, tx = numpy.nonzero(self.stencil)
        ax, ay = self.anchor
        return ty - ay + int(y), tx - ax + int(x)


def eye_template(name='eye', sclera=(225, 205, 195), iris=(52, 52, 52), pupil=(0, 0, 0)):
    """An 11 x 5 eye: sclera with a 5 x 5 iris and a 3 x 3 pupil."""
    pattern = numpy.empty((5, 11, 3), dtype=numpy.uint8)
    pattern[:, :] = sclera
    pattern[:, 3:8] = iris
    pattern[1:4, 4:7] = pupil
    return Template(name, pattern)


def mouth_template(name='mouth', lips=(179, 89, 68), gap=(35, 10, 15)):
    """A 15 x 3 mouth: lips around a dark line."""
    pattern = numpy.empty((3, 15, 3), dtype=numpy.uint8)
    pattern[:, :] = lips
    pattern[1, 1:14] = gap
    return Template(name, pattern)


def default_templates():
    """Templates of left eye, right eye and mouth."""
    return collections.OrderedDict([('left_eye', eye_template('left_eye')),
                                    ('right_eye', eye_template('right_eye')),
                                    ('mouth', mouth_template('mouth'))])


def render_planted_template(width, height, silhouette, templates, positions, noise=0,
                            seed=0, background=DEFAULT_BACKGROUND, skin=DEFAULT_SKIN):
    """Renders a flat background, a flat elliptic silhouette and the
    templates stamped at their positions.

    :param silhouette: Ellipse ``(cx, cy, semi_x, semi_y)`` in pixels.

    :param templates: A dict of Template objects keyed by feature name.

    :param positions: A dict of anchor ``(x, y)`` positions keyed like
        ``templates``.

    :param noise: Amplitude of per-sample uniform integer noise in
        ``[-noise, noise]``, clamped to ``[0, 255]``.

    :returns: ``(Image, SilhouetteMask)``.
    """
    bands = len(background)
    canvas = numpy.empty((height, width, bands), dtype=numpy.int64)
    canvas[:, :] = background

    cx, cy, semi_x, semi_y = silhouette
    inside = numpy.zeros((height, width), dtype=bool)
    rr, cc = ellipse(cy, cx, semi_y, semi_x, shape=(height, width))
    inside[rr, cc] = True
    canvas[inside] = skin

    for name, template in templates.items():
        if template.bands != bands:
            raise ValueError('render_planted_template: template {0} has {1} bands, the'
                             ' canvas {2}'.format(name, template.bands, bands))
        x, y = [int(round(v)) for v in positions[name]]
        ys, xs = template.footprint(x, y)
        in_frame = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        if not in_frame.all() or not inside[ys, xs].all():
            raise TemplateOutOfSilhouetteError('render_planted_template: template {0} at'
                                               ' ({1}, {2}) exits the silhouette'
                                               ''.format(name, x, y))
        ty, tx = numpy.nonzero(template.stencil)
        canvas[ys, xs] = template.pattern[ty, tx]

    if noise > 0:
        rng = numpy.random.RandomState(seed)
        canvas += rng.randint(-int(noise), int(noise) + 1, size=canvas.shape)
    canvas = numpy.clip(canvas, 0, 255).astype(numpy.uint8)

    return Image.from_array(canvas), SilhouetteMask(inside)


class Fixture(object):
    """A rendered scene: the image, its silhouette, the integer feature
    anchors, and the pixel-snapped scene that is its ground truth."""
    def __init__(self, image, silhouette, anchors, scene, ellipse_params):
        self.image = image
        self.silhouette = silhouette
        self.anchors = anchors
        self.scene = scene
        self.ellipse = ellipse_params

    def to_dict(self):
        d = self.scene.to_dict()
        d['anchors'] = {name: [int(x), int(y)] for name, (x, y) in self.anchors.items()}
        d['silhouette_ellipse'] = list(self.ellipse)
        return d


def render_scene_fixture(scene, width=320, height=240, templates=None, head_depth=6.0,
                         head_radii=(9.0, 11.5), noise=0, seed=0):
    """Renders a scene with its features as planted templates.

    The silhouette ellipse is centred at the projection of the head centre,
    which lies ``head_depth`` world units behind the feature centroid,
    against the face normal. Its semi-axes are the projected ``head_radii``.

    :returns: A Fixture whose scene, the ground truth, is the input scene
        re-posed onto whole pixels (``snap_scene_to_pixels``).
    """
    if templates is None:
        templates = default_templates()
    snapped = snap_scene_to_pixels(scene)

    centroid = numpy.mean(snapped.points, axis=0)
    centre = centroid - head_depth * snapped.normal
    if centre[2] <= 0:
        raise SceneGeometryError('render_scene_fixture: head centre behind the camera')
    ex, ey = scene.camera.project(centre)
    px_per_unit = scene.camera.focal / centre[2]
    ellipse_params = (ex, ey, head_radii[0] * px_per_unit, head_radii[1] * px_per_unit)

    anchors = collections.OrderedDict(
        (name, (int(x), int(y))) for name, (x, y) in snapped.feature_positions().items())
    image, silhouette = render_planted_template(width, height, ellipse_params, templates,
                                                anchors, noise=noise, seed=seed)
    logging.info('render_scene_fixture: rotation {0}, anchors {1}'
                 ''.format(tuple(round(r, 3) for r in snapped.rotation), dict(anchors)))
    return Fixture(image, silhouette, anchors, snapped, ellipse_params)


def default_camera(width=320, height=240, focal=320.0):
    return CameraModel.for_image(focal, width, height)
