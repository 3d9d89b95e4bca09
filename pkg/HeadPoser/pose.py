"""This module implements head pose estimation from the three feature
positions.

The camera sits at the origin with ``X`` to the right, ``Y`` down and
``Z`` forward into the scene. Each feature projection ``(X', Y')`` defines
a unit ray ``q``, and the feature lies at ``t q`` for an unknown depth ``t``.
With the known side lengths of the feature triangle (``a = |ML|``,
``b = |MR|``, ``c = |LR|``) the three depths satisfy

    a^2 = t_M^2 + t_L^2 - 2 t_M t_L (q_M . q_L)
    b^2 = t_M^2 + t_R^2 - 2 t_M t_R (q_M . q_R)
    c^2 = t_L^2 + t_R^2 - 2 t_L t_R (q_L . q_R)

Substituting ``u = t_L / t_M`` and ``v = t_R / t_M`` and eliminating ``u``
reduces the system to one quartic in ``v``, which has up to four real
roots. Each admissible root gives a pose; the silhouette shift vector then
picks the one facing the right way.

>>> [round(r, 9) for r in quartic_real_roots([1, 0, -5, 0, 4])]
[-2.0, -1.0, 1.0, 2.0]
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
from builtins import range
import collections
import logging
import math

import numpy
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from HeadPoser.errors import ConfigError, NoPositiveDepthError, PoseDegenerateError

__version__ = "0.0.1"


DEFAULT_SOLVER_TOL = 1e-9
DEFAULT_QUARTIC_TOL = 1e-8
DEFAULT_NEAR_FRONTAL_EPSILON = 2.0

# Triangle vertices in solver order: mouth, left eye, right eye.
POINT_NAMES = ('M', 'L', 'R')

# Feature name -> triangle vertex.
FEATURE_VERTICES = collections.OrderedDict([('left_eye', 'L'),
                                            ('right_eye', 'R'),
                                            ('mouth', 'M')])

MAX_SOLUTIONS = 4

# Root clustering radius, relative to max(1, |root|).
ROOT_CLUSTER_RADIUS = 1e-3
ROOT_MERGE_RADIUS = 1e-9
# Multiple of the polynomial evaluation rounding error.
ROUNDING_SLACK = 64
NEWTON_STEPS = 8

DEGENERACY_TOLERANCE = 1e-9
DEPTH_DUPLICATE_TOLERANCE = 1e-7
TINY_NORMAL_PROJECTION = 1e-9


##############################################################################
# Quartic


def _poly_eval(coeffs, x):
    return float(numpy.polyval(coeffs, x))


def _newton_polish(coeffs, root, steps=NEWTON_STEPS):
    """A few guarded Newton steps: a step is only taken when it lowers
    ``|p|``."""
    deriv = numpy.polyder(coeffs)
    value = abs(_poly_eval(coeffs, root))
    for _ in range(steps):
        if value == 0.0:
            break
        d = _poly_eval(deriv, root)
        if d == 0.0:
            break
        candidate = root - _poly_eval(coeffs, root) / d
        candidate_value = abs(_poly_eval(coeffs, candidate))
        if candidate_value >= value:
            break
        root, value = candidate, candidate_value
    return root


def _cluster_roots(roots):
    """Groups numerically coincident roots. A cluster holding a non-real
    member (the usual numpy rendering of a multiple root) is replaced by
    its mean; clusters of exactly real roots are kept apart."""
    roots = sorted(roots, key=lambda r: (r.real, r.imag))
    clusters = []
    for r in roots:
        for cluster in clusters:
            if any(abs(r - other) <= ROOT_CLUSTER_RADIUS * max(1.0, abs(other))
                   for other in cluster):
                cluster.append(r)
                break
        else:
            clusters.append([r])

    merged = []
    for cluster in clusters:
        if len(cluster) > 1 and any(r.imag != 0 for r in cluster):
            merged.append(complex(numpy.mean(cluster)))
        else:
            merged.extend(cluster)
    return merged


def quartic_real_roots(coeffs, tol=DEFAULT_QUARTIC_TOL):
    """All real roots of the polynomial ``a4 x^4 + ... + a0``.

    A root ``r`` is accepted when ``|p(r)| <= tol max(1, |c|) max(1, |r|)^deg``
    with the coefficients scaled to unit max-norm. Lower degrees are handled
    when the leading coefficients vanish. Repeated roots are reported once.

    :param coeffs: Coefficients, highest degree first.

    :returns: A sorted list of floats.

    >>> quartic_real_roots([1, 0, 0, 0, 1])
    []
    >>> [round(r, 6) for r in quartic_real_roots([1, -4, 6, -4, 1])]
    [1.0]
    """
    coeffs = numpy.asarray(coeffs, dtype=numpy.float64).ravel()
    scale = float(numpy.abs(coeffs).max()) if coeffs.size else 0.0
    if scale == 0.0 or not numpy.isfinite(scale):
        raise ValueError('quartic_real_roots: zero or non-finite polynomial')
    coeffs = coeffs / scale

    nonzero = numpy.nonzero(numpy.abs(coeffs) > 1e-15)[0]
    coeffs = coeffs[nonzero[0]:]
    degree = len(coeffs) - 1
    if degree == 0:
        return []

    accepted = []
    for r in _cluster_roots(numpy.roots(coeffs)):
        if abs(r.imag) > ROOT_CLUSTER_RADIUS * max(1.0, abs(r)):
            continue
        x = _newton_polish(coeffs, float(r.real))
        if abs(_poly_eval(coeffs, x)) <= tol * max(1.0, abs(x)) ** degree:
            accepted.append(x)

    def rounding_level(x):
        return ROUNDING_SLACK * numpy.finfo(numpy.float64).eps \
            * float(numpy.polyval(numpy.abs(coeffs), abs(x)))

    def split_multiple_root(x, y):
        # Two close real roots that p does not separate beyond rounding
        # are one multiple root.
        mid = 0.5 * (x + y)
        return abs(x - y) <= ROOT_CLUSTER_RADIUS * max(1.0, abs(mid)) \
            and abs(_poly_eval(coeffs, mid)) <= rounding_level(mid)

    accepted.sort()
    roots = []
    for x in accepted:
        if roots and abs(x - roots[-1]) <= ROOT_MERGE_RADIUS * max(1.0, abs(x)):
            continue
        if roots and split_multiple_root(roots[-1], x):
            roots[-1] = 0.5 * (roots[-1] + x)
            continue
        roots.append(x)
    return [float(x) for x in roots]


##############################################################################
# Camera and triangle


class CameraModel(object):
    """Pinhole camera at the origin.

    :param focal: Focal length in pixels.

    :param principal_point: Pixel position ``(cx, cy)`` of the optical axis.
    """
    def __init__(self, focal, principal_point=(0.0, 0.0)):
        focal = float(focal)
        if not focal > 0:
            raise ConfigError('CameraModel: focal length must be positive, got {0}'
                              ''.format(focal))
        self.focal = focal
        self.principal_point = (float(principal_point[0]), float(principal_point[1]))

    @classmethod
    def for_image(cls, focal, width, height, principal_point=None):
        """Camera for a ``width`` x ``height`` image; the principal point
        defaults to the centre of the pixel grid."""
        if principal_point is None:
            principal_point = ((width - 1) / 2.0, (height - 1) / 2.0)
        return cls(focal, principal_point)

    def ray(self, point):
        cx, cy = self.principal_point
        q = numpy.array([point[0] - cx, point[1] - cy, self.focal], dtype=numpy.float64)
        return q / numpy.linalg.norm(q)

    def project(self, point):
        """Pixel position of a 3D point in front of the camera."""
        x, y, z = [float(c) for c in point]
        if z <= 0:
            raise ValueError('CameraModel.project: point {0} is not in front of the'
                             ' camera'.format(point))
        cx, cy = self.principal_point
        return self.focal * x / z + cx, self.focal * y / z + cy

    def to_dict(self):
        return {'focal': self.focal, 'principal_point': list(self.principal_point)}

    def __repr__(self):
        return 'CameraModel(f={0}, principal_point={1})'.format(self.focal,
                                                                self.principal_point)


class TriangleModel(object):
    """Side lengths of the feature triangle: ``a = |ML|``, ``b = |MR|``,
    ``c = |LR|``, in one world unit.

    :param ranges: Optional dict of admissible ``(lo, hi)`` ranges per side
        name (``a``, ``b``, ``c``).
    """
    def __init__(self, a, b, c, ranges=None):
        self.a, self.b, self.c = float(a), float(b), float(c)
        if min(self.a, self.b, self.c) <= 0:
            raise ConfigError('TriangleModel: sides must be positive, got {0}'
                              ''.format(self.sides))
        if not (self.a < self.b + self.c and self.b < self.a + self.c
                and self.c < self.a + self.b):
            raise ConfigError('TriangleModel: sides {0} violate the triangle inequality'
                              ''.format(self.sides))
        self.ranges = dict(ranges) if ranges else {}
        for name, value in zip('abc', self.sides):
            if name in self.ranges:
                lo, hi = self.ranges[name]
                if not lo <= value <= hi:
                    raise ConfigError('TriangleModel: side {0} = {1} outside its'
                                      ' admissible range [{2}, {3}]'.format(name, value,
                                                                            lo, hi))

    @property
    def sides(self):
        return self.a, self.b, self.c

    @property
    def perimeter(self):
        return self.a + self.b + self.c

    def to_dict(self):
        d = {'a': self.a, 'b': self.b, 'c': self.c}
        if self.ranges:
            d['ranges'] = {k: list(v) for k, v in self.ranges.items()}
        return d

    def __repr__(self):
        return 'TriangleModel(a={0}, b={1}, c={2})'.format(self.a, self.b, self.c)


##############################################################################
# Solutions


def _normalize(v):
    v = numpy.asarray(v, dtype=numpy.float64)
    return v / numpy.linalg.norm(v)


def plane_normal(m, l, r):
    """Unit normal of the plane MLR, oriented towards the camera
    (``n_z <= 0``)."""
    n = numpy.cross(numpy.asarray(l) - numpy.asarray(m), numpy.asarray(r) - numpy.asarray(m))
    norm = numpy.linalg.norm(n)
    if norm == 0:
        raise PoseDegenerateError('plane_normal: degenerate triangle')
    n = n / norm
    if n[2] > 0:
        n = -n
    return n


def side_residuals(points, tri):
    """Signed errors of the three distance equations."""
    m, l, r = points
    return numpy.array([numpy.linalg.norm(m - l) - tri.a,
                        numpy.linalg.norm(m - r) - tri.b,
                        numpy.linalg.norm(l - r) - tri.c])


class PoseSolution(object):
    """One solution of the triangle pose system.

    ``points`` are M, L, R in camera coordinates; the depths are the
    distances along the unit rays.
    """
    def __init__(self, depths, rays, tri, approximate=False):
        self.depths = tuple(float(t) for t in depths)
        self.rays = [numpy.asarray(q, dtype=numpy.float64) for q in rays]
        self.points = [t * q for t, q in zip(self.depths, self.rays)]
        self.residual = float(numpy.abs(side_residuals(self.points, tri)).max())
        self.normal = plane_normal(*self.points)
        self.approximate = bool(approximate)
        self._angles = None

    @property
    def M(self):
        return self.points[0]

    @property
    def L(self):
        return self.points[1]

    @property
    def R(self):
        return self.points[2]

    @property
    def angles(self):
        if self._angles is None:
            self._angles = pose_angles(self)
        return self._angles

    def to_dict(self):
        yaw, pitch, roll = self.angles
        return {'depths': {'M': self.depths[0], 'L': self.depths[1], 'R': self.depths[2]},
                'points': {'M': self.M.tolist(), 'L': self.L.tolist(), 'R': self.R.tolist()},
                'normal': self.normal.tolist(),
                'residual': self.residual,
                'approximate': self.approximate,
                'angles_deg': {'yaw': yaw, 'pitch': pitch, 'roll': roll}}

    def __repr__(self):
        return 'PoseSolution(depths={0}, normal={1}, residual={2:.3g}{3})' \
               ''.format(tuple(round(t, 6) for t in self.depths),
                         numpy.round(self.normal, 6).tolist(), self.residual,
                         ', approximate' if self.approximate else '')


def check_projections(projections):
    """Raises PoseDegenerateError for coincident or collinear projections."""
    pts = numpy.asarray(projections, dtype=numpy.float64)
    if pts.shape != (3, 2) or not numpy.isfinite(pts).all():
        raise PoseDegenerateError('Expected three finite 2D projections, got {0}'
                                  ''.format(projections))
    m, l, r = pts
    longest = max(numpy.sum((l - m) ** 2), numpy.sum((r - m) ** 2), numpy.sum((r - l) ** 2))
    if longest == 0:
        raise PoseDegenerateError('Coincident projections {0}'.format(pts.tolist()))
    area2 = abs((l[0] - m[0]) * (r[1] - m[1]) - (l[1] - m[1]) * (r[0] - m[0]))
    if area2 / longest < DEGENERACY_TOLERANCE:
        raise PoseDegenerateError('Collinear projections {0}'.format(pts.tolist()))


def grunert_coefficients(a, b, c, cos_alpha, cos_beta, cos_gamma):
    """Quartic in ``v = s3 / s1`` for a triangle with points 1, 2, 3,
    opposite side lengths ``a = |23|``, ``b = |13|``, ``c = |12|`` and ray
    angle cosines ``cos_alpha = q2.q3``, ``cos_beta = q1.q3``,
    ``cos_gamma = q1.q2``."""
    a_sq, b_sq, c_sq = a * a, b * b, c * c
    ca, cb, cg = cos_alpha, cos_beta, cos_gamma
    amc = (a_sq - c_sq) / b_sq
    apc = (a_sq + c_sq) / b_sq
    bmc = (b_sq - c_sq) / b_sq
    bma = (b_sq - a_sq) / b_sq

    a4 = (amc - 1) ** 2 - 4 * c_sq / b_sq * ca ** 2
    a3 = 4 * (amc * (1 - amc) * cb
              - (1 - apc) * ca * cg
              + 2 * c_sq / b_sq * ca ** 2 * cb)
    a2 = 2 * (amc ** 2 - 1
              + 2 * amc ** 2 * cb ** 2
              + 2 * bmc * ca ** 2
              - 4 * apc * ca * cb * cg
              + 2 * bma * cg ** 2)
    a1 = 4 * (-amc * (1 + amc) * cb
              + 2 * a_sq / b_sq * cg ** 2 * cb
              - (1 - apc) * ca * cg)
    a0 = (1 + amc) ** 2 - 4 * a_sq / b_sq * cg ** 2
    return [a4, a3, a2, a1, a0]


def _depths_from_ratio(v, tri, cos_ml, cos_mr, cos_lr, clip_discriminant=False):
    """Back-substitutes a root ``v = t_R / t_M`` into the depths
    ``(t_M, t_L, t_R)``; None when no positive real triple exists."""
    denom = 1.0 + v * v - 2.0 * v * cos_mr
    if v <= 0 or denom <= 0:
        return None
    t_m = tri.b / math.sqrt(denom)
    disc = cos_ml ** 2 - 1.0 + (tri.a / t_m) ** 2
    if disc < 0:
        if not clip_discriminant and disc < -1e-9:
            return None
        disc = 0.0
    best = None
    for u in (cos_ml + math.sqrt(disc), cos_ml - math.sqrt(disc)):
        if u <= 0:
            continue
        err = abs(t_m * math.sqrt(max(u * u + v * v - 2.0 * u * v * cos_lr, 0.0)) - tri.c)
        if best is None or err < best[0]:
            best = (err, u)
    if best is None:
        return None
    u = best[1]
    return t_m, u * t_m, v * t_m


def refine_depths(depths, rays, tri):
    """Least-squares refinement of the depths against the three side
    equations."""
    q_m, q_l, q_r = rays

    def residuals(t):
        m, l, r = t[0] * q_m, t[1] * q_l, t[2] * q_r
        return [numpy.linalg.norm(m - l) - tri.a,
                numpy.linalg.norm(m - r) - tri.b,
                numpy.linalg.norm(l - r) - tri.c]

    result = least_squares(residuals, numpy.asarray(depths, dtype=numpy.float64),
                           method='lm', xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return tuple(float(t) for t in result.x)


def _is_duplicate(depths, solutions):
    for s in solutions:
        diff = max(abs(x - y) / max(abs(y), 1e-300) for x, y in zip(depths, s.depths))
        if diff <= DEPTH_DUPLICATE_TOLERANCE:
            return True
    return False


def solve_triangle_pose(projections, camera, tri, tol=DEFAULT_SOLVER_TOL,
                        approximate_tol=None):
    """Finds every pose of the triangle consistent with its projection.

    :param projections: Pixel positions of M, L, R, in this order.

    :param camera: The CameraModel.

    :param tri: The TriangleModel.

    :param tol: A solution is kept when its largest side error is at most
        ``tol * (a + b + c)``.

    :param approximate_tol: If set, quartic roots that are not quite real
        (typically because the projections were rounded to pixels) are
        refined in the least-squares sense too, and kept with the
        ``approximate`` flag when their side error is at most
        ``approximate_tol * (a + b + c)``.

    :returns: A list of 1 to 4 PoseSolution objects, exact ones first.
    """
    check_projections(projections)
    rays = [camera.ray(p) for p in projections]
    q_m, q_l, q_r = rays
    cos_ml = float(numpy.dot(q_m, q_l))
    cos_mr = float(numpy.dot(q_m, q_r))
    cos_lr = float(numpy.dot(q_l, q_r))

    # Points 1, 2, 3 of the quartic are M, L, R.
    coeffs = grunert_coefficients(tri.c, tri.b, tri.a, cos_lr, cos_mr, cos_ml)
    bound = tol * tri.perimeter

    solutions = []
    approximates = []
    real_roots = quartic_real_roots(coeffs, tol=1e-6)
    for v in real_roots:
        depths = _depths_from_ratio(v, tri, cos_ml, cos_mr, cos_lr)
        if depths is None:
            continue
        candidate = PoseSolution(depths, rays, tri)
        if candidate.residual > bound:
            candidate = PoseSolution(refine_depths(depths, rays, tri), rays, tri)
        if min(candidate.depths) <= 0:
            continue
        if candidate.residual <= bound:
            if not _is_duplicate(candidate.depths, solutions):
                solutions.append(candidate)
        elif approximate_tol is not None:
            approximates.append(candidate)

    if approximate_tol is not None:
        approximate_bound = approximate_tol * tri.perimeter
        seeds = [r.real for r in numpy.roots(numpy.asarray(coeffs) / numpy.abs(coeffs).max())
                 if r.imag != 0]
        for v in seeds:
            depths = _depths_from_ratio(v, tri, cos_ml, cos_mr, cos_lr, clip_discriminant=True)
            if depths is None:
                continue
            approximates.append(PoseSolution(refine_depths(depths, rays, tri), rays, tri))
        for candidate in sorted(approximates, key=lambda s: s.residual):
            if min(candidate.depths) <= 0 or candidate.residual > approximate_bound:
                continue
            if _is_duplicate(candidate.depths, solutions):
                continue
            candidate.approximate = candidate.residual > bound
            solutions.append(candidate)
        n_approximate = sum(1 for s in solutions if s.approximate)
        if n_approximate:
            logging.warning('solve_triangle_pose: {0} approximate solution(s) with side'
                            ' error up to {1:.4g}'.format(n_approximate,
                                                          max(s.residual for s in solutions)))

    solutions = sorted(solutions, key=lambda s: s.approximate)[:MAX_SOLUTIONS]
    if not solutions:
        raise NoPositiveDepthError('solve_triangle_pose: no positive-depth solution'
                                   ' within tolerance ({0} real quartic roots)'
                                   ''.format(len(real_roots)))
    logging.info('solve_triangle_pose: {0} solution(s)'.format(len(solutions)))
    return solutions


##############################################################################
# Disambiguation and angles


class ShiftVector(object):
    """Image-plane displacement of the feature centroid from its expected
    frontal position."""
    def __init__(self, dx, dy, near_frontal=False):
        self.dx = float(dx)
        self.dy = float(dy)
        self.near_frontal = bool(near_frontal)

    @classmethod
    def frontal(cls):
        return cls(0.0, 0.0, near_frontal=True)

    @classmethod
    def from_vector(cls, dx, dy, epsilon=DEFAULT_NEAR_FRONTAL_EPSILON):
        return cls(dx, dy, near_frontal=math.hypot(dx, dy) < epsilon)

    @property
    def magnitude(self):
        return math.hypot(self.dx, self.dy)

    def to_dict(self):
        return {'dx': self.dx, 'dy': self.dy, 'near_frontal': self.near_frontal}

    def __repr__(self):
        return 'ShiftVector({0:.3f}, {1:.3f}{2})'.format(self.dx, self.dy,
                                                         ', near-frontal'
                                                         if self.near_frontal else '')


def shift_vector(positions, silhouette, frontal_offset=(0.0, 0.0),
                 epsilon=DEFAULT_NEAR_FRONTAL_EPSILON):
    """``s = centroid(positions) - (centroid(silhouette) + frontal_offset)``,
    flagged near-frontal when shorter than ``epsilon`` pixels.

    :param positions: The constellation's pixel positions.
    """
    sx, sy = silhouette.centroid()
    pts = numpy.asarray(positions, dtype=numpy.float64)
    fx, fy = pts.mean(axis=0)
    dx = fx - (sx + frontal_offset[0])
    dy = fy - (sy + frontal_offset[1])
    s = ShiftVector.from_vector(dx, dy, epsilon)
    logging.info('shift_vector: {0}'.format(s))
    return s


def _selection_score(solution, s):
    n = solution.normal
    if s.near_frontal:
        return -n[2]
    n_xy = math.hypot(n[0], n[1])
    if n_xy < TINY_NORMAL_PROJECTION or s.magnitude == 0:
        return -1.0
    return (n[0] * s.dx + n[1] * s.dy) / (n_xy * s.magnitude)


def select_pose(solutions, s):
    """Picks the solution whose normal best agrees with the shift vector.

    Near-frontal shifts pick the normal closest to ``(0, 0, -1)``;
    otherwise the image-plane projection of the normal most co-directional
    with ``s`` wins. Ties go to the smaller residual, then to the earlier
    solution.
    """
    if not solutions:
        raise ValueError('select_pose: no solutions to select from')
    keyed = [(-round(_selection_score(sol, s), 12), sol.residual, i)
             for i, sol in enumerate(solutions)]
    best = min(keyed)
    logging.debug('select_pose: scores {0}, picked {1}'.format([-k[0] for k in keyed], best[2]))
    return solutions[best[2]]


# Reference frontal frame: head x axis to the camera's right, head y axis
# upwards (camera -Y), face normal towards the camera.
FRONTAL_FRAME = numpy.array([[1.0, 0.0, 0.0],
                             [0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0]]).T


def head_frame(solution):
    """Columns ``x_h = R - L``, ``y_h = z_h x x_h``, ``z_h = n``."""
    lr = solution.R - solution.L
    if numpy.linalg.norm(lr) < DEGENERACY_TOLERANCE * max(1.0, numpy.linalg.norm(solution.R)):
        raise PoseDegenerateError('head_frame: eye points coincide')
    x_h = _normalize(lr)
    z_h = solution.normal
    y_h = numpy.cross(z_h, x_h)
    return numpy.column_stack([x_h, y_h, z_h])


def pose_angles(solution):
    """The (yaw, pitch, roll) rotation of the head from the frontal pose,
    in degrees, from a Z(roll)-Y(yaw)-X(pitch) decomposition. Each angle is
    in ``(-180, 180]``."""
    relative = head_frame(solution).dot(FRONTAL_FRAME.T)
    roll, yaw, pitch = Rotation.from_matrix(relative).as_euler('ZYX', degrees=True)
    angles = []
    for angle in (yaw, pitch, roll):
        angle = float(angle)
        if angle <= -180.0:
            angle += 360.0
        angles.append(angle + 0.0)
    return tuple(angles)


def rotation_from_angles(yaw, pitch, roll):
    """The rotation matrix ``Rz(roll) Ry(yaw) Rx(pitch)``; the inverse of
    ``pose_angles``."""
    return Rotation.from_euler('ZYX', [roll, yaw, pitch], degrees=True).as_matrix()


def normal_angle_error(n, reference):
    """Angle between two unit normals in degrees."""
    cos = float(numpy.clip(numpy.dot(_normalize(n), _normalize(reference)), -1.0, 1.0))
    return math.degrees(math.acos(cos))
