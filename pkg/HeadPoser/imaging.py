"""This module implements the raster side of HeadPoser: images, silhouette
masks, binary PGM/PPM files, min-max sharpening, the two-sided color edge
detector and the edge local normals.

Coordinates follow the usual raster convention: ``x`` grows to the right,
``y`` grows downwards, and the origin is the centre of the top-left pixel.
Internally, an image is a ``(height, width, bands)`` numpy array of
``uint8`` samples, so indexing is always ``data[y, x, band]``.

>>> img = Image(2, 1, 1, [0, 255])
>>> pool = detect_color_edges(img, thresholds=[50])
>>> sorted((p.x, p.y, p.band) for p in pool.points)
[(0, 0, 0), (1, 0, 0)]

"""
from __future__ import print_function, unicode_literals, division

from builtins import object
from builtins import range
import collections
import logging
import math
import os

import numpy
import scipy.ndimage
from skimage.draw import circle_perimeter, line

from HeadPoser.errors import DimensionMismatchError, EmptySilhouetteError, \
    ImageFormatError, InputFileError

__version__ = "0.0.1"


# Offsets (dx, dy) of the lower half-8-neighbourhood. Scanning these from
# every pixel visits each unordered pair of 8-adjacent pixels exactly once.
LOWER_HALF_NEIGHBOURS = ((1, 0), (-1, 1), (0, 1), (1, 1))

# Offsets (dx, dy) of the full 8-neighbourhood.
NEIGHBOURS_8 = ((-1, -1), (0, -1), (1, -1),
                (-1, 0), (1, 0),
                (-1, 1), (0, 1), (1, 1))

DEFAULT_EDGE_THRESHOLD = 30

NORMAL_EPSILON = 1e-9

MASK_INSIDE_THRESHOLD = 127

TWO_PI = 2.0 * math.pi


##############################################################################


class Image(object):
    """A W x H raster with 1 (gray) or 3 (RGB) bands of 8-bit samples.

    The samples may be given either as a flat, row-major, band-interleaved
    sequence (the file order of PGM/PPM payloads) or as an array
    of shape ``(height, width)`` or ``(height, width, bands)``.

    >>> img = Image(1, 1, 3, [10, 20, 30])
    >>> img.data.shape
    (1, 1, 3)
    >>> [int(v) for v in img.samples]
    [10, 20, 30]
    """
    def __init__(self, width, height, bands, samples):
        if bands not in (1, 3):
            raise ValueError('Image: bands must be 1 or 3, got {0}'.format(bands))
        width, height = int(width), int(height)
        if width < 1 or height < 1:
            raise ValueError('Image: invalid dimensions {0}x{1}'.format(width, height))

        data = numpy.asarray(samples)
        if data.size != width * height * bands:
            raise DimensionMismatchError('Image: {0} samples do not fit a {1}x{2}x{3}'
                                         ' raster'.format(data.size, width, height, bands))
        if data.size and (data.min() < 0 or data.max() > 255):
            raise ValueError('Image: samples must lie within 0..255')

        self.width = width
        self.height = height
        self.bands = bands
        self.data = data.astype(numpy.uint8).reshape((height, width, bands))

    @classmethod
    def from_array(cls, array):
        """Wraps a ``(H, W)`` or ``(H, W, bands)`` array."""
        array = numpy.asarray(array)
        if array.ndim == 2:
            return cls(array.shape[1], array.shape[0], 1, array)
        return cls(array.shape[1], array.shape[0], array.shape[2], array)

    @property
    def samples(self):
        """The flat row-major band-interleaved sample array."""
        return self.data.reshape(-1)

    @property
    def shape(self):
        return self.height, self.width

    def band(self, band):
        """Returns one band as a ``(H, W)`` integer array."""
        return self.data[:, :, band].astype(numpy.int64)

    def gray(self):
        """Per-pixel grayscale intensity ``round((R+G+B)/3)``, or the only
        band of a gray image. The mean of three integers never ends in .5,
        so the rounding is unambiguous.

        >>> Image(2, 1, 3, [1, 1, 2, 0, 0, 2]).gray().tolist()
        [[1, 1]]
        """
        if self.bands == 1:
            return self.data[:, :, 0].copy()
        total = self.data.astype(numpy.int64).sum(axis=2)
        return ((total + 1) // 3).astype(numpy.uint8)

    def to_rgb(self):
        if self.bands == 3:
            return self.copy()
        return Image.from_array(numpy.repeat(self.data, 3, axis=2))

    def copy(self):
        return Image.from_array(self.data.copy())

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape \
            and bool((self.data == other.data).all())

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    def __repr__(self):
        return 'Image({0}x{1}, bands={2})'.format(self.width, self.height, self.bands)


class SilhouetteMask(object):
    """Binary grid marking the interior of the head outline.

    >>> m = SilhouetteMask.full_frame(3, 2)
    >>> m.count()
    6
    >>> m.centroid()
    (1.0, 0.5)
    """
    def __init__(self, inside):
        inside = numpy.asarray(inside, dtype=bool)
        if inside.ndim != 2:
            raise ValueError('SilhouetteMask: expected a 2-D grid, got shape'
                             ' {0}'.format(inside.shape))
        self.inside = inside
        self.height, self.width = inside.shape

    @classmethod
    def full_frame(cls, width, height):
        return cls(numpy.ones((height, width), dtype=bool))

    @classmethod
    def from_image(cls, img):
        """Samples above 127 are interior. Expects a gray image."""
        if img.bands != 1:
            raise DimensionMismatchError('SilhouetteMask: mask images must have'
                                         ' a single band, got {0}'.format(img.bands))
        return cls(img.data[:, :, 0] > MASK_INSIDE_THRESHOLD)

    def to_image(self):
        return Image.from_array(self.inside.astype(numpy.uint8) * 255)

    def count(self):
        return int(self.inside.sum())

    def centroid(self):
        """Mean (x, y) of interior pixel centres."""
        ys, xs = numpy.nonzero(self.inside)
        if len(xs) == 0:
            raise EmptySilhouetteError('SilhouetteMask: empty silhouette has no centroid')
        return float(xs.mean()), float(ys.mean())

    def bounding_box(self):
        """Returns ``(top, left, bottom, right)`` of the interior, with
        bottom and right exclusive."""
        ys, xs = numpy.nonzero(self.inside)
        if len(xs) == 0:
            return None
        return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1

    def check_matches(self, img):
        if (self.width, self.height) != (img.width, img.height):
            raise DimensionMismatchError('Silhouette mask {0}x{1} does not match'
                                         ' image {2}x{3}'.format(self.width, self.height,
                                                                 img.width, img.height))


def region_or_full_frame(region, img):
    """Resolves the optional region argument of the raster operations."""
    if region is None:
        return SilhouetteMask.full_frame(img.width, img.height)
    region.check_matches(img)
    return region


##############################################################################
# PGM / PPM


def _read_header(data, n_tokens=4):
    """Splits off the whitespace-delimited netpbm header. Returns the tokens
    and the offset of the first payload byte. Comment lines starting with
    ``#`` inside the header are skipped."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < n_tokens:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b'#':
            while i < n and data[i:i + 1] not in (b'\n', b'\r'):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise ImageFormatError('Truncated header: expected {0} header fields,'
                                   ' got {1}'.format(n_tokens, len(tokens)),
                                   kind='truncated')
        tokens.append(data[start:i])
        if len(tokens) == 1 and tokens[0] not in (b'P5', b'P6'):
            raise ImageFormatError('Unsupported magic number {0!r}: only binary'
                                   ' PGM (P5) and PPM (P6) are'
                                   ' supported'.format(tokens[0].decode('latin-1')),
                                   kind='unsupported-format')
    # Exactly one whitespace byte separates the header from the payload.
    if i >= n:
        raise ImageFormatError('Truncated file: no payload after header',
                               kind='truncated')
    return tokens, i + 1


def load_image(path):
    """Reads a binary PGM (P5) or PPM (P6) file with maxval 255.

    :param path: The image file.

    :returns: An ``Image`` with 1 band for P5 and 3 bands for P6.
    """
    if not os.path.isfile(path):
        raise InputFileError(path, reason='image file not found')
    try:
        with open(path, 'rb') as hdl:
            data = hdl.read()
    except (IOError, OSError) as e:
        raise ImageFormatError('Cannot read image {0}: {1}'.format(path, e),
                               kind='unreadable')

    if len(data) < 2:
        raise ImageFormatError('File {0} is too short to be an image'.format(path),
                               kind='unreadable')

    tokens, offset = _read_header(data)
    magic = tokens[0]
    try:
        width, height, maxval = [int(t) for t in tokens[1:]]
    except ValueError:
        raise ImageFormatError('Non-numeric header fields in {0}: {1}'
                               ''.format(path, tokens[1:]), kind='unreadable')
    if maxval != 255:
        raise ImageFormatError('Unsupported maxval {0} in {1}: only 255 is'
                               ' supported'.format(maxval, path), kind='bad-maxval')
    if width < 1 or height < 1:
        raise ImageFormatError('Invalid dimensions {0}x{1} in {2}'
                               ''.format(width, height, path), kind='unreadable')

    bands = 1 if magic == b'P5' else 3
    expected = width * height * bands
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise ImageFormatError('Truncated payload in {0}: expected {1} bytes,'
                               ' found {2}'.format(path, expected, len(payload)),
                               kind='truncated')

    logging.debug('load_image: {0} -> {1}x{2}, {3} band(s)'
                  ''.format(path, width, height, bands))
    return Image(width, height, bands, numpy.frombuffer(payload, dtype=numpy.uint8))


def save_image(img, path):
    """Writes P5 for gray images and P6 for RGB images."""
    magic = 'P5' if img.bands == 1 else 'P6'
    header = '{0}\n{1} {2}\n255\n'.format(magic, img.width, img.height)
    with open(path, 'wb') as hdl:
        hdl.write(header.encode('ascii'))
        hdl.write(img.data.tobytes())
    logging.debug('save_image: wrote {0} ({1})'.format(path, magic))


def load_mask(path):
    """Loads a silhouette mask stored as a P5 image."""
    return SilhouetteMask.from_image(load_image(path))


##############################################################################
# Min-max sharpening


_NEIGHBOUR_FOOTPRINT = numpy.array([[1, 1, 1],
                                    [1, 0, 1],
                                    [1, 1, 1]], dtype=bool)


def minmax_sharpen(img, region=None):
    """Replaces every pixel in the region by the closer of the brightest
    and darkest of its 8 neighbours (centre excluded), separately in each
    band. Equidistant pixels go to the maximum. Only in-bounds neighbours
    count; pixels outside the region are copied.

    >>> img = Image(3, 3, 1, [0, 0, 0, 10, 4, 10, 0, 10, 10])
    >>> int(minmax_sharpen(img).data[1, 1, 0])
    0
    """
    region = region_or_full_frame(region, img)
    if img.width * img.height == 1:
        # No neighbours at all.
        return img.copy()

    output = img.data.copy()
    for b in range(img.bands):
        band = img.data[:, :, b]
        # Out-of-bounds padding never wins: 0 for the max, 255 for the min.
        n_max = scipy.ndimage.maximum_filter(band, footprint=_NEIGHBOUR_FOOTPRINT,
                                             mode='constant', cval=0).astype(numpy.int64)
        n_min = scipy.ndimage.minimum_filter(band, footprint=_NEIGHBOUR_FOOTPRINT,
                                             mode='constant', cval=255).astype(numpy.int64)
        v = band.astype(numpy.int64)
        to_max = numpy.abs(v - n_max) <= numpy.abs(v - n_min)
        sharpened = numpy.where(to_max, n_max, n_min)
        output[:, :, b] = numpy.where(region.inside, sharpened, band)

    return Image.from_array(output)


##############################################################################
# Edges


EdgePoint = collections.namedtuple('EdgePoint', ['x', 'y', 'band', 'normal_angle', 'brightness'])


class EdgePool(object):
    """The edge point pool: per-band two-sided edge points with their
    local normal angles and brightness.

    The pool is indexed by pixel: ``is_edge[y, x, band]`` says whether
    ``(x, y, band)`` is in the pool, which makes membership queries O(1)
    and rules out duplicates. The ``points`` list is derived from the
    index, so the two always agree.
    """
    def __init__(self, is_edge, angles, brightness, n_dropped=0):
        self.is_edge = numpy.asarray(is_edge, dtype=bool)
        if self.is_edge.ndim != 3:
            raise ValueError('EdgePool: index must have shape (H, W, bands)')
        self.angles = numpy.where(self.is_edge, angles, numpy.nan)
        self.brightness = numpy.asarray(brightness, dtype=numpy.uint8)
        self.n_dropped = int(n_dropped)
        self.height, self.width, self.bands = self.is_edge.shape

    @classmethod
    def empty(cls, width, height, bands):
        return cls(numpy.zeros((height, width, bands), dtype=bool),
                   numpy.zeros((height, width, bands)),
                   numpy.zeros((height, width), dtype=numpy.uint8))

    @classmethod
    def from_points(cls, points, width, height, bands):
        """Builds a pool from EdgePoints; repeated (x, y, band) entries
        are merged (the last one wins)."""
        is_edge = numpy.zeros((height, width, bands), dtype=bool)
        angles = numpy.zeros((height, width, bands))
        brightness = numpy.zeros((height, width), dtype=numpy.uint8)
        for p in points:
            is_edge[p.y, p.x, p.band] = True
            angles[p.y, p.x, p.band] = p.normal_angle
            brightness[p.y, p.x] = p.brightness
        return cls(is_edge, angles, brightness)

    @property
    def points(self):
        ys, xs, bs = numpy.nonzero(self.is_edge)
        return [EdgePoint(int(x), int(y), int(b),
                          float(self.angles[y, x, b]), int(self.brightness[y, x]))
                for y, x, b in zip(ys, xs, bs)]

    def __len__(self):
        return int(self.is_edge.sum())

    def contains(self, x, y, band):
        if not (0 <= x < self.width and 0 <= y < self.height and 0 <= band < self.bands):
            return False
        return bool(self.is_edge[y, x, band])

    def edge_mask(self):
        """Pixels that are an edge in at least one band."""
        return self.is_edge.any(axis=2)

    def band_count(self):
        """Number of bands in which each pixel is an edge."""
        return self.is_edge.sum(axis=2)

    def __repr__(self):
        return 'EdgePool({0} points, {1}x{2}x{3}, dropped={4})' \
               ''.format(len(self), self.width, self.height, self.bands, self.n_dropped)


def _normal_angle(nx, ny):
    angle = numpy.mod(numpy.arctan2(ny, nx), TWO_PI)
    return numpy.where(angle >= TWO_PI, 0.0, angle)


def compute_edge_normal(img, x, y, band):
    """The edge's local normal at (x, y): the contrast-weighted average of
    the unit directions towards the in-bounds 8-neighbours. It points from
    dark towards bright.

    :returns: The angle in radians within ``[0, 2*pi)``, or ``None`` if the
        averaged contrast vanishes and the point must be rejected.

    Both sides of a vertical step from dark (left) to bright (right) get
    the normal pointing to the right:

    >>> step = Image(2, 3, 1, [0, 255, 0, 255, 0, 255])
    >>> compute_edge_normal(step, 0, 1, 0)
    0.0
    >>> compute_edge_normal(step, 1, 1, 0)
    0.0
    >>> compute_edge_normal(Image(3, 3, 1, [7] * 9), 1, 1, 0) is None
    True
    """
    if not (0 <= x < img.width and 0 <= y < img.height):
        raise ValueError('compute_edge_normal: ({0}, {1}) is outside the {2}x{3}'
                         ' image'.format(x, y, img.width, img.height))
    if not 0 <= band < img.bands:
        raise ValueError('compute_edge_normal: no band {0}'.format(band))

    centre = int(img.data[y, x, band])
    nx, ny = 0.0, 0.0
    for dx, dy in NEIGHBOURS_8:
        qx, qy = x + dx, y + dy
        if not (0 <= qx < img.width and 0 <= qy < img.height):
            continue
        contrast = int(img.data[qy, qx, band]) - centre
        norm = math.hypot(dx, dy)
        nx += contrast * dx / norm
        ny += contrast * dy / norm

    if math.hypot(nx, ny) < NORMAL_EPSILON:
        return None
    return float(_normal_angle(nx, ny))


def edge_normal_field(img, band):
    """Vectorized ``compute_edge_normal``: returns the ``(nx, ny)`` normal
    vector grids for the whole band."""
    v = img.band(band)
    h, w = v.shape
    nx = numpy.zeros((h, w))
    ny = numpy.zeros((h, w))
    for dx, dy in NEIGHBOURS_8:
        # Pixels p whose neighbour p + d is inside the image.
        p_y = slice(max(0, -dy), h - max(0, dy))
        p_x = slice(max(0, -dx), w - max(0, dx))
        q_y = slice(max(0, dy), h + min(0, dy))
        q_x = slice(max(0, dx), w + min(0, dx))
        contrast = v[q_y, q_x] - v[p_y, p_x]
        norm = math.hypot(dx, dy)
        nx[p_y, p_x] += contrast * (dx / norm)
        ny[p_y, p_x] += contrast * (dy / norm)
    return nx, ny


def detect_color_edges(img, region=None, thresholds=None):
    """Collects the two-sided edge points of every band.

    For each pixel p of the region and each lower-half neighbour q that is
    also in the region, if the two differ by more than the band's threshold
    in band b, both p and q join the pool in band b. Every admitted point
    gets its local normal and the grayscale brightness of its own pixel.
    Points whose averaged normal vanishes are dropped and counted in
    ``EdgePool.n_dropped``.

    :param region: A SilhouetteMask, or None for the full frame.

    :param thresholds: One non-negative intensity delta per band.
        Defaults to 30 in every band.
    """
    region = region_or_full_frame(region, img)
    if thresholds is None:
        thresholds = [DEFAULT_EDGE_THRESHOLD] * img.bands
    thresholds = numpy.asarray(thresholds, dtype=numpy.float64).reshape(-1)
    if len(thresholds) != img.bands:
        raise DimensionMismatchError('detect_color_edges: got {0} thresholds for a'
                                     ' {1}-band image'.format(len(thresholds), img.bands))
    if (thresholds < 0).any():
        raise ValueError('detect_color_edges: thresholds must be non-negative')

    h, w = img.height, img.width
    data = img.data.astype(numpy.int64)
    inside = region.inside
    admitted = numpy.zeros((h, w, img.bands), dtype=bool)

    for dx, dy in LOWER_HALF_NEIGHBOURS:
        p_y = slice(0, h - dy)
        q_y = slice(dy, h)
        p_x = slice(max(0, -dx), w - max(0, dx))
        q_x = slice(max(0, dx), w + min(0, dx))

        both_inside = inside[p_y, p_x] & inside[q_y, q_x]
        contrast = numpy.abs(data[p_y, p_x, :] - data[q_y, q_x, :]) > thresholds
        hit = contrast & both_inside[:, :, numpy.newaxis]
        admitted[p_y, p_x, :] |= hit
        admitted[q_y, q_x, :] |= hit

    angles = numpy.zeros((h, w, img.bands))
    kept = admitted.copy()
    for b in range(img.bands):
        nx, ny = edge_normal_field(img, b)
        flat = numpy.hypot(nx, ny) < NORMAL_EPSILON
        kept[:, :, b] &= ~flat
        angles[:, :, b] = _normal_angle(nx, ny)

    n_dropped = int(admitted.sum() - kept.sum())
    if n_dropped:
        logging.warning('detect_color_edges: dropped {0} zero-gradient edge points'
                        ''.format(n_dropped))

    pool = EdgePool(kept, angles, img.gray(), n_dropped=n_dropped)
    logging.info('detect_color_edges: {0} edge points in {1} band(s), thresholds {2}'
                 ''.format(len(pool), img.bands, thresholds.tolist()))
    return pool


##############################################################################
# Overlay


OVERLAY_COLORS = ((255, 0, 0), (0, 255, 0), (0, 128, 255), (255, 255, 0), (255, 0, 255))


def render_overlay(img, points, arrow=None, radius=4):
    """Returns an RGB copy of the image with the given points circled and
    an optional arrow drawn.

    :param points: A list of (x, y) pixel positions. Each gets its own
        colour from ``OVERLAY_COLORS``.

    :param arrow: Optional ``((x0, y0), (x1, y1))`` segment, drawn in white.
    """
    canvas = img.to_rgb().data.copy()
    h, w = canvas.shape[:2]

    for i, (x, y) in enumerate(points):
        color = OVERLAY_COLORS[i % len(OVERLAY_COLORS)]
        rr, cc = circle_perimeter(int(round(y)), int(round(x)), radius, shape=(h, w))
        canvas[rr, cc] = color

    if arrow is not None:
        (x0, y0), (x1, y1) = arrow
        rr, cc = line(int(round(y0)), int(round(x0)), int(round(y1)), int(round(x1)))
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        canvas[rr[keep], cc[keep]] = (255, 255, 255)

    return Image.from_array(canvas)
