"""This module implements facial feature description and search: feature
masks, signature histograms, histogram distances, model training and the
feature's location likelihood map.

A signature histogram has two major bins: the non-edge bin, which counts
pixels under the feature mask that are not an edge in any band, and the
edge bin, which unravels into an A x B sub-histogram of the edge local
normal angle versus brightness. Its vector form puts the non-edge bin
first, followed by the edge bins in row-major (angle, brightness) order:

>>> h = SignatureHistogram(1, 1, edge_bins=[[1.0]], non_edge_bin=9.0)
>>> normalize_histogram(h).as_vector().tolist()
[0.9, 0.1]

The likelihood map stores raw distances, so *smaller is more likely*.
Inverting it into scores is the job of :mod:`HeadPoser.peaks`.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
from builtins import range
import logging
import math

import numpy
import scipy.ndimage
from scipy.special import rel_entr

from HeadPoser.errors import DimensionMismatchError, EmptyStencilError, \
    HistogramError, MaskOutOfFrameError, TrainingError
from HeadPoser.imaging import MASK_INSIDE_THRESHOLD, TWO_PI, region_or_full_frame

__version__ = "0.0.1"


DEFAULT_ANGLE_BINS = 8
DEFAULT_BRIGHTNESS_BINS = 8
DEFAULT_MODEL_FLOOR = 1e-6

NORMALIZATION_TOLERANCE = 1e-9

MEASURE_L1 = 'l1'
MEASURE_KULLBACK = 'kullback'
MEASURES = (MEASURE_L1, MEASURE_KULLBACK)


##############################################################################


class FeatureMask(object):
    """The set of pixel offsets that cover a feature and a small
    neighbourhood around it, relative to the mask's anchor pixel.

    :param name: Feature identifier (``left_eye``, ``mouth``...).

    :param offsets: ``(dx, dy)`` pairs relative to the anchor.

    :param width, height: The enclosing stencil size. Derived from the
        offsets when not given.

    :param anchor: The anchor's ``(x, y)`` position inside the stencil.
        Derived from the offsets when not given.

    >>> m = FeatureMask('dot', [(0, 0), (1, 0)])
    >>> m.width, m.height, m.anchor
    (2, 1, (0, 0))
    """
    def __init__(self, name, offsets, width=None, height=None, anchor=None):
        offsets = [(int(dx), int(dy)) for dx, dy in offsets]
        if not offsets:
            raise EmptyStencilError('FeatureMask {0}: no offsets'.format(name))
        if len(set(offsets)) != len(offsets):
            raise ValueError('FeatureMask {0}: duplicate offsets'.format(name))

        self.name = name
        self.offsets = numpy.array(sorted(offsets, key=lambda o: (o[1], o[0])),
                                   dtype=numpy.int64)
        self.min_dx, self.min_dy = [int(v) for v in self.offsets.min(axis=0)]
        self.max_dx, self.max_dy = [int(v) for v in self.offsets.max(axis=0)]

        if anchor is None:
            anchor = (-min(self.min_dx, 0), -min(self.min_dy, 0))
        if width is None:
            width = max(self.max_dx, 0) + anchor[0] + 1
        if height is None:
            height = max(self.max_dy, 0) + anchor[1] + 1
        self.anchor = (int(anchor[0]), int(anchor[1]))
        self.width = int(width)
        self.height = int(height)

        ax, ay = self.anchor
        if not (0 <= ax < self.width and 0 <= ay < self.height):
            raise ValueError('FeatureMask {0}: anchor {1} outside the {2}x{3}'
                             ' stencil'.format(name, self.anchor, self.width, self.height))
        if ax + self.min_dx < 0 or ax + self.max_dx >= self.width \
                or ay + self.min_dy < 0 or ay + self.max_dy >= self.height:
            raise ValueError('FeatureMask {0}: offsets exceed the {1}x{2}'
                             ' stencil'.format(name, self.width, self.height))

    def __len__(self):
        return len(self.offsets)

    @property
    def size(self):
        return len(self.offsets)

    def suppression_radius(self):
        """Non-maxima suppression radius tied to the mask size:
        ``ceil(max(width, height) / 2)``."""
        return int(math.ceil(max(self.width, self.height) / 2.0))

    def fits_at(self, x, y, width, height):
        """Whether the whole footprint anchored at (x, y) lies in a
        ``width`` x ``height`` frame."""
        return (x + self.min_dx >= 0 and x + self.max_dx < width
                and y + self.min_dy >= 0 and y + self.max_dy < height)

    def footprint_fits(self, width, height):
        """Boolean ``(height, width)`` grid of anchors whose footprint
        lies inside the frame."""
        fits = numpy.zeros((height, width), dtype=bool)
        y0, y1 = -self.min_dy, height - self.max_dy
        x0, x1 = -self.min_dx, width - self.max_dx
        if y1 > y0 and x1 > x0:
            fits[y0:y1, x0:x1] = True
        return fits

    def kernel(self):
        """The footprint as an odd-sized, centred 0/1 correlation kernel."""
        rx = max(abs(self.min_dx), abs(self.max_dx))
        ry = max(abs(self.min_dy), abs(self.max_dy))
        k = numpy.zeros((2 * ry + 1, 2 * rx + 1))
        k[self.offsets[:, 1] + ry, self.offsets[:, 0] + rx] = 1.0
        return k

    def __repr__(self):
        return 'FeatureMask({0}, {1} offsets, {2}x{3}, anchor={4})' \
               ''.format(self.name, len(self), self.width, self.height, self.anchor)


def load_mask_stencil(img, name='feature'):
    """Builds a FeatureMask from a single-band stencil image: pixels
    brighter than 127 belong to the mask, and the stencil's centre pixel
    ``(W // 2, H // 2)`` is the anchor.

    >>> from HeadPoser.imaging import Image
    >>> load_mask_stencil(Image(3, 1, 1, [255, 255, 255])).offsets.tolist()
    [[-1, 0], [0, 0], [1, 0]]
    """
    if img.bands != 1:
        raise DimensionMismatchError('load_mask_stencil: stencil must be a'
                                     ' single-band image')
    ys, xs = numpy.nonzero(img.data[:, :, 0] > MASK_INSIDE_THRESHOLD)
    if len(xs) == 0:
        raise EmptyStencilError('load_mask_stencil: stencil {0} has no pixel'
                                ' above {1}'.format(name, MASK_INSIDE_THRESHOLD))
    ax, ay = img.width // 2, img.height // 2
    offsets = [(int(x) - ax, int(y) - ay) for x, y in zip(xs, ys)]
    return FeatureMask(name, offsets, width=img.width, height=img.height, anchor=(ax, ay))


def mask_to_stencil(mask):
    """The inverse of ``load_mask_stencil``: renders the mask as a 0/255
    single-band image."""
    from HeadPoser.imaging import Image
    data = numpy.zeros((mask.height, mask.width), dtype=numpy.uint8)
    ax, ay = mask.anchor
    data[mask.offsets[:, 1] + ay, mask.offsets[:, 0] + ax] = 255
    return Image.from_array(data)


##############################################################################


class SignatureHistogram(object):
    """Non-edge bin plus an A x B (angle x brightness) edge sub-histogram."""
    def __init__(self, angle_bins, brightness_bins, edge_bins=None,
                 non_edge_bin=0.0, normalized=False):
        if angle_bins < 1 or brightness_bins < 1:
            raise HistogramError('SignatureHistogram: bin counts must be >= 1,'
                                 ' got {0}x{1}'.format(angle_bins, brightness_bins))
        self.angle_bins = int(angle_bins)
        self.brightness_bins = int(brightness_bins)
        if edge_bins is None:
            edge_bins = numpy.zeros((self.angle_bins, self.brightness_bins))
        self.edge_bins = numpy.array(edge_bins, dtype=numpy.float64).reshape(
            (self.angle_bins, self.brightness_bins))
        self.non_edge_bin = float(non_edge_bin)
        if self.non_edge_bin < 0 or (self.edge_bins < 0).any():
            raise HistogramError('SignatureHistogram: negative weights')
        self.normalized = bool(normalized)

    @classmethod
    def from_vector(cls, angle_bins, brightness_bins, vector, normalized=False):
        vector = numpy.asarray(vector, dtype=numpy.float64)
        if vector.shape != (1 + angle_bins * brightness_bins,):
            raise HistogramError('SignatureHistogram: vector of length {0} does not'
                                 ' fit {1}x{2} bins'.format(len(vector), angle_bins,
                                                            brightness_bins))
        return cls(angle_bins, brightness_bins, edge_bins=vector[1:],
                   non_edge_bin=vector[0], normalized=normalized)

    @property
    def n_bins(self):
        return 1 + self.angle_bins * self.brightness_bins

    @property
    def shape(self):
        return self.angle_bins, self.brightness_bins

    def as_vector(self):
        return numpy.concatenate([[self.non_edge_bin], self.edge_bins.ravel()])

    def total(self):
        return self.non_edge_bin + float(self.edge_bins.sum())

    def edge_total(self):
        return float(self.edge_bins.sum())

    def is_normalized(self):
        return self.normalized and abs(self.total() - 1.0) <= NORMALIZATION_TOLERANCE

    def copy(self):
        return SignatureHistogram(self.angle_bins, self.brightness_bins,
                                  self.edge_bins.copy(), self.non_edge_bin,
                                  self.normalized)

    def __repr__(self):
        return 'SignatureHistogram({0}x{1}, non_edge={2:.4g}, edge={3:.4g},' \
               ' normalized={4})'.format(self.angle_bins, self.brightness_bins,
                                         self.non_edge_bin, self.edge_total(),
                                         self.normalized)


def normalize_histogram(h):
    """Converts counts to probabilities."""
    total = h.total()
    if total <= 0:
        raise HistogramError('normalize_histogram: all-zero histogram')
    return SignatureHistogram(h.angle_bins, h.brightness_bins,
                              h.edge_bins / total, h.non_edge_bin / total,
                              normalized=True)


def _check_pair(s, m):
    if s.shape != m.shape:
        raise HistogramError('Histogram shapes differ: {0} vs {1}'.format(s.shape, m.shape))
    for which, h in (('tested', s), ('model', m)):
        if not h.is_normalized():
            raise HistogramError('The {0} histogram is not normalized (total {1})'
                                 ''.format(which, h.total()))


def _model_signature(m):
    return m.signature if isinstance(m, FeatureModel) else m


def distance_l1(s, m):
    """Sum of absolute bin differences, in ``[0, 2]``.

    >>> s = SignatureHistogram(1, 1, [[0.5]], 0.5, normalized=True)
    >>> m = SignatureHistogram(1, 1, [[0.75]], 0.25, normalized=True)
    >>> print(distance_l1(s, m))
    0.5
    """
    m = _model_signature(m)
    _check_pair(s, m)
    return float(numpy.abs(s.as_vector() - m.as_vector()).sum())


def distance_kullback(s, m):
    """The Kullback measure ``D(s : m) = sum_i s_i ln(s_i / m_i)``. Bins with
    ``s_i = 0`` contribute nothing; the model must have no empty bin.

    >>> s = SignatureHistogram(1, 1, [[0.0]], 1.0, normalized=True)
    >>> m = SignatureHistogram(1, 1, [[0.5]], 0.5, normalized=True)
    >>> print(round(distance_kullback(s, m), 5))
    0.69315
    """
    m = _model_signature(m)
    _check_pair(s, m)
    mv = m.as_vector()
    if (mv <= 0).any():
        raise HistogramError('distance_kullback: the model has empty bins; floor it'
                             ' before use')
    return float(rel_entr(s.as_vector(), mv).sum())


def _distances(s_vectors, m_vector, measure):
    """Row-wise distances of normalized signatures to one model vector."""
    if measure == MEASURE_L1:
        return numpy.abs(s_vectors - m_vector).sum(axis=-1)
    elif measure == MEASURE_KULLBACK:
        return rel_entr(s_vectors, m_vector).sum(axis=-1)
    raise ValueError('Unknown distance measure {0}; use one of {1}'.format(measure, MEASURES))


def distance(s, m, measure=MEASURE_KULLBACK):
    if measure == MEASURE_L1:
        return distance_l1(s, m)
    elif measure == MEASURE_KULLBACK:
        return distance_kullback(s, m)
    raise ValueError('Unknown distance measure {0}; use one of {1}'.format(measure, MEASURES))


##############################################################################


def edge_bin_indices(edges, angle_bins, brightness_bins):
    """For every pooled (pixel, band) entry, its flat edge-bin index
    ``angle_bin * B + brightness_bin``; -1 where the entry is not an edge."""
    angles = numpy.nan_to_num(edges.angles, nan=0.0)
    angle_bin = numpy.floor(angles * angle_bins / TWO_PI).astype(numpy.int64)
    angle_bin = numpy.clip(angle_bin, 0, angle_bins - 1)
    bright_bin = (edges.brightness.astype(numpy.int64) * brightness_bins) // 256
    index = angle_bin * brightness_bins + bright_bin[:, :, numpy.newaxis]
    return numpy.where(edges.is_edge, index, -1)


def edge_bin_votes(edges, angle_bins, brightness_bins, angle_interpolation=False):
    """The edge-bin votes of every pooled (pixel, band) entry, as a list of
    ``(index, weight)`` array pairs shaped like ``edges.is_edge``. Non-edge
    entries have index -1 and weight 0.

    Without interpolation every edge entry casts one vote of weight 1 into
    its ``edge_bin_indices`` bin. With interpolation the vote is split
    linearly between the two angle bins whose centres enclose the angle,
    so that a normal close to a bin boundary lands half in each bin instead
    of flipping between them. The brightness bin is never split, and every
    edge entry still carries a total weight of 1.
    """
    if not angle_interpolation:
        index = edge_bin_indices(edges, angle_bins, brightness_bins)
        return [(index, (index >= 0).astype(numpy.float64))]

    angles = numpy.nan_to_num(edges.angles, nan=0.0)
    u = angles * angle_bins / TWO_PI - 0.5
    lower = numpy.floor(u)
    frac = u - lower
    lo = numpy.mod(lower.astype(numpy.int64), angle_bins)
    hi = numpy.mod(lo + 1, angle_bins)
    bright_bin = ((edges.brightness.astype(numpy.int64) * brightness_bins)
                  // 256)[:, :, numpy.newaxis]
    votes = []
    for angle_bin, weight in ((lo, 1.0 - frac), (hi, frac)):
        index = angle_bin * brightness_bins + bright_bin
        votes.append((numpy.where(edges.is_edge, index, -1),
                      numpy.where(edges.is_edge, weight, 0.0)))
    return votes


def collect_signature(edges, region, mask, at, angle_bins=DEFAULT_ANGLE_BINS,
                      brightness_bins=DEFAULT_BRIGHTNESS_BINS, angle_interpolation=False):
    """Collects the (unnormalized) signature histogram under the mask
    anchored at ``at``.

    Every covered pixel that is not an edge in any band adds 1 to the
    non-edge bin; otherwise every band in which it is an edge adds 1 to its
    (angle, brightness) bin, or splits that 1 between two neighbouring
    angle bins with ``angle_interpolation`` (see ``edge_bin_votes``).

    :param region: The search region, only checked for matching dimensions
        (None for the full frame).

    :param at: The anchor position ``(x, y)``.
    """
    if region is not None and (region.width, region.height) != (edges.width, edges.height):
        raise DimensionMismatchError('collect_signature: region {0}x{1} does not match'
                                     ' edges {2}x{3}'.format(region.width, region.height,
                                                             edges.width, edges.height))
    x, y = int(at[0]), int(at[1])
    if not mask.fits_at(x, y, edges.width, edges.height):
        raise MaskOutOfFrameError('collect_signature: mask {0} anchored at ({1}, {2})'
                                  ' exits the {3}x{4} frame'.format(mask.name, x, y,
                                                                    edges.width,
                                                                    edges.height))
    ys, xs = y + mask.offsets[:, 1], x + mask.offsets[:, 0]
    non_edge = int((~edges.is_edge[ys, xs, :]).all(axis=1).sum())
    counts = numpy.zeros(angle_bins * brightness_bins)
    for index, weight in edge_bin_votes(edges, angle_bins, brightness_bins,
                                        angle_interpolation):
        covered, w = index[ys, xs, :], weight[ys, xs, :]
        hit = covered >= 0
        counts += numpy.bincount(covered[hit], weights=w[hit],
                                 minlength=angle_bins * brightness_bins)
    return SignatureHistogram(angle_bins, brightness_bins, edge_bins=counts,
                              non_edge_bin=non_edge)


class FeatureModel(object):
    """A feature mask with its model signature histogram.

    :param angle_interpolation: Whether the signature was collected with
        interpolated angle votes. Search must collect the same way.
    """
    def __init__(self, mask, signature, training_count=1, floor=DEFAULT_MODEL_FLOOR,
                 angle_interpolation=False):
        if not signature.is_normalized():
            raise HistogramError('FeatureModel {0}: signature must be normalized'
                                 ''.format(mask.name))
        if (signature.as_vector() <= 0).any():
            raise HistogramError('FeatureModel {0}: signature has empty bins'
                                 ''.format(mask.name))
        self.mask = mask
        self.signature = signature
        self.training_count = int(training_count)
        self.floor = float(floor)
        self.angle_interpolation = bool(angle_interpolation)

    @property
    def name(self):
        return self.mask.name

    @property
    def angle_bins(self):
        return self.signature.angle_bins

    @property
    def brightness_bins(self):
        return self.signature.brightness_bins

    def __repr__(self):
        return 'FeatureModel({0}, {1}x{2} bins, trained on {3})' \
               ''.format(self.name, self.angle_bins, self.brightness_bins,
                         self.training_count)


def floor_histogram(h, floor=DEFAULT_MODEL_FLOOR):
    """Raises every bin to at least ``floor`` and renormalizes."""
    v = numpy.maximum(h.as_vector(), floor)
    return SignatureHistogram.from_vector(h.angle_bins, h.brightness_bins,
                                          v / v.sum(), normalized=True)


def train_model(samples, mask, angle_bins=DEFAULT_ANGLE_BINS,
                brightness_bins=DEFAULT_BRIGHTNESS_BINS, floor=DEFAULT_MODEL_FLOOR,
                angle_interpolation=False):
    """Averages the normalized training signatures into the model.

    :param samples: A list of ``(edges, region, anchor)`` triplets, one per
        training image.

    :param angle_interpolation: Split edge votes between neighbouring angle
        bins (see ``edge_bin_votes``). The model remembers the choice.

    :returns: A FeatureModel whose bins are floored to ``floor`` and
        renormalized.
    """
    if not samples:
        raise TrainingError('train_model: no training samples for feature {0}'
                            ''.format(mask.name))
    if floor <= 0:
        raise TrainingError('train_model: the model floor must be positive')

    vectors = []
    for i, (edges, region, anchor) in enumerate(samples):
        h = collect_signature(edges, region, mask, anchor, angle_bins, brightness_bins,
                              angle_interpolation)
        vectors.append(normalize_histogram(h).as_vector())
        logging.debug('train_model: {0} sample {1} at {2}: non-edge {3}, edge {4}'
                      ''.format(mask.name, i, anchor, h.non_edge_bin, h.edge_total()))

    mean = SignatureHistogram.from_vector(angle_bins, brightness_bins,
                                          numpy.mean(vectors, axis=0))
    signature = floor_histogram(mean, floor)
    logging.info('train_model: feature {0} trained on {1} sample(s)'
                 ''.format(mask.name, len(samples)))
    return FeatureModel(mask, signature, training_count=len(samples), floor=floor,
                        angle_interpolation=angle_interpolation)


##############################################################################


class LikelihoodMap(object):
    """Per-anchor distances between the local signature and the model.
    Invalid positions hold NaN."""
    def __init__(self, values, valid, name=None):
        self.values = numpy.asarray(values, dtype=numpy.float64)
        self.valid = numpy.asarray(valid, dtype=bool)
        self.height, self.width = self.values.shape
        self.name = name

    def n_valid(self):
        return int(self.valid.sum())

    def argmin(self):
        """Position ``(x, y)`` of the smallest valid distance; ties go to
        the first position in raster order."""
        if not self.valid.any():
            return None
        masked = numpy.where(self.valid, self.values, numpy.inf)
        y, x = numpy.unravel_index(int(numpy.argmin(masked)), masked.shape)
        return int(x), int(y)

    def __repr__(self):
        return 'LikelihoodMap({0}, {1}x{2}, {3} valid)'.format(self.name, self.width,
                                                              self.height, self.n_valid())


def build_likelihood_map(edges, region, model, measure=MEASURE_KULLBACK):
    """Scans the search region with the feature's mask.

    An anchor position is valid when the anchor lies inside the region and
    the whole mask footprint lies inside the image frame. At every valid
    position the signature is collected, normalized and compared to the
    model with the chosen measure.

    The per-bin counts of all positions are obtained at once by correlating
    one vote-weight image per bin with the mask footprint, which gives exactly
    the counts ``collect_signature`` would collect position by position.
    Votes are cast the way the model was trained (``angle_interpolation``).
    """
    if measure not in MEASURES:
        raise ValueError('Unknown distance measure {0}; use one of {1}'.format(measure, MEASURES))
    if region is None:
        from HeadPoser.imaging import SilhouetteMask
        region = SilhouetteMask.full_frame(edges.width, edges.height)
    if (region.width, region.height) != (edges.width, edges.height):
        raise DimensionMismatchError('build_likelihood_map: region {0}x{1} does not'
                                     ' match edges {2}x{3}'.format(region.width,
                                                                   region.height,
                                                                   edges.width,
                                                                   edges.height))
    if region.count() == 0:
        raise ValueError('build_likelihood_map: empty search region')

    mask = model.mask
    a_bins, b_bins = model.angle_bins, model.brightness_bins
    valid = region.inside & mask.footprint_fits(edges.width, edges.height)
    values = numpy.full((edges.height, edges.width), numpy.nan)
    n_valid = int(valid.sum())
    if n_valid == 0:
        logging.warning('build_likelihood_map: feature {0} has no valid anchor'
                        ' position'.format(mask.name))
        return LikelihoodMap(values, valid, name=mask.name)

    kernel = mask.kernel()
    votes = edge_bin_votes(edges, a_bins, b_bins, model.angle_interpolation)
    counts = numpy.zeros((n_valid, 1 + a_bins * b_bins))

    non_edge = (~edges.edge_mask()).astype(numpy.float64)
    counts[:, 0] = scipy.ndimage.correlate(non_edge, kernel, mode='constant', cval=0.0)[valid]
    for k in range(a_bins * b_bins):
        weight = sum(numpy.where(index == k, w, 0.0).sum(axis=2) for index, w in votes)
        if not weight.any():
            continue
        counts[:, k + 1] = scipy.ndimage.correlate(weight, kernel,
                                                   mode='constant', cval=0.0)[valid]

    signatures = counts / counts.sum(axis=1, keepdims=True)
    values[valid] = _distances(signatures, model.signature.as_vector(), measure)

    logging.info('build_likelihood_map: feature {0}, {1} valid positions, measure {2},'
                 ' min distance {3:.4g}'.format(mask.name, n_valid, measure,
                                               float(numpy.nanmin(values))))
    return LikelihoodMap(values, valid, name=mask.name)
