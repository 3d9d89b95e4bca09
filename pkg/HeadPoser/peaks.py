"""This module implements the selection of feature candidates from
a likelihood map.

The map holds distances (smaller is better). It is first inverted into
scores, ``score = max - distance`` over the valid positions, so that the
best positions become the highest peaks. Then the peaks are extracted
with non-maxima suppression in a square (Chebyshev) neighbourhood:

>>> scores = numpy.array([[1., 3., 2., 5., 4.]])
>>> [(p.x, p.score) for p in suppress_non_maxima(scores, radius=1, max_peaks=8)]
[(3, 5.0), (1, 3.0)]

A cell is a candidate peak only if it dominates its whole neighbourhood.
Candidates are then taken from a priority queue in descending score
(ties by ``y``, then ``x``); every emitted peak suppresses the queued
candidates within its radius.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
import heapq
import logging

import numpy
import scipy.ndimage

from HeadPoser.errors import NoValidPeakError

__version__ = "0.0.1"


DEFAULT_MAX_PEAKS = 5


class Peak(object):
    """A feature candidate location.

    :param x, y: Pixel coordinates (the mask anchor position).

    :param score: Inverted map value, higher is better.

    :param raw_distance: The original likelihood map value.
    """
    def __init__(self, x, y, score, raw_distance=None):
        self.x = int(x)
        self.y = int(y)
        self.score = float(score)
        self.raw_distance = None if raw_distance is None else float(raw_distance)

    @property
    def position(self):
        return self.x, self.y

    def chebyshev(self, other):
        return max(abs(self.x - other.x), abs(self.y - other.y))

    def to_dict(self):
        return {'x': self.x, 'y': self.y,
                'score': self.score,
                'raw_distance': self.raw_distance}

    def __eq__(self, other):
        return isinstance(other, Peak) and (self.x, self.y, self.score) \
            == (other.x, other.y, other.score)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.x, self.y, self.score))

    def __repr__(self):
        return 'Peak(x={0}, y={1}, score={2:.6g})'.format(self.x, self.y, self.score)


def invert_map(likelihood_map):
    """Converts map distances to scores: ``max(valid) - value`` at valid
    positions, ``-inf`` elsewhere.

    >>> from HeadPoser.features import LikelihoodMap
    >>> m = LikelihoodMap([[0., 1., 2.]], [[True, True, True]])
    >>> invert_map(m).tolist()
    [[2.0, 1.0, 0.0]]
    """
    valid = likelihood_map.valid
    if not valid.any():
        raise NoValidPeakError('invert_map: map {0} has no valid entry'
                               ''.format(likelihood_map.name))
    values = likelihood_map.values
    top = float(values[valid].max())
    scores = numpy.full(values.shape, -numpy.inf)
    scores[valid] = top - values[valid]
    return scores


class SuppressionQueue(object):
    """Max-priority queue of candidate cells with neighbourhood suppression.

    Ordering is by descending score, then ascending ``y``, then ``x``.
    Suppression is lazy: a popped cell lying within ``radius`` of an already
    emitted peak is discarded.
    """
    def __init__(self, radius):
        self.radius = radius
        self._heap = []
        self._emitted = []

    def push(self, x, y, score):
        heapq.heappush(self._heap, (-score, y, x))

    def __len__(self):
        return len(self._heap)

    def _is_suppressed(self, x, y):
        for ex, ey in self._emitted:
            if max(abs(ex - x), abs(ey - y)) <= self.radius:
                return True
        return False

    def pop(self):
        """Returns the next unsuppressed ``(x, y, score)``, or None when
        the queue is exhausted."""
        while self._heap:
            neg_score, y, x = heapq.heappop(self._heap)
            if self._is_suppressed(x, y):
                continue
            self._emitted.append((x, y))
            return x, y, -neg_score
        return None


def local_dominance(scores, radius):
    """Boolean grid of finite cells whose score is ``>=`` every score in
    their ``(2 radius + 1)`` square neighbourhood."""
    neighbourhood_max = scipy.ndimage.maximum_filter(scores, size=2 * radius + 1,
                                                     mode='constant', cval=-numpy.inf)
    return numpy.isfinite(scores) & (scores >= neighbourhood_max)


def suppress_non_maxima(scores, radius, max_peaks=DEFAULT_MAX_PEAKS, raw_distances=None):
    """Selects up to ``max_peaks`` peaks from the score grid.

    Every returned peak dominates its radius neighbourhood, and no two
    returned peaks lie within ``radius`` (Chebyshev distance) of each other.

    :param scores: 2D score grid; ``-inf`` marks cells that can never
        be selected.

    :param radius: Suppression radius in pixels, ``>= 1``.

    :param max_peaks: Upper bound on the number of returned peaks.

    :param raw_distances: Optional grid of the original map values to
        attach to the peaks.

    :returns: A list of Peak objects in descending score order.
    """
    scores = numpy.asarray(scores, dtype=numpy.float64)
    if scores.ndim != 2 or scores.size == 0:
        raise ValueError('suppress_non_maxima: expected a non-empty 2D score grid,'
                         ' got shape {0}'.format(scores.shape))
    if radius < 1:
        raise ValueError('suppress_non_maxima: radius must be >= 1, got {0}'.format(radius))
    if max_peaks < 1:
        raise ValueError('suppress_non_maxima: max_peaks must be >= 1, got {0}'
                         ''.format(max_peaks))

    candidates = local_dominance(scores, radius)
    queue = SuppressionQueue(radius)
    for y, x in zip(*numpy.nonzero(candidates)):
        queue.push(int(x), int(y), float(scores[y, x]))
    n_candidates = len(queue)

    peaks = []
    while len(peaks) < max_peaks:
        item = queue.pop()
        if item is None:
            break
        x, y, score = item
        raw = None if raw_distances is None else raw_distances[y, x]
        peaks.append(Peak(x, y, score, raw))

    logging.debug('suppress_non_maxima: {0} dominant cells, {1} peaks at radius {2}'
                  ''.format(n_candidates, len(peaks), radius))
    return peaks


def find_peaks(likelihood_map, radius, max_peaks=DEFAULT_MAX_PEAKS):
    """Inverts the map and extracts its best peaks."""
    scores = invert_map(likelihood_map)
    peaks = suppress_non_maxima(scores, radius, max_peaks,
                                raw_distances=likelihood_map.values)
    if not peaks:
        raise NoValidPeakError('find_peaks: no peak in map {0}'.format(likelihood_map.name))
    logging.info('find_peaks: feature {0}: {1} peak(s), best at ({2}, {3})'
                 ''.format(likelihood_map.name, len(peaks), peaks[0].x, peaks[0].y))
    return peaks
