import unittest

import numpy

from HeadPoser.errors import NoValidPeakError
from HeadPoser.features import LikelihoodMap
from HeadPoser.peaks import Peak, SuppressionQueue, find_peaks, invert_map, \
    local_dominance, suppress_non_maxima


def greedy_reference(scores, radius, max_peaks):
    """Repeatedly takes the best unsuppressed locally dominant cell, in
    plain loops."""
    h, w = scores.shape
    dominant = []
    for y in range(h):
        for x in range(w):
            window = scores[max(0, y - radius):y + radius + 1,
                            max(0, x - radius):x + radius + 1]
            if numpy.isfinite(scores[y, x]) and scores[y, x] >= window.max():
                dominant.append((y, x))
    taken = []
    while len(taken) < max_peaks:
        free = [(y, x) for y, x in dominant
                if all(max(abs(y - ty), abs(x - tx)) > radius for ty, tx in taken)]
        if not free:
            break
        taken.append(min(free, key=lambda c: (-scores[c], c[0], c[1])))
    return [(x, y) for y, x in taken]


class SuppressNonMaximaTest(unittest.TestCase):
    def test_matches_greedy_reference(self):
        rng = numpy.random.RandomState(10)
        for trial in range(100):
            scores = rng.uniform(size=(50, 50))
            if trial % 4 == 0:
                scores = numpy.round(scores * 8) / 8.0
            radius = (1, 2, 3, 5)[trial % 4]
            peaks = suppress_non_maxima(scores, radius, max_peaks=20)
            self.assertEqual([p.position for p in peaks],
                             greedy_reference(scores, radius, 20))

    def test_examples(self):
        peaks = suppress_non_maxima(numpy.array([[1., 2., 3., 4.]]), radius=2)
        self.assertEqual([p.position for p in peaks], [(3, 0)])
        peaks = suppress_non_maxima(numpy.full((4, 4), 7.0), radius=1, max_peaks=1)
        self.assertEqual([p.position for p in peaks], [(0, 0)])

    def test_random_grids(self):
        rng = numpy.random.RandomState(11)
        for _ in range(30):
            scores = rng.uniform(size=(20, 25))
            radius = rng.randint(1, 5)
            peaks = suppress_non_maxima(scores, radius, max_peaks=6)
            self.assertLessEqual(len(peaks), 6)
            self.assertGreater(len(peaks), 0)
            for p in peaks:
                window = scores[max(0, p.y - radius):p.y + radius + 1,
                                max(0, p.x - radius):p.x + radius + 1]
                self.assertEqual(p.score, window.max())
            for i, p in enumerate(peaks):
                for q in peaks[i + 1:]:
                    self.assertGreater(p.chebyshev(q), radius)
                    self.assertGreaterEqual(p.score, q.score)

    def test_count_shrinks_with_radius(self):
        rng = numpy.random.RandomState(12)
        for _ in range(10):
            scores = rng.uniform(size=(30, 30))
            counts = [len(suppress_non_maxima(scores, r, max_peaks=1000))
                      for r in (1, 2, 3, 5, 8)]
            self.assertEqual(counts, sorted(counts, reverse=True))

    def test_plateau_keeps_separation(self):
        peaks = suppress_non_maxima(numpy.ones((6, 6)), radius=2, max_peaks=100)
        self.assertEqual(peaks[0].position, (0, 0))
        for i, p in enumerate(peaks):
            for q in peaks[i + 1:]:
                self.assertGreater(p.chebyshev(q), 2)

    def test_ties_in_raster_order(self):
        scores = numpy.zeros((5, 9))
        scores[4, 1] = 1.0
        scores[0, 7] = 1.0
        scores[0, 2] = 1.0
        peaks = suppress_non_maxima(scores, radius=1, max_peaks=3)
        self.assertEqual([p.position for p in peaks], [(2, 0), (7, 0), (1, 4)])

    def test_infinite_cells_never_selected(self):
        scores = numpy.full((4, 4), -numpy.inf)
        self.assertEqual(suppress_non_maxima(scores, 1), [])
        scores[2, 3] = -5.0
        self.assertEqual([p.position for p in suppress_non_maxima(scores, 1)], [(3, 2)])

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            suppress_non_maxima(numpy.ones((3, 3)), 0)
        with self.assertRaises(ValueError):
            suppress_non_maxima(numpy.ones((3, 3)), 1, max_peaks=0)
        with self.assertRaises(ValueError):
            suppress_non_maxima(numpy.ones((0, 3)), 1)

    def test_dominance(self):
        scores = numpy.array([[0., 2., 2.], [1., 0., -numpy.inf]])
        self.assertEqual(local_dominance(scores, 1).tolist(),
                         [[False, True, True], [False, False, False]])


class SuppressionQueueTest(unittest.TestCase):
    def test_pop_order_and_suppression(self):
        queue = SuppressionQueue(radius=2)
        queue.push(0, 0, 1.0)
        queue.push(1, 1, 3.0)
        queue.push(9, 9, 2.0)
        self.assertEqual(queue.pop(), (1, 1, 3.0))
        self.assertEqual(queue.pop(), (9, 9, 2.0))
        self.assertIsNone(queue.pop())


class FindPeaksTest(unittest.TestCase):
    def test_invert_and_find(self):
        values = numpy.array([[0.5, 0.9, 0.2, 0.9, 0.8, 0.9, 0.7]])
        valid = numpy.ones(values.shape, dtype=bool)
        valid[0, 6] = False
        lmap = LikelihoodMap(values, valid, name='eye')
        scores = invert_map(lmap)
        self.assertEqual(scores[0, 6], -numpy.inf)
        self.assertAlmostEqual(scores[0, 2], 0.7)
        peaks = find_peaks(lmap, radius=1, max_peaks=5)
        self.assertEqual([p.x for p in peaks], [2, 0, 4])
        self.assertEqual(peaks[0].raw_distance, 0.2)
        self.assertEqual(peaks[0], Peak(2, 0, scores[0, 2]))

    def test_no_valid_entry(self):
        lmap = LikelihoodMap(numpy.full((2, 2), numpy.nan), numpy.zeros((2, 2), dtype=bool))
        with self.assertRaises(NoValidPeakError):
            find_peaks(lmap, 1)


if __name__ == '__main__':
    unittest.main()
