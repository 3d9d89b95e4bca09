"""This module implements the best constellation search.

A constellation takes one candidate peak per feature. Its mutual distance
vector ``v`` is compared, after scale normalization, to the model's mean
distances with a multivariate normal density, and the constellation is
ranked by that density times the sum of its peak scores:

>>> model = ConstellationModel(['a', 'b', 'c'], [3., 4., 5.], numpy.eye(3),
...                            chirality_check=False)
>>> v = mutual_distances([(0, 0), (3, 0), (0, 4)])
>>> v.tolist()
[3.0, 4.0, 5.0]
>>> print(estimate_scale(v, model))
1.0

The ranking is carried out on logarithms, so that constellations whose
densities underflow to zero keep their order.
"""
from __future__ import print_function, unicode_literals, division

from builtins import object
from builtins import range
import itertools
import logging
import math

import numpy
from scipy.stats import multivariate_normal

from HeadPoser.errors import ConfigError, ConstellationRejectedError, \
    EmptySilhouetteError, NoValidPeakError, TrainingError

__version__ = "0.0.1"


FEATURE_NAMES = ('left_eye', 'right_eye', 'mouth')

DEFAULT_COVARIANCE_RIDGE = 1e-6


def feature_pairs(k):
    """Pair order of the mutual distance vector: (0,1), (0,2), (1,2) for K=3."""
    return list(itertools.combinations(range(k), 2))


def mutual_distances(positions):
    """Euclidean distances between all position pairs.

    >>> mutual_distances([(0, 0), (1, 0), (2, 0)]).tolist()
    [1.0, 2.0, 1.0]
    """
    positions = numpy.asarray(positions, dtype=numpy.float64)
    if positions.ndim != 2 or len(positions) < 2:
        raise ValueError('mutual_distances: need at least 2 points, got {0}'
                         ''.format(positions.shape))
    return numpy.array([numpy.linalg.norm(positions[i] - positions[j])
                        for i, j in feature_pairs(len(positions))])


def signed_area(positions):
    """Twice the signed area of the first three points, in image
    coordinates (``y`` down). Positive for a frontal (left eye, right eye,
    mouth) arrangement."""
    (lx, ly), (rx, ry), (mx, my) = [(float(p[0]), float(p[1])) for p in positions[:3]]
    return (rx - lx) * (my - ly) - (ry - ly) * (mx - lx)


class ConstellationModel(object):
    """The normal model of feature mutual distances.

    :param feature_names: Ordered feature identifiers.

    :param mean_distances: The mean distance vector, one entry per
        feature pair, in model units.

    :param covariance: Symmetric positive-definite covariance of the
        scale-normalized distance vectors.

    :param chirality_check: Reject arrangements mirrored with respect
        to the frontal (left, right, below) layout. Only meaningful for
        three features.

    :param scale_range: Optional ``(min, max)`` admissible scale.
    """
    def __init__(self, feature_names, mean_distances, covariance,
                 chirality_check=True, scale_range=None):
        self.feature_names = list(feature_names)
        k = len(self.feature_names)
        if k < 2:
            raise ConfigError('ConstellationModel: need at least 2 features')
        if len(set(self.feature_names)) != k:
            raise ConfigError('ConstellationModel: duplicate feature names {0}'
                              ''.format(self.feature_names))
        d = k * (k - 1) // 2

        self.mean_distances = numpy.asarray(mean_distances, dtype=numpy.float64).ravel()
        if self.mean_distances.shape != (d,):
            raise ConfigError('ConstellationModel: mean_distances needs {0} entries,'
                              ' got {1}'.format(d, len(self.mean_distances)))
        if not (self.mean_distances > 0).all():
            raise ConfigError('ConstellationModel: mean_distances must be positive')

        self.covariance = numpy.asarray(covariance, dtype=numpy.float64).reshape((d, d))
        if not numpy.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-12):
            raise ConfigError('ConstellationModel: covariance is not symmetric')
        try:
            numpy.linalg.cholesky(self.covariance)
        except numpy.linalg.LinAlgError:
            raise ConfigError('ConstellationModel: covariance is not positive-definite')

        self.chirality_check = bool(chirality_check) and k == 3
        if scale_range is not None:
            lo, hi = float(scale_range[0]), float(scale_range[1])
            if not 0 < lo <= hi:
                raise ConfigError('ConstellationModel: scale_range must satisfy'
                                  ' 0 < min <= max, got {0}'.format(scale_range))
            scale_range = (lo, hi)
        self.scale_range = scale_range

    @property
    def n_features(self):
        return len(self.feature_names)

    @property
    def dimension(self):
        return len(self.mean_distances)

    def with_scale_range(self, scale_range):
        return ConstellationModel(self.feature_names, self.mean_distances, self.covariance,
                                  chirality_check=self.chirality_check,
                                  scale_range=scale_range)

    def to_dict(self):
        return {'feature_names': list(self.feature_names),
                'mean_distances': self.mean_distances.tolist(),
                'covariance': self.covariance.ravel().tolist(),
                'chirality_check': self.chirality_check,
                'scale_range': None if self.scale_range is None else list(self.scale_range)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data['feature_names'], data['mean_distances'], data['covariance'],
                       chirality_check=data.get('chirality_check', True),
                       scale_range=data.get('scale_range'))
        except KeyError as e:
            raise ConfigError('ConstellationModel: missing key {0}'.format(e))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError('ConstellationModel: {0}'.format(e))


def estimate_scale(v, model):
    """The scale ``|v| / |L|`` between the observed distances and the
    model mean distances."""
    v_norm = float(numpy.linalg.norm(v))
    if v_norm <= 0:
        raise ValueError('estimate_scale: coincident constellation (zero distances)')
    return v_norm / float(numpy.linalg.norm(model.mean_distances))


def log_constellation_density(v, scale, model):
    """Logarithm of ``N(v; scale L, scale^2 Sigma)``."""
    if scale <= 0:
        raise ValueError('log_constellation_density: scale must be positive')
    return float(multivariate_normal.logpdf(numpy.asarray(v, dtype=numpy.float64),
                                            mean=scale * model.mean_distances,
                                            cov=scale ** 2 * model.covariance))


def constellation_density(v, scale, model):
    """The multivariate normal density ``N(v; scale L, scale^2 Sigma)``.

    >>> model = ConstellationModel(['a', 'b', 'c'], [1., 1., 1.], numpy.eye(3),
    ...                            chirality_check=False)
    >>> print(round(constellation_density([2., 1., 1.], 1.0, model), 5))
    0.03851
    """
    return math.exp(log_constellation_density(v, scale, model))


def rank_constellation(p, peak_scores):
    """``r = p * sum(peak_scores)``.

    >>> print(round(rank_constellation(0.1, [1, 2, 3]), 12))
    0.6
    """
    return p * float(sum(peak_scores))


def scale_range_from_silhouette(silhouette, reference_head_height, tolerance=0.5):
    """Admissible scale range derived from the silhouette size.

    The silhouette bounding-box height divided by the head height at
    model scale gives the nominal scale; the range spans it by the
    factor ``1 + tolerance`` both ways.
    """
    if reference_head_height <= 0:
        raise ConfigError('scale_range_from_silhouette: reference_head_height must'
                          ' be positive')
    box = silhouette.bounding_box()
    if box is None:
        raise EmptySilhouetteError('scale_range_from_silhouette: empty silhouette')
    t, l, b, r = box
    nominal = (b - t) / float(reference_head_height)
    return nominal / (1.0 + tolerance), nominal * (1.0 + tolerance)


class Constellation(object):
    """One candidate arrangement, with its evaluation."""
    def __init__(self, indices, positions, peak_scores, v, scale, log_density,
                 feature_names=None):
        self.indices = tuple(indices)
        self.positions = [(int(x), int(y)) for x, y in positions]
        self.peak_scores = [float(c) for c in peak_scores]
        self.v = numpy.asarray(v, dtype=numpy.float64)
        self.scale = scale
        self.log_density = log_density
        self.feature_names = feature_names

        score_sum = sum(self.peak_scores)
        if score_sum > 0 and log_density > -numpy.inf:
            self.log_rank = log_density + math.log(score_sum)
        else:
            self.log_rank = -numpy.inf

    @property
    def density(self):
        return math.exp(self.log_density) if self.log_density > -numpy.inf else 0.0

    @property
    def rank(self):
        return rank_constellation(self.density, self.peak_scores)

    def sort_key(self):
        return -self.log_rank, self.indices

    def to_dict(self):
        names = self.feature_names or [str(i) for i in range(len(self.positions))]
        return {'features': {name: {'x': x, 'y': y, 'score': c}
                             for name, (x, y), c in zip(names, self.positions,
                                                        self.peak_scores)},
                'indices': list(self.indices),
                'mutual_distances': self.v.tolist(),
                'scale': self.scale,
                'log_density': self.log_density if self.log_density > -numpy.inf else None,
                'density': self.density,
                'rank': self.rank}

    def __repr__(self):
        return 'Constellation({0}, log_rank={1:.6g})'.format(self.positions, self.log_rank)


def _ordered_candidates(candidates, model):
    if isinstance(candidates, dict):
        missing = [n for n in model.feature_names if n not in candidates]
        if missing:
            raise NoValidPeakError('best_constellation: no candidates for feature(s)'
                                   ' {0}'.format(', '.join(missing)))
        candidates = [candidates[n] for n in model.feature_names]
    if len(candidates) != model.n_features:
        raise ValueError('best_constellation: {0} candidate lists for {1} features'
                         ''.format(len(candidates), model.n_features))
    for name, peaks in zip(model.feature_names, candidates):
        if not peaks:
            raise NoValidPeakError('best_constellation: empty candidate list for'
                                   ' feature {0}'.format(name))
    return candidates


def evaluate_arrangement(indices, peaks, model):
    """Evaluates one arrangement; returns None when it is rejected."""
    positions = [(p.x, p.y) for p in peaks]
    if model.chirality_check and signed_area(positions) <= 0:
        return None
    v = mutual_distances(positions)
    try:
        scale = estimate_scale(v, model)
    except ValueError:
        return Constellation(indices, positions, [p.score for p in peaks], v, 0.0,
                             -numpy.inf, model.feature_names)
    if model.scale_range is not None \
            and not model.scale_range[0] <= scale <= model.scale_range[1]:
        return None
    log_p = log_constellation_density(v, scale, model)
    return Constellation(indices, positions, [p.score for p in peaks], v, scale, log_p,
                         model.feature_names)


def rank_constellations(candidates, model):
    """Evaluates every arrangement of the candidates and returns the
    admitted ones, best first.

    :param candidates: Per-feature lists of Peak objects, either in the
        model's feature order or as a dict keyed by feature name.

    :returns: A list of Constellation objects ordered by descending rank;
        ties are broken by lexicographic candidate indices.
    """
    candidates = _ordered_candidates(candidates, model)
    ranked = []
    n_rejected = 0
    for indices in itertools.product(*[range(len(c)) for c in candidates]):
        peaks = [candidates[f][i] for f, i in enumerate(indices)]
        constellation = evaluate_arrangement(indices, peaks, model)
        if constellation is None:
            n_rejected += 1
            continue
        logging.debug('rank_constellations: {0} log r = {1:.6g}'
                      ''.format(constellation.positions, constellation.log_rank))
        ranked.append(constellation)

    logging.info('rank_constellations: {0} arrangements evaluated, {1} rejected'
                 ''.format(len(ranked) + n_rejected, n_rejected))
    if not ranked:
        raise ConstellationRejectedError('rank_constellations: all {0} arrangements'
                                         ' rejected'.format(n_rejected))
    ranked.sort(key=Constellation.sort_key)
    return ranked


def best_constellation(candidates, model):
    """The highest-ranked arrangement. See ``rank_constellations``."""
    return rank_constellations(candidates, model)[0]


def train_constellation_model(samples, feature_names=FEATURE_NAMES,
                              ridge=DEFAULT_COVARIANCE_RIDGE, chirality_check=True):
    """Estimates the mean distances and their covariance from labeled
    feature positions.

    :param samples: A list of position lists, one ``(x, y)`` per feature
        in ``feature_names`` order.

    :param ridge: Added to the covariance diagonal, keeps it
        positive-definite for small sample counts.

    The mean is taken over the unit-norm distance vectors and rescaled to
    the average sample norm; the covariance is the sample covariance of the
    distance vectors normalized to that mean's norm.
    """
    if len(samples) < 2:
        raise TrainingError('train_constellation_model: need at least 2 samples,'
                            ' got {0}'.format(len(samples)))
    vectors = numpy.array([mutual_distances(s) for s in samples])
    norms = numpy.linalg.norm(vectors, axis=1)
    if (norms <= 0).any():
        raise TrainingError('train_constellation_model: coincident feature positions')

    direction = (vectors / norms[:, numpy.newaxis]).mean(axis=0)
    mean = direction / numpy.linalg.norm(direction) * norms.mean()
    normalized = vectors / norms[:, numpy.newaxis] * numpy.linalg.norm(mean)
    covariance = numpy.cov(normalized, rowvar=False) + ridge * numpy.eye(len(mean))

    logging.info('train_constellation_model: {0} samples, mean distances {1}'
                 ''.format(len(samples), numpy.round(mean, 3).tolist()))
    return ConstellationModel(feature_names, mean, covariance,
                              chirality_check=chirality_check)
