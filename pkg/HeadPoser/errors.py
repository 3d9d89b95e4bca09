"""This module implements the exception hierarchy of HeadPoser.

Every failure the pipeline can describe has its own class, and every
class carries a stable ``exit_code`` that the command-line front-end
``main.py`` returns to the shell:

>>> NoEdgePointsError('blank image').exit_code
10
>>> issubclass(ImageFormatError, ValueError)
True
"""
from __future__ import print_function, unicode_literals

__version__ = "0.0.1"


class HeadPoserError(Exception):
    """Base class of all described HeadPoser failures."""
    exit_code = 1
    code_name = 'error'


class InputFileError(HeadPoserError, IOError):
    """A required input file does not exist or cannot be read."""
    exit_code = 3
    code_name = 'input-file'

    def __init__(self, path, reason='file not found'):
        super(InputFileError, self).__init__('{0}: {1}'.format(reason, path))
        self.path = path


class ImageFormatError(HeadPoserError, ValueError):
    """The file is not a binary PGM/PPM image that we can read.

    The ``kind`` attribute says which check failed: ``unreadable``,
    ``unsupported-format``, ``bad-maxval`` or ``truncated``.
    """
    exit_code = 3
    code_name = 'image-format'

    def __init__(self, message, kind='unreadable'):
        super(ImageFormatError, self).__init__(message)
        self.kind = kind


class ConfigError(HeadPoserError, ValueError):
    exit_code = 4
    code_name = 'config'


class DimensionMismatchError(HeadPoserError, ValueError):
    exit_code = 5
    code_name = 'dimension-mismatch'


class HistogramError(HeadPoserError, ValueError):
    exit_code = 6
    code_name = 'histogram'


class EmptyStencilError(HeadPoserError, ValueError):
    exit_code = 7
    code_name = 'empty-stencil'


class MaskOutOfFrameError(HeadPoserError, ValueError):
    exit_code = 7
    code_name = 'mask-out-of-frame'


class TrainingError(HeadPoserError, ValueError):
    exit_code = 7
    code_name = 'training'


class EmptySilhouetteError(HeadPoserError, ValueError):
    exit_code = 8
    code_name = 'empty-silhouette'


class NoEdgePointsError(HeadPoserError):
    exit_code = 10
    code_name = 'no-edge-points'


class NoValidPeakError(HeadPoserError):
    exit_code = 11
    code_name = 'no-valid-peak'


class ConstellationRejectedError(HeadPoserError):
    exit_code = 12
    code_name = 'all-constellations-rejected'


class PoseDegenerateError(HeadPoserError, ValueError):
    exit_code = 13
    code_name = 'pose-degenerate'


class NoPositiveDepthError(HeadPoserError):
    exit_code = 14
    code_name = 'no-positive-depth'


class TemplateOutOfSilhouetteError(HeadPoserError, ValueError):
    exit_code = 15
    code_name = 'template-out-of-silhouette'


class SceneGeometryError(HeadPoserError, ValueError):
    exit_code = 15
    code_name = 'scene-geometry'
