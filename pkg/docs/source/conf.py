# -*- coding: utf-8 -*-
#
# HeadPoser documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.abspath('../..'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
]

source_suffix = '.rst'
master_doc = 'index'

project = u'HeadPoser'
copyright = u'2026, the HeadPoser developers'
author = u'the HeadPoser developers'
version = u'0.1'
release = u'0.1'

exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'alabaster'
htmlhelp_basename = 'HeadPoserdoc'
