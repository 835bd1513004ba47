# -*- coding: utf-8 -*-
#
# DBEA documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sys
import os

# Make the package importable for autodoc.
sys.path.insert(0, os.path.abspath('..'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.mathjax', 'sphinx.ext.autodoc', 'sphinx.ext.napoleon',
    'IPython.sphinxext.ipython_console_highlighting',
]

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = 'DBEA'
copyright = '2026, the DBEA developers'
author = 'the DBEA developers'

version = '0.1'
release = '0.1.0'

exclude_patterns = ['_build']

pygments_style = 'sphinx'

todo_include_todos = False

napoleon_numpy_docstring = True
napoleon_google_docstring = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'

html_static_path = ['_static']

html_domain_indices = True

htmlhelp_basename = 'DBEAdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {
}

latex_documents = [
  (master_doc, 'DBEA.tex', 'DBEA Documentation',
   author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'dbea', 'DBEA Documentation',
     [author], 1)
]

# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
  (master_doc, 'DBEA', 'DBEA Documentation',
   author, 'DBEA', 'Tandem-head out-of-distribution detection.',
   'Miscellaneous'),
]
