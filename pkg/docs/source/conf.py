import os
import sys
sys.path.insert(0, os.path.abspath('../../src'))  # make the threatmesh package importable


# Configuration file for the Sphinx documentation builder.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------

project = 'threatmesh'
copyright = '2025, the threatmesh developers'
author = 'the threatmesh developers'
version = '0.1'
release = '0.1.0'

language = "en"

# -- General configuration ---------------------------------------------------

extensions = ['myst_parser',
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
    'sphinx_rtd_theme']

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'cryptography': ('https://cryptography.io/en/latest/', None),
}

source_suffix = {
    '.rst': 'restructuredtext',
    '.md': 'markdown',
}

master_doc = 'index'

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_sidebars = {
    '**': [
        'relations.html',
        'searchbox.html',
    ]
}
html_static_path = ['_static']
htmlhelp_basename = 'threatmesh'
