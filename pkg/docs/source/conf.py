# Sphinx configuration for the mmdforge API reference.
import datetime
import os
import sys

import sphinx_rtd_theme

sys.path.insert(0, os.path.abspath(os.path.join('..', '..')))

import mmdforge  # noqa: E402

project = 'mmdforge'
author = 'mmdforge developers'
copyright = '{}, {}'.format(datetime.datetime.now().year, author)
version = mmdforge.__version__
release = mmdforge.__version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
]
templates_path = []
exclude_patterns = []

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_theme_options = {
    'collapse_navigation': False,
    'display_version': True,
}
html_static_path = []
intersphinx_mapping = {
    'python': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}
add_module_names = False
autodoc_member_order = 'bysource'


def setup(app):
    def skip(app, what, name, obj, skip, options):
        hidden = ('__init__', '__repr__', '__weakref__', '__dict__',
                  '__module__', '__post_init__')
        return True if name in hidden else skip

    app.connect('autodoc-skip-member', skip)
