# Sphinx configuration of the driveval documentation.

import driveval

project = "driveval"
copyright = "2026, driveval developers"
author = "driveval developers"

version = driveval.__version__
release = driveval.__version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "sphinx_copybutton",
    "numpydoc",
]

# API pages are generated from the autosummary tables in api-reference.rst
autosummary_generate = True
numpydoc_show_class_members = False
autodoc_member_order = "bysource"

# Strip shell and interpreter prompts from copied snippets
copybutton_prompt_text = r"\$ |>>> "
copybutton_prompt_is_regexp = True

source_suffix = ".rst"
master_doc = "index"
language = "en"
exclude_patterns = []
pygments_style = "sphinx"

html_theme = "sphinx_rtd_theme"
htmlhelp_basename = "driveval"

latex_documents = [(master_doc, "driveval.tex", "driveval Documentation", author, "manual")]
man_pages = [(master_doc, "driveval", "driveval Documentation", [author], 1)]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "matplotlib": ("https://matplotlib.org/stable/", None),
    "networkx": ("https://networkx.org/documentation/stable/", None),
}
