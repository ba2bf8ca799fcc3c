# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder of crn_csa.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys
import time

sys.path.append("../")  # noqa: 402

from crn_csa import VERSION as __version__  # noqa: E402

sys.path.insert(0, os.path.abspath("../crn_csa"))

# -- General configuration -----------------------------------------------------

extensions = [
    "sphinx.ext.autosectionlabel",
    "sphinx.ext.autodoc",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",
    "sphinx.ext.viewcode",
    "sphinxarg.ext",
]

autosectionlabel_prefix_document = True

napoleon_use_param = False
napoleon_custom_sections = [
    ("Attributes", "Parameters"),
]

on_rtd = os.environ.get("READTHEDOCS") == "True"
if on_rtd:
    extensions.append("readthedocs_ext.readthedocs")

templates_path = ["_templates"]
source_suffix = [".rst"]
master_doc = "index"

project = "crn_csa: Predictive channel selection for cognitive radio networks"
copyright = "{}, The HIP team, University Hospital of Lausanne (CHUV), Switzerland & Contributors".format(  # noqa: E501
    time.strftime("%Y")
)

version = __version__
release = __version__

rst_prolog = """
.. |pypirelease| replace:: {}
.. |vrelease| replace:: {}
""".format(
    f"crn_csa=={release}", f"v{release}"
)

exclude_patterns = ["_build"]
pygments_style = "sphinx"

# -- Options for HTML output ---------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_options = {
    "display_version": False,
}
html_title = project
html_short_title = "crn_csa"
html_last_updated_fmt = "%b %d, %Y"
html_domain_indices = False
html_use_index = False
html_show_sourcelink = False
htmlhelp_basename = "CRNCSAdoc"

# -- Options for LaTeX / man output --------------------------------------------

latex_documents = [
    (
        "index",
        "CRNCSA.tex",
        "crn_csa Documentation",
        "The HIP team and Contributors",
        "manual",
    ),
]

man_pages = [
    (
        "index",
        "crn_csa",
        "crn_csa Documentation",
        ["The HIP team and Contributors"],
        1,
    )
]
