# salprop/__init__.py
"""
Saliency-ranked object proposals.

Contains:
    - imagio.py: Image and mask loading, CIELab conversion.
    - edges.py: EMAP files, built-in edge detector, NMS and edgelet grouping.
    - features.py: Colour-gradient, texture-context and LTP edgelet features.
    - bayes.py: Bayesian edge saliency.
    - crf/: Edgelet CRF (graph, model, inference, BCFW training).
    - boxes.py: Windows and IoU.
    - proposals.py: Window enumeration, scoring, refinement and NMS.
    - evalkit.py: Ground truth, recall curves and reports.
    - edge_source.py: EMAP-backed or built-in edge maps for the CLI.
    - config.py: RunConfig and the parameter registry.
    - common.py: Errors, logging helpers, atomic CSV output.
    - app.py: Command-line entry point (python -m salprop.app).
"""

__version__ = "0.1.0"
