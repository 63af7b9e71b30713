"""Hyperspectral scene engineering and spectral representation-learning baselines.

Submodules
----------
scene        scene / ground-truth data model, rasterization, polygon grouping,
             synthetic scene generation, file formats
splitting    spatially disjoint ground-truth split solvers (exact + heuristic)
features     hand-crafted 400-dimensional patch descriptor
mae          1-D masked autoencoder with hand-rolled gradients
autoencoder  dense autoencoder baseline
classifiers  KNN / random forest / MLP probe evaluation heads
metrics      classification and class-distribution metrics
benchmark    seeded synthetic spectra benchmark
cli          pipeline orchestration (``hsikit`` command)
"""

__version__ = "0.1.0"

from . import scene, splitting, features, metrics  # noqa: F401

__all__ = ["scene", "splitting", "features", "metrics", "__version__"]
