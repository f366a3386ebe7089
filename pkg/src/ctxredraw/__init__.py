"""Context-aware redrawing of masked image regions.

The package trains a design-conditioned generator against dual
quality/context discriminators, embeds character designs in a
style-normalized space for clustering and retrieval, generates a synthetic
labeled corpus for desk-scale experiments, and post-processes generated
regions back into their frames with color transfer and Poisson blending.
"""

__version__ = "0.1.0"

from . import datasetgen, imagemath, neuralcore, pipeline, styleenc, translator, validation, weights

__all__ = [
    "datasetgen",
    "imagemath",
    "neuralcore",
    "pipeline",
    "styleenc",
    "translator",
    "validation",
    "weights",
    "__version__",
]
