"""Anti-aliased CNNs on a float64 numpy autodiff core.

Depth-adaptive Gaussian blur-pooling with a learnable sigma per depth level,
the AA-ReLU activation, and the evaluation suite around them: shift
consistency, flip probability, corruption error, translation attacks and
feature-map spectra.
"""

from .layers import aa_relu, dab_pool, gaussian_kernel, project_monotone
from .netbuild import (LayerGraph, LayerSpec, Model, build_toy_cnn, load_checkpoint,
                       make_model, rewrite_antialias, save_checkpoint)
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "LayerGraph", "LayerSpec", "Model", "Tape", "Tensor", "aa_relu", "build_toy_cnn",
    "dab_pool", "gaussian_kernel", "load_checkpoint", "make_model", "project_monotone",
    "rewrite_antialias", "save_checkpoint",
]
