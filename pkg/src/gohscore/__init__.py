"""Cascaded CT lung-disease scoring on synthetic thorax phantoms.

Subpackages and modules:

``imagecore``  volumes, resampling, slice extraction, file formats
``lungmask``   threshold and morphology lung segmentation
``synth``      healthy phantoms and ground-glass / reticular lesion synthesis
``sampling``   balanced sampling, on-the-fly synthesis, z-cropping
``nnreg``      numpy VGG-style regressors with explicit backpropagation
``metrics``    MAE, weighted kappa, ICC(2,1), Bland-Altman, OLS, Wilcoxon
``harness``    phantom volumes, cross-validation, cascade, reports
"""
from .imagecore import Volume, extract_slice, read_volume, resample_volume, write_volume
from .synth import ScoreTriple, TextureParams, synthesize

__version__ = "0.1.0"

__all__ = ["Volume", "ScoreTriple", "TextureParams", "extract_slice", "read_volume",
           "resample_volume", "synthesize", "write_volume", "__version__"]
