"""Two-step data-domain decomposition for multispectral CT.

Condition checks on the spectral model, per-ray Newton inversion of the
discrete data model, parallel-beam projection, FBP and VMI synthesis.
"""

from .spectral import SpectralModel, attenuation_factors, forward_map, jacobian, load_model

__version__ = "0.1.0"

__all__ = ["SpectralModel", "attenuation_factors", "forward_map", "jacobian", "load_model"]
