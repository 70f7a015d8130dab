"""Text-driven domain-generalised semantic segmentation: semantic query
boosting, Fourier-domain style transfer and style synergy optimisation."""

from .estimator import SCSDSegmenter
from .pipeline.model import ModelConfig, SCSDModel

__all__ = ["SCSDSegmenter", "SCSDModel", "ModelConfig"]
__version__ = "0.1.0"
