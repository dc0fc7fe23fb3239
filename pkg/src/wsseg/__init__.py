"""Weakly supervised segmentation from image-level labels.

A small ViT encoder, class tokens concatenated after encoding, a two-direction
BiLSTM context fusion and a top-k pooled patch classifier, trained with a
multi-label loss; patch scores become pseudo masks through bilinear
upsampling, a background threshold and a dense CRF.
"""
from .config import Config
from .model import Model, ModelConfig

__version__ = "0.1.0"
__all__ = ["Config", "Model", "ModelConfig", "__version__"]
