"""PainSeeker: region-attention pain assessment from rat facial images."""

from .losses import HyperParams, cross_entropy, prsc, total_loss
from .model import BackboneConfig, PainSeeker, build_model

__version__ = "0.1.0"

__all__ = ["BackboneConfig", "HyperParams", "PainSeeker", "build_model", "cross_entropy", "prsc", "total_loss"]
