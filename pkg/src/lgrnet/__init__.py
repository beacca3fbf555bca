"""Desk-scale numerical reimplementation of the LGRNet video segmentation
encoder/decoder: Hilbert selective scan, cyclic neighborhood propagation,
bottleneck condense/distribute and the matched segmentation loss."""

from .config import FULL, MICRO, ConfigError, ModelConfig
from .model import LGRNet, SyntheticClip, moving_ellipse, overfit

__version__ = "0.1.0"

__all__ = ["ConfigError", "FULL", "LGRNet", "MICRO", "ModelConfig", "SyntheticClip",
           "moving_ellipse", "overfit"]
