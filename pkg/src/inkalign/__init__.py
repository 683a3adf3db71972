"""inkalign: user-guided manga colorization toolkit.

Aligns a shaded-grayscale prior and a rough-colored prior through a
multi-encoder VAE trained with L1, perceptual, and gated adversarial losses,
then blends generator output with the rough-colored prior in CIELAB space
under a user-controlled interpolation weight.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ContractViolation,
    DatasetError,
    InkalignError,
    PriorContractError,
    PriorError,
    PriorTimeoutError,
    PriorTransportError,
    ShapeMismatch,
)
from .imagetypes import BlendWeight, ImagePlane, ImageStack

__all__ = [
    "BlendWeight",
    "ImagePlane",
    "ImageStack",
    "InkalignError",
    "ContractViolation",
    "ShapeMismatch",
    "CheckpointError",
    "DatasetError",
    "PriorError",
    "PriorTransportError",
    "PriorTimeoutError",
    "PriorContractError",
    "__version__",
]
