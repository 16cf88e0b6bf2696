"""Volumetric QCT analysis of lumbar vertebral bodies.

Coarse-to-fine segmentation (constraint boxes, balloon surface, threshold
volume growing, pedicle dissection), anatomical coordinate system and VOI
generation, and BMD/volume reporting, validated against a built-in digital
spine phantom.
"""

__version__ = "0.1.0"

from .volgrid import Volume, Mask, LabelMap, load_volume, load_mask, write_volume, write_mask  # noqa: F401
