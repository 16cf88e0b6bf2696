"""Exception types shared across the package."""


class VqctError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(VqctError):
    """Volume/mask geometry mismatch or invalid geometric parameters."""


class VolumeFormatError(VqctError):
    """Malformed volume file (bad header, payload size mismatch, bad dtype)."""


class CanalNotFoundError(VqctError):
    """No enclosed canal-like maximum found in the posterior search window."""


class DegenerateFitError(VqctError):
    """Two-Gaussian fit collapsed; input histogram is not usable as bimodal."""


class NoWaistError(VqctError):
    """Erosion never split the mask into the expected number of components."""


class DissectionWarning(UserWarning):
    """Pedicle dissection produced an unexpected number of cut components."""
