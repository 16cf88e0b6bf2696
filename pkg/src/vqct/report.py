"""BMD/volume statistics, accuracy errors, and the precision protocol.

All means use error-compensated summation so results are independent of
voxel visitation order; standard deviations are sample (n-1) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .volgrid import Mask, Volume


@dataclass(frozen=True)
class VoiStats:
    name: str
    voxel_count: int
    volume_mm3: float
    bmd_mean: float
    bmd_sd: float

    def to_dict(self):
        return {
            "name": self.name,
            "voxel_count": self.voxel_count,
            "volume_mm3": self.volume_mm3,
            "bmd_mean_mg_cm3": self.bmd_mean,
            "bmd_sd_mg_cm3": self.bmd_sd,
        }


def _mean_sd(values):
    """Compensated two-pass mean and sample SD (order-independent)."""
    vals = [float(v) for v in values]
    n = len(vals)
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var)


def measure_voi(vol: Volume, voi: Mask, name: str) -> VoiStats:
    """Mean/SD of the grey values and the physical volume of a VOI."""
    voi.require_same_geometry(Mask(vol.dims, vol.spacing, vol.origin,
                                   np.zeros(vol.dims, bool)))
    if not voi.bits.any():
        raise GeometryError("empty VOI: %s" % name)
    values = np.sort(vol.data[voi.bits].astype(np.float64))
    mean, sd = _mean_sd(values)
    count = int(voi.count)
    return VoiStats(name=name, voxel_count=count,
                    volume_mm3=count * voi.voxel_volume,
                    bmd_mean=mean, bmd_sd=sd)


def accuracy_error(measured: float, nominal: float) -> float:
    """Absolute deviation from the nominal value, in percent."""
    if nominal == 0:
        raise GeometryError("nominal value must be nonzero")
    return 100.0 * abs(measured - nominal) / abs(nominal)


@dataclass(frozen=True)
class PrecisionSummary:
    """Per-quantity precision across subjects and repeat analyses."""

    quantities: dict   # name -> {"cv_rms_percent", "cv_sd", "per_subject_cv"}

    def to_dict(self):
        return {name: {"cv_rms_percent": q["cv_rms_percent"],
                       "cv_sd": q["cv_sd"]}
                for name, q in self.quantities.items()}


def precision_cv(repeats_by_quantity) -> PrecisionSummary:
    """Root-mean-square %CV over subjects, per measured quantity.

    Input: {quantity: [[subject1 repeat values...], [subject2 ...], ...]},
    each inner list holding that subject's repeat analyses (already
    averaged over vertebral levels).  Per subject the %CV is
    100*SD/mean over repeats; subjects aggregate by RMS, and the SD of the
    per-subject %CVs is reported alongside.
    """
    out = {}
    for name, subjects in repeats_by_quantity.items():
        cvs = []
        for reps in subjects:
            vals = [float(v) for v in reps]
            if len(vals) < 2:
                raise GeometryError(
                    "need at least 2 repeats per subject (quantity %r)" % name)
            mean, sd = _mean_sd(vals)
            if mean == 0:
                raise GeometryError("zero mean in precision input")
            cvs.append(100.0 * sd / abs(mean))
        rms = math.sqrt(math.fsum(c * c for c in cvs) / len(cvs))
        _, cv_sd = _mean_sd(cvs) if len(cvs) > 1 else (0.0, 0.0)
        out[name] = {"cv_rms_percent": rms, "cv_sd": cv_sd,
                     "per_subject_cv": tuple(cvs)}
    return PrecisionSummary(out)
