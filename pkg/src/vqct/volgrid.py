"""Volume / mask data model, file I/O and sub-voxel sampling.

A ``Volume`` is an axis-aligned 3D grid of calibrated grey values
(mg/cm^3) with anisotropic spacing.  Arrays are indexed ``data[ix, iy, iz]``
and stored x-fastest on disk.  Voxel index ``i`` maps to the world position
``origin + i * spacing`` (voxel centers).  Volumes and masks are immutable
after construction; derived data is always a new instance.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, VolumeFormatError


def _as_tuple3(x, kind=float):
    t = tuple(kind(v) for v in x)
    if len(t) != 3:
        raise GeometryError("expected 3 components, got %r" % (x,))
    return t


def _check_geometry(dims, spacing):
    if any(d <= 0 for d in dims):
        raise GeometryError("dims must be positive, got %r" % (dims,))
    if any(s <= 0 for s in spacing):
        raise GeometryError("spacing must be positive, got %r" % (spacing,))


@dataclass(frozen=True)
class Volume:
    """Dense scalar grid with world geometry.

    Attributes:
        dims: (nx, ny, nz) voxel counts.
        spacing: (sx, sy, sz) in mm/voxel.
        origin: world position (mm) of the center of voxel (0, 0, 0).
        data: float array of shape ``dims``.
    """

    dims: tuple
    spacing: tuple
    origin: tuple
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_tuple3(self.dims, int))
        object.__setattr__(self, "spacing", _as_tuple3(self.spacing))
        object.__setattr__(self, "origin", _as_tuple3(self.origin))
        _check_geometry(self.dims, self.spacing)
        if tuple(self.data.shape) != self.dims:
            raise GeometryError(
                "data shape %r does not match dims %r" % (self.data.shape, self.dims))
        self.data.flags.writeable = False

    # -- coordinate transforms ------------------------------------------------

    def world_to_voxel(self, pts):
        """World mm -> continuous voxel coordinates (no bounds check)."""
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - np.asarray(self.origin)) / np.asarray(self.spacing)

    def voxel_to_world(self, idx):
        """Continuous voxel coordinates -> world mm."""
        idx = np.asarray(idx, dtype=np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def axis_coords(self, axis):
        """World coordinates of all voxel centers along one axis (0, 1, 2)."""
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    @property
    def voxel_volume(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def world_bounds(self):
        """(lower, upper) corners of the voxel-center bounding box."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi

    # -- sampling -------------------------------------------------------------

    def sample_trilinear(self, pts):
        """Trilinear interpolation at world points, clamped at the borders.

        Accepts a single point or an (N, 3) array; returns a scalar or (N,)
        array of float64 values.
        """
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        v = self.world_to_voxel(pts.reshape(-1, 3))
        dims = np.asarray(self.dims)
        v = np.clip(v, 0.0, dims - 1.0)
        i0 = np.floor(v).astype(np.intp)
        i0 = np.minimum(i0, dims - 2)
        i0 = np.maximum(i0, 0)
        f = v - i0
        d = self.data
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        out = (
            d[x0, y0, z0] * gx * gy * gz
            + d[x0 + 1, y0, z0] * fx * gy * gz
            + d[x0, y0 + 1, z0] * gx * fy * gz
            + d[x0, y0, z0 + 1] * gx * gy * fz
            + d[x0 + 1, y0 + 1, z0] * fx * fy * gz
            + d[x0 + 1, y0, z0 + 1] * fx * gy * fz
            + d[x0, y0 + 1, z0 + 1] * gx * fy * fz
            + d[x0 + 1, y0 + 1, z0 + 1] * fx * fy * fz
        ).astype(np.float64)
        return out[0] if single else out

    def with_data(self, data):
        """New volume sharing this geometry."""
        return Volume(self.dims, self.spacing, self.origin, np.ascontiguousarray(data))


@dataclass(frozen=True)
class Mask:
    """Boolean voxel set sharing a Volume's geometry."""

    dims: tuple
    spacing: tuple
    origin: tuple
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_tuple3(self.dims, int))
        object.__setattr__(self, "spacing", _as_tuple3(self.spacing))
        object.__setattr__(self, "origin", _as_tuple3(self.origin))
        _check_geometry(self.dims, self.spacing)
        if self.bits.dtype != np.bool_:
            object.__setattr__(self, "bits", self.bits.astype(bool))
        if tuple(self.bits.shape) != self.dims:
            raise GeometryError(
                "bits shape %r does not match dims %r" % (self.bits.shape, self.dims))
        self.bits.flags.writeable = False

    @classmethod
    def like(cls, geom, bits):
        return cls(geom.dims, geom.spacing, geom.origin, np.ascontiguousarray(bits))

    def same_geometry(self, other):
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.origin == other.origin)

    def require_same_geometry(self, other):
        if not self.same_geometry(other):
            raise GeometryError("mask/volume geometry mismatch")

    @property
    def count(self):
        return int(self.bits.sum())

    @property
    def voxel_volume(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def foreground_indices(self):
        """(N, 3) integer voxel indices of foreground voxels."""
        return np.argwhere(self.bits)

    def foreground_world(self):
        """(N, 3) world coordinates of foreground voxel centers."""
        idx = np.argwhere(self.bits).astype(np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)


@dataclass(frozen=True)
class LabelMap:
    """Integer-labeled voxel set sharing a Volume's geometry (0 = unlabeled)."""

    dims: tuple
    spacing: tuple
    origin: tuple
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_tuple3(self.dims, int))
        object.__setattr__(self, "spacing", _as_tuple3(self.spacing))
        object.__setattr__(self, "origin", _as_tuple3(self.origin))
        _check_geometry(self.dims, self.spacing)
        if tuple(self.labels.shape) != self.dims:
            raise GeometryError("labels shape does not match dims")
        self.labels.flags.writeable = False

    @classmethod
    def like(cls, geom, labels):
        return cls(geom.dims, geom.spacing, geom.origin, np.ascontiguousarray(labels))

    def mask_of(self, label):
        return Mask(self.dims, self.spacing, self.origin, self.labels == label)


# -- file format ---------------------------------------------------------------
#
# <name>.vqh  JSON header: {dims, spacing_mm, origin_mm, dtype: "f32"|"u8",
#                           data_file: "<name>.vqr"}
# <name>.vqr  raw little-endian payload, x-fastest (then y, then z)

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _read_header(path):
    if not os.path.exists(path):
        raise VolumeFormatError("no such volume header: %s" % path)
    with open(path, "r") as fh:
        try:
            hdr = json.load(fh)
        except json.JSONDecodeError as exc:
            raise VolumeFormatError("bad volume header %s: %s" % (path, exc))
    for key in ("dims", "spacing_mm", "origin_mm", "dtype", "data_file"):
        if key not in hdr:
            raise VolumeFormatError("header %s missing field %r" % (path, key))
    if hdr["dtype"] not in _DTYPES:
        raise VolumeFormatError("unsupported dtype %r" % hdr["dtype"])
    return hdr


def _read_payload(path, hdr):
    dims = tuple(int(d) for d in hdr["dims"])
    if any(d <= 0 for d in dims):
        raise VolumeFormatError("non-positive dims in header: %r" % (dims,))
    if any(s <= 0 for s in hdr["spacing_mm"]):
        raise VolumeFormatError("non-positive spacing in header")
    dtype = _DTYPES[hdr["dtype"]]
    data_path = os.path.join(os.path.dirname(os.path.abspath(path)), hdr["data_file"])
    if not os.path.exists(data_path):
        raise VolumeFormatError("missing payload file: %s" % data_path)
    raw = np.fromfile(data_path, dtype=dtype)
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise VolumeFormatError(
            "payload %s has %d values, header declares %d" % (data_path, raw.size, expected))
    # x-fastest linear order
    return raw.reshape(dims, order="F"), dims


def load_volume(path):
    """Read a grey-value volume from a .vqh/.vqr pair."""
    hdr = _read_header(path)
    if hdr["dtype"] != "f32":
        raise VolumeFormatError("expected f32 volume, header says %r" % hdr["dtype"])
    raw, dims = _read_payload(path, hdr)
    data = np.ascontiguousarray(raw.astype(np.float32))
    return Volume(dims, tuple(hdr["spacing_mm"]), tuple(hdr["origin_mm"]), data)


def load_mask(path):
    """Read a binary mask from a .vqh/.vqr pair (dtype u8, values 0/1)."""
    hdr = _read_header(path)
    if hdr["dtype"] != "u8":
        raise VolumeFormatError("expected u8 mask, header says %r" % hdr["dtype"])
    raw, dims = _read_payload(path, hdr)
    if not np.isin(raw, (0, 1)).all():
        raise VolumeFormatError("mask payload contains values other than 0/1")
    return Mask(dims, tuple(hdr["spacing_mm"]), tuple(hdr["origin_mm"]),
                np.ascontiguousarray(raw.astype(bool)))


def _write(path, dims, spacing, origin, dtype_tag, flat_bytes):
    base, ext = os.path.splitext(path)
    if ext != ".vqh":
        raise VolumeFormatError("volume header path must end in .vqh: %s" % path)
    data_name = os.path.basename(base) + ".vqr"
    hdr = {
        "dims": list(dims),
        "spacing_mm": list(spacing),
        "origin_mm": list(origin),
        "dtype": dtype_tag,
        "data_file": data_name,
    }
    with open(path, "w") as fh:
        json.dump(hdr, fh, indent=1, sort_keys=True)
        fh.write("\n")
    flat_bytes.tofile(os.path.join(os.path.dirname(os.path.abspath(path)), data_name))


def write_volume(vol, path):
    """Write a Volume as .vqh/.vqr (float32 little-endian, x-fastest)."""
    flat = np.asarray(vol.data, dtype="<f4").ravel(order="F")
    _write(path, vol.dims, vol.spacing, vol.origin, "f32", flat)


def write_mask(mask, path):
    """Write a Mask as .vqh/.vqr (u8 little-endian, x-fastest)."""
    flat = mask.bits.astype("u1").ravel(order="F")
    _write(path, mask.dims, mask.spacing, mask.origin, "u8", flat)
