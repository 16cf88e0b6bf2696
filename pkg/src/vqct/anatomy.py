"""Vertebral coordinate system and volume-of-interest generation.

Four landmarks anchor a per-vertebra frame: the body's centre of volume
(M1, the origin), the canal-centerline point in the body's axial plane
(M2, fixing the posterior x direction), and the two pedicle dissection
centers (M3/M4, placing the excluded wedge of the 'pacman' VOI).  The
z axis follows the spinal column curve through all body centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GeometryError
from .volgrid import Mask


@dataclass(frozen=True)
class Landmarks:
    m1: np.ndarray   # centre of volume of the vertebral body
    m2: np.ndarray   # canal centerline in the axial plane of m1
    m3: np.ndarray   # pedicle cut center (smaller x)
    m4: np.ndarray   # pedicle cut center (larger x)

    def __post_init__(self):
        for name in ("m1", "m2", "m3", "m4"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (3,) or not np.isfinite(v).all():
                raise GeometryError("%s must be a finite 3-vector" % name)
            object.__setattr__(self, name, v)
        if np.linalg.norm(self.m2 - self.m1) < 1e-9:
            raise GeometryError("m2 must differ from m1")

    def to_dict(self):
        return {k: [float(v) for v in getattr(self, k)]
                for k in ("m1", "m2", "m3", "m4")}


@dataclass(frozen=True)
class VCS:
    """Right-handed orthonormal frame anchored at M1."""

    origin: np.ndarray
    x: np.ndarray    # toward the spinal canal (posterior)
    y: np.ndarray
    z: np.ndarray    # tangent of the column curve (cranial)

    def __post_init__(self):
        for name in ("origin", "x", "y", "z"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.float64))
        for a in (self.x, self.y, self.z):
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise GeometryError("VCS axes must be unit length")
        if (abs(self.x @ self.y) > 1e-9 or abs(self.y @ self.z) > 1e-9
                or abs(self.x @ self.z) > 1e-9):
            raise GeometryError("VCS axes must be orthogonal")
        if np.linalg.norm(np.cross(self.x, self.y) - self.z) > 1e-9:
            raise GeometryError("VCS must be right-handed")

    def to_local(self, pts):
        rel = np.asarray(pts, dtype=np.float64) - self.origin
        return rel @ np.column_stack([self.x, self.y, self.z])

    def to_dict(self):
        return {k: [float(v) for v in getattr(self, k)]
                for k in ("origin", "x", "y", "z")}


def centre_of_volume(mask: Mask):
    """Mean world position of the foreground voxel centers."""
    if not mask.bits.any():
        raise GeometryError("empty mask has no centre of volume")
    return mask.foreground_world().mean(axis=0)


class ColumnSpline:
    """Natural cubic curve through the body centers, chord-length param."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if len(pts) > 1:
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            if (seg < 1e-9).any():
                raise GeometryError("duplicate column points")
            self._u = np.concatenate([[0.0], np.cumsum(seg)])
        else:
            self._u = np.array([0.0])
        self._pts = pts
        if len(pts) >= 3:
            self._spline = CubicSpline(self._u, pts, axis=0, bc_type="natural")
        else:
            self._spline = None

    @property
    def u_max(self):
        return float(self._u[-1])

    def point(self, u):
        if self._spline is not None:
            return np.asarray(self._spline(u))
        if len(self._pts) == 1:
            return self._pts[0] + np.asarray(u)[..., None] * 0 \
                if np.ndim(u) else self._pts[0].copy()
        d = (self._pts[1] - self._pts[0]) / self.u_max
        return self._pts[0] + np.multiply.outer(np.asarray(u, dtype=float), d)

    def tangent(self, u):
        if self._spline is not None:
            t = np.asarray(self._spline(u, 1), dtype=np.float64)
        elif len(self._pts) == 1:
            t = np.array([0.0, 0.0, 1.0])  # single level: image z axis
        else:
            t = self._pts[1] - self._pts[0]
        t = np.atleast_2d(t)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return t[0] if np.ndim(u) == 0 else t

    def nearest_parameter(self, p, samples=1000):
        """Curve parameter closest to a point (dense scan plus refinement)."""
        if self.u_max == 0:
            return 0.0
        us = np.linspace(0.0, self.u_max, samples)
        pts = self.point(us)
        k = int(np.argmin(np.linalg.norm(pts - np.asarray(p), axis=1)))
        lo = us[max(0, k - 1)]
        hi = us[min(len(us) - 1, k + 1)]
        for _ in range(40):
            third = (hi - lo) / 3.0
            a, b = lo + third, hi - third
            da = np.linalg.norm(self.point(a) - p)
            db = np.linalg.norm(self.point(b) - p)
            if da <= db:
                hi = b
            else:
                lo = a
        return 0.5 * (lo + hi)


def fit_column_spline(covs) -> ColumnSpline:
    """Interpolating spline through the body centres, caudal -> cranial."""
    return ColumnSpline(covs)


def _plane_polyline_intersection(point, normal, polyline):
    """Crossings of a plane with a polyline (linear interpolation)."""
    poly = np.asarray(polyline, dtype=np.float64)
    s = (poly - point) @ normal
    hits = []
    for i in range(len(poly) - 1):
        a, b = s[i], s[i + 1]
        if a == 0.0:
            hits.append(poly[i])
        elif (a < 0) != (b < 0):
            f = a / (a - b)
            hits.append(poly[i] + f * (poly[i + 1] - poly[i]))
    if len(poly) and s[-1] == 0.0:
        hits.append(poly[-1])
    return hits


def compute_vcs(m1, canal_centerline, spline: ColumnSpline, m3, m4):
    """Derive the landmark set and frame for one vertebra.

    z is the column tangent at the curve point nearest M1; M2 is the
    intersection of the plane through M1 normal to z with the canal
    centerline; x points from M1 toward M2 (projected perpendicular to z)
    and y completes the right-handed frame.
    """
    m1 = np.asarray(m1, dtype=np.float64)
    u = spline.nearest_parameter(m1)
    z = spline.tangent(u)

    hits = _plane_polyline_intersection(m1, z, canal_centerline)
    if not hits:
        raise GeometryError(
            "canal centerline does not cross the vertebra's axial plane "
            "(truncated canal?)")
    m2 = min(hits, key=lambda h: float(np.linalg.norm(h - m1)))

    v = m2 - m1
    v = v - (v @ z) * z
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        raise GeometryError("canal point projects onto the column axis")
    x = v / nv
    y = np.cross(z, x)
    landmarks = Landmarks(m1, m2, np.asarray(m3, float), np.asarray(m4, float))
    return landmarks, VCS(m1, x, y, z)


@dataclass(frozen=True)
class VoiSpec:
    """Cylinder or 'pacman' volume of interest, sized from the body."""

    kind: str                       # "cylinder" | "pacman"
    radius_fraction: float = 0.6    # of the body radius (mean lateral half-extent)
    height_fraction: float = 0.5    # of the body height

    def __post_init__(self):
        if self.kind not in ("cylinder", "pacman"):
            raise GeometryError("kind must be 'cylinder' or 'pacman'")
        if not 0.0 < self.radius_fraction <= 1.0:
            raise GeometryError("radius fraction must lie in (0, 1]")
        if not 0.0 < self.height_fraction <= 1.0:
            raise GeometryError("height fraction must lie in (0, 1]")


def make_voi(vcs: VCS, spec: VoiSpec, body: Mask, m3=None, m4=None) -> Mask:
    """Rasterize a VOI positioned in the vertebral frame, clipped to the body.

    The cylinder runs along the VCS z axis through the origin; its radius
    and height are fractions of the body extents measured along the VCS
    axes.  The pacman variant removes the angular sector between the
    axial-plane directions toward M3 and M4 (the sector containing +x,
    i.e. the posterior wedge over the basivertebral vein region).
    """
    if not body.bits.any():
        raise GeometryError("empty body mask")
    local = vcs.to_local(body.foreground_world())
    half_x = 0.5 * (local[:, 0].max() - local[:, 0].min())
    half_y = 0.5 * (local[:, 1].max() - local[:, 1].min())
    half_z = 0.5 * (local[:, 2].max() - local[:, 2].min())
    radius = spec.radius_fraction * 0.5 * (half_x + half_y)
    half_height = spec.height_fraction * half_z

    inside = (np.hypot(local[:, 0], local[:, 1]) <= radius) \
        & (np.abs(local[:, 2]) <= half_height)

    if spec.kind == "pacman":
        if m3 is None or m4 is None:
            raise GeometryError("pacman VOI needs the pedicle landmarks")
        a3 = _axial_angle(vcs, m3)
        a4 = _axial_angle(vcs, m4)
        lo, hi = min(a3, a4), max(a3, a4)
        if not lo < 0.0 < hi:
            raise GeometryError("pedicle directions do not straddle the +x axis")
        if hi - lo >= np.pi:
            raise GeometryError("excluded wedge would span 180 degrees or more")
        ang = np.arctan2(local[:, 1], local[:, 0])
        inside &= ~((ang > lo) & (ang < hi))

    bits = np.zeros(body.dims, bool)
    idx = body.foreground_indices()[inside]
    bits[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if not bits.any():
        raise GeometryError("VOI is empty")
    return Mask(body.dims, body.spacing, body.origin, bits)


def _axial_angle(vcs: VCS, p):
    local = vcs.to_local(np.asarray(p, dtype=np.float64))
    return float(np.arctan2(local[1], local[0]))
