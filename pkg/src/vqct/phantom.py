"""Synthetic digital spine phantom with closed-form ground truth.

Each vertebra is an elliptic-cylinder body with a thin compact shell,
two pedicles bridging to a posterior arch (half-annular wall) that
encloses the spinal canal, and a spinous process block.  Voxels take the
value of the innermost solid containing their center (hard containment,
no anti-aliasing), so region statistics and the analytic body volume are
exact oracles for the segmentation pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .presegment import Plane
from .volgrid import Mask, Volume

# body cross-section is an ellipse derived from one nominal radius
ELLIPSE_RATIO_X = 1.2
ELLIPSE_RATIO_Y = 0.88
# posterior elements, scaled from the body radius
CANAL_RADIUS_RATIO = 0.38
ARCH_WALL_RATIO = 0.58
PEDICLE_OFFSET_RATIO = 0.66
PEDICLE_EMBED_MM = 1.5        # pedicle root reaches into the body wall
PEDICLE_ARCH_OVERSHOOT_MM = 2.0
PROCESS_HALF_WIDTH_MM = 3.0
PROCESS_HALF_HEIGHT_MM = 5.0
PROCESS_EMBED_MM = 1.5
GAP_MM = 4.0                  # inter-vertebral gap
MARGIN_XY_MM = 8.0
MARGIN_Z_MM = 6.0


@dataclass(frozen=True)
class VertebraSpec:
    """Geometry and composition of one synthetic vertebra."""

    trabecular_bmd: float
    body_radius: float = 12.0
    body_height: float = 24.0
    # two voxels at the default spacing: the rasterized shell must be
    # watertight or interior cavity filling has nothing to work with
    cortical_thickness: float = 1.0
    cortical_bmd: float = 600.0
    pedicle_radius: float = 2.2
    process_extent: float = 12.0
    tilt_deg: float = 0.0

    def __post_init__(self):
        for name in ("trabecular_bmd", "body_radius", "body_height",
                     "cortical_thickness", "cortical_bmd", "pedicle_radius",
                     "process_extent"):
            if getattr(self, name) <= 0:
                raise GeometryError("%s must be positive" % name)
        if self.cortical_bmd <= self.trabecular_bmd:
            raise GeometryError("cortical BMD must exceed trabecular BMD")

    # derived geometry (all mm, local frame: x lateral, y posterior, z cranial)
    @property
    def semi_axis_x(self):
        return ELLIPSE_RATIO_X * self.body_radius

    @property
    def semi_axis_y(self):
        return ELLIPSE_RATIO_Y * self.body_radius

    @property
    def canal_radius(self):
        return CANAL_RADIUS_RATIO * self.body_radius

    @property
    def canal_center_offset(self):
        # canal inscribed circle tangent to the posterior body wall
        return self.semi_axis_y + self.canal_radius

    @property
    def arch_wall(self):
        return ARCH_WALL_RATIO * self.body_radius

    @property
    def pedicle_offset(self):
        return PEDICLE_OFFSET_RATIO * self.body_radius

    @property
    def analytic_body_volume(self):
        return float(np.pi * self.semi_axis_x * self.semi_axis_y * self.body_height)

    def body_surface_y(self, x):
        """Posterior body surface height at lateral offset x."""
        t = 1.0 - (x / self.semi_axis_x) ** 2
        return self.semi_axis_y * np.sqrt(max(t, 0.0))

    @property
    def pedicle_span(self):
        """(y_start, y_end) of the pedicle cylinder along the local y axis."""
        start = self.body_surface_y(self.pedicle_offset) - PEDICLE_EMBED_MM
        end = self.canal_center_offset + PEDICLE_ARCH_OVERSHOOT_MM
        return start, end

    @property
    def pedicle_free_midpoint_y(self):
        """Mid free span between the body surface and the arch wall."""
        return 0.5 * (self.body_surface_y(self.pedicle_offset)
                      + self.canal_center_offset)


def default_levels():
    return (VertebraSpec(trabecular_bmd=50.0),
            VertebraSpec(trabecular_bmd=100.0),
            VertebraSpec(trabecular_bmd=200.0))


@dataclass(frozen=True)
class PhantomSpec:
    levels: tuple = field(default_factory=default_levels)
    soft_tissue_value: float = 25.0
    spacing: tuple = (0.5, 0.5, 0.5)
    noise_sigma: float = 15.0
    rng_seed: int = 1234

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) < 1:
            raise GeometryError("phantom needs at least one level")
        for lv in levels:
            if not lv.trabecular_bmd > self.soft_tissue_value:
                raise GeometryError(
                    "trabecular BMD must exceed the soft tissue value "
                    "(bimodal histogram contract)")
        if any(s <= 0 for s in self.spacing):
            raise GeometryError("spacing must be positive")
        if self.noise_sigma < 0:
            raise GeometryError("noise sigma must be non-negative")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def pitch(self):
        """Center-to-center distance between adjacent levels."""
        h = max(lv.body_height for lv in self.levels)
        return h + GAP_MM

    @classmethod
    def from_dict(cls, payload):
        levels = tuple(VertebraSpec(**lv) for lv in payload.get("levels", []))
        kwargs = {k: v for k, v in payload.items() if k != "levels"}
        if "spacing" in kwargs:
            kwargs["spacing"] = tuple(kwargs["spacing"])
        if levels:
            kwargs["levels"] = levels
        return cls(**kwargs)

    def to_dict(self):
        return {
            "levels": [{
                "trabecular_bmd": lv.trabecular_bmd,
                "body_radius": lv.body_radius,
                "body_height": lv.body_height,
                "cortical_thickness": lv.cortical_thickness,
                "cortical_bmd": lv.cortical_bmd,
                "pedicle_radius": lv.pedicle_radius,
                "process_extent": lv.process_extent,
                "tilt_deg": lv.tilt_deg,
            } for lv in self.levels],
            "soft_tissue_value": self.soft_tissue_value,
            "spacing": list(self.spacing),
            "noise_sigma": self.noise_sigma,
            "rng_seed": self.rng_seed,
        }


def _rot_x(deg):
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class LevelTruth:
    """Analytic ground truth for one phantom level."""

    name: str
    nominal_bmd: float
    analytic_volume_mm3: float
    body: Mask
    trabecular: Mask
    center: np.ndarray          # world position of the body center
    axes: np.ndarray            # 3x3, columns = local x/y/z in world
    body_height: float
    semi_axes: tuple            # (a, b) of the body ellipse
    canal_center_offset: float
    canal_radius: float
    canal_points: np.ndarray    # (N, 3) world, along this level's band
    pedicle_midpoints: np.ndarray  # (2, 3) world, free-span midpoints

    def canal_center_at_z(self, z_world):
        """Analytic canal-line point of this level at a given world z."""
        c, R = self.center, self.axes
        yk = self.canal_center_offset
        # solve center + R @ (0, yk, t) for world z
        base = c + R @ np.array([0.0, yk, 0.0])
        dz = R[2, 2]
        if abs(dz) < 1e-12:
            raise GeometryError("degenerate level orientation")
        t = (z_world - base[2]) / dz
        return base + t * R[:, 2]


@dataclass(frozen=True)
class PhantomTruth:
    levels: tuple
    disk_planes: tuple          # between adjacent levels, caudal -> cranial

    def canal_centerline(self, z_values):
        """Analytic canal centerline sampled at the given world z values."""
        centers_z = np.array([lv.center[2] for lv in self.levels])
        pts = []
        for z in np.atleast_1d(z_values):
            k = int(np.argmin(np.abs(centers_z - z)))
            pts.append(self.levels[k].canal_center_at_z(z))
        return np.array(pts)

    def seed_dict(self):
        return {"levels": [{"name": lv.name,
                            "center_mm": [float(v) for v in lv.center]}
                           for lv in self.levels]}


def generate_phantom(spec: PhantomSpec):
    """Build the noiseless phantom volume and its analytic ground truth."""
    levels = spec.levels
    n = len(levels)
    pitch = spec.pitch

    # level frames: rotate about the x axis through the column anchor (origin)
    frames = []
    for i, lv in enumerate(levels):
        R = _rot_x(lv.tilt_deg)
        center = R @ np.array([0.0, 0.0, i * pitch])
        frames.append((center, R))

    # world bounds with margins (tilt swings bounded by the margins)
    max_a = max(lv.semi_axis_x for lv in levels)
    max_b = max(lv.semi_axis_y for lv in levels)
    max_post = max(lv.canal_center_offset + lv.canal_radius + lv.arch_wall
                   - PROCESS_EMBED_MM + lv.process_extent for lv in levels)
    max_swing = max(abs(np.sin(np.deg2rad(lv.tilt_deg))) for lv in levels)
    swing_z = max_swing * (max_post + max_b)
    swing_y = max_swing * ((n - 1) * pitch + max(lv.body_height for lv in levels))
    x_lo, x_hi = -max_a - MARGIN_XY_MM, max_a + MARGIN_XY_MM
    y_lo = -max_b - MARGIN_XY_MM - swing_y
    y_hi = max_post + MARGIN_XY_MM + swing_y
    z_lo = -max(lv.body_height for lv in levels) / 2 - MARGIN_Z_MM - swing_z
    z_hi = (n - 1) * pitch + max(lv.body_height for lv in levels) / 2 \
        + MARGIN_Z_MM + swing_z

    sx, sy, sz = spec.spacing
    dims = (int(np.ceil((x_hi - x_lo) / sx)) + 1,
            int(np.ceil((y_hi - y_lo) / sy)) + 1,
            int(np.ceil((z_hi - z_lo) / sz)) + 1)
    # sub-voxel grid offset keeps solid boundaries off the voxel-center
    # planes (an aligned boundary double-counts a whole face layer)
    origin = (x_lo - 0.37 * sx, y_lo - 0.37 * sy, z_lo - 0.37 * sz)

    xs = origin[0] + np.arange(dims[0]) * sx
    ys = origin[1] + np.arange(dims[1]) * sy
    zs = origin[2] + np.arange(dims[2]) * sz

    value = np.full(dims, spec.soft_tissue_value, dtype=np.float32)
    level_truths = []

    for i, (lv, (center, R)) in enumerate(zip(levels, frames)):
        # local voxel-center coordinates (rotation about x only)
        dx = (xs - center[0])[:, None, None]
        dy = (ys - center[1])[None, :, None]
        dz = (zs - center[2])[None, None, :]
        t = np.deg2rad(lv.tilt_deg)
        c, s = np.cos(t), np.sin(t)
        xl = np.broadcast_to(dx, dims)
        yl = c * dy + s * dz
        zl = -s * dy + c * dz

        a, b = lv.semi_axis_x, lv.semi_axis_y
        tc = lv.cortical_thickness
        half_h = lv.body_height / 2
        yk = lv.canal_center_offset
        rc = lv.canal_radius
        w = lv.arch_wall

        ell_out = (xl / a) ** 2 + (yl / b) ** 2 <= 1.0
        body = ell_out & (np.abs(zl) <= half_h)
        inner = (((xl / (a - tc)) ** 2 + (yl / (b - tc)) ** 2 <= 1.0)
                 & (np.abs(zl) <= half_h - tc))

        # posterior arch: half-annular wall around the canal, continuous
        # along the column (each level owns a pitch-sized band; end levels
        # extend to the volume boundary)
        band_lo = -pitch / 2 if i > 0 else -np.inf
        band_hi = pitch / 2 if i < n - 1 else np.inf
        rho2 = xl ** 2 + (yl - yk) ** 2
        arch = ((rho2 >= rc ** 2) & (rho2 <= (rc + w) ** 2)
                & (yl >= yk) & (zl >= band_lo) & (zl <= band_hi))

        y_ped0, y_ped1 = lv.pedicle_span
        rp = lv.pedicle_radius
        xp = lv.pedicle_offset
        ped = (((xl - xp) ** 2 + zl ** 2 <= rp ** 2)
               | ((xl + xp) ** 2 + zl ** 2 <= rp ** 2))
        ped &= (yl >= y_ped0) & (yl <= y_ped1)

        y_proc0 = yk + rc + w - PROCESS_EMBED_MM
        proc = ((np.abs(xl) <= PROCESS_HALF_WIDTH_MM)
                & (yl >= y_proc0) & (yl <= y_proc0 + lv.process_extent)
                & (np.abs(zl) <= PROCESS_HALF_HEIGHT_MM))

        posterior = arch | ped | proc
        trab = inner & ~posterior
        cortical = (body & ~inner) | posterior

        value[trab] = lv.trabecular_bmd
        value[cortical] = lv.cortical_bmd

        # truth canal points along this level's band, 1 mm sampling
        lo = max(-pitch / 2, float(zs[0] - center[2]) - 1.0) if i > 0 \
            else float(zs[0] - center[2]) - 1.0
        hi = min(pitch / 2, float(zs[-1] - center[2]) + 1.0) if i < n - 1 \
            else float(zs[-1] - center[2]) + 1.0
        tt = np.arange(lo, hi + 1e-9, 1.0)
        canal_pts = center + (R @ np.stack(
            [np.zeros_like(tt), np.full_like(tt, yk), tt])).T

        mid_y = lv.pedicle_free_midpoint_y
        ped_mid = np.array([center + R @ np.array([+xp, mid_y, 0.0]),
                            center + R @ np.array([-xp, mid_y, 0.0])])

        level_truths.append(LevelTruth(
            name="L%d" % (i + 1),
            nominal_bmd=lv.trabecular_bmd,
            analytic_volume_mm3=lv.analytic_body_volume,
            body=Mask(dims, spec.spacing, origin, body),
            trabecular=Mask(dims, spec.spacing, origin, trab),
            center=center,
            axes=R,
            body_height=lv.body_height,
            semi_axes=(a, b),
            canal_center_offset=yk,
            canal_radius=rc,
            canal_points=canal_pts,
            pedicle_midpoints=ped_mid,
        ))

    planes = []
    for i in range(n - 1):
        lv0, (c0, R0) = levels[i], frames[i]
        lv1, (c1, R1) = levels[i + 1], frames[i + 1]
        p0 = c0 + R0 @ np.array([0.0, 0.0, lv0.body_height / 2])
        p1 = c1 + R1 @ np.array([0.0, 0.0, -lv1.body_height / 2])
        normal = R0[:, 2] + R1[:, 2]
        planes.append(Plane.from_point_normal(0.5 * (p0 + p1), normal))

    vol = Volume(dims, spec.spacing, origin, value)
    return vol, PhantomTruth(levels=tuple(level_truths), disk_planes=tuple(planes))


def add_noise(vol: Volume, sigma: float, seed: int):
    """Add independent zero-mean Gaussian noise, deterministic per seed."""
    if sigma < 0:
        raise GeometryError("noise sigma must be non-negative")
    if sigma == 0:
        return vol
    rng = np.random.default_rng(seed)
    noisy = vol.data + rng.normal(0.0, sigma, vol.dims).astype(np.float32)
    return vol.with_data(noisy.astype(np.float32))
