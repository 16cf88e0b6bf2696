"""Pre-segmentation constraints: seeds, canal centerline, disk planes, search box.

Operator seed points (one per vertebral body center) are turned into
per-level constraints: the spinal canal centerline found per axial slice
as the largest *enclosed* inscribed sphere behind the body, planes fitted
into the inter-vertebral disks by grey-value minimization, and an
irregular boolean search region (cylinder clipped by the planes) that
limits all later segmentation steps to one vertebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import CanalNotFoundError, GeometryError
from .volgrid import Mask, Volume

MIN_SEED_DISTANCE_MM = 10.0


@dataclass(frozen=True)
class Seed:
    name: str
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.center.shape != (3,):
            raise GeometryError("seed center must be a 3-vector")


@dataclass(frozen=True)
class SeedSet:
    """Operator-marked body centers, ordered caudal -> cranial (ascending z)."""

    seeds: tuple

    def __post_init__(self):
        seeds = tuple(self.seeds)
        if len(seeds) < 1:
            raise GeometryError("need at least one seed")
        zs = [s.center[2] for s in seeds]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise GeometryError("seeds must be strictly ordered caudal to cranial")
        for i, a in enumerate(seeds):
            for b in seeds[i + 1:]:
                if np.linalg.norm(a.center - b.center) <= MIN_SEED_DISTANCE_MM:
                    raise GeometryError(
                        "seeds %s and %s closer than %g mm" % (a.name, b.name,
                                                               MIN_SEED_DISTANCE_MM))
        object.__setattr__(self, "seeds", seeds)

    def __len__(self):
        return len(self.seeds)

    def __iter__(self):
        return iter(self.seeds)

    def centers(self):
        return np.array([s.center for s in self.seeds])

    @classmethod
    def from_dict(cls, payload):
        seeds = tuple(Seed(lv["name"], np.asarray(lv["center_mm"], dtype=np.float64))
                      for lv in payload["levels"])
        return cls(seeds)

    def to_dict(self):
        return {"levels": [{"name": s.name, "center_mm": [float(v) for v in s.center]}
                           for s in self.seeds]}


@dataclass(frozen=True)
class Plane:
    """Oriented plane in signed distance form n.x = d (normal unit length)."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise GeometryError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point, normal):
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(n, float(np.dot(n, np.asarray(point, dtype=np.float64))))

    def signed_distance(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.normal - self.offset


@dataclass(frozen=True)
class SearchRegion:
    """Boolean solid: cylinder intersected with bounding half-spaces.

    ``contains`` is the exact AND of the primitive tests: lateral distance
    to the axis within ``radius``, axial offset within ``half_length``, and
    the correct side of every bounding plane.
    """

    axis_point: np.ndarray
    axis_dir: np.ndarray
    radius: float
    half_length: float
    planes: tuple = field(default=())  # (Plane, inside_sign) pairs, sign in {+1, -1}

    def __post_init__(self):
        p = np.asarray(self.axis_point, dtype=np.float64)
        d = np.asarray(self.axis_dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise GeometryError("axis direction must be unit length")
        if self.radius <= 0 or self.half_length <= 0:
            raise GeometryError("radius and half_length must be positive")
        object.__setattr__(self, "axis_point", p)
        object.__setattr__(self, "axis_dir", d)
        object.__setattr__(self, "planes", tuple(self.planes))

    def with_radius(self, radius):
        """Same axis and bounding planes, different cylinder radius."""
        return SearchRegion(self.axis_point, self.axis_dir, float(radius),
                            self.half_length, self.planes)

    def contains(self, pts, slack=0.0):
        """Boolean containment test for one point or an (N, 3) array."""
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 3)
        rel = pts - self.axis_point
        t = rel @ self.axis_dir
        lat = rel - np.outer(t, self.axis_dir)
        ok = (np.linalg.norm(lat, axis=1) <= self.radius + slack)
        ok &= np.abs(t) <= self.half_length + slack
        for plane, sign in self.planes:
            ok &= sign * plane.signed_distance(pts) >= -slack
        return bool(ok[0]) if single else ok

    def voxel_mask(self, geom):
        """Rasterize containment over the voxel centers of a Volume/Mask."""
        xs = geom.origin[0] + np.arange(geom.dims[0]) * geom.spacing[0]
        ys = geom.origin[1] + np.arange(geom.dims[1]) * geom.spacing[1]
        zs = geom.origin[2] + np.arange(geom.dims[2]) * geom.spacing[2]
        dx = xs[:, None, None] - self.axis_point[0]
        dy = ys[None, :, None] - self.axis_point[1]
        dz = zs[None, None, :] - self.axis_point[2]
        ax, ay, az = self.axis_dir
        t = dx * ax + dy * ay + dz * az
        lat2 = ((dx - t * ax) ** 2 + (dy - t * ay) ** 2 + (dz - t * az) ** 2)
        ok = (lat2 <= self.radius ** 2) & (np.abs(t) <= self.half_length)
        for plane, sign in self.planes:
            nx, ny, nz = plane.normal
            sd = dx * nx + dy * ny + dz * nz + (self.axis_point @ plane.normal - plane.offset)
            ok &= sign * sd >= 0.0
        return Mask(geom.dims, geom.spacing, geom.origin, ok)


# ---------------------------------------------------------------------------
# canal detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanalParams:
    """Rolling-ball canal search configuration."""

    coarse_bone_threshold: float = 250.0   # mg/cm^3, separates compact bone walls
    window_lateral_mm: float = 40.0        # full width of the posterior window
    window_depth_mm: float = 40.0          # how far behind the body center to look
    posterior_dir: tuple = (0.0, 1.0, 0.0)
    max_step_mm: float = 3.0               # slice-to-slice continuity bound
    min_canal_radius_mm: float = 2.0
    smooth_sigma_vox: float = 0.8
    cage_rays: int = 8
    cage_reach_factor: float = 3.5
    cage_min_hits: int = 6
    span_pad_mm: float = 16.0              # extend beyond first/last seed


def _slice_distance_to_bone(bone2d, spacing_yx):
    if not bone2d.any():
        return None
    return ndimage.distance_transform_edt(~bone2d, sampling=spacing_yx)


def _is_caged(bone2d, iy, ix, dist, spacing_yx, params):
    """True if a ball of radius ``dist`` at (iy, ix) is enclosed by bone.

    Casts in-plane rays; open field around a candidate lets most rays
    escape, while a canal wall stops them within a few ball radii.
    """
    ny, nx = bone2d.shape
    reach = params.cage_reach_factor * dist
    step = 0.5 * min(spacing_yx)
    nsteps = max(2, int(np.ceil(reach / step)))
    hits = 0
    for k in range(params.cage_rays):
        ang = 2.0 * np.pi * k / params.cage_rays
        dy, dx = np.cos(ang), np.sin(ang)
        hit = False
        for s in range(1, nsteps + 1):
            y = iy + dy * s * step / spacing_yx[0]
            x = ix + dx * s * step / spacing_yx[1]
            jy, jx = int(round(y)), int(round(x))
            if jy < 0 or jy >= ny or jx < 0 or jx >= nx:
                break
            if bone2d[jy, jx]:
                hit = True
                break
        hits += hit
    return hits >= params.cage_min_hits


def _slice_candidates(bone2d, dist, spacing_yx, params):
    """Interior local maxima of the distance field with their cage status.

    The window's outer pixel ring is excluded: boundary pixels pass a plain
    local-max test whenever the field grows toward open space outside.
    """
    footprint = np.ones((3, 3), bool)
    local_max = (dist == ndimage.maximum_filter(dist, footprint=footprint))
    local_max &= dist >= params.min_canal_radius_mm
    local_max[0, :] = local_max[-1, :] = False
    local_max[:, 0] = local_max[:, -1] = False
    cands = []
    for iy, ix in np.argwhere(local_max):
        caged = _is_caged(bone2d, iy, ix, dist[iy, ix], spacing_yx, params)
        cands.append((float(dist[iy, ix]), int(iy), int(ix), caged))
    return cands


def _enclosed_maxima(bone2d, dist, spacing_yx, params):
    """Local maxima of the distance field that pass the cage test."""
    return [(d, iy, ix) for d, iy, ix, caged
            in _slice_candidates(bone2d, dist, spacing_yx, params) if caged]


def detect_canal(vol: Volume, seeds: SeedSet, params: CanalParams = CanalParams()):
    """Find the spinal canal center on every axial slice spanned by the seeds.

    Per slice the center is the maximum of the in-plane distance-to-bone
    field inside a posterior window behind the (interpolated) body center,
    restricted to enclosed maxima; consecutive centers are chained with a
    maximum in-plane step so the centerline stays continuous.

    Returns an (N, 3) array of world points ordered caudal -> cranial.

    Raises CanalNotFoundError when the anchor slice holds no enclosed
    canal-like maximum (bad seed, bad threshold, or no posterior arch).
    """
    post = np.asarray(params.posterior_dir, dtype=np.float64)
    post = post / np.linalg.norm(post)
    if abs(post[2]) > 1e-6:
        raise GeometryError("posterior direction must be axial (zero z component)")
    lat = np.array([post[1], -post[0], 0.0])

    centers = seeds.centers()
    z_lo = centers[0, 2] - params.span_pad_mm
    z_hi = centers[-1, 2] + params.span_pad_mm
    iz_lo = max(0, int(np.ceil((z_lo - vol.origin[2]) / vol.spacing[2])))
    iz_hi = min(vol.dims[2] - 1, int(np.floor((z_hi - vol.origin[2]) / vol.spacing[2])))
    if iz_hi < iz_lo:
        raise GeometryError("seed span does not intersect the volume")

    spacing_yx = (vol.spacing[1], vol.spacing[0])

    def anchor_at(zw):
        """Interpolated body center at slice height zw (clamped at the ends)."""
        if len(centers) == 1 or zw <= centers[0, 2]:
            return centers[0, :2]
        if zw >= centers[-1, 2]:
            return centers[-1, :2]
        k = np.searchsorted(centers[:, 2], zw) - 1
        f = (zw - centers[k, 2]) / (centers[k + 1, 2] - centers[k, 2])
        return (1 - f) * centers[k, :2] + f * centers[k + 1, :2]

    def window_bounds(anchor_xy):
        """(x0, x1, y0, y1) world bounds of the posterior window."""
        a = np.array([anchor_xy[0], anchor_xy[1], 0.0])
        half = 0.5 * params.window_lateral_mm
        c0 = a + post * 0.0 - lat * half
        c1 = a + post * params.window_depth_mm + lat * half
        lo = np.minimum(c0, c1)
        hi = np.maximum(c0, c1)
        return lo[0], hi[0], lo[1], hi[1]

    def slice_fields(iz, anchor_xy):
        x0, x1, y0, y1 = window_bounds(anchor_xy)
        ix0 = max(0, int(np.floor((x0 - vol.origin[0]) / vol.spacing[0])))
        ix1 = min(vol.dims[0] - 1, int(np.ceil((x1 - vol.origin[0]) / vol.spacing[0])))
        iy0 = max(0, int(np.floor((y0 - vol.origin[1]) / vol.spacing[1])))
        iy1 = min(vol.dims[1] - 1, int(np.ceil((y1 - vol.origin[1]) / vol.spacing[1])))
        if ix1 <= ix0 or iy1 <= iy0:
            return None
        sub = vol.data[ix0:ix1 + 1, iy0:iy1 + 1, iz].astype(np.float64).T  # (y, x)
        if params.smooth_sigma_vox > 0:
            sub = ndimage.gaussian_filter(sub, params.smooth_sigma_vox)
        bone = sub > params.coarse_bone_threshold
        dist = _slice_distance_to_bone(bone, spacing_yx)
        return bone, dist, (ix0, iy0)

    def to_world(iz, iy, ix, off):
        ix0, iy0 = off
        return np.array([
            vol.origin[0] + (ix0 + ix) * vol.spacing[0],
            vol.origin[1] + (iy0 + iy) * vol.spacing[1],
            vol.origin[2] + iz * vol.spacing[2],
        ])

    def best_start(iz):
        anchor = anchor_at(vol.origin[2] + iz * vol.spacing[2])
        fields = slice_fields(iz, anchor)
        if fields is None or fields[1] is None:
            return None
        bone, dist, off = fields
        cands = _enclosed_maxima(bone, dist, spacing_yx, params)
        if not cands:
            return None
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        d, iy, ix = cands[0]
        return to_world(iz, iy, ix, off)

    def follow(iz, prev_xy):
        """Best enclosed maximum within max_step of the previous center.

        Caged maxima are preferred; with none in reach the previous center
        is carried forward unchanged (open gap slices have no enclosed
        maximum, and a hard step cap keeps the chain continuous).
        """
        zw = vol.origin[2] + iz * vol.spacing[2]
        carry = np.array([prev_xy[0], prev_xy[1], zw])
        fields = slice_fields(iz, anchor_at(zw))
        if fields is None or fields[1] is None:
            return carry
        bone, dist, off = fields
        ix0, iy0 = off
        best = None
        for d, iy, ix, caged in _slice_candidates(bone, dist, spacing_yx, params):
            wy = vol.origin[1] + (iy0 + iy) * vol.spacing[1]
            wx = vol.origin[0] + (ix0 + ix) * vol.spacing[0]
            if (wx - prev_xy[0]) ** 2 + (wy - prev_xy[1]) ** 2 > params.max_step_mm ** 2:
                continue
            key = (not caged, -d, iy, ix)
            if best is None or key < best[0]:
                best = (key, iy, ix)
        if best is None:
            return carry
        return to_world(iz, best[1], best[2], off)

    # anchor the chain at the caudal seed slice
    iz_anchor = int(round((centers[0, 2] - vol.origin[2]) / vol.spacing[2]))
    iz_anchor = min(max(iz_anchor, iz_lo), iz_hi)
    start = best_start(iz_anchor)
    if start is None:
        raise CanalNotFoundError(
            "no enclosed canal-like maximum behind the first seed; "
            "check the seed position and the bone threshold")

    points = {iz_anchor: start}
    prev = start[:2]
    for iz in range(iz_anchor + 1, iz_hi + 1):
        p = follow(iz, prev)
        points[iz] = p
        prev = p[:2]
    prev = start[:2]
    for iz in range(iz_anchor - 1, iz_lo - 1, -1):
        p = follow(iz, prev)
        points[iz] = p
        prev = p[:2]
    return np.array([points[iz] for iz in range(iz_lo, iz_hi + 1)])


# ---------------------------------------------------------------------------
# disk plane fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiskPlaneParams:
    max_tilt_deg: float = 15.0
    tilt_step_deg: float = 1.0
    offset_step_mm: float = 0.5
    disk_radius_factor: float = 0.8    # of the body radius estimate
    refine_rounds: int = 2
    default_half_height_mm: float = 14.0


def _disk_points(radius, n_rings=6):
    """Fixed polar sampling grid on the unit disk, scaled to ``radius``."""
    pts = [(0.0, 0.0)]
    for j in range(1, n_rings + 1):
        r = radius * j / n_rings
        n = 8 * j
        ang = 2.0 * np.pi * np.arange(n) / n
        pts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    return np.array(pts)


def _plane_basis(axis):
    """Deterministic orthonormal (u, v) spanning the plane normal to axis."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(ref, axis)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _tilted_normal(axis, u, v, alpha_deg, beta_deg):
    a = np.deg2rad(alpha_deg)
    b = np.deg2rad(beta_deg)
    n = axis + np.tan(a) * u + np.tan(b) * v
    return n / np.linalg.norm(n)


FALLBACK_BODY_RADIUS_MM = 12.0


def estimate_body_radius(vol: Volume, seed_center, bone_threshold=250.0):
    """Equivalent-disk radius of the sub-threshold region flooded at the seed.

    The vertebral interior (trabecular bone) lies below the compact-bone
    threshold; flooding it from the seed and measuring the seed slice's
    area gives a robust per-level size estimate.  The slice's bone mask is
    smoothed and closed first so a cortical shell thinner than a voxel
    still seals the interior against the surrounding soft tissue.
    """
    iz = int(round((seed_center[2] - vol.origin[2]) / vol.spacing[2]))
    iz = min(max(iz, 0), vol.dims[2] - 1)
    sl = ndimage.gaussian_filter(vol.data[:, :, iz].astype(np.float64), 0.8)
    bone = sl > bone_threshold
    seal = max(1, int(round(1.0 / min(vol.spacing[0], vol.spacing[1]))))
    bone = ndimage.binary_closing(bone, structure=np.ones((3, 3), bool),
                                  iterations=seal)
    interior = ~bone
    ix = int(round((seed_center[0] - vol.origin[0]) / vol.spacing[0]))
    iy = int(round((seed_center[1] - vol.origin[1]) / vol.spacing[1]))
    ix = min(max(ix, 0), vol.dims[0] - 1)
    iy = min(max(iy, 0), vol.dims[1] - 1)
    if not interior[ix, iy]:
        return FALLBACK_BODY_RADIUS_MM  # seed on bone
    lab, _ = ndimage.label(interior)
    region = lab == lab[ix, iy]
    border = np.zeros_like(region)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    if (region & border).any():
        return FALLBACK_BODY_RADIUS_MM  # interior leaked into open space
    area = float(region.sum()) * vol.spacing[0] * vol.spacing[1]
    return float(np.sqrt(area / np.pi))


def fit_disk_planes(vol: Volume, seeds: SeedSet,
                    params: DiskPlaneParams = DiskPlaneParams(),
                    radius_estimates=None):
    """Fit one plane into each inter-vertebral disk, plus mirrored end caps.

    For each adjacent seed pair the plane minimizing the mean grey value
    over a plane-aligned disk is searched over the axial offset (whole
    inter-seed span) and two tilt angles (coarse grid, then local grid
    refinement).  Ties are broken toward zero tilt, then toward the
    inter-seed midpoint.  End caps copy the nearest fitted plane's normal,
    mirrored about the end seed.

    Returns a list of len(seeds)+1 planes ordered caudal -> cranial, each
    oriented with normal pointing cranially.
    """
    centers = seeds.centers()
    if radius_estimates is None:
        radius_estimates = [estimate_body_radius(vol, c) for c in centers]

    fitted = []
    for i in range(len(centers) - 1):
        p0, p1 = centers[i], centers[i + 1]
        axis = p1 - p0
        span = np.linalg.norm(axis)
        if span < 1e-9:
            raise GeometryError("coincident seeds")
        axis = axis / span
        u, v = _plane_basis(axis)
        disk_r = params.disk_radius_factor * 0.5 * (radius_estimates[i]
                                                    + radius_estimates[i + 1])
        disk = _disk_points(disk_r)

        def mean_grey(offset, alpha, beta):
            n = _tilted_normal(axis, u, v, alpha, beta)
            du, dv = _plane_basis(n)
            c = p0 + offset * axis
            pts = c + disk[:, 0, None] * du + disk[:, 1, None] * dv
            return float(np.mean(vol.sample_trilinear(pts)))

        def better(cand, best):
            # quantized objective, then smallest tilt, then nearest midpoint
            return cand[:3] < best[:3]

        best = None
        offsets = np.arange(2.0, span - 2.0 + 1e-9, params.offset_step_mm)
        mid = 0.5 * span
        for o in offsets:
            g = round(mean_grey(o, 0.0, 0.0), 6)
            cand = (g, 0.0, abs(o - mid), o, 0.0, 0.0)
            if best is None or better(cand, best):
                best = cand

        # tilt grid around the best offset
        tilts = np.arange(-params.max_tilt_deg, params.max_tilt_deg + 1e-9,
                          params.tilt_step_deg)
        o0 = best[3]
        micro = np.arange(-2.0, 2.0 + 1e-9, params.offset_step_mm)
        for a in tilts:
            for b in tilts:
                for do in micro:
                    o = o0 + do
                    if o < 2.0 or o > span - 2.0:
                        continue
                    g = round(mean_grey(o, a, b), 6)
                    cand = (g, a * a + b * b, abs(o - mid), o, a, b)
                    if better(cand, best):
                        best = cand

        # local refinement on halved grids
        step_o, step_t = params.offset_step_mm, params.tilt_step_deg
        for _ in range(params.refine_rounds):
            step_o, step_t = step_o / 2, step_t / 2
            _, _, _, o0, a0, b0 = best
            for a in (a0 - step_t, a0, a0 + step_t):
                for b in (b0 - step_t, b0, b0 + step_t):
                    for o in (o0 - step_o, o0, o0 + step_o):
                        if o < 2.0 or o > span - 2.0:
                            continue
                        if abs(a) > params.max_tilt_deg or abs(b) > params.max_tilt_deg:
                            continue
                        g = round(mean_grey(o, a, b), 6)
                        cand = (g, a * a + b * b, abs(o - mid), o, a, b)
                        if better(cand, best):
                            best = cand

        _, _, _, o, a, b = best
        n = _tilted_normal(axis, u, v, a, b)
        fitted.append(Plane.from_point_normal(p0 + o * axis, n))

    if not fitted:
        # single seed: flat caps at the default half height
        c = centers[0]
        n = np.array([0.0, 0.0, 1.0])
        lo = Plane.from_point_normal(c - n * params.default_half_height_mm, n)
        hi = Plane.from_point_normal(c + n * params.default_half_height_mm, n)
        return [lo, hi]

    # end caps copy the nearest fitted plane's tilt, mirrored about the end
    # seeds; the cap distance is floored at the default half height so a
    # seed marked off-center cannot pull the cap into the endplate
    first, last = fitted[0], fitted[-1]
    d0 = first.signed_distance(centers[0])
    cap0 = max(abs(d0), params.default_half_height_mm) + 2.0
    lo = Plane(first.normal,
               float(centers[0] @ first.normal + np.sign(d0) * cap0))
    d1 = last.signed_distance(centers[-1])
    cap1 = max(abs(d1), params.default_half_height_mm) + 2.0
    hi = Plane(last.normal,
               float(centers[-1] @ last.normal + np.sign(d1) * cap1))
    return [lo] + fitted + [hi]


# ---------------------------------------------------------------------------
# search region construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchRegionParams:
    radius_margin_factor: float = 0.62  # times the body radius estimate
    axial_margin_mm: float = 2.0


def build_search_region(seed_center, canal_points, lower: Plane, upper: Plane,
                        body_radius_estimate: float,
                        params: SearchRegionParams = SearchRegionParams()):
    """Enclose one vertebra in a cylinder clipped by its two disk planes.

    The cylinder axis runs through the seed, perpendicular to the plane
    pair (mean normal).  The radius is half the seed-to-canal distance
    plus a margin proportional to the body radius estimate; for lumbar
    proportions the default margin puts the lateral surface between the
    posterior body wall and the neural arch, excluding the arch and the
    processes posteriorly and the aorta anteriorly.
    """
    seed = np.asarray(seed_center, dtype=np.float64)
    d_lo = lower.signed_distance(seed)
    d_hi = upper.signed_distance(seed)
    if d_lo == 0 or d_hi == 0 or (d_lo > 0) == (d_hi > 0):
        raise GeometryError("seed does not lie between the bounding planes")

    axis = lower.normal + upper.normal
    nrm = np.linalg.norm(axis)
    if nrm < 1e-9:
        raise GeometryError("degenerate plane pair")
    axis = axis / nrm

    canal = np.asarray(canal_points, dtype=np.float64)
    k = int(np.argmin(np.abs(canal[:, 2] - seed[2])))
    d_canal = float(np.linalg.norm(canal[k] - seed))
    radius = 0.5 * d_canal + params.radius_margin_factor * float(body_radius_estimate)

    half_len = max(abs(d_lo), abs(d_hi)) + params.axial_margin_mm
    planes = ((lower, 1.0 if d_lo > 0 else -1.0),
              (upper, 1.0 if d_hi > 0 else -1.0))
    region = SearchRegion(seed, axis, radius, half_len, planes)
    if not region.contains(seed):
        raise GeometryError("constructed region does not contain its seed")
    return region
