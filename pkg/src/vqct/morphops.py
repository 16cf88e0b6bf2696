"""Voxel morphology: EDT, seeded growing, closing/filling, dissection, peeling.

All operations are pure (masks are immutable) and deterministic.  Distances
are exact Euclidean with anisotropic spacing.  Foreground connectivity is
6-connected, background (hole detection) 26-connected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from .classify import ThresholdBand, bone_map
from .errors import DissectionWarning, GeometryError, NoWaistError
from .volgrid import LabelMap, Mask, Volume

_STRUCT_6 = ndimage.generate_binary_structure(3, 1)
_STRUCT_26 = ndimage.generate_binary_structure(3, 3)
_OFFSETS_6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


@dataclass(frozen=True)
class DistanceField:
    """Per-voxel exact Euclidean distance (mm) to the nearest foreground."""

    dims: tuple
    spacing: tuple
    origin: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values.flags.writeable = False


def edt(mask: Mask) -> DistanceField:
    """Exact anisotropic Euclidean distance transform of a mask.

    Zero exactly on the foreground; elsewhere the distance to the nearest
    foreground voxel center.
    """
    if not mask.bits.any():
        raise GeometryError("distance transform of an empty mask")
    values = ndimage.distance_transform_edt(~mask.bits, sampling=mask.spacing)
    return DistanceField(mask.dims, mask.spacing, mask.origin,
                         np.ascontiguousarray(values))


def interior_depth(mask: Mask):
    """Distance of every foreground voxel to the nearest background (mm)."""
    return ndimage.distance_transform_edt(mask.bits, sampling=mask.spacing)


def volume_grow(vol: Volume, seeds, band: ThresholdBand, region) -> Mask:
    """6-connected flood from seed voxels over bone-classified voxels.

    Grows only into voxels that classify as bone and lie inside the search
    region.  Seeds are (N, 3) voxel indices and must classify as bone.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.intp))
    if seeds.size == 0:
        raise GeometryError("empty seed set")
    region_mask = region.voxel_mask(vol) if hasattr(region, "voxel_mask") else region
    grow_into = bone_map(vol, band) & region_mask.bits
    flat = seeds[:, 0], seeds[:, 1], seeds[:, 2]
    if not grow_into[flat].all():
        raise GeometryError("every seed must classify as bone inside the region")
    labels, _ = ndimage.label(grow_into, structure=_STRUCT_6)
    keep = np.unique(labels[flat])
    grown = np.isin(labels, keep[keep > 0])
    return Mask(vol.dims, vol.spacing, vol.origin, grown)


def _ball_dilate(bits, spacing, radius):
    dist = ndimage.distance_transform_edt(~bits, sampling=spacing)
    return dist <= radius


def _ball_erode(bits, spacing, radius):
    dist = ndimage.distance_transform_edt(bits, sampling=spacing)
    return dist > radius


def close_and_fill(mask: Mask, closing_radius_mm: float) -> Mask:
    """Morphological ball closing followed by interior cavity filling.

    The array is padded before closing so the operation equals the true
    Minkowski closing (and is therefore idempotent); background components
    not 26-connected to the volume border are then filled.
    """
    bits = mask.bits
    if closing_radius_mm > 0 and bits.any():
        pad = tuple(int(np.ceil(closing_radius_mm / s)) + 1 for s in mask.spacing)
        padded = np.pad(bits, [(p, p) for p in pad])
        closed = _ball_erode(_ball_dilate(padded, mask.spacing, closing_radius_mm),
                             mask.spacing, closing_radius_mm)
        sl = tuple(slice(p, n + p) for p, n in zip(pad, mask.dims))
        bits = closed[sl]

    bg_labels, n = ndimage.label(~bits, structure=_STRUCT_26)
    if n:
        border = np.zeros(mask.dims, bool)
        border[0, :, :] = border[-1, :, :] = True
        border[:, 0, :] = border[:, -1, :] = True
        border[:, :, 0] = border[:, :, -1] = True
        open_labels = np.unique(bg_labels[border & ~bits])
        cavity = ~bits & ~np.isin(bg_labels, open_labels)
        bits = bits | cavity
    return Mask(mask.dims, mask.spacing, mask.origin, bits)


def largest_component(mask: Mask) -> Mask:
    """Largest 6-connected component of a mask (unchanged if empty)."""
    labels, n = ndimage.label(mask.bits, structure=_STRUCT_6)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return Mask(mask.dims, mask.spacing, mask.origin, labels == keep)


@dataclass(frozen=True)
class ErosionSplit:
    """Residual components of a mask at the minimal disconnecting threshold."""

    residuals: LabelMap       # 1..expected, descending size
    threshold: float          # interior-depth level that produced the split


def ultimate_erode(mask: Mask, expected: int = 2,
                   min_component_fraction: float = 0.01) -> ErosionSplit:
    """Erode a connected mask to its main components.

    The interior depth field is thresholded at increasing levels; the
    smallest level at which the mask decomposes into >= ``expected``
    significant components (each above the size fraction) wins, and the
    ``expected`` largest components at that level are returned labeled by
    descending size.

    Raises NoWaistError when no threshold produces the split.
    """
    bits = mask.bits
    if not bits.any():
        raise GeometryError("empty mask")
    _, n0 = ndimage.label(bits, structure=_STRUCT_6)
    if n0 != 1:
        raise GeometryError("mask must be connected (got %d components)" % n0)

    depth = ndimage.distance_transform_edt(bits, sampling=mask.spacing)
    levels = np.unique(depth[bits])
    min_size = max(1, int(np.ceil(min_component_fraction * bits.sum())))

    def significant_components(t):
        labels, n = ndimage.label(depth > t, structure=_STRUCT_6)
        if n == 0:
            return labels, []
        sizes = np.bincount(labels.ravel())[1:]
        good = np.flatnonzero(sizes >= min_size) + 1
        return labels, [(int(sizes[g - 1]), int(g)) for g in good]

    # coarse ascending scan, then exact scan inside the bracketing interval
    stride = max(1, len(levels) // 48)
    coarse = list(levels[::stride])
    if coarse[-1] != levels[-1]:
        coarse.append(levels[-1])
    hit = None
    for i, t in enumerate(coarse):
        _, comps = significant_components(t)
        if len(comps) >= expected:
            hit = i
            break
    if hit is None:
        raise NoWaistError("erosion never split the mask into %d components" % expected)
    lo = coarse[hit - 1] if hit > 0 else -1.0
    exact = levels[(levels > lo) & (levels <= coarse[hit])]
    for t in exact:
        labels, comps = significant_components(t)
        if len(comps) >= expected:
            comps.sort(key=lambda sc: (-sc[0], sc[1]))
            out = np.zeros(mask.dims, dtype=np.int32)
            for rank, (_, lab) in enumerate(comps[:expected], start=1):
                out[labels == lab] = rank
            return ErosionSplit(LabelMap(mask.dims, mask.spacing, mask.origin, out),
                                float(t))
    raise NoWaistError("split vanished during refinement")  # pragma: no cover


def skiz_partition(residuals: LabelMap, within: Mask):
    """Lockstep geodesic dilation of labeled residuals inside a mask.

    Every ``within`` voxel is assigned to the residual with the smallest
    geodesic (6-connected, mm-weighted) distance; voxels reached at equal
    distance (within one voxel step) by two labels form the contact
    surface.  Returns (labels LabelMap, contact Mask).
    """
    labs = residuals.labels
    ids = np.unique(labs[labs > 0])
    if len(ids) < 2:
        raise GeometryError("need at least two residuals")
    if (labs > 0)[~within.bits].any():
        raise GeometryError("residuals must lie inside the partition mask")

    costs = np.where(within.bits, 1.0, np.inf)
    dist_maps = []
    for lab in ids:
        mcp = MCP_Geometric(costs, offsets=_OFFSETS_6, sampling=within.spacing)
        cum, _ = mcp.find_costs(np.argwhere(labs == lab))
        dist_maps.append(cum)
    dist = np.stack(dist_maps)

    order = np.argsort(dist, axis=0)
    best = np.take_along_axis(dist, order[:1], axis=0)[0]
    second = np.take_along_axis(dist, order[1:2], axis=0)[0]
    winner = ids[order[0]]

    tol = min(within.spacing) * (1.0 + 1e-9)
    inside = within.bits & np.isfinite(best)
    gap = np.subtract(second, best, out=np.full(best.shape, np.inf),
                      where=np.isfinite(second))
    contact = inside & (gap <= tol)
    labels = np.where(inside & ~contact, winner, 0).astype(np.int32)
    return (LabelMap(within.dims, within.spacing, within.origin, labels),
            Mask(within.dims, within.spacing, within.origin, contact))


@dataclass(frozen=True)
class DissectionResult:
    """Vertebral body / posterior process dissection through the pedicles."""

    body: Mask
    process: Mask
    cut: Mask
    m3: np.ndarray            # cut-area center, smaller-x pedicle
    m4: np.ndarray            # cut-area center, larger-x pedicle (None on warning)
    n_cut_components: int
    threshold: float


def _world_centroid(mask_geom, voxels):
    idx = np.asarray(voxels, dtype=np.float64)
    return (np.asarray(mask_geom.origin)
            + idx.mean(axis=0) * np.asarray(mask_geom.spacing))


def pedicle_cut(mask: Mask) -> DissectionResult:
    """Dissect a filled vertebra segmentation into body and processes.

    Ultimate erosion yields the body and posterior-element residuals (the
    body is the larger); lockstep dilation inside the mask assigns every
    voxel to one side, and the contact surface through the pedicles gives
    the dissection.  The centers of the two largest cut components are the
    pedicle landmarks, ordered by world x.
    """
    split = ultimate_erode(mask, expected=2)
    labels, contact = skiz_partition(split.residuals, mask)

    body_bits = labels.labels == 1
    process_bits = labels.labels == 2
    cut_bits = contact.bits

    comp, n = ndimage.label(cut_bits, structure=_STRUCT_26)
    sizes = np.bincount(comp.ravel())[1:]
    order = np.argsort(-sizes, kind="stable") + 1
    m3 = m4 = None
    if n >= 2:
        c_a = _world_centroid(mask, np.argwhere(comp == order[0]))
        c_b = _world_centroid(mask, np.argwhere(comp == order[1]))
        m3, m4 = sorted([c_a, c_b], key=lambda c: c[0])
        if n > 2:
            warnings.warn("expected 2 cut components, found %d" % n,
                          DissectionWarning)
    elif n == 1:
        warnings.warn("single cut component: degenerate pedicle anatomy",
                      DissectionWarning)
        m3 = _world_centroid(mask, np.argwhere(comp == order[0]))
    else:
        raise NoWaistError("dissection produced no contact surface")

    return DissectionResult(
        body=Mask(mask.dims, mask.spacing, mask.origin, body_bits),
        process=Mask(mask.dims, mask.spacing, mask.origin, process_bits),
        cut=Mask(mask.dims, mask.spacing, mask.origin, cut_bits),
        m3=m3, m4=m4, n_cut_components=int(n), threshold=split.threshold)


def trabecular_peel(body: Mask, vol: Volume, band: ThresholdBand,
                    peel_depth_mm: float = 2.0,
                    max_strip_mm: float = 5.0) -> Mask:
    """Strip the cortical shell, then peel off the sub-cortical layer.

    Phase 1 iteratively removes surface voxels whose value exceeds the
    band's high threshold until none qualifies (capped at ``max_strip_mm``
    of depth: with a threshold below the trabecular level every exposed
    layer qualifies and the strip must not consume the body).  Phase 2 is
    a homogeneous Euclidean erosion by ``peel_depth_mm``.
    """
    if not body.bits.any():
        raise GeometryError("empty body mask")
    body.require_same_geometry(Mask(vol.dims, vol.spacing, vol.origin,
                                    np.zeros(vol.dims, bool)))
    bits = body.bits.copy()
    high = band.high
    max_passes = max(1, int(np.ceil(max_strip_mm / min(body.spacing))))
    for _ in range(max_passes):
        eroded = ndimage.binary_erosion(bits, structure=_STRUCT_6, border_value=0)
        surface = bits & ~eroded
        strip = surface & (vol.data > high)
        if not strip.any():
            break
        bits = bits & ~strip

    if peel_depth_mm > 0:
        depth = ndimage.distance_transform_edt(bits, sampling=body.spacing)
        bits = depth > peel_depth_mm

    if not bits.any():
        raise GeometryError("peel removed the whole body (body too small)")
    return Mask(body.dims, body.spacing, body.origin, bits)
