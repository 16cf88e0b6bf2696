"""Deformable balloon surface for coarse vertebral body segmentation.

An explicit triangle mesh inflated from a seed sphere.  Grey-value
profiles sampled radially through each vertex locate the rising
trabecular-to-compact-bone edge; vertices are pulled to these targets by
image forces while spring forces between neighbors keep the surface
smooth, and stretched areas gain vertices so the mesh can follow the
endplate rims.  No inflation pressure is used: targets outside the search
region are discarded, which keeps the surface from leaking out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .volgrid import Mask, Volume


@dataclass(frozen=True)
class BalloonParams:
    """Dynamics and profile configuration.

    The explicit integrator is stable for dt <= sqrt(mass / k_smooth);
    construction enforces this bound.
    """

    mass: float = 1.0
    k_smooth: float = 0.06
    k_image: float = 0.8
    dt: float = 0.5
    profile_length: float = 18.0      # mm, symmetric about the surface
    profile_step: float = 0.5         # mm
    edge_floor: float = 150.0         # mg/cm^3 per mm, minimum edge strength
    max_edge_length: float = 3.0      # mm, refinement trigger
    convergence_tol: float = 0.03     # mean |dp| per step, mm
    max_iterations: int = 400
    max_vertices: int = 2500          # refinement stops growing beyond this
    refine_interval: int = 4          # dynamics steps between refinements

    def __post_init__(self):
        for name in ("mass", "k_smooth", "k_image", "dt", "profile_length",
                     "profile_step", "edge_floor", "max_edge_length",
                     "convergence_tol"):
            if getattr(self, name) <= 0:
                raise GeometryError("%s must be positive" % name)
        if self.max_iterations <= 0:
            raise GeometryError("max_iterations must be positive")
        if self.dt > np.sqrt(self.mass / self.k_smooth):
            raise GeometryError(
                "unstable step: dt must satisfy dt <= sqrt(mass/k_smooth)")

    def profile_offsets(self):
        n = int(round(0.5 * self.profile_length / self.profile_step))
        return np.arange(-n, n + 1) * self.profile_step


@dataclass(frozen=True)
class BalloonMesh:
    """Closed, outward-oriented triangle mesh with per-vertex dynamics state.

    ``targets`` rows are NaN where a vertex currently has no edge target.
    """

    vertices: np.ndarray     # (V, 3) float64
    velocities: np.ndarray   # (V, 3) float64
    faces: np.ndarray        # (F, 3) int
    targets: np.ndarray = None

    def __post_init__(self):
        if self.targets is None:
            object.__setattr__(self, "targets",
                               np.full_like(self.vertices, np.nan))

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def edges(self):
        """Unique undirected edges, each row sorted, lexicographic order.

        Cached: the topology only changes through refinement, which builds
        a new mesh.
        """
        cached = getattr(self, "_edges", None)
        if cached is not None:
            return cached
        e = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                       self.faces[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        object.__setattr__(self, "_edges", e)
        return e

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_faces

    def is_closed(self):
        e = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                       self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts == 2).all())

    def signed_volume(self):
        v0 = self.vertices[self.faces[:, 0]]
        v1 = self.vertices[self.faces[:, 1]]
        v2 = self.vertices[self.faces[:, 2]]
        return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)

    def validate(self):
        if not self.is_closed():
            raise GeometryError("mesh is not closed")
        if self.euler_characteristic() != 2:
            raise GeometryError("mesh is not genus 0")
        if self.signed_volume() <= 0:
            raise GeometryError("mesh is not outward oriented")

    def vertex_normals(self):
        """Area-weighted vertex normals (outward, unit length)."""
        v0 = self.vertices[self.faces[:, 0]]
        v1 = self.vertices[self.faces[:, 1]]
        v2 = self.vertices[self.faces[:, 2]]
        fn = np.cross(v1 - v0, v2 - v0)  # magnitude = 2 * area
        normals = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(normals, self.faces[:, k], fn)
        nrm = np.linalg.norm(normals, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        return normals / nrm

    def spring_energy(self, k_smooth):
        e = self.edges()
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        # ordered-pair sum: every edge counted from both endpoints
        return float(k_smooth * (d ** 2).sum())

    def write_soup(self, path):
        """ASCII triangle soup, one triangle (9 floats) per line."""
        tris = self.vertices[self.faces].reshape(-1, 9)
        np.savetxt(path, tris, fmt="%.6f")

    def summary(self):
        return {"vertices": int(self.n_vertices), "faces": int(self.n_faces)}


_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSA_VERTS = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)

_ICOSA_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.intp)


def _subdivide_all(vertices, faces):
    """Split every face into 4 (midpoint subdivision)."""
    cache = {}
    verts = list(vertices)

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            cache[key] = len(verts)
            verts.append(0.5 * (vertices[a] + vertices[b]))
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return np.array(verts), np.array(new_faces, dtype=np.intp)


def init_balloon(center, radius, subdivisions=2) -> BalloonMesh:
    """Subdivided icosahedron sphere with zero velocities and no targets."""
    if radius <= 0:
        raise GeometryError("radius must be positive")
    verts = _ICOSA_VERTS.copy()
    faces = _ICOSA_FACES.copy()
    for _ in range(int(subdivisions)):
        verts, faces = _subdivide_all(verts, faces)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    verts = np.asarray(center, dtype=np.float64) + radius * verts
    mesh = BalloonMesh(verts, np.zeros_like(verts), faces)
    if mesh.signed_volume() < 0:
        mesh = BalloonMesh(verts, np.zeros_like(verts), faces[:, ::-1])
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# profiles and edge targets
# ---------------------------------------------------------------------------

def sample_profile(vol: Volume, vertex, normal, params: BalloonParams):
    """Grey values along the outward normal, t in [-L/2, L/2]."""
    normal = np.asarray(normal, dtype=np.float64)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
        raise GeometryError("profile normal must be unit length")
    ts = params.profile_offsets()
    pts = np.asarray(vertex, dtype=np.float64) + ts[:, None] * normal
    return vol.sample_trilinear(pts)


def _edge_targets_batch(profiles, params: BalloonParams):
    """Sub-sample rising-edge offsets for a (V, S) profile matrix.

    Candidate edges are local maxima of the outward derivative that reach
    the edge-strength floor with a darker inner than outer side; of these
    the one closest to the surface wins (a profile can cross several bone
    interfaces and the balloon must stop at the first).  Returns (V,)
    offsets in mm, NaN where no acceptable edge exists.
    """
    ts = params.profile_offsets()
    h = params.profile_step
    n_rows, n_samples = profiles.shape
    # light binomial smoothing stabilizes the derivative against noise
    sm = np.pad(profiles, [(0, 0), (1, 1)], mode="edge")
    sm = 0.25 * sm[:, :-2] + 0.5 * sm[:, 1:-1] + 0.25 * sm[:, 2:]
    deriv = (sm[:, 2:] - sm[:, :-2]) / (2.0 * h)  # at ts[1:-1]
    n_pos = deriv.shape[1]

    padded = np.pad(deriv, [(0, 0), (1, 1)], constant_values=-np.inf)
    local_max = (deriv >= padded[:, :-2]) & (deriv >= padded[:, 2:])

    # inner/outer means just beside every candidate; the window must stay
    # narrow or a thin bright shell averages away against the dark far side
    w = max(1, int(round(1.0 / h)))
    csum = np.concatenate([np.zeros((n_rows, 1)), np.cumsum(profiles, axis=1)],
                          axis=1)
    centers = np.arange(1, n_samples - 1)
    in_lo = np.maximum(centers - w, 0)
    out_hi = np.minimum(centers + w, n_samples - 1)
    inner = (csum[:, centers] - csum[:, in_lo]) / np.maximum(centers - in_lo, 1)
    outer = (csum[:, out_hi + 1] - csum[:, centers + 1]) / np.maximum(
        out_hi - centers, 1)

    ok = local_max & (deriv >= params.edge_floor) & (outer > inner)
    score = np.where(ok, np.abs(ts[centers])[None, :], np.inf)
    i_star = np.argmin(score, axis=1)
    rows = np.arange(n_rows)
    found = np.isfinite(score[rows, i_star])

    # a strong falling edge just beyond the rising one marks a thin compact
    # shell: the outer (periosteal) side is the true attraction point
    shell_w = max(1, int(round(1.5 / h)))
    back = np.arange(1, shell_w + 1)
    beyond_idx = np.minimum(i_star[:, None] + back[None, :], n_pos - 1)
    beyond = deriv[rows[:, None], beyond_idx]
    j_fall = np.argmin(beyond, axis=1)
    fall_ok = beyond[rows, j_fall] <= -params.edge_floor
    i_tgt = np.where(found & fall_ok,
                     np.minimum(i_star + 1 + j_fall, n_pos - 1), i_star)

    # parabolic refinement on the derivative triplet around the chosen edge
    sign = np.where(found & fall_ok, -1.0, 1.0)
    im = np.clip(i_tgt - 1, 0, n_pos - 1)
    ip = np.clip(i_tgt + 1, 0, n_pos - 1)
    dm = sign * deriv[rows, im]
    d0 = sign * deriv[rows, i_tgt]
    dp = sign * deriv[rows, ip]
    denom = dm - 2.0 * d0 + dp
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(np.abs(denom) > 1e-12,
                         0.5 * h * (dm - dp) / denom, 0.0)
    shift = np.clip(shift, -0.5 * h, 0.5 * h)

    t_star = ts[i_tgt + 1] + shift
    return np.where(found, t_star, np.nan)


def find_edge_target(samples, params: BalloonParams):
    """Offset of the nearest acceptable rising edge in one profile.

    Returns the parabolic-refined offset (mm) of the closest outward
    derivative maximum that clears the edge-strength floor with a darker
    inner side, or None when no edge qualifies.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 3:
        raise GeometryError("need at least 3 profile samples")
    t = _edge_targets_batch(samples[None, :], params)[0]
    return None if np.isnan(t) else float(t)


# ---------------------------------------------------------------------------
# dynamics and refinement
# ---------------------------------------------------------------------------

def _spring_forces(mesh: BalloonMesh, k_smooth):
    e = mesh.edges()
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    f = np.zeros_like(mesh.vertices)
    np.add.at(f, e[:, 0], k_smooth * d)
    np.add.at(f, e[:, 1], -k_smooth * d)
    return f


def step_dynamics(mesh: BalloonMesh, targets, params: BalloonParams) -> BalloonMesh:
    """One explicit position-Verlet step under spring and image forces.

    Velocity is rebuilt from the current force each step (fully damped
    Verlet): without damping in the equation of motion the surface would
    oscillate around the attractors instead of settling.  Vertices move
    along their surface normals (1-D radial dynamics on the profiles):
    the normal force component drives the motion, so the surface cannot
    creep tangentially or crumple where targets disagree.
    """
    f = _spring_forces(mesh, params.k_smooth)
    if targets is not None:
        t = np.asarray(targets, dtype=np.float64)
        have = ~np.isnan(t[:, 0])
        f[have] += params.k_image * (t[have] - mesh.vertices[have])
    else:
        t = np.full_like(mesh.vertices, np.nan)
    if not np.isfinite(f).all():
        raise GeometryError("non-finite balloon force (parameter blow-up)")
    normals = mesh.vertex_normals()
    f = np.einsum("ij,ij->i", f, normals)[:, None] * normals
    vel = (params.dt / params.mass) * f
    pos = mesh.vertices + params.dt * vel
    out = BalloonMesh(pos, vel, mesh.faces, t)
    cached = getattr(mesh, "_edges", None)
    if cached is not None:  # same faces, same edges
        object.__setattr__(out, "_edges", cached)
    return out


def refine(mesh: BalloonMesh, params: BalloonParams,
           max_rounds: int = 10) -> BalloonMesh:
    """Split edges longer than the trigger at their midpoints.

    Longest edges go first; each batch splits a face at most once so the
    two incident triangles of a split edge are rebuilt consistently and no
    T-junctions appear.  At most ``max_rounds`` batches run per call
    (repeated application reaches the all-edges-short fixpoint).
    """
    verts = mesh.vertices
    vels = mesh.velocities
    targets = mesh.targets
    faces = mesh.faces

    for _ in range(max_rounds):
        if len(verts) >= params.max_vertices:
            break
        e = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        lengths = np.linalg.norm(verts[e[:, 0]] - verts[e[:, 1]], axis=1)
        long = lengths > params.max_edge_length
        if not long.any():
            break
        order = np.lexsort((e[:, 1], e[:, 0], -lengths))
        order = order[long[order]]

        # face lookup for the current topology
        face_of = {}
        for fi, (a, b, c) in enumerate(faces):
            for u, v in ((a, b), (b, c), (c, a)):
                face_of.setdefault((u, v) if u < v else (v, u), []).append(fi)

        used_faces = set()
        batch = []
        for ei in order:
            a, b = int(e[ei, 0]), int(e[ei, 1])
            incident = face_of[(a, b)]
            if any(fi in used_faces for fi in incident):
                continue
            used_faces.update(incident)
            batch.append((a, b, incident))
        if not batch:  # every long edge conflicted; retry next round
            batch = [(int(e[order[0], 0]), int(e[order[0], 1]),
                      face_of[(int(e[order[0], 0]), int(e[order[0], 1]))])]
            used_faces = set(batch[0][2])

        new_verts, new_vels, new_targets = [verts], [vels], [targets]
        next_id = len(verts)
        replaced = {}
        added_faces = []
        for a, b, incident in batch:
            mid = next_id
            next_id += 1
            new_verts.append(0.5 * (verts[a] + verts[b]))
            new_vels.append(0.5 * (vels[a] + vels[b]))
            new_targets.append(np.full((1, 3), np.nan))
            for fi in incident:
                x, y, z = faces[fi]
                tri = [int(x), int(y), int(z)]
                # directed edge (u -> v) matching {a, b} keeps the winding
                for k in range(3):
                    u, v = tri[k], tri[(k + 1) % 3]
                    if {u, v} == {a, b}:
                        w = tri[(k + 2) % 3]
                        replaced[fi] = True
                        added_faces.append((u, mid, w))
                        added_faces.append((mid, v, w))
                        break

        keep = np.ones(len(faces), bool)
        keep[list(replaced)] = False
        faces = np.vstack([faces[keep], np.array(added_faces, dtype=np.intp)])
        verts = np.vstack([new_verts[0]] + [v.reshape(1, 3) for v in new_verts[1:]])
        vels = np.vstack([new_vels[0]] + [v.reshape(1, 3) for v in new_vels[1:]])
        targets = np.vstack([new_targets[0]] + list(new_targets[1:]))

    out = BalloonMesh(verts, vels, faces, targets)
    out.validate()
    return out


# ---------------------------------------------------------------------------
# full balloon run and rasterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BalloonResult:
    mesh: BalloonMesh
    converged: bool
    diverged: bool
    iterations: int
    energy_history: tuple = field(repr=False, default=())

    def summary(self):
        s = self.mesh.summary()
        s.update({"converged": bool(self.converged),
                  "iterations": int(self.iterations)})
        return s


def run_balloon(vol: Volume, region, seed_center, params: BalloonParams,
                init_radius=8.0, subdivisions=2) -> BalloonResult:
    """Inflate a balloon from the seed to the cortical boundary.

    Loop: normals -> profiles -> edge targets (targets outside the search
    region discarded) -> dynamics step -> adaptive refinement, until the
    mean vertex displacement falls below the convergence threshold or the
    iteration budget runs out (reported on the result, mesh still usable).
    """
    seed = np.asarray(seed_center, dtype=np.float64)
    if not region.contains(seed):
        raise GeometryError("seed must lie inside the search region")
    mesh = init_balloon(seed, init_radius, subdivisions)
    slack = 0.5 * params.profile_length
    energy = []
    converged = diverged = False
    window = 5  # drift window: filters sub-voxel target jitter
    snapshot, snapshot_it = None, 0
    it = 0
    for it in range(1, params.max_iterations + 1):
        normals = mesh.vertex_normals()
        ts = params.profile_offsets()
        pts = mesh.vertices[:, None, :] + ts[None, :, None] * normals[:, None, :]
        profiles = vol.sample_trilinear(pts.reshape(-1, 3)).reshape(len(normals),
                                                                    len(ts))
        offsets = _edge_targets_batch(profiles, params)
        targets = mesh.vertices + offsets[:, None] * normals
        have = ~np.isnan(offsets)
        if have.any():
            inside = np.zeros_like(have)
            inside[have] = region.contains(targets[have])
            targets[~(have & inside)] = np.nan
        else:
            targets[:] = np.nan

        stepped = step_dynamics(mesh, targets, params)
        energy.append(stepped.spring_energy(params.k_smooth))
        if not np.isfinite(stepped.vertices).all():
            diverged = True
            mesh = stepped
            break
        if not region.contains(stepped.vertices, slack=slack).all():
            diverged = True  # leak guard: surface escaped the constraint box
            mesh = stepped
            break
        if it % params.refine_interval == 0:
            mesh = refine(stepped, params)
        else:
            mesh = stepped
        if snapshot is not None and len(snapshot) == mesh.n_vertices:
            steps = it - snapshot_it
            drift = float(np.linalg.norm(mesh.vertices - snapshot,
                                         axis=1).mean()) / steps
            if steps >= window and drift < params.convergence_tol:
                converged = True
                break
        if snapshot is None or it - snapshot_it >= window \
                or (snapshot is not None and len(snapshot) != mesh.n_vertices):
            snapshot, snapshot_it = mesh.vertices.copy(), it
    return BalloonResult(mesh, converged, diverged, it, tuple(energy))


def voxelize_closed_mesh(mesh: BalloonMesh, geom):
    """Rasterize a closed mesh into (surface, interior) masks.

    The interior test is scanline parity per voxel row; the surface mask
    marks every voxel hit by densely sampled triangle points (sampling
    pitch under half the smallest voxel side).
    """
    if not mesh.is_closed():
        raise GeometryError("mesh must be closed for voxelization")
    dims, spacing, origin = geom.dims, geom.spacing, geom.origin
    xs = origin[0] + np.arange(dims[0]) * spacing[0]
    ys = origin[1] + np.arange(dims[1]) * spacing[1]
    zs = origin[2] + np.arange(dims[2]) * spacing[2]

    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)

    # interior: parity of boundary crossings along +x, per (y, z) row
    interior = np.zeros(dims, bool)
    tz = tri[:, :, 2]
    zmin, zmax = tz.min(axis=1), tz.max(axis=1)
    for iz, zc in enumerate(zs):
        cand = np.flatnonzero((zmin <= zc) & (zmax >= zc))
        if cand.size == 0:
            continue
        segs = []
        for fi in cand:
            pts = []
            t3 = tri[fi]
            for a in range(3):
                p, q = t3[a], t3[(a + 1) % 3]
                if (p[2] <= zc) != (q[2] <= zc):
                    f = (zc - p[2]) / (q[2] - p[2])
                    pts.append(p[:2] + f * (q[:2] - p[:2]))
            if len(pts) == 2:
                segs.append((pts[0], pts[1]))
        if not segs:
            continue
        crossings = np.zeros((dims[1], dims[0] + 1), np.int64)
        for (x0, y0), (x1, y1) in segs:
            lo, hi = (y0, y1) if y0 <= y1 else (y1, y0)
            jy = np.flatnonzero((ys > lo) & (ys <= hi))
            if jy.size == 0:
                continue
            f = (ys[jy] - y0) / (y1 - y0)
            xc = x0 + f * (x1 - x0)
            ix = np.searchsorted(xs, xc)
            np.add.at(crossings, (jy, ix), 1)
        parity = np.cumsum(crossings[:, :-1], axis=1) % 2
        interior[:, :, iz] = parity.T.astype(bool)

    # surface: voxels hit by dense triangle sampling
    surface = np.zeros(dims, bool)
    pitch = 0.4 * min(spacing)
    for t3 in tri:
        e1, e2 = t3[1] - t3[0], t3[2] - t3[0]
        n = max(1, int(np.ceil(max(np.linalg.norm(e1), np.linalg.norm(e2))
                               / pitch)))
        f = np.arange(n + 1) / n
        a, b = np.meshgrid(f, f, indexing="ij")
        keep = a + b <= 1.0 + 1e-12
        pts = t3[0] + a[keep, None] * e1 + b[keep, None] * e2
        idx = np.round((pts - np.asarray(origin)) / np.asarray(spacing)).astype(int)
        ok = ((idx >= 0) & (idx < np.asarray(dims))).all(axis=1)
        idx = idx[ok]
        surface[idx[:, 0], idx[:, 1], idx[:, 2]] = True

    return (Mask(dims, spacing, origin, surface),
            Mask(dims, spacing, origin, interior))
