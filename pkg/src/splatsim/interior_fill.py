"""Volumetric interior filling: synthesize subsurface Gaussians under a slope.

Candidate centers are seeded on a uniform grid inside the fill box, kept when
they sit strictly below the surface mesh, and sized from their distance d to
the nearest surface point: activated scales (d, 1.5 d, 2 d). The short axis is
oriented toward the nearest surface point, color is copied from the nearest
surface Gaussian's DC term, and all higher-order SH coefficients are dropped
so the fill has no view-dependent color to smear during motion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splatsim import _kernels
from splatsim.errors import ConfigError, EmptySurfaceError, MeshFormatError
from splatsim.gaussian_scene import N_SH_REST, Scene

log = logging.getLogger(__name__)

# sigmoid(FILL_OPACITY_LOGIT) == 0.99: filled material reads as solid.
FILL_OPACITY = 0.99
FILL_OPACITY_LOGIT = math.log(FILL_OPACITY / (1.0 - FILL_OPACITY))

# Cyclic axis relabeling (x->z, y->x, z->y), so that composing with the
# smallest rotation taking z to the surface direction lands the FIRST local
# axis (the short one) on that direction.
_CYCLE = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])


@dataclass
class FillDomain:
    """Axis-aligned fill box; the mesh provides the top boundary."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    h_fill: float  # seed grid pitch, meters

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError(f"degenerate fill footprint: {self}")
        if not self.h_fill > 0:
            raise ConfigError(f"h_fill must be positive, got {self.h_fill}")


class SurfaceMesh:
    """Triangle mesh used as the fill's top boundary."""

    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshFormatError("triangle index out of range")
        self._drop_degenerate()

    def _drop_degenerate(self):
        if not len(self.triangles):
            return
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
        keep = area2 > 0.0
        if not keep.all():
            self.triangles = self.triangles[keep]

    def corners(self):
        return self.vertices[self.triangles[:, 0]], \
            self.vertices[self.triangles[:, 1]], \
            self.vertices[self.triangles[:, 2]]

    def max_z(self):
        return float(self.vertices[:, 2].max())

    def transformed(self, rot=None, offset=None):
        v = self.vertices
        if rot is not None:
            v = v @ np.asarray(rot, dtype=np.float64).T
        if offset is not None:
            v = v + np.asarray(offset, dtype=np.float64)
        return SurfaceMesh(v, self.triangles)


def load_obj(text) -> SurfaceMesh:
    """Parse an ASCII OBJ (v/f records); polygons are fan-triangulated."""
    vertices = []
    faces = []
    for lineno, line in enumerate(str(text).splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                i = int(head)
                # OBJ indices are 1-based; negative counts from the end.
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            if len(idx) < 3:
                raise MeshFormatError(f"line {lineno}: face needs at least 3 vertices")
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
        # all other record types (vn, vt, o, g, usemtl, ...) are ignored
    return SurfaceMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                       np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_obj_file(path) -> SurfaceMesh:
    with open(path) as f:
        return load_obj(f.read())


def heightfield_surface(scene: Scene, cell) -> SurfaceMesh:
    """Upper-envelope heightfield mesh over the scene's Gaussian centers.

    Grid nodes over the centers' (x, y) bounding box take the maximum center
    z within half a cell; empty nodes copy their nearest occupied node; each
    cell becomes two triangles. This is the built-in fallback when no
    externally reconstructed mesh is supplied.
    """
    if len(scene) == 0:
        raise EmptySurfaceError("cannot build a heightfield from an empty scene")
    if not cell > 0:
        raise ConfigError(f"heightfield cell must be positive, got {cell}")
    centers = scene.centers
    x0, y0 = centers[:, 0].min(), centers[:, 1].min()
    nx = max(1, int(math.ceil((centers[:, 0].max() - x0) / cell)))
    ny = max(1, int(math.ceil((centers[:, 1].max() - y0) / cell)))

    ix = np.clip(np.rint((centers[:, 0] - x0) / cell).astype(np.int64), 0, nx)
    iy = np.clip(np.rint((centers[:, 1] - y0) / cell).astype(np.int64), 0, ny)
    height = np.full((nx + 1, ny + 1), -np.inf)
    np.maximum.at(height, (ix, iy), centers[:, 2])

    filled = np.isfinite(height)
    if not filled.all():
        gx, gy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
        occupied = np.stack([gx[filled], gy[filled]], axis=1)
        tree = cKDTree(occupied)
        empty = np.stack([gx[~filled], gy[~filled]], axis=1)
        _, nrst = tree.query(empty)
        height[~filled] = height[filled][nrst]

    gx, gy = np.meshgrid(x0 + cell * np.arange(nx + 1),
                         y0 + cell * np.arange(ny + 1), indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), height.ravel()], axis=1)

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00 = i * (ny + 1) + j
            v10 = (i + 1) * (ny + 1) + j
            v11 = (i + 1) * (ny + 1) + j + 1
            v01 = i * (ny + 1) + j + 1
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    return SurfaceMesh(vertices, np.array(tris, dtype=np.int64))


def nearest_surface_distance(p, mesh: SurfaceMesh, backend="auto"):
    """Exact distance from one point to the mesh, with the witness point."""
    if len(mesh.triangles) == 0:
        raise EmptySurfaceError("mesh has no triangles")
    d, q = nearest_surface_distances(np.asarray(p, dtype=np.float64).reshape(1, 3),
                                     mesh, backend=backend)
    return float(d[0]), q[0]


def nearest_surface_distances(points, mesh: SurfaceMesh, backend="auto"):
    """Batched exact point-to-mesh distances (d (P,), witness q (P,3))."""
    if len(mesh.triangles) == 0:
        raise EmptySurfaceError("mesh has no triangles")
    kern = _kernels.resolve(backend)
    a, b, c = mesh.corners()
    return kern.point_triangle_distances(np.asarray(points, dtype=np.float64), a, b, c)


def surface_height_at(mesh: SurfaceMesh, xy, chunk=1024):
    """Vertical-ray surface height at (x, y) columns; NaN where uncovered.

    Heights are the upper envelope (maximum intersection z) over all triangles
    whose (x, y) projection contains the query column.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    a, b, c = mesh.corners()
    ax, ay = a[:, 0], a[:, 1]
    e0 = b[:, :2] - a[:, :2]
    e1 = c[:, :2] - a[:, :2]
    det = e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0]   # (T,)
    ok = det != 0.0
    out = np.full(len(xy), np.nan)
    # Small tolerance so columns exactly on shared triangle edges count.
    tol = 1e-12
    for s in range(0, len(xy), chunk):
        q = xy[s:s + chunk]
        dx = q[:, 0:1] - ax[None, :]                  # (C,T)
        dy = q[:, 1:2] - ay[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            su = (dx * e1[:, 1] - dy * e1[:, 0]) / det
            sv = (dy * e0[:, 0] - dx * e0[:, 1]) / det
        inside = ok & (su >= -tol) & (sv >= -tol) & (su + sv <= 1.0 + tol)
        z = a[:, 2] + su * (b[:, 2] - a[:, 2]) + sv * (c[:, 2] - a[:, 2])
        z = np.where(inside, z, -np.inf)
        top = z.max(axis=1)
        out[s:s + chunk] = np.where(np.isfinite(top), top, np.nan)
    return out


def _quat_multiply(q1, q2):
    w1, x1, y1, z1 = q1[:, 0], q1[:, 1], q1[:, 2], q1[:, 3]
    w2, x2, y2, z2 = q2[0], q2[1], q2[2], q2[3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=1,
    )


# Quaternion of _CYCLE: rotation by 120 degrees about (1,1,1)/sqrt(3) mapping
# x -> z -> y -> x.
_CYCLE_QUAT = np.array([0.5, -0.5, -0.5, -0.5])


def _orientation_quats(directions):
    """Quaternions whose rotation sends local axis 0 to each unit direction.

    Built as (smallest rotation taking z to the direction) composed with the
    fixed cyclic relabeling that brings local x onto z.
    """
    u = np.asarray(directions, dtype=np.float64)
    n = len(u)
    align = np.empty((n, 4))
    w = 1.0 + u[:, 2]
    degenerate = w < 1e-12            # direction ~ -z: take a 180 deg turn about x
    align[:, 0] = w
    align[:, 1] = -u[:, 1]
    align[:, 2] = u[:, 0]
    align[:, 3] = 0.0
    align[degenerate] = [0.0, 1.0, 0.0, 0.0]
    align /= np.linalg.norm(align, axis=1, keepdims=True)
    q = _quat_multiply(align, _CYCLE_QUAT)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def fill_interior(scene: Scene, mesh: SurfaceMesh, dom: FillDomain,
                  backend="auto") -> Scene:
    """Generate interior Gaussians below `mesh` inside `dom`.

    Deterministic: seeds are visited in lexicographic (x, y, z) grid order and
    the output preserves that order. Returns only the filled Gaussians.
    """
    if len(mesh.triangles) == 0:
        raise EmptySurfaceError("mesh has no triangles")
    nx = int(math.floor((dom.x_max - dom.x_min) / dom.h_fill + 1e-9)) + 1
    ny = int(math.floor((dom.y_max - dom.y_min) / dom.h_fill + 1e-9)) + 1
    z_top = mesh.max_z()
    nz = int(math.floor((z_top - dom.z_min) / dom.h_fill + 1e-9)) + 1
    if nz <= 0:
        log.warning("fill domain lies entirely above the surface; nothing to fill")
        return Scene.empty(frame=scene.frame)

    xs = dom.x_min + dom.h_fill * np.arange(nx)
    ys = dom.y_min + dom.h_fill * np.arange(ny)
    zs = dom.z_min + dom.h_fill * np.arange(nz)

    # Column surface heights once per (x, y), not per seed.
    cols = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    col_z = surface_height_at(mesh, cols).reshape(nx, ny)

    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)  # lexicographic
    below = pts[:, 2] < np.repeat(col_z.ravel(), nz)              # strict; NaN -> False
    pts = pts[below]
    if len(pts) == 0:
        log.warning("no seed points fell below the surface; empty fill")
        return Scene.empty(frame=scene.frame)

    d, q = nearest_surface_distances(pts, mesh, backend=backend)
    positive = d > 0.0
    if not positive.all():
        log.warning("dropping %d seeds touching the surface", int((~positive).sum()))
        pts, d, q = pts[positive], d[positive], q[positive]
    if len(pts) == 0:
        log.warning("no interior points with positive surface distance; empty fill")
        return Scene.empty(frame=scene.frame)

    scales = np.stack([d, 1.5 * d, 2.0 * d], axis=1)
    directions = (q - pts) / d[:, None]
    rotations = _orientation_quats(directions)

    if len(scene) == 0:
        sh_dc = np.zeros((len(pts), 3))
    else:
        tree = cKDTree(scene.centers)
        _, nearest = tree.query(pts)
        sh_dc = scene.sh_dc[nearest]

    return Scene(
        centers=pts,
        log_scales=np.log(scales),
        rotations=rotations,
        opacity_logits=np.full(len(pts), FILL_OPACITY_LOGIT),
        sh_dc=sh_dc,
        sh_rest=np.zeros((len(pts), N_SH_REST)),
        frame=scene.frame,
    )
