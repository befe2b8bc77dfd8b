"""Forward splat rasterizer: project, depth-sort, alpha-composite.

Gaussians are projected to 2D with the local-affine (Jacobian) approximation,
sorted front to back by camera depth with ties broken by scene order, and
composited per pixel with C = sum_i T_i a_i c_i, T_i = prod_{j<i} (1 - a_j),
plus the remaining transmittance times the background. The image can be
rendered as one block or in tiles; per-pixel arithmetic is identical either
way, so tiled and untiled outputs match pixel for pixel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from splatsim import _kernels
from splatsim.errors import CheckpointError
from splatsim.gaussian_scene import SH_C0, Scene, covariance
from splatsim.mpm import checkpoints as ckpt
from splatsim.mpm.types import SOURCE_NONE
from splatsim.render.camera import Camera, Frame
from splatsim.render.image_io import write_png, write_ppm

log = logging.getLogger(__name__)

DEFAULT_COV_FLOOR = 0.3       # pixels^2 low-pass floor added to 2D covariance
DEFAULT_ALPHA_CUTOFF = 1.0 / 255.0
DEFAULT_RADIUS_SIGMA = 3.0    # splat bounding-box extent in standard deviations

# Real SH basis constants for degrees 1..3 (standard 3DGS ordering).
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)
_SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
          0.3731763325901154, -0.4570457994644658, 1.445305721320277,
          -0.5900435899266435)


def project_gaussian(g, cam: Camera, cov_floor=DEFAULT_COV_FLOOR):
    """Project one Gaussian; returns (mean2d, cov2d, depth) or None if culled."""
    rot, t = cam.world_to_camera()
    xc = rot @ g.center + t
    if xc[2] <= cam.near:
        return None
    mean2d, cov2d, _ = _project_arrays(
        xc[None], covariance(g)[None], rot, cam, cov_floor)
    return mean2d[0], cov2d[0], float(xc[2])


def _project_arrays(xc, cov_world, rot, cam, cov_floor=DEFAULT_COV_FLOOR):
    """Vectorized projection of camera-space centers and world covariances."""
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    inv_z = 1.0 / z
    mean2d = np.stack([cam.fx * x * inv_z + cam.cx,
                       cam.fy * y * inv_z + cam.cy], axis=1)
    # Perspective Jacobian rows: [fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2].
    j = np.zeros((len(xc), 2, 3))
    j[:, 0, 0] = cam.fx * inv_z
    j[:, 0, 2] = -cam.fx * x * inv_z * inv_z
    j[:, 1, 1] = cam.fy * inv_z
    j[:, 1, 2] = -cam.fy * y * inv_z * inv_z
    jw = np.einsum("nij,jk->nik", j, rot)
    cov2d = np.einsum("nij,njk,nlk->nil", jw, cov_world, jw)
    cov2d[:, 0, 0] += cov_floor
    cov2d[:, 1, 1] += cov_floor
    return mean2d, cov2d, z


def eval_sh(dc, rest, dirs, degree):
    """View-dependent color from SH coefficients along unit directions.

    `rest` is (N, 45) channel-major (15 per channel) as stored in splat PLYs.
    Degree 0 reduces to the DC base color.
    """
    color = 0.5 + SH_C0 * dc
    if degree == 0:
        return np.clip(color, 0.0, 1.0)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = [-_SH_C1 * y, _SH_C1 * z, -_SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        basis += [
            _SH_C2[0] * xy, _SH_C2[1] * yz, _SH_C2[2] * (2.0 * zz - xx - yy),
            _SH_C2[3] * xz, _SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        basis += [
            _SH_C3[0] * y * (3.0 * xx - yy), _SH_C3[1] * xy * z,
            _SH_C3[2] * y * (4.0 * zz - xx - yy),
            _SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            _SH_C3[4] * x * (4.0 * zz - xx - yy),
            _SH_C3[5] * z * (xx - yy), _SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    k = len(basis)
    b = np.stack(basis, axis=1)                       # (N, k)
    rest3 = rest.reshape(len(rest), 3, 15)            # channel-major
    color = color + np.einsum("nk,nck->nc", b, rest3[:, :, :k])
    return np.clip(color, 0.0, 1.0)


def render(scene: Scene, cam: Camera, background=(0.0, 0.0, 0.0), *,
           backend="auto", tile_size=None, threads=1, sh_degree=0,
           alpha_cutoff=DEFAULT_ALPHA_CUTOFF, cov_floor=DEFAULT_COV_FLOOR,
           radius_sigma=DEFAULT_RADIUS_SIGMA, return_buffers=False):
    """Rasterize the scene into a Frame.

    With `tile_size` set, the image is composited tile by tile (optionally in
    `threads` parallel workers over disjoint tiles); output is pixel-identical
    to the untiled render. `return_buffers` additionally returns the float
    color, accumulated alpha weight, residual transmittance, and stats.
    """
    background = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    color = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    weight = np.zeros((h, w))
    stats = {"n_gaussians": len(scene), "n_culled": 0, "n_skipped": 0, "n_drawn": 0}

    if len(scene) > 0:
        rot, t = cam.world_to_camera()
        xc = scene.centers @ rot.T + t
        visible = xc[:, 2] > cam.near
        stats["n_culled"] = int((~visible).sum())
        if np.any(visible):
            idx_vis = np.nonzero(visible)[0]
            mean2d, cov2d, depth = _project_arrays(
                xc[visible], scene.covariances()[visible], rot, cam, cov_floor)
            # Canonical order: ascending depth, scene order on ties.
            order = np.lexsort((idx_vis, depth))
            mean2d, cov2d, depth = mean2d[order], cov2d[order], depth[order]
            idx_sorted = idx_vis[order]

            a = cov2d[:, 0, 0]
            b = cov2d[:, 0, 1]
            c = cov2d[:, 1, 1]
            det = a * c - b * b
            ok = np.isfinite(det) & (det > 0.0)
            stats["n_skipped"] = int((~ok).sum())
            inv = np.zeros((len(det), 3))
            inv[ok, 0] = c[ok] / det[ok]
            inv[ok, 1] = -b[ok] / det[ok]
            inv[ok, 2] = a[ok] / det[ok]

            alpha0 = scene.activated_opacities()[idx_sorted]
            if sh_degree > 0:
                dirs = scene.centers[idx_sorted] - cam.center()
                dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
                rgb = eval_sh(scene.sh_dc[idx_sorted], scene.sh_rest[idx_sorted],
                              dirs, sh_degree)
            else:
                rgb = scene.base_colors()[idx_sorted]

            eig_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
            radius = radius_sigma * np.sqrt(np.maximum(eig_max, 0.0))
            xlo = np.maximum(np.ceil(mean2d[:, 0] - radius), 0.0).astype(np.int64)
            xhi = np.minimum(np.floor(mean2d[:, 0] + radius), w - 1.0).astype(np.int64) + 1
            ylo = np.maximum(np.ceil(mean2d[:, 1] - radius), 0.0).astype(np.int64)
            yhi = np.minimum(np.floor(mean2d[:, 1] + radius), h - 1.0).astype(np.int64) + 1
            drawable = ok & (xlo < xhi) & (ylo < yhi)
            xhi = np.where(drawable, xhi, xlo)
            yhi = np.where(drawable, yhi, ylo)
            stats["n_drawn"] = int(drawable.sum())

            kern = _kernels.resolve(backend)
            tiles = _tiles(w, h, tile_size)

            def do_tile(rect):
                tx0, ty0, tx1, ty1 = rect
                sub = (slice(ty0, ty1), slice(tx0, tx1))
                kern.composite(
                    mean2d, inv, alpha0, np.ascontiguousarray(rgb),
                    np.maximum(xlo, tx0), np.minimum(xhi, tx1),
                    np.maximum(ylo, ty0), np.minimum(yhi, ty1),
                    tx0, ty0, color[sub], trans[sub], weight[sub], alpha_cutoff)

            if threads > 1 and len(tiles) > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    list(pool.map(do_tile, tiles))
            else:
                for rect in tiles:
                    do_tile(rect)

    final = color + trans[..., None] * background
    pixels = np.clip(np.rint(final * 255.0), 0, 255).astype(np.uint8)
    frame = Frame(pixels=pixels, background=background)
    if return_buffers:
        return frame, {"color": final, "weight": weight, "transmittance": trans,
                       "stats": stats}
    return frame


def _tiles(w, h, tile_size):
    if not tile_size:
        return [(0, 0, w, h)]
    ts = int(tile_size)
    rects = []
    for ty in range(0, h, ts):
        for tx in range(0, w, ts):
            rects.append((tx, ty, min(tx + ts, w), min(ty + ts, h)))
    return rects


def scene_with_checkpoint(scene: Scene, x, source, label="checkpoint"):
    """Scene with Gaussian centers replaced by checkpoint particle positions."""
    source = np.asarray(source)
    valid = source != SOURCE_NONE
    if np.any(source[valid] >= len(scene)):
        bad = int(source[valid].max())
        raise CheckpointError(
            f"{label}: source index {bad} does not resolve into a scene of "
            f"{len(scene)} Gaussians")
    centers = scene.centers.copy()
    centers[source[valid].astype(np.int64)] = x[valid]
    return scene.with_centers(centers)


def render_sequence(entries, scene: Scene, cam: Camera, out_dir,
                    background=(0.0, 0.0, 0.0), stride=1, png=False, **render_kw):
    """Render one frame per checkpoint entry (every `stride`-th), numbered
    frame_000000.ppm onward. Entries may carry in-memory arrays or file names
    relative to the checkpoint directory (as produced by mpm.run).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, entry in enumerate(list(entries)[::max(1, int(stride))]):
        if "x" in entry:
            x, source = entry["x"], entry["source"]
            label = f"checkpoint step {entry.get('step', '?')}"
        else:
            path = entry["path"] if "path" in entry else entry["file"]
            _, x, _, source = ckpt.read_checkpoint(path)
            label = str(path)
        posed = scene_with_checkpoint(scene, x, source, label=label)
        frame = render(posed, cam, background, **render_kw)
        name = out_dir / f"frame_{k:06d}.ppm"
        write_ppm(name, frame.pixels)
        written.append(name)
        if png:
            write_png(name.with_suffix(".png"), frame.pixels)
    return written
