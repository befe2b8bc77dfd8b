"""Pure-numpy implementations of the hot kernels.

These are the import-time fallback when the compiled extension is missing and
the reference the native kernels are checked against. Everything here is
deterministic: scatter uses bincount and reductions use fixed-order einsum, so
repeated runs are bit-identical.

Grid convention (shared with the native module): nodes are indexed
(ix, iy, iz) with flat id (ix * ny + iy) * nz + iz; node (0,0,0) sits at
`origin` and spacing is dx. Particle stencils are quadratic B-splines over
3x3x3 nodes starting at base = floor((x - origin)/dx - 0.5).
"""

import numpy as np

IS_NATIVE = False

_OFFSETS = np.array([(i, j, k) for i in range(3) for j in range(3) for k in range(3)],
                    dtype=np.int64)  # (27, 3)


def bspline_parts(x, origin, inv_dx):
    """Per-axis quadratic B-spline pieces for particle positions.

    Returns (base, w, dw): base (N,3) int64 stencil start node, w and dw
    (N,3,3) with [particle, axis, offset]; dw is already scaled by 1/dx.
    """
    xi = (np.asarray(x, dtype=np.float64) - origin) * inv_dx
    base = np.floor(xi - 0.5).astype(np.int64)
    fx = xi - base  # in [0.5, 1.5]
    w = np.empty(fx.shape + (3,))
    dw = np.empty_like(w)
    w[..., 0] = 0.5 * (1.5 - fx) ** 2
    w[..., 1] = 0.75 - (fx - 1.0) ** 2
    w[..., 2] = 0.5 * (fx - 0.5) ** 2
    dw[..., 0] = (fx - 1.5) * inv_dx
    dw[..., 1] = -2.0 * (fx - 1.0) * inv_dx
    dw[..., 2] = (fx - 0.5) * inv_dx
    return base, w, dw


def _stencil(x, origin, inv_dx, dims):
    """Flat node ids (N,27), weights (N,27) and gradients (N,27,3)."""
    base, w, dw = bspline_parts(x, origin, inv_dx)
    nodes = base[:, None, :] + _OFFSETS[None, :, :]  # (N,27,3)
    ids = (nodes[..., 0] * dims[1] + nodes[..., 1]) * dims[2] + nodes[..., 2]
    wx = w[:, 0, _OFFSETS[:, 0]]
    wy = w[:, 1, _OFFSETS[:, 1]]
    wz = w[:, 2, _OFFSETS[:, 2]]
    weights = wx * wy * wz
    grads = np.empty(weights.shape + (3,))
    grads[..., 0] = dw[:, 0, _OFFSETS[:, 0]] * wy * wz
    grads[..., 1] = wx * dw[:, 1, _OFFSETS[:, 1]] * wz
    grads[..., 2] = wx * wy * dw[:, 2, _OFFSETS[:, 2]]
    return ids, weights, grads


def stress_tau(fe, mu, lam):
    """Kirchhoff stress of Hencky elasticity, batched over particles.

    Returns (tau (N,3,3), jdet (N,), bad) where bad is the index of the first
    particle with a non-invertible elastic gradient, or -1.
    """
    fe = np.asarray(fe, dtype=np.float64)
    with np.errstate(invalid="ignore"):  # NaN states are reported, not raised
        jdet = np.linalg.det(fe)
    if np.any(jdet <= 0.0) or not np.all(np.isfinite(jdet)):
        good = (jdet > 0.0) & np.isfinite(jdet)
        return None, None, int(np.nonzero(~good)[0][0])
    u, s, vh = np.linalg.svd(fe)
    eps = np.log(s)
    tr = eps.sum(axis=1)
    diag = 2.0 * mu * eps + lam * tr[:, None]
    tau = np.einsum("nik,nk,njk->nij", u, diag, u)
    return tau, jdet, -1


def p2g(x, v, m, tau_vol, origin, inv_dx, dims):
    """Scatter mass, momentum, and internal-force contributions to the grid.

    tau_vol is V0_p * tau_p per particle; the internal force on a node is
    -sum_p tau_vol_p grad_w. Returns (mass (nn,), momentum (nn,3),
    force (nn,3)) as flat node arrays.
    """
    nn = int(dims[0] * dims[1] * dims[2])
    ids, weights, grads = _stencil(x, origin, inv_dx, dims)
    flat = ids.ravel()
    wm = weights * m[:, None]
    mass = np.bincount(flat, weights=wm.ravel(), minlength=nn)
    mom = np.empty((nn, 3))
    for c in range(3):
        mom[:, c] = np.bincount(flat, weights=(wm * v[:, c:c + 1]).ravel(), minlength=nn)
    force = np.zeros((nn, 3))
    if tau_vol is not None:
        fcontrib = -np.einsum("nab,nob->noa", tau_vol, grads)
        for c in range(3):
            force[:, c] = np.bincount(flat, weights=fcontrib[..., c].ravel(), minlength=nn)
    return mass, mom, force


def sand_project(eps, mu, lam, alpha):
    """Drucker-Prager return mapping in principal Hencky-strain space.

    eps is (N,3) trial strain. Returns (eps_new, changed mask). Tensile
    volumetric states go to the cone apex; states outside the cone are
    projected along the deviatoric direction; everything else is untouched.
    """
    eps = np.asarray(eps, dtype=np.float64)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    en = np.linalg.norm(dev, axis=1)
    apex = tr > 0.0
    dgamma = en + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr
    cone = (~apex) & (en > 0.0) & (dgamma > 0.0)
    eps_new = eps.copy()
    eps_new[apex] = 0.0
    scale = np.zeros_like(en)
    scale[cone] = dgamma[cone] / en[cone]
    eps_new[cone] = eps[cone] - scale[cone, None] * dev[cone]
    return eps_new, apex | cone


def g2p(x, v, fe, fp, grid_v, origin, inv_dx, dims, dt,
        mu, lam, alpha, plastic, lo, hi, escaped):
    """Gather grid velocities back to particles and update their state.

    In place: velocity (PIC), position, elastic gradient (velocity-gradient
    increment, then plastic projection when `plastic`), plastic gradient.
    Positions leaving [lo, hi] are clamped and flagged in `escaped`.
    Returns the index of the first particle with NaN state, or -1.
    """
    ids, weights, grads = _stencil(x, origin, inv_dx, dims)
    vg = grid_v[ids]                                   # (N,27,3)
    v_new = np.einsum("no,noa->na", weights, vg)
    grad_v = np.einsum("noa,nob->nab", vg, grads)      # (N,3,3)

    v[:] = v_new
    x += dt * v_new
    out = (x < lo) | (x > hi)
    if np.any(out):
        escaped |= np.any(out, axis=1)
        np.clip(x, lo, hi, out=x)

    ident = np.eye(3)
    fe_trial = np.matmul(ident + dt * grad_v, fe)
    if plastic:
        with np.errstate(invalid="ignore"):
            jdet = np.linalg.det(fe_trial)
        if np.any(jdet <= 0.0) or not np.all(np.isfinite(jdet)):
            good = (jdet > 0.0) & np.isfinite(jdet)
            bad = int(np.nonzero(~good)[0][0])
            fe[:] = fe_trial
            return bad
        u, s, vh = np.linalg.svd(fe_trial)
        eps = np.log(s)
        eps_new, changed = sand_project(eps, mu, lam, alpha)
        fe[:] = fe_trial
        if np.any(changed):
            idx = np.nonzero(changed)[0]
            rec = np.einsum("nik,nk,nkj->nij", u[idx], np.exp(eps_new[idx]), vh[idx])
            fe[idx] = rec
            # Absorb the removed strain into the plastic part so FE FP stays
            # equal to the trial total: FP <- V exp(eps - eps_new) V^T FP.
            vmat = np.swapaxes(vh[idx], 1, 2)
            dexp = np.exp(eps[idx] - eps_new[idx])
            pmat = np.einsum("nik,nk,njk->nij", vmat, dexp, vmat)
            fp[idx] = np.matmul(pmat, fp[idx])
    else:
        fe[:] = fe_trial

    bad = ~(np.isfinite(v).all(axis=1) & np.isfinite(x).all(axis=1)
            & np.isfinite(fe).all(axis=(1, 2)))
    if np.any(bad):
        return int(np.nonzero(bad)[0][0])
    return -1


def point_triangle_distances(points, ta, tb, tc, chunk=128):
    """Exact minimum distance from each point to a triangle soup.

    Returns (d (P,), q (P,3) witness points). The closest point on a triangle
    is either the interior projection onto its plane or lies on one of the
    three edges, so the minimum over those four candidates is exact.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ta = np.asarray(ta, dtype=np.float64)
    tb = np.asarray(tb, dtype=np.float64)
    tc = np.asarray(tc, dtype=np.float64)
    n_pts = len(points)
    best_d2 = np.full(n_pts, np.inf)
    best_q = np.zeros((n_pts, 3))

    e0 = tb - ta                       # (T,3)
    e1 = tc - ta
    normal = np.cross(e0, e1)
    nn = np.einsum("td,td->t", normal, normal)
    dot00 = np.einsum("td,td->t", e0, e0)
    dot01 = np.einsum("td,td->t", e0, e1)
    dot11 = np.einsum("td,td->t", e1, e1)
    denom = dot00 * dot11 - dot01 * dot01             # (T,)

    for s in range(0, n_pts, chunk):
        p = points[s:s + chunk]                       # (C,3)
        d = p[:, None, :] - ta[None, :, :]            # (C,T,3)
        # Interior candidate: barycentric coordinates of the plane projection.
        dot0p = np.einsum("ctd,td->ct", d, e0)
        dot1p = np.einsum("ctd,td->ct", d, e1)
        su = (dot11 * dot0p - dot01 * dot1p) / denom
        sv = (dot00 * dot1p - dot01 * dot0p) / denom
        inside = (su >= 0.0) & (sv >= 0.0) & (su + sv <= 1.0)
        q_in = ta[None] + su[..., None] * e0[None] + sv[..., None] * e1[None]
        dist_n = np.einsum("ctd,td->ct", d, normal) ** 2 / nn
        d2 = np.where(inside, dist_n, np.inf)         # (C,T)
        q_best = np.where(inside[..., None], q_in, 0.0)

        for (a, b) in ((ta, tb), (tb, tc), (tc, ta)):
            ab = b - a                                # (T,3)
            denom_e = np.einsum("td,td->t", ab, ab)
            t = np.einsum("ctd,td->ct", p[:, None, :] - a[None], ab) / denom_e
            np.clip(t, 0.0, 1.0, out=t)
            q_e = a[None] + t[..., None] * ab[None]
            diff = p[:, None, :] - q_e
            d2_e = np.einsum("ctd,ctd->ct", diff, diff)
            better = d2_e < d2
            d2 = np.where(better, d2_e, d2)
            q_best = np.where(better[..., None], q_e, q_best)

        tri_min = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        chunk_d2 = d2[rows, tri_min]
        improved = chunk_d2 < best_d2[s:s + chunk]
        best_d2[s:s + chunk] = np.where(improved, chunk_d2, best_d2[s:s + chunk])
        best_q[s:s + chunk][improved] = q_best[rows, tri_min][improved]

    return np.sqrt(best_d2), best_q


def composite(mean2d, inv_cov, alpha0, rgb, xlo, xhi, ylo, yhi,
              x0, y0, color, trans, weight, cutoff):
    """Front-to-back alpha compositing of depth-sorted splats into a tile.

    color/trans/weight are views of the tile starting at image pixel (x0, y0);
    per-splat bounds are half-open image-pixel ranges already clipped to the
    tile. Splat alpha below `cutoff` contributes nothing.
    """
    n = len(mean2d)
    for i in range(n):
        xs, xe, ys, ye = xlo[i], xhi[i], ylo[i], yhi[i]
        if xs >= xe or ys >= ye:
            continue
        px = np.arange(xs, xe, dtype=np.float64) - mean2d[i, 0]
        py = np.arange(ys, ye, dtype=np.float64) - mean2d[i, 1]
        qx2 = inv_cov[i, 0] * px * px                        # (w,)
        qy2 = inv_cov[i, 2] * py * py                        # (h,)
        cross = inv_cov[i, 1] * py[:, None] * px[None, :]
        quad = qy2[:, None] + 2.0 * cross + qx2[None, :]
        a = alpha0[i] * np.exp(-0.5 * quad)
        a[a < cutoff] = 0.0
        sub = (slice(ys - y0, ye - y0), slice(xs - x0, xe - x0))
        contrib = trans[sub] * a
        color[sub] += contrib[..., None] * rgb[i]
        weight[sub] += contrib
        trans[sub] *= 1.0 - a
