# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: MPM transfers, sand plasticity, splat compositing,
and point-to-triangle distance queries. Function-for-function equivalent to
the pure-numpy module `pyk`; see that module for the contracts.

All heavy loops run without the GIL so chunked callers can use real threads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor, isfinite, log, sqrt

IS_NATIVE = True


# ---------------------------------------------------------------------------
# 3x3 SVD via symmetric Jacobi iteration on F^T F
# ---------------------------------------------------------------------------

cdef void _jacobi3(double a[3][3], double v[3][3], double w[3]) noexcept nogil:
    """Eigendecomposition of a symmetric 3x3 matrix (cyclic Jacobi)."""
    cdef int p, q, r, sweep, i, j
    cdef double off, theta, t, c, s, apq, app, aqq, vip, viq, aip, aiq, scale
    for i in range(3):
        for j in range(3):
            v[i][j] = 1.0 if i == j else 0.0
    scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2]
    for sweep in range(30):
        off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]
        if off <= 1e-30 * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p][q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[p][p]
                aqq = a[q][q]
                theta = 0.5 * (aqq - app) / apq
                t = 1.0 / (fabs(theta) + sqrt(1.0 + theta * theta))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                a[p][p] = app - t * apq
                a[q][q] = aqq + t * apq
                a[p][q] = 0.0
                a[q][p] = 0.0
                for r in range(3):
                    if r != p and r != q:
                        aip = a[r][p]
                        aiq = a[r][q]
                        a[r][p] = c * aip - s * aiq
                        a[p][r] = a[r][p]
                        a[r][q] = c * aiq + s * aip
                        a[q][r] = a[r][q]
                for r in range(3):
                    vip = v[r][p]
                    viq = v[r][q]
                    v[r][p] = c * vip - s * viq
                    v[r][q] = c * viq + s * vip
    w[0] = a[0][0]
    w[1] = a[1][1]
    w[2] = a[2][2]


cdef int _svd3(double f[3][3], double u[3][3], double sv[3], double v[3][3]) noexcept nogil:
    """F = U diag(sv) V^T with det(U) = det(V) = +1; returns 0, or 1 when F is
    degenerate (det <= 0 or non-finite)."""
    cdef double a[3][3]
    cdef double w[3]
    cdef int i, j, k
    cdef double detf, norm
    detf = (f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1])
            - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
            + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]))
    if not isfinite(detf) or detf <= 0.0:
        return 1
    for i in range(3):
        for j in range(3):
            a[i][j] = f[0][i] * f[0][j] + f[1][i] * f[1][j] + f[2][i] * f[2][j]
    _jacobi3(a, v, w)
    # Sort eigenvalues descending (insertion over 3 entries).
    cdef int order[3]
    order[0] = 0
    order[1] = 1
    order[2] = 2
    cdef int tmp
    if w[order[0]] < w[order[1]]:
        tmp = order[0]; order[0] = order[1]; order[1] = tmp
    if w[order[1]] < w[order[2]]:
        tmp = order[1]; order[1] = order[2]; order[2] = tmp
    if w[order[0]] < w[order[1]]:
        tmp = order[0]; order[0] = order[1]; order[1] = tmp
    cdef double vs[3][3]
    for k in range(3):
        sv[k] = sqrt(w[order[k]]) if w[order[k]] > 0.0 else 0.0
        for i in range(3):
            vs[i][k] = v[i][order[k]]
    if sv[2] <= 0.0:
        return 1
    # Right-handed V (flip the last column if needed).
    cdef double detv
    detv = (vs[0][0] * (vs[1][1] * vs[2][2] - vs[1][2] * vs[2][1])
            - vs[0][1] * (vs[1][0] * vs[2][2] - vs[1][2] * vs[2][0])
            + vs[0][2] * (vs[1][0] * vs[2][1] - vs[1][1] * vs[2][0]))
    if detv < 0.0:
        for i in range(3):
            vs[i][2] = -vs[i][2]
    for i in range(3):
        for j in range(3):
            v[i][j] = vs[i][j]
    # U = F V diag(1/sv); det F > 0 makes it proper.
    for k in range(3):
        for i in range(3):
            u[i][k] = (f[i][0] * v[0][k] + f[i][1] * v[1][k] + f[i][2] * v[2][k]) / sv[k]
        # Re-normalize against roundoff.
        norm = sqrt(u[0][k] * u[0][k] + u[1][k] * u[1][k] + u[2][k] * u[2][k])
        if norm > 0.0:
            for i in range(3):
                u[i][k] /= norm
    return 0


cdef void _sand_project_one(double* eps, double mu, double lam, double alpha,
                            double* eps_new, int* changed) noexcept nogil:
    cdef double tr = eps[0] + eps[1] + eps[2]
    cdef double d0, d1, d2, en, dgamma, s
    d0 = eps[0] - tr / 3.0
    d1 = eps[1] - tr / 3.0
    d2 = eps[2] - tr / 3.0
    en = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    eps_new[0] = eps[0]
    eps_new[1] = eps[1]
    eps_new[2] = eps[2]
    changed[0] = 0
    if tr > 0.0:
        eps_new[0] = 0.0
        eps_new[1] = 0.0
        eps_new[2] = 0.0
        changed[0] = 1
        return
    if en <= 0.0:
        return
    dgamma = en + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr
    if dgamma <= 0.0:
        return
    s = dgamma / en
    eps_new[0] = eps[0] - s * d0
    eps_new[1] = eps[1] - s * d1
    eps_new[2] = eps[2] - s * d2
    changed[0] = 1


def stress_tau(double[:, :, ::1] fe, double mu, double lam):
    """Kirchhoff stress of Hencky elasticity; see pyk.stress_tau."""
    cdef Py_ssize_t n = fe.shape[0]
    tau_arr = np.empty((n, 3, 3))
    det_arr = np.empty(n)
    cdef double[:, :, ::1] tau = tau_arr
    cdef double[::1] jdet = det_arr
    cdef Py_ssize_t p
    cdef int i, j, k
    cdef double f[3][3]
    cdef double u[3][3]
    cdef double v[3][3]
    cdef double sv[3]
    cdef double eps[3]
    cdef double diag[3]
    cdef double tr
    cdef Py_ssize_t bad = -1
    with nogil:
        for p in range(n):
            for i in range(3):
                for j in range(3):
                    f[i][j] = fe[p, i, j]
            if _svd3(f, u, sv, v):
                bad = p
                break
            for i in range(3):
                eps[i] = log(sv[i])
            tr = eps[0] + eps[1] + eps[2]
            for i in range(3):
                diag[i] = 2.0 * mu * eps[i] + lam * tr
            for i in range(3):
                for j in range(3):
                    tau[p, i, j] = (u[i][0] * diag[0] * u[j][0]
                                    + u[i][1] * diag[1] * u[j][1]
                                    + u[i][2] * diag[2] * u[j][2])
            jdet[p] = sv[0] * sv[1] * sv[2]
    if bad >= 0:
        return None, None, int(bad)
    return tau_arr, det_arr, -1


# ---------------------------------------------------------------------------
# Quadratic B-spline transfers
# ---------------------------------------------------------------------------

cdef inline void _weights1d(double fx, double* w, double* dw, double inv_dx) noexcept nogil:
    w[0] = 0.5 * (1.5 - fx) * (1.5 - fx)
    w[1] = 0.75 - (fx - 1.0) * (fx - 1.0)
    w[2] = 0.5 * (fx - 0.5) * (fx - 0.5)
    dw[0] = (fx - 1.5) * inv_dx
    dw[1] = -2.0 * (fx - 1.0) * inv_dx
    dw[2] = (fx - 0.5) * inv_dx


def p2g(double[:, ::1] x, double[:, ::1] v, double[::1] m, tau_vol,
        origin, inv_dx, dims):
    """Scatter mass, momentum, and internal force; see pyk.p2g."""
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double idx = inv_dx
    cdef Py_ssize_t nx = dims[0], ny = dims[1], nz = dims[2]
    cdef Py_ssize_t nn = nx * ny * nz
    mass_arr = np.zeros(nn)
    mom_arr = np.zeros((nn, 3))
    force_arr = np.zeros((nn, 3))
    cdef double[::1] mass = mass_arr
    cdef double[:, ::1] mom = mom_arr
    cdef double[:, ::1] force = force_arr
    cdef double[:, :, ::1] tv
    cdef int has_tau = tau_vol is not None
    if has_tau:
        tv = tau_vol
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t p, node
    cdef int i, j, k, a
    cdef long bx, by, bz
    cdef double fx, fy, fz, wijk, wm, gx, gy, gz
    cdef double wx[3]
    cdef double wy[3]
    cdef double wz[3]
    cdef double dwx[3]
    cdef double dwy[3]
    cdef double dwz[3]
    cdef double t[3][3]
    with nogil:
        for p in range(n):
            fx = (x[p, 0] - ox) * idx
            fy = (x[p, 1] - oy) * idx
            fz = (x[p, 2] - oz) * idx
            bx = <long>floor(fx - 0.5)
            by = <long>floor(fy - 0.5)
            bz = <long>floor(fz - 0.5)
            _weights1d(fx - bx, wx, dwx, idx)
            _weights1d(fy - by, wy, dwy, idx)
            _weights1d(fz - bz, wz, dwz, idx)
            if has_tau:
                for i in range(3):
                    for j in range(3):
                        t[i][j] = tv[p, i, j]
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        node = ((bx + i) * ny + (by + j)) * nz + (bz + k)
                        wijk = wx[i] * wy[j] * wz[k]
                        wm = wijk * m[p]
                        mass[node] += wm
                        mom[node, 0] += wm * v[p, 0]
                        mom[node, 1] += wm * v[p, 1]
                        mom[node, 2] += wm * v[p, 2]
                        if has_tau:
                            gx = dwx[i] * wy[j] * wz[k]
                            gy = wx[i] * dwy[j] * wz[k]
                            gz = wx[i] * wy[j] * dwz[k]
                            for a in range(3):
                                force[node, a] -= t[a][0] * gx + t[a][1] * gy + t[a][2] * gz
    return mass_arr, mom_arr, force_arr


def g2p(double[:, ::1] x, double[:, ::1] v, double[:, :, ::1] fe,
        double[:, :, ::1] fp, double[:, ::1] grid_v, origin=None, inv_dx=None,
        dims=None, double dt=0.0, double mu=0.0, double lam=0.0,
        double alpha=0.0, plastic=True, lo=None, hi=None, escaped=None):
    """Fused gather + advect + deformation update; see pyk.g2p."""
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double idx = inv_dx
    cdef Py_ssize_t ny = dims[1], nz = dims[2]
    cdef double lox = lo[0], loy = lo[1], loz = lo[2]
    cdef double hix = hi[0], hiy = hi[1], hiz = hi[2]
    cdef int do_plastic = 1 if plastic else 0
    esc_view = np.asarray(escaped).view(np.uint8)
    cdef unsigned char[::1] esc = esc_view
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t p, node
    cdef int i, j, k, a, b, changed
    cdef long bx, by, bz
    cdef double fx, fy, fz, wijk, gx, gy, gz
    cdef double wx[3]
    cdef double wy[3]
    cdef double wz[3]
    cdef double dwx[3]
    cdef double dwy[3]
    cdef double dwz[3]
    cdef double vn[3]
    cdef double gv[3][3]
    cdef double ftr[3][3]
    cdef double fnew[3][3]
    cdef double u3[3][3]
    cdef double v3[3][3]
    cdef double sv[3]
    cdef double eps[3]
    cdef double eps_new[3]
    cdef double dexp[3]
    cdef double pm[3][3]
    cdef double fpo[3][3]
    cdef double vnode
    cdef Py_ssize_t bad = -1
    with nogil:
        for p in range(n):
            fx = (x[p, 0] - ox) * idx
            fy = (x[p, 1] - oy) * idx
            fz = (x[p, 2] - oz) * idx
            bx = <long>floor(fx - 0.5)
            by = <long>floor(fy - 0.5)
            bz = <long>floor(fz - 0.5)
            _weights1d(fx - bx, wx, dwx, idx)
            _weights1d(fy - by, wy, dwy, idx)
            _weights1d(fz - bz, wz, dwz, idx)
            vn[0] = 0.0
            vn[1] = 0.0
            vn[2] = 0.0
            for i in range(3):
                for j in range(3):
                    gv[i][j] = 0.0
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        node = ((bx + i) * ny + (by + j)) * nz + (bz + k)
                        wijk = wx[i] * wy[j] * wz[k]
                        gx = dwx[i] * wy[j] * wz[k]
                        gy = wx[i] * dwy[j] * wz[k]
                        gz = wx[i] * wy[j] * dwz[k]
                        for a in range(3):
                            vnode = grid_v[node, a]
                            vn[a] += wijk * vnode
                            gv[a][0] += vnode * gx
                            gv[a][1] += vnode * gy
                            gv[a][2] += vnode * gz
            for a in range(3):
                v[p, a] = vn[a]
                x[p, a] += dt * vn[a]
            if x[p, 0] < lox or x[p, 0] > hix or x[p, 1] < loy or x[p, 1] > hiy \
                    or x[p, 2] < loz or x[p, 2] > hiz:
                esc[p] = 1
                x[p, 0] = min(max(x[p, 0], lox), hix)
                x[p, 1] = min(max(x[p, 1], loy), hiy)
                x[p, 2] = min(max(x[p, 2], loz), hiz)
            # F_trial = (I + dt grad_v) F_E
            for i in range(3):
                for j in range(3):
                    ftr[i][j] = fe[p, i, j] + dt * (gv[i][0] * fe[p, 0, j]
                                                    + gv[i][1] * fe[p, 1, j]
                                                    + gv[i][2] * fe[p, 2, j])
            if do_plastic:
                for i in range(3):
                    for j in range(3):
                        fnew[i][j] = ftr[i][j]
                if _svd3(ftr, u3, sv, v3):
                    bad = p
                    break
                for i in range(3):
                    eps[i] = log(sv[i])
                _sand_project_one(eps, mu, lam, alpha, eps_new, &changed)
                if changed:
                    for i in range(3):
                        dexp[i] = exp(eps_new[i])
                    for i in range(3):
                        for j in range(3):
                            fnew[i][j] = (u3[i][0] * dexp[0] * v3[j][0]
                                          + u3[i][1] * dexp[1] * v3[j][1]
                                          + u3[i][2] * dexp[2] * v3[j][2])
                    for i in range(3):
                        dexp[i] = exp(eps[i] - eps_new[i])
                    for i in range(3):
                        for j in range(3):
                            pm[i][j] = (v3[i][0] * dexp[0] * v3[j][0]
                                        + v3[i][1] * dexp[1] * v3[j][1]
                                        + v3[i][2] * dexp[2] * v3[j][2])
                    for i in range(3):
                        for j in range(3):
                            fpo[i][j] = fp[p, i, j]
                    for i in range(3):
                        for j in range(3):
                            fp[p, i, j] = (pm[i][0] * fpo[0][j]
                                           + pm[i][1] * fpo[1][j]
                                           + pm[i][2] * fpo[2][j])
                for i in range(3):
                    for j in range(3):
                        fe[p, i, j] = fnew[i][j]
            else:
                for i in range(3):
                    for j in range(3):
                        fe[p, i, j] = ftr[i][j]
            # NaN check (NaN != NaN)
            if bad < 0:
                for a in range(3):
                    if v[p, a] != v[p, a] or x[p, a] != x[p, a]:
                        bad = p
                        break
                if bad >= 0:
                    break
    return int(bad)


# ---------------------------------------------------------------------------
# Splat compositing
# ---------------------------------------------------------------------------

def composite(double[:, ::1] mean2d, double[:, ::1] inv_cov, double[::1] alpha0,
              double[:, ::1] rgb, long[::1] xlo, long[::1] xhi, long[::1] ylo,
              long[::1] yhi, long x0, long y0, double[:, :, :] color,
              double[:, :] trans, double[:, :] weight, double cutoff):
    """Front-to-back compositing into a tile; see pyk.composite."""
    cdef Py_ssize_t n = mean2d.shape[0]
    cdef Py_ssize_t i
    cdef long px, py
    cdef double dx, dy, q, a, contrib, mx, my, ia, ib, ic, al, r, g, b
    with nogil:
        for i in range(n):
            if xlo[i] >= xhi[i] or ylo[i] >= yhi[i]:
                continue
            mx = mean2d[i, 0]
            my = mean2d[i, 1]
            ia = inv_cov[i, 0]
            ib = inv_cov[i, 1]
            ic = inv_cov[i, 2]
            al = alpha0[i]
            r = rgb[i, 0]
            g = rgb[i, 1]
            b = rgb[i, 2]
            for py in range(ylo[i], yhi[i]):
                dy = py - my
                for px in range(xlo[i], xhi[i]):
                    dx = px - mx
                    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                    a = al * exp(-0.5 * q)
                    if a < cutoff:
                        continue
                    contrib = trans[py - y0, px - x0] * a
                    color[py - y0, px - x0, 0] += contrib * r
                    color[py - y0, px - x0, 1] += contrib * g
                    color[py - y0, px - x0, 2] += contrib * b
                    weight[py - y0, px - x0] += contrib
                    trans[py - y0, px - x0] *= 1.0 - a
    return None


# ---------------------------------------------------------------------------
# Point-to-triangle distances
# ---------------------------------------------------------------------------

def point_triangle_distances(double[:, ::1] points, double[:, ::1] ta,
                             double[:, ::1] tb, double[:, ::1] tc):
    """Exact point-to-mesh distances with witness points; see pyk."""
    cdef Py_ssize_t np_ = points.shape[0]
    cdef Py_ssize_t nt = ta.shape[0]
    d_arr = np.empty(np_)
    q_arr = np.empty((np_, 3))
    cdef double[::1] dist = d_arr
    cdef double[:, ::1] qout = q_arr
    cdef Py_ssize_t i, t
    cdef int k
    cdef double px, py, pz, best, d2
    cdef double a[3]
    cdef double b[3]
    cdef double c[3]
    cdef double q[3]
    cdef double qb[3]
    with nogil:
        for i in range(np_):
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            best = 1e300
            qb[0] = px
            qb[1] = py
            qb[2] = pz
            for t in range(nt):
                for k in range(3):
                    a[k] = ta[t, k]
                    b[k] = tb[t, k]
                    c[k] = tc[t, k]
                d2 = _point_tri_d2(px, py, pz, a, b, c, q)
                if d2 < best:
                    best = d2
                    qb[0] = q[0]
                    qb[1] = q[1]
                    qb[2] = q[2]
            dist[i] = sqrt(best)
            qout[i, 0] = qb[0]
            qout[i, 1] = qb[1]
            qout[i, 2] = qb[2]
    return d_arr, q_arr


cdef double _point_tri_d2(double px, double py, double pz, double* a,
                          double* b, double* c, double* q) noexcept nogil:
    """Squared distance point-triangle with witness, via interior projection
    or the nearest of the three edges."""
    cdef double e0[3]
    cdef double e1[3]
    cdef double nrm[3]
    cdef double dp[3]
    cdef double qe[3]
    cdef int k
    cdef double dot00, dot01, dot11, dot0p, dot1p, denom, su, sv, nn, dn
    cdef double best, d2, t, seg_len
    for k in range(3):
        e0[k] = b[k] - a[k]
        e1[k] = c[k] - a[k]
        dp[k] = (px if k == 0 else (py if k == 1 else pz)) - a[k]
    nrm[0] = e0[1] * e1[2] - e0[2] * e1[1]
    nrm[1] = e0[2] * e1[0] - e0[0] * e1[2]
    nrm[2] = e0[0] * e1[1] - e0[1] * e1[0]
    nn = nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]
    dot00 = e0[0] * e0[0] + e0[1] * e0[1] + e0[2] * e0[2]
    dot01 = e0[0] * e1[0] + e0[1] * e1[1] + e0[2] * e1[2]
    dot11 = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
    dot0p = e0[0] * dp[0] + e0[1] * dp[1] + e0[2] * dp[2]
    dot1p = e1[0] * dp[0] + e1[1] * dp[1] + e1[2] * dp[2]
    denom = dot00 * dot11 - dot01 * dot01
    best = 1e300
    if denom > 0.0 and nn > 0.0:
        su = (dot11 * dot0p - dot01 * dot1p) / denom
        sv = (dot00 * dot1p - dot01 * dot0p) / denom
        if su >= 0.0 and sv >= 0.0 and su + sv <= 1.0:
            dn = dp[0] * nrm[0] + dp[1] * nrm[1] + dp[2] * nrm[2]
            best = dn * dn / nn
            q[0] = a[0] + su * e0[0] + sv * e1[0]
            q[1] = a[1] + su * e0[1] + sv * e1[1]
            q[2] = a[2] + su * e0[2] + sv * e1[2]
    # Edges a-b, b-c, c-a
    cdef double* ea
    cdef double* eb
    cdef int edge
    for edge in range(3):
        if edge == 0:
            ea = a; eb = b
        elif edge == 1:
            ea = b; eb = c
        else:
            ea = c; eb = a
        seg_len = 0.0
        t = 0.0
        for k in range(3):
            seg_len += (eb[k] - ea[k]) * (eb[k] - ea[k])
            t += ((px if k == 0 else (py if k == 1 else pz)) - ea[k]) * (eb[k] - ea[k])
        if seg_len > 0.0:
            t = t / seg_len
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        d2 = 0.0
        for k in range(3):
            qe[k] = ea[k] + t * (eb[k] - ea[k])
            d2 += ((px if k == 0 else (py if k == 1 else pz)) - qe[k]) ** 2
        if d2 < best:
            best = d2
            q[0] = qe[0]
            q[1] = qe[1]
            q[2] = qe[2]
    return best
