"""Explicit MPM time stepper with PIC transfers and quadratic B-spline weights.

One step runs particle-to-grid transfer of mass and momentum, internal and
gravity forces on the grid, an explicit grid velocity update with slip (or
sticky) boundary bands, grid-to-particle velocity/position transfer, and the
deformation-gradient update with Drucker-Prager plastic projection. All weight
stencils within a step are evaluated at the step's starting positions.

Two interchangeable kernel backends exist: the compiled extension and the
pure-numpy reference (see splatsim._kernels). The single-threaded reference
path is bit-deterministic; threads > 1 partitions particles into fixed chunks
whose grid contributions are reduced in chunk order, which is deterministic
for a given thread count and matches the reference to transfer roundoff.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from splatsim import _kernels
from splatsim._kernels import pyk
from splatsim.errors import ConfigError, SimulationDivergedError, StencilError
from splatsim.gaussian_scene import Scene
from splatsim.mpm import checkpoints as ckpt
from splatsim.mpm.sand import kirchhoff_batch
from splatsim.mpm.types import (
    FACES,
    GridState,
    MaterialParams,
    ParticleSet,
    SimConfig,
)

log = logging.getLogger(__name__)


def init_particles(scene: Scene, material: MaterialParams, dx, h_fill=None,
                   is_filled=None, domain=None) -> ParticleSet:
    """One material point per scene Gaussian, at rest at its center.

    Filled Gaussians get the seed-cell volume h_fill^3 (their scales encode
    surface distance, not material volume); surface Gaussians get dx^3 / 8.
    Particles outside `domain` (lo, hi) are rejected and counted on the
    result's n_rejected.
    """
    if h_fill is None:
        h_fill = dx
    n = len(scene)
    x = scene.centers.copy()
    if is_filled is None:
        is_filled = np.ones(n, dtype=bool)
    else:
        is_filled = np.asarray(is_filled, dtype=bool).reshape(n)
    vol = np.where(is_filled, float(h_fill) ** 3, float(dx) ** 3 / 8.0)
    keep = np.ones(n, dtype=bool)
    if domain is not None:
        lo = np.asarray(domain[0], dtype=np.float64)
        hi = np.asarray(domain[1], dtype=np.float64)
        keep = np.all((x >= lo) & (x <= hi), axis=1)
    rejected = int(n - keep.sum())
    if rejected:
        log.warning("init_particles: rejected %d of %d particles outside the domain",
                    rejected, n)
    source = np.arange(n, dtype=np.uint32)[keep]
    pset = ParticleSet(
        x=x[keep],
        v=np.zeros((int(keep.sum()), 3)),
        mass=material.density * vol[keep],
        volume0=vol[keep],
        source=source,
    )
    pset.n_rejected = rejected
    return pset


def weights(x_p, grid: GridState):
    """Quadratic B-spline stencil of one particle.

    Returns a list of 27 (node_index (3,), w, grad (3,)) entries. Raises
    StencilError when part of the stencil would fall off the grid.
    """
    x_p = np.asarray(x_p, dtype=np.float64).reshape(1, 3)
    base, w, dw = pyk.bspline_parts(x_p, grid.origin, 1.0 / grid.dx)
    if np.any(base < 0) or np.any(base + 2 > grid.dims - 1):
        raise StencilError(f"particle at {x_p[0]} has no full stencil on the grid")
    out = []
    for i in range(3):
        for j in range(3):
            for k in range(3):
                idx = base[0] + (i, j, k)
                wij = w[0, 0, i] * w[0, 1, j] * w[0, 2, k]
                grad = np.array([
                    dw[0, 0, i] * w[0, 1, j] * w[0, 2, k],
                    w[0, 0, i] * dw[0, 1, j] * w[0, 2, k],
                    w[0, 0, i] * w[0, 1, j] * dw[0, 2, k],
                ])
                out.append((idx, float(wij), grad))
    return out


def p2g(particles: ParticleSet, grid: GridState, backend="auto", threads=1):
    """Scatter mass and momentum to the grid and form nodal velocities."""
    kern = _kernels.resolve(backend)
    mass, mom, _ = _scatter(kern, particles, None, grid, threads)
    grid.mass = mass
    grid.mom = mom
    grid.v = np.zeros_like(mom)
    loaded = mass > 0.0
    grid.v[loaded] = mom[loaded] / mass[loaded, None]


def grid_forces(particles: ParticleSet, grid: GridState, material: MaterialParams,
                backend="auto", threads=1):
    """Internal force -sum_p V_p sigma_p grad w plus gravity m_i g.

    The scatter uses V0 * tau (Kirchhoff), which equals the current volume
    times Cauchy stress since V = J V0.
    """
    kern = _kernels.resolve(backend)
    tau, _ = kirchhoff_batch(particles.F_E, material)
    tau_vol = particles.volume0[:, None, None] * tau
    _, _, force = _scatter(kern, particles, tau_vol, grid, threads)
    grid.f = force + grid.mass[:, None] * material.gravity


def grid_update(grid: GridState, dt, bc):
    """Explicit velocity update then boundary conditions.

    Slip faces zero the outgoing normal velocity component on their node
    band and leave tangential components alone; sticky faces zero the full
    velocity. Nodes with zero mass keep zero velocity.
    """
    loaded = grid.mass > 0.0
    grid.v[loaded] += dt * grid.f[loaded] / grid.mass[loaded, None]
    apply_boundary(grid, bc)


def apply_boundary(grid: GridState, bc):
    for face_i, face in enumerate(FACES):
        mode = bc[face] if isinstance(bc, dict) else bc
        band = grid.face_band(face)
        if len(band) == 0:
            continue
        if mode == "sticky":
            grid.v[band] = 0.0
        else:
            axis = face_i // 2
            # fancy indexing copies, so write the clamped values back
            if face.endswith("_min"):
                grid.v[band, axis] = np.maximum(grid.v[band, axis], 0.0)
            else:
                grid.v[band, axis] = np.minimum(grid.v[band, axis], 0.0)


def g2p(particles: ParticleSet, grid: GridState, dt):
    """PIC transfer: new particle velocity is the interpolated grid velocity
    and positions advance with it. Escaped particles are clamped and flagged.
    """
    ids, w, _ = pyk._stencil(particles.x, grid.origin, 1.0 / grid.dx, grid.dims)
    v_new = np.einsum("no,noa->na", w, grid.v[ids])
    particles.v[:] = v_new
    particles.x += dt * v_new
    _clamp_escaped(particles, grid)


def update_F(particles: ParticleSet, grid: GridState, dt,
             material: MaterialParams, positions=None, plastic=True):
    """Velocity-gradient update of F_E, then plastic projection.

    `positions` selects where stencils are evaluated; inside a step this is
    the step's starting positions so transfers and the F update share one
    stencil. FP absorbs whatever the projection removed, keeping F_E F_P
    equal to the trial total deformation.
    """
    where = particles.x if positions is None else positions
    ids, _, grads = pyk._stencil(where, grid.origin, 1.0 / grid.dx, grid.dims)
    grad_v = np.einsum("noa,nob->nab", grid.v[ids], grads)
    fe_trial = np.matmul(np.eye(3) + dt * grad_v, particles.F_E)
    if not plastic:
        particles.F_E = fe_trial
        return
    u, s, vh = np.linalg.svd(fe_trial)
    if np.any(s[:, -1] <= 0.0):
        bad = int(np.nonzero(s[:, -1] <= 0.0)[0][0])
        raise SimulationDivergedError(-1, bad)
    eps = np.log(s)
    eps_new, changed = pyk.sand_project(eps, material.mu, material.lam,
                                        material.friction_alpha)
    particles.F_E = fe_trial
    if np.any(changed):
        idx = np.nonzero(changed)[0]
        particles.F_E[idx] = np.einsum("nik,nk,nkj->nij",
                                       u[idx], np.exp(eps_new[idx]), vh[idx])
        vmat = np.swapaxes(vh[idx], 1, 2)
        dexp = np.exp(eps[idx] - eps_new[idx])
        pmat = np.einsum("nik,nk,njk->nij", vmat, dexp, vmat)
        particles.F_P[idx] = np.matmul(pmat, particles.F_P[idx])


def _clamp_escaped(particles, grid):
    lo, hi = grid.valid_lo(), grid.valid_hi()
    out = (particles.x < lo) | (particles.x > hi)
    if np.any(out):
        particles.escaped |= np.any(out, axis=1)
        np.clip(particles.x, lo, hi, out=particles.x)


@dataclass
class SimState:
    particles: ParticleSet
    grid: GridState
    material: MaterialParams
    config: SimConfig
    dt: float
    step_index: int = 0
    time: float = 0.0


def make_state(particles: ParticleSet, material: MaterialParams,
               config: SimConfig) -> SimState:
    grid = GridState.from_domain(config.domain_lo, config.domain_hi, config.dx)
    dt = config.resolve_dt(material)
    lo, hi = grid.valid_lo(), grid.valid_hi()
    if len(particles) and (np.any(particles.x < lo) or np.any(particles.x > hi)):
        raise ConfigError("particles start outside the stencil-valid grid region")
    return SimState(particles=particles, grid=grid, material=material,
                    config=config, dt=dt)


def _chunk_slices(n, k):
    k = max(1, min(int(k), n)) if n else 1
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _scatter(kern, particles, tau_vol, grid, threads):
    """p2g scatter, optionally partitioned over particle chunks.

    Chunk results are reduced in chunk order, so the outcome is deterministic
    for a fixed thread count.
    """
    args = (grid.origin, 1.0 / grid.dx, grid.dims)
    if threads <= 1 or len(particles) == 0:
        return kern.p2g(particles.x, particles.v, particles.mass, tau_vol, *args)
    slices = _chunk_slices(len(particles), threads)

    def work(sl):
        tv = None if tau_vol is None else tau_vol[sl]
        return kern.p2g(particles.x[sl], particles.v[sl], particles.mass[sl],
                        tv, *args)
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        parts = list(pool.map(work, slices))
    mass = parts[0][0]
    mom = parts[0][1]
    force = parts[0][2]
    for pm, pmom, pf in parts[1:]:
        mass = mass + pm
        mom = mom + pmom
        force = force + pf
    return mass, mom, force


def _gather_update(kern, state, plastic, threads):
    p = state.particles
    g = state.grid
    args = dict(origin=g.origin, inv_dx=1.0 / g.dx, dims=g.dims, dt=state.dt,
                mu=state.material.mu, lam=state.material.lam,
                alpha=state.material.friction_alpha, plastic=plastic,
                lo=g.valid_lo(), hi=g.valid_hi())
    if threads <= 1 or len(p) == 0:
        return kern.g2p(p.x, p.v, p.F_E, p.F_P, g.v, escaped=p.escaped, **args)
    slices = _chunk_slices(len(p), threads)

    def work(sl):
        bad = kern.g2p(p.x[sl], p.v[sl], p.F_E[sl], p.F_P[sl], g.v,
                       escaped=p.escaped[sl], **args)
        return bad if bad < 0 else bad + sl.start
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        results = list(pool.map(work, slices))
    bad = [r for r in results if r >= 0]
    return min(bad) if bad else -1


def step(state: SimState, backend="auto", threads=1, plastic=True):
    """Advance one time step in place."""
    if state.config.transfer == "apic":
        _step_apic(state)
        state.step_index += 1
        state.time += state.dt
        return
    kern = _kernels.resolve(backend)
    p = state.particles
    g = state.grid
    if len(p):
        # the native kernels do no bounds checking; positions are clamped at
        # the end of every step, so this only trips on misuse
        if np.any(p.x < g.valid_lo()) or np.any(p.x > g.valid_hi()):
            raise StencilError("particle outside the stencil-valid grid region")
    tau, _, bad = kern.stress_tau(p.F_E, state.material.mu, state.material.lam)
    if bad >= 0:
        raise SimulationDivergedError(state.step_index, bad)
    tau_vol = p.volume0[:, None, None] * tau

    mass, mom, force = _scatter(kern, p, tau_vol, g, threads)
    g.mass, g.mom, g.f = mass, mom, force
    loaded = np.flatnonzero(mass > 0.0)
    g.v = np.zeros_like(mom)
    m_loaded = mass[loaded, None]
    g.f[loaded] += m_loaded * state.material.gravity
    g.v[loaded] = mom[loaded] / m_loaded
    g.v[loaded] += state.dt * g.f[loaded] / m_loaded
    apply_boundary(g, state.config.boundary)

    bad = _gather_update(kern, state, plastic, threads)
    if bad >= 0:
        raise SimulationDivergedError(state.step_index, bad)
    state.step_index += 1
    state.time += state.dt


def _step_apic(state: SimState):
    """APIC variant of the transfers (python path only; optional extension).

    Adds the affine velocity term to p2g momentum and rebuilds the particle
    affine matrix in g2p; with quadratic B-splines the inertia-like weight is
    D = dx^2 / 4 I.
    """
    p, g = state.particles, state.grid
    dt = state.dt
    if p.affine is None:
        p.affine = np.zeros((len(p), 3, 3))
    inv_dx = 1.0 / g.dx
    ids, w, grads = pyk._stencil(p.x, g.origin, inv_dx, g.dims)
    nodes_x = _node_positions(g, ids)
    dpos = nodes_x - p.x[:, None, :]                        # (N,27,3)
    tau, _ = kirchhoff_batch(p.F_E, state.material)
    tau_vol = p.volume0[:, None, None] * tau

    nn = g.n_nodes()
    flat = ids.ravel()
    wm = w * p.mass[:, None]
    mass = np.bincount(flat, weights=wm.ravel(), minlength=nn)
    affine_v = p.v[:, None, :] + np.einsum("nab,nob->noa", p.affine, dpos)
    mom = np.empty((nn, 3))
    fcontrib = -np.einsum("nab,nob->noa", tau_vol, grads)
    force = np.empty((nn, 3))
    for c in range(3):
        mom[:, c] = np.bincount(flat, weights=(wm * affine_v[..., c]).ravel(),
                                minlength=nn)
        force[:, c] = np.bincount(flat, weights=fcontrib[..., c].ravel(),
                                  minlength=nn)
    g.mass, g.mom, g.f = mass, mom, force + mass[:, None] * state.material.gravity
    loaded = mass > 0.0
    g.v = np.zeros_like(mom)
    g.v[loaded] = mom[loaded] / mass[loaded, None]
    g.v[loaded] += dt * g.f[loaded] / mass[loaded, None]
    apply_boundary(g, state.config.boundary)

    vg = g.v[ids]
    v_new = np.einsum("no,noa->na", w, vg)
    p.affine = (4.0 * inv_dx * inv_dx) * np.einsum("no,noa,nob->nab", w, vg, dpos)
    grad_v = np.einsum("noa,nob->nab", vg, grads)
    p.v[:] = v_new
    p.x += dt * v_new
    _clamp_escaped(p, g)
    fe_trial = np.matmul(np.eye(3) + dt * grad_v, p.F_E)
    u, s, vh = np.linalg.svd(fe_trial)
    eps = np.log(np.maximum(s, 1e-300))
    eps_new, changed = pyk.sand_project(eps, state.material.mu, state.material.lam,
                                        state.material.friction_alpha)
    p.F_E = fe_trial
    if np.any(changed):
        idx = np.nonzero(changed)[0]
        p.F_E[idx] = np.einsum("nik,nk,nkj->nij", u[idx], np.exp(eps_new[idx]), vh[idx])
        vmat = np.swapaxes(vh[idx], 1, 2)
        pmat = np.einsum("nik,nk,njk->nij", vmat, np.exp(eps[idx] - eps_new[idx]), vmat)
        p.F_P[idx] = np.matmul(pmat, p.F_P[idx])
    bad = ~np.isfinite(p.v).all(axis=1)
    if np.any(bad):
        raise SimulationDivergedError(state.step_index, int(np.nonzero(bad)[0][0]))


def _node_positions(grid, ids):
    ny, nz = int(grid.dims[1]), int(grid.dims[2])
    iz = ids % nz
    iy = (ids // nz) % ny
    ix = ids // (nz * ny)
    return grid.origin + grid.dx * np.stack([ix, iy, iz], axis=-1).astype(np.float64)


def run(state: SimState, n_steps=None, checkpoint_every=None, out_dir=None,
        backend="auto", threads=1, stop_speed=None, stop_check_every=25,
        progress_every=0):
    """Run the stepper, emitting checkpoints.

    Checkpoints are written at step 0, every `checkpoint_every` steps, and at
    the final step. When `stop_speed` is set the run ends early once the
    maximum particle speed drops below it (checked every `stop_check_every`
    steps). Returns the list of checkpoint entries; with `out_dir` unset the
    entries hold in-memory arrays instead of files.
    """
    cfg = state.config
    n_steps = cfg.n_steps if n_steps is None else int(n_steps)
    checkpoint_every = cfg.checkpoint_every if checkpoint_every is None else int(checkpoint_every)
    if checkpoint_every <= 0:
        checkpoint_every = max(1, n_steps)
    entries = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def emit():
        p = state.particles
        entry = {"step": state.step_index, "time": state.time}
        if out_dir is None:
            entry.update(x=p.x.copy(), v=p.v.copy(), source=p.source.copy())
        else:
            name = f"checkpoint_{state.step_index:08d}.bin"
            ckpt.write_checkpoint(out_dir / name, state.step_index, p.x, p.v, p.source)
            entry["file"] = name
        entries.append(entry)

    emit()
    stopped = False
    for i in range(n_steps):
        step(state, backend=backend, threads=threads)
        if (i + 1) % checkpoint_every == 0:
            emit()
        if progress_every and (i + 1) % progress_every == 0:
            log.info("step %d/%d t=%.4f max|v|=%.3e", i + 1, n_steps, state.time,
                     state.particles.max_speed())
        if stop_speed is not None and (i + 1) % stop_check_every == 0:
            if state.particles.max_speed() < stop_speed:
                stopped = True
                break
    if not entries or entries[-1]["step"] != state.step_index:
        emit()

    if out_dir is not None:
        cfg_doc = {
            "dx": cfg.dx,
            "domain_lo": cfg.domain_lo.tolist(),
            "domain_hi": cfg.domain_hi.tolist(),
            "dt": state.dt,
            "n_steps": n_steps,
            "boundary": cfg.boundary,
            "cfl_max": cfg.cfl_max,
            "checkpoint_every": checkpoint_every,
            "transfer": cfg.transfer,
        }
        mat = asdict(state.material)
        mat["gravity"] = state.material.gravity.tolist()
        ckpt.write_manifest(
            out_dir / "manifest.json",
            [{k: e[k] for k in ("step", "time", "file")} for e in entries],
            config=cfg_doc, material=mat, n_particles=len(state.particles),
            dt=state.dt, extra={"stopped_at_rest": stopped},
        )
    return entries
