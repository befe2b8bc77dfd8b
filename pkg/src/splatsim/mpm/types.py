"""Particle, grid, and configuration types for the MPM solver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from splatsim.errors import ConfigError

SOURCE_NONE = np.uint32(0xFFFFFFFF)  # particle not backed by a scene Gaussian

FACES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")


@dataclass
class MaterialParams:
    """Elastic constants, friction, density, and gravity for the sand model."""

    youngs_modulus: float = 5.0e7        # Pa
    poisson_ratio: float = 0.3
    friction_angle: float = 22.0         # degrees
    density: float = 2000.0              # kg/m^3
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.8]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        if not self.youngs_modulus > 0:
            raise ConfigError(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ConfigError(f"Poisson ratio must be in (0, 0.5), got {self.poisson_ratio}")
        if not 0.0 < self.friction_angle < 90.0:
            raise ConfigError(f"friction angle must be in (0, 90) degrees, got {self.friction_angle}")
        if not self.density > 0:
            raise ConfigError(f"density must be positive, got {self.density}")

    @property
    def mu(self):
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self):
        e, nu = self.youngs_modulus, self.poisson_ratio
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def friction_alpha(self):
        """Drucker-Prager cone coefficient from the friction angle."""
        s = math.sin(math.radians(self.friction_angle))
        return math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)

    @property
    def wave_speed(self):
        """Elastic wave speed bound sqrt(E / rho) used by the CFL check."""
        return math.sqrt(self.youngs_modulus / self.density)


def _normalize_boundary(bc):
    if isinstance(bc, str):
        bc = {f: bc for f in FACES}
    else:
        bc = {**{f: "slip" for f in FACES}, **dict(bc)}
    for face, mode in bc.items():
        if face not in FACES:
            raise ConfigError(f"unknown boundary face {face!r}")
        if mode not in ("slip", "sticky"):
            raise ConfigError(f"boundary mode must be slip or sticky, got {mode!r}")
    return bc


@dataclass
class SimConfig:
    """Time stepping, domain, and boundary setup."""

    dx: float
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    dt: float | None = None              # None: derived from the CFL bound
    n_steps: int = 0
    boundary: object = "slip"            # mode string or per-face dict
    cfl_max: float = 0.4
    checkpoint_every: int = 50
    transfer: str = "pic"                # "pic" (reference) or "apic"

    def __post_init__(self):
        self.domain_lo = np.asarray(self.domain_lo, dtype=np.float64).reshape(3)
        self.domain_hi = np.asarray(self.domain_hi, dtype=np.float64).reshape(3)
        if not self.dx > 0:
            raise ConfigError(f"dx must be positive, got {self.dx}")
        if not np.all(self.domain_hi > self.domain_lo):
            raise ConfigError("domain_hi must exceed domain_lo on every axis")
        if not 0 < self.cfl_max:
            raise ConfigError(f"cfl_max must be positive, got {self.cfl_max}")
        if self.transfer not in ("pic", "apic"):
            raise ConfigError(f"transfer must be pic or apic, got {self.transfer!r}")
        self.boundary = _normalize_boundary(self.boundary)

    def stable_dt(self, material: MaterialParams):
        return self.cfl_max * self.dx / material.wave_speed

    def resolve_dt(self, material: MaterialParams):
        """Configured dt validated against the CFL bound, or the bound itself."""
        limit = self.stable_dt(material)
        if self.dt is None:
            return limit
        if self.dt > limit * (1.0 + 1e-12):
            raise ConfigError(
                f"dt={self.dt} violates CFL bound {limit:.3e} "
                f"(cfl_max={self.cfl_max}, dx={self.dx}, c={material.wave_speed:.3f})"
            )
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        return self.dt


class ParticleSet:
    """Struct-of-arrays material point state."""

    def __init__(self, x, v, mass, volume0, source=None):
        self.x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, 3)
        n = len(self.x)
        self.v = np.ascontiguousarray(v, dtype=np.float64).reshape(n, 3)
        self.mass = np.ascontiguousarray(mass, dtype=np.float64).reshape(n)
        self.volume0 = np.ascontiguousarray(volume0, dtype=np.float64).reshape(n)
        self.F_E = np.tile(np.eye(3), (n, 1, 1))
        self.F_P = np.tile(np.eye(3), (n, 1, 1))
        if source is None:
            source = np.full(n, SOURCE_NONE, dtype=np.uint32)
        self.source = np.ascontiguousarray(source, dtype=np.uint32).reshape(n)
        self.escaped = np.zeros(n, dtype=bool)
        self.affine = None               # (N,3,3) APIC velocity matrix when enabled
        self.n_rejected = 0

    def __len__(self):
        return len(self.x)

    def copy(self):
        out = ParticleSet(self.x.copy(), self.v.copy(), self.mass.copy(),
                          self.volume0.copy(), self.source.copy())
        out.F_E = self.F_E.copy()
        out.F_P = self.F_P.copy()
        out.escaped = self.escaped.copy()
        out.affine = None if self.affine is None else self.affine.copy()
        out.n_rejected = self.n_rejected
        return out

    def subset(self, mask):
        """Particles selected by a boolean mask; source indices are kept."""
        mask = np.asarray(mask, dtype=bool).reshape(len(self))
        out = ParticleSet(self.x[mask], self.v[mask], self.mass[mask],
                          self.volume0[mask], self.source[mask])
        out.F_E = self.F_E[mask].copy()
        out.F_P = self.F_P[mask].copy()
        out.escaped = self.escaped[mask].copy()
        out.n_rejected = self.n_rejected
        return out

    def total_mass(self):
        return float(self.mass.sum())

    def total_momentum(self):
        return (self.mass[:, None] * self.v).sum(axis=0)

    def max_speed(self):
        if len(self) == 0:
            return 0.0
        return float(np.sqrt((self.v ** 2).sum(axis=1)).max())

    @classmethod
    def lattice(cls, lo, hi, spacing, density, jitter=0.0, seed=0):
        """Regular (optionally jittered) particle block filling [lo, hi]."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        counts = np.maximum(np.round((hi - lo) / spacing).astype(int), 1)
        axes = [lo[a] + (np.arange(counts[a]) + 0.5) * (hi[a] - lo[a]) / counts[a]
                for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        x = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        if jitter > 0:
            rng = np.random.default_rng(seed)
            x = x + rng.uniform(-jitter, jitter, size=x.shape) * spacing
        vol = float(np.prod((hi - lo) / counts))
        n = len(x)
        return cls(x, np.zeros((n, 3)), np.full(n, density * vol), np.full(n, vol))


class GridState:
    """Background Eulerian grid covering the simulation domain plus padding.

    Nodes are indexed (ix, iy, iz), flat id (ix*ny + iy)*nz + iz. The domain
    box is padded by `pad` cells on every side so particle stencils near the
    boundary stay inside the array; boundary conditions act on the node bands
    at or beyond the original domain faces.
    """

    PAD = 2

    def __init__(self, dx, dims, origin, domain_lo=None, domain_hi=None):
        self.dx = float(dx)
        self.dims = np.asarray(dims, dtype=np.int64).reshape(3)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        nn = int(np.prod(self.dims))
        self.mass = np.zeros(nn)
        self.mom = np.zeros((nn, 3))
        self.v = np.zeros((nn, 3))
        self.f = np.zeros((nn, 3))
        self.domain_lo = self.origin + self.PAD * self.dx if domain_lo is None \
            else np.asarray(domain_lo, dtype=np.float64)
        self.domain_hi = self.origin + (self.dims - 1 - self.PAD) * self.dx \
            if domain_hi is None else np.asarray(domain_hi, dtype=np.float64)
        self._face_bands = self._build_face_bands()

    @classmethod
    def from_domain(cls, lo, hi, dx):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        ncells = np.ceil((hi - lo) / dx - 1e-9).astype(int)
        dims = ncells + 2 * cls.PAD + 1
        origin = lo - cls.PAD * dx
        snapped_hi = lo + ncells * dx
        return cls(dx, dims, origin, domain_lo=lo, domain_hi=snapped_hi)

    def _build_face_bands(self):
        """Per-face flat node ids at or outside the domain face planes."""
        nx, ny, nz = (int(d) for d in self.dims)
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        flat = ((ix * ny + iy) * nz + iz).ravel()
        coords = self.origin + self.dx * np.stack(
            [ix.ravel(), iy.ravel(), iz.ravel()], axis=1)
        eps = 1e-9 * self.dx
        bands = {}
        for a, axis in enumerate("xyz"):
            bands[f"{axis}_min"] = flat[coords[:, a] <= self.domain_lo[a] + eps]
            bands[f"{axis}_max"] = flat[coords[:, a] >= self.domain_hi[a] - eps]
        return bands

    def face_band(self, face):
        return self._face_bands[face]

    def reset(self):
        self.mass[:] = 0.0
        self.mom[:] = 0.0
        self.v[:] = 0.0
        self.f[:] = 0.0

    def n_nodes(self):
        return int(np.prod(self.dims))

    def node_coords(self):
        nx, ny, nz = (int(d) for d in self.dims)
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        return self.origin + self.dx * np.stack(
            [ix.ravel(), iy.ravel(), iz.ravel()], axis=1)

    def valid_lo(self):
        """Lowest particle position with a fully in-grid stencil."""
        return self.origin + 0.5 * self.dx

    def valid_hi(self):
        return self.origin + (self.dims - 1.5 - 1e-9) * self.dx
