"""Hencky elasticity and the Drucker-Prager return mapping."""

import math

import numpy as np
import pytest

from splatsim.errors import DegenerateStateError
from splatsim.mpm import MaterialParams, kirchhoff_batch, project_hencky, stress, yield_value
from splatsim.mpm.types import ParticleSet

MAT = MaterialParams()  # E=5e7, nu=0.3, phi=22deg, rho=2000


class TestMaterialParams:
    def test_lame_constants(self):
        e, nu = MAT.youngs_modulus, MAT.poisson_ratio
        assert MAT.mu == pytest.approx(e / (2 * (1 + nu)))
        assert MAT.lam == pytest.approx(e * nu / ((1 + nu) * (1 - 2 * nu)))

    def test_friction_alpha_from_angle(self):
        s = math.sin(math.radians(22.0))
        expect = math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)
        assert MAT.friction_alpha == pytest.approx(expect, rel=1e-12)
        assert MAT.friction_alpha == pytest.approx(0.23299, abs=1e-4)

    def test_invalid_params_rejected(self):
        from splatsim.errors import ConfigError
        with pytest.raises(ConfigError):
            MaterialParams(poisson_ratio=0.5)
        with pytest.raises(ConfigError):
            MaterialParams(youngs_modulus=-1.0)
        with pytest.raises(ConfigError):
            MaterialParams(friction_angle=95.0)


class TestStress:
    def test_rest_state_zero(self):
        sigma = stress(np.eye(3), MAT)
        assert np.all(sigma == 0.0)

    def test_isotropic_stretch_closed_form(self):
        # F = c I: sigma = (2 mu + 3 lam) ln(c) / c^3 * I
        for c in (0.95, 0.99, 1.02, 1.1):
            sigma = stress(c * np.eye(3), MAT)
            expect = (2 * MAT.mu + 3 * MAT.lam) * math.log(c) / c ** 3
            assert np.allclose(sigma, expect * np.eye(3), rtol=1e-9)

    def test_symmetric_for_random_f(self, rng):
        for _ in range(50):
            f = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
            if np.linalg.det(f) <= 0.05:
                continue
            sigma = stress(f, MAT)
            assert np.allclose(sigma, sigma.T, atol=1e-9 * max(1.0, np.abs(sigma).max()))

    def test_small_strain_tangent_matches_linear_elasticity(self):
        # Central differences of sigma around F = I against the analytic
        # stiffness C_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk).
        h = 1e-5
        mu, lam = MAT.mu, MAT.lam
        for (k, l) in [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]:
            de = np.zeros((3, 3))
            de[k, l] = de[l, k] = h  # symmetric strain perturbation
            sp = stress(np.eye(3) + de, MAT)
            sm = stress(np.eye(3) - de, MAT)
            tangent = (sp - sm) / (2 * h)
            expect = lam * np.trace(de) / h * np.eye(3) + 2 * mu * de / h
            scale = np.abs(expect).max()
            assert np.abs(tangent - expect).max() < 0.01 * scale

    def test_degenerate_f_rejected(self):
        with pytest.raises(DegenerateStateError):
            stress(np.diag([1.0, 1.0, 0.0]), MAT)
        with pytest.raises(DegenerateStateError):
            stress(np.diag([1.0, 1.0, -1.0]), MAT)

    def test_batch_names_particle(self):
        fe = np.tile(np.eye(3), (4, 1, 1))
        fe[2] = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(DegenerateStateError, match="2"):
            kirchhoff_batch(fe, MAT)


class TestReturnMapping:
    def test_inside_cone_untouched(self):
        # pure compression small enough to stay elastic
        eps = np.array([[-1e-4, -1e-4, -1e-4]])
        assert yield_value(eps, MAT)[0] < 0.0
        eps_new, changed = project_hencky(eps, MAT)
        assert not changed[0]
        assert np.array_equal(eps_new, eps)

    def test_tension_goes_to_apex(self):
        eps = np.array([[1e-3, 2e-3, 0.5e-3]])
        eps_new, changed = project_hencky(eps, MAT)
        assert changed[0]
        assert np.all(eps_new == 0.0)

    def test_shear_projected_onto_cone(self):
        eps = np.array([[5e-3, -6e-3, 0.0]])  # strong deviatoric part
        assert yield_value(eps, MAT)[0] > 0.0
        eps_new, changed = project_hencky(eps, MAT)
        assert changed[0]
        # after projection the state sits on the yield surface
        assert yield_value(eps_new, MAT)[0] == pytest.approx(0.0, abs=1e-12)
        # volumetric part is preserved by the deviatoric projection
        assert eps_new.sum() == pytest.approx(eps.sum(), rel=1e-12)

    def test_projection_idempotent(self, rng):
        eps = rng.uniform(-5e-3, 5e-3, (500, 3))
        once, _ = project_hencky(eps, MAT)
        twice, _ = project_hencky(once, MAT)
        assert np.abs(twice - once).max() < 1e-12

    def test_compression_with_yield_inside_cone_is_identity(self):
        # hydrostatic compression plus slight deviatoric, inside the cone
        eps = np.array([[-2e-3, -2.1e-3, -2.05e-3]])
        assert yield_value(eps, MAT)[0] < 0.0
        eps_new, changed = project_hencky(eps, MAT)
        assert not changed[0]


class TestDeformationSplit:
    def test_fe_fp_product_tracks_total(self, rng):
        # Run a shearing velocity field for a few steps and check
        # F_E F_P equals the accumulated trial total deformation.
        from splatsim.mpm import SimConfig, make_state, step

        mat = MaterialParams(youngs_modulus=1e6)
        cfg = SimConfig(dx=0.1, domain_lo=(0, 0, 0), domain_hi=(2, 2, 2),
                        cfl_max=0.4)
        parts = ParticleSet.lattice(lo=(0.8, 0.8, 0.8), hi=(1.2, 1.2, 1.2),
                                    spacing=0.05, density=1000.0)
        parts.v[:, 0] = 2.0 * (parts.x[:, 1] - 1.0)  # shear vx(y)
        state = make_state(parts, mat, cfg)
        total = np.tile(np.eye(3), (len(parts), 1, 1))
        from splatsim._kernels import pyk
        for _ in range(20):
            # accumulate the same trial increment the solver applies
            ids, w, grads = pyk._stencil(state.particles.x, state.grid.origin,
                                         1.0 / state.grid.dx, state.grid.dims)
            step(state, backend="python")
            grad_v = np.einsum("noa,nob->nab", state.grid.v[ids], grads)
            total = np.matmul(np.eye(3) + state.dt * grad_v, total)
            prod = np.matmul(state.particles.F_E, state.particles.F_P)
            err = np.abs(prod - total).max()
            assert err < 1e-6, f"FE FP diverged from total F by {err}"

    def test_det_fe_stays_positive(self, rng):
        from splatsim.mpm import SimConfig, make_state, step

        mat = MaterialParams()
        cfg = SimConfig(dx=0.1, domain_lo=(0, 0, 0), domain_hi=(2, 2, 1),
                        cfl_max=0.4)
        parts = ParticleSet.lattice(lo=(0.7, 0.7, 0.0), hi=(1.3, 1.3, 0.4),
                                    spacing=0.05, density=2000.0)
        state = make_state(parts, mat, cfg)
        for _ in range(100):
            step(state, backend="auto")
        dets = np.linalg.det(state.particles.F_E)
        assert np.all(dets > 0.0)
