"""Gaussian primitive math and splat PLY round-trips."""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatsim.errors import InvalidPrimitiveError, PlyFormatError
from splatsim.gaussian_scene import (
    SH_C0,
    Gaussian,
    Scene,
    base_color,
    concat_scenes,
    covariance,
    density_at,
    load_ply,
    quat_to_matrix,
    save_ply,
)

from conftest import random_scene


def make_gaussian(log_scale=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0),
                  center=(0.0, 0.0, 0.0), sh_dc=(0.0, 0.0, 0.0), opacity_logit=0.0):
    return Gaussian(center=np.array(center), log_scale=np.array(log_scale),
                    rotation=np.array(rotation), opacity_logit=opacity_logit,
                    sh_dc=np.array(sh_dc))


class TestCovariance:
    def test_axis_aligned_diagonal(self):
        g = make_gaussian(log_scale=np.log([1.0, 2.0, 3.0]))
        assert np.allclose(covariance(g), np.diag([1.0, 4.0, 9.0]))

    def test_isotropic_rotation_invariant(self, rng):
        for _ in range(20):
            q = rng.standard_normal(4)
            g = make_gaussian(rotation=q)
            assert np.allclose(covariance(g), np.eye(3), atol=1e-12)

    def test_quarter_turn_swaps_axes(self):
        # 90 degrees about z maps the stretched x-axis onto y.
        q = (math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4))
        g = make_gaussian(log_scale=(math.log(2.0), 0.0, 0.0), rotation=q)
        assert np.allclose(covariance(g), np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_eigenvalues_are_squared_scales(self, rng):
        for _ in range(50):
            ls = np.log(rng.uniform(0.1, 3.0, 3))
            q = rng.standard_normal(4)
            g = make_gaussian(log_scale=ls, rotation=q)
            cov = covariance(g)
            assert np.allclose(cov, cov.T, atol=0.0), "must be symmetric by construction"
            ev = np.sort(np.linalg.eigvalsh(cov))
            expect = np.sort(np.exp(2 * ls))
            assert np.allclose(ev, expect, rtol=1e-9)

    def test_nonfinite_rejected(self):
        g = make_gaussian()
        g.log_scale[1] = np.nan
        with pytest.raises(InvalidPrimitiveError):
            covariance(g)


class TestDensity:
    def test_peak_at_center(self):
        g = make_gaussian(center=(1.0, 2.0, 3.0))
        assert density_at(g, (1.0, 2.0, 3.0)) == pytest.approx(1.0)

    def test_unit_mahalanobis(self):
        g = make_gaussian()
        assert density_at(g, (1.0, 0.0, 0.0)) == pytest.approx(math.exp(-0.5))

    def test_diagonal_quadratic_form(self):
        g = make_gaussian(log_scale=0.5 * np.log([1.0, 4.0, 9.0]))
        # offsets equal to one stddev per axis: quadratic form 1+1+1
        assert density_at(g, (1.0, 2.0, 3.0)) == pytest.approx(math.exp(-1.5))

    def test_degenerate_covariance_rejected(self):
        from splatsim.errors import DegeneratePrimitiveError
        g = make_gaussian(log_scale=(-800.0, 0.0, 0.0))  # exp underflows to 0
        with pytest.raises(DegeneratePrimitiveError):
            density_at(g, (0.5, 0.0, 0.0))

    def test_rotation_invariance(self, rng):
        # Rotating both the Gaussian and the sample point about the center
        # leaves the density unchanged.
        g = make_gaussian(log_scale=np.log([0.5, 1.0, 2.0]),
                          center=(1.0, -2.0, 0.5))
        x = np.array([1.7, -1.2, 1.1])
        base = density_at(g, x)
        for _ in range(20):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            rot = quat_to_matrix(q)
            g_rot = make_gaussian(log_scale=g.log_scale, rotation=q,
                                  center=g.center)
            x_rot = g.center + rot @ (x - g.center)
            assert density_at(g_rot, x_rot) == pytest.approx(base, rel=1e-9)


class TestBaseColor:
    def test_zero_coefficients_mid_gray(self):
        assert np.allclose(base_color(make_gaussian()), [0.5, 0.5, 0.5])

    def test_red_channel_clamps_at_one(self):
        c = 0.5 / SH_C0  # solves 0.5 + C0 c = 1
        g = make_gaussian(sh_dc=(c * 1.00001, 0.0, 0.0))
        assert np.allclose(base_color(g), [1.0, 0.5, 0.5])
        g2 = make_gaussian(sh_dc=(c, 0.0, 0.0))
        assert base_color(g2)[0] == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_negative_black(self):
        c = -0.5 / SH_C0
        g = make_gaussian(sh_dc=(c - 0.001, c - 0.001, c - 0.001))
        assert np.allclose(base_color(g), [0.0, 0.0, 0.0])

    @given(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_monotone_per_channel(self, a, b):
        lo, hi = min(a, b), max(a, b)
        ca = base_color(make_gaussian(sh_dc=(lo, 0, 0)))[0]
        cb = base_color(make_gaussian(sh_dc=(hi, 0, 0)))[0]
        assert ca <= cb + 1e-12


class TestPlyRoundTrip:
    def test_empty_scene(self):
        scene = load_ply(save_ply(Scene.empty()))
        assert len(scene) == 0

    def test_zero_vertex_file(self):
        props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                 + [f"f_rest_{i}" for i in range(45)]
                 + ["opacity", "scale_0", "scale_1", "scale_2",
                    "rot_0", "rot_1", "rot_2", "rot_3"])
        header = "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
        header += "".join(f"property float {p}\n" for p in props)
        header += "end_header\n"
        scene = load_ply(header.encode())
        assert len(scene) == 0

    def test_single_gaussian_known_bytes(self):
        # Independent writer: build the file by hand with struct.
        props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                 + [f"f_rest_{i}" for i in range(45)]
                 + ["opacity", "scale_0", "scale_1", "scale_2",
                    "rot_0", "rot_1", "rot_2", "rot_3"])
        header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        header += "".join(f"property float {p}\n" for p in props)
        header += "end_header\n"
        vals = ([1.5, -2.25, 3.75] + [0, 0, 0] + [0.5, -0.5, 0.25]
                + [0.01 * i for i in range(45)]
                + [1.25] + [-2.0, -2.5, -3.0] + [0.5, 0.5, 0.5, 0.5])
        payload = struct.pack("<62f", *vals)
        scene = load_ply(header.encode() + payload)
        assert len(scene) == 1
        g = scene[0]
        assert np.allclose(g.center, [1.5, -2.25, 3.75])
        assert np.allclose(g.sh_dc, [0.5, -0.5, 0.25])
        assert np.allclose(g.sh_rest, np.float32([0.01 * i for i in range(45)]))
        assert g.opacity_logit == pytest.approx(1.25)
        assert np.allclose(g.log_scale, [-2.0, -2.5, -3.0])
        assert np.allclose(g.rotation, [0.5, 0.5, 0.5, 0.5])

    def test_round_trip_payload_bytes(self, rng):
        scene = random_scene(100, rng)
        data = save_ply(scene)
        again = save_ply(load_ply(data))
        # Property payloads (after the header) must be bit-identical.
        p1 = data[data.index(b"end_header\n") + len(b"end_header\n"):]
        p2 = again[again.index(b"end_header\n") + len(b"end_header\n"):]
        assert p1 == p2

    def test_scene_round_trip_values(self, rng):
        scene = random_scene(17, rng, frame="enu")
        back = load_ply(save_ply(scene))
        assert back.frame == "enu"
        for attr in ("centers", "log_scales", "rotations", "opacity_logits",
                     "sh_dc", "sh_rest"):
            assert np.array_equal(getattr(scene, attr), getattr(back, attr)), attr

    def test_fewer_f_rest_zero_padded(self):
        props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                 + [f"f_rest_{i}" for i in range(9)]
                 + ["opacity", "scale_0", "scale_1", "scale_2",
                    "rot_0", "rot_1", "rot_2", "rot_3"])
        header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        header += "".join(f"property float {p}\n" for p in props)
        header += "end_header\n"
        vals = [0.0] * 6 + [0.1, 0.2, 0.3] + [1.0] * 9 + [0.0, -1, -1, -1, 1, 0, 0, 0]
        scene = load_ply(header.encode() + struct.pack(f"<{len(vals)}f", *vals))
        assert np.allclose(scene.sh_rest[0, :9], 1.0)
        assert np.all(scene.sh_rest[0, 9:] == 0.0)


class TestPlyErrors:
    def _header(self, props, count=1, element="vertex", fmt="binary_little_endian"):
        h = f"ply\nformat {fmt} 1.0\nelement {element} {count}\n"
        h += "".join(f"property float {p}\n" for p in props)
        return (h + "end_header\n").encode()

    def test_missing_property_named(self, rng):
        data = save_ply(random_scene(1, rng))
        broken = data.replace(b"property float opacity\n", b"")
        with pytest.raises(PlyFormatError, match="opacity"):
            load_ply(broken)

    def test_wrong_element_name(self):
        data = self._header(["x", "y", "z"], element="face")
        with pytest.raises(PlyFormatError, match="face"):
            load_ply(data)

    def test_truncated_payload(self, rng):
        data = save_ply(random_scene(3, rng))
        with pytest.raises(PlyFormatError, match="truncated"):
            load_ply(data[:-8])

    def test_big_endian_rejected(self):
        data = self._header(["x"], fmt="binary_big_endian")
        with pytest.raises(PlyFormatError, match="little_endian"):
            load_ply(data)

    def test_unexpected_property_named(self, rng):
        data = save_ply(random_scene(1, rng))
        broken = data.replace(b"property float nx\n",
                              b"property float red\n")
        with pytest.raises(PlyFormatError, match="red"):
            load_ply(broken)

    def test_double_typed_property_rejected(self):
        data = self._header(["x"]).replace(b"property float x",
                                           b"property double x")
        with pytest.raises(PlyFormatError, match="x"):
            load_ply(data)


class TestScene:
    def test_from_gaussians_round_trip(self, rng):
        scene = random_scene(5, rng)
        rebuilt = Scene.from_gaussians(list(scene), frame=scene.frame)
        assert np.allclose(rebuilt.centers, scene.centers)
        assert np.allclose(rebuilt.sh_rest, scene.sh_rest)

    def test_concat_order_stable(self, rng):
        a, b = random_scene(3, rng), random_scene(4, rng)
        c = concat_scenes(a, b)
        assert len(c) == 7
        assert np.array_equal(c.centers[:3], a.centers)
        assert np.array_equal(c.centers[3:], b.centers)

    def test_with_centers_leaves_rest_shared(self, rng):
        scene = random_scene(4, rng)
        moved = scene.with_centers(scene.centers + 1.0)
        assert moved.log_scales is scene.log_scales
        assert np.allclose(moved.centers, scene.centers + 1.0)

    def test_activated_opacity_in_unit_interval(self, rng):
        scene = random_scene(64, rng)
        op = scene.activated_opacities()
        assert np.all((op > 0) & (op < 1))
