"""Projection, depth-ordered compositing, and frame output."""

import numpy as np
import pytest

from splatsim import _kernels
from splatsim.errors import CheckpointError
from splatsim.gaussian_scene import SH_C0, Scene
from splatsim.mpm.types import SOURCE_NONE
from splatsim.render import (
    Camera,
    eval_sh,
    png_bytes,
    ppm_bytes,
    project_gaussian,
    read_ppm,
    render,
    render_sequence,
    scene_with_checkpoint,
)
from splatsim.render.rasterizer import DEFAULT_COV_FLOOR

BACKENDS = _kernels.available_backends()


def make_camera(width=101, height=81, fx=100.0, z_offset=5.0):
    # camera at origin looking along +x so that ENU +x is "forward"
    return Camera.from_look_at(position=(0.0, 0.0, 0.0), target=(1.0, 0.0, 0.0),
                               fx=fx, width=width, height=height, near=0.1)


def splat_scene(entries):
    """entries: list of (center, sigma, opacity_logit, rgb_dc)."""
    centers, logs, opac, dc = [], [], [], []
    for center, sigma, logit, color in entries:
        centers.append(center)
        logs.append(np.log([sigma] * 3))
        opac.append(logit)
        dc.append((np.asarray(color) - 0.5) / SH_C0)
    n = len(centers)
    return Scene(np.array(centers), np.array(logs),
                 np.tile([1.0, 0, 0, 0], (n, 1)), np.array(opac), np.array(dc))


def logit(p):
    return float(np.log(p / (1 - p)))


class TestProjection:
    def test_on_axis_hits_principal_point(self):
        cam = make_camera()
        scene = splat_scene([((4.0, 0.0, 0.0), 0.05, 0.0, (1, 0, 0))])
        mean2d, cov2d, depth = project_gaussian(scene[0], cam)
        assert np.allclose(mean2d, [cam.cx, cam.cy], atol=1e-9)
        assert depth == pytest.approx(4.0)

    def test_on_axis_isotropic_cov(self):
        cam = make_camera()
        s, z = 0.05, 4.0
        scene = splat_scene([((z, 0.0, 0.0), s, 0.0, (1, 0, 0))])
        _, cov2d, _ = project_gaussian(scene[0], cam)
        expect = (cam.fx * s / z) ** 2
        assert cov2d[0, 0] == pytest.approx(expect + DEFAULT_COV_FLOOR, rel=1e-9)
        assert cov2d[1, 1] == pytest.approx(expect + DEFAULT_COV_FLOOR, rel=1e-9)
        assert abs(cov2d[0, 1]) < 1e-12

    def test_behind_camera_culled(self):
        cam = make_camera()
        scene = splat_scene([((-2.0, 0.0, 0.0), 0.05, 0.0, (1, 0, 0))])
        assert project_gaussian(scene[0], cam) is None

    def test_at_near_plane_culled(self):
        cam = make_camera()
        scene = splat_scene([((0.1, 0.0, 0.0), 0.05, 0.0, (1, 0, 0))])
        assert project_gaussian(scene[0], cam) is None


class TestRender:
    def test_empty_scene_is_background(self):
        cam = make_camera()
        bg = (0.25, 0.5, 0.75)
        frame = render(Scene.empty(), cam, bg)
        expect = np.rint(np.array(bg) * 255).astype(np.uint8)
        assert np.all(frame.pixels == expect)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_single_splat_center_pixel(self, backend):
        cam = make_camera()
        a, c = 0.7, np.array([0.9, 0.3, 0.1])
        scene = splat_scene([((4.0, 0.0, 0.0), 0.08, logit(a), c)])
        frame = render(scene, cam, (0.0, 0.0, 0.0), backend=backend)
        center = frame.pixels[int(cam.cy), int(cam.cx)] / 255.0
        assert np.all(np.abs(center - a * c) <= 1.0 / 255.0 + 1e-9)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_two_coincident_splats_composite(self, backend):
        cam = make_camera()
        a1, c1 = 0.6, np.array([1.0, 0.0, 0.0])
        a2, c2 = 0.8, np.array([0.0, 1.0, 0.0])
        scene = splat_scene([
            ((4.0, 0.0, 0.0), 0.08, logit(a1), c1),
            ((4.5, 0.0, 0.0), 0.08, logit(a2), c2),
        ])
        frame = render(scene, cam, (0.0, 0.0, 0.0), backend=backend)
        center = frame.pixels[int(cam.cy), int(cam.cx)] / 255.0
        expect = a1 * c1 + (1 - a1) * a2 * c2
        assert np.all(np.abs(center - expect) <= 2.0 / 255.0 + 1e-9)

    def test_depth_order_independent_of_scene_order(self, rng):
        cam = make_camera()
        entries = []
        for i in range(12):
            entries.append(((rng.uniform(3, 6), rng.uniform(-0.5, 0.5),
                             rng.uniform(-0.4, 0.4)), 0.1,
                            rng.uniform(-1, 2), rng.uniform(0, 1, 3)))
        scene = splat_scene(entries)
        frame1 = render(scene, cam, (0, 0, 0))
        perm = rng.permutation(len(entries))
        scene2 = splat_scene([entries[i] for i in perm])
        frame2 = render(scene2, cam, (0, 0, 0))
        assert np.array_equal(frame1.pixels, frame2.pixels)

    def test_weights_partition_with_background(self, rng):
        cam = make_camera()
        entries = [((rng.uniform(2, 8), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                    rng.uniform(0.05, 0.4), rng.uniform(-2, 4), rng.uniform(0, 1, 3))
                   for _ in range(40)]
        scene = splat_scene(entries)
        _, bufs = render(scene, cam, (0, 0, 0), return_buffers=True)
        total = bufs["weight"] + bufs["transmittance"]
        assert np.abs(total - 1.0).max() < 1e-6

    def test_opacity_zero_changes_nothing(self):
        cam = make_camera()
        base = splat_scene([((4.0, 0.2, 0.1), 0.1, 1.0, (0.2, 0.6, 0.9))])
        with_ghost = splat_scene([
            ((4.0, 0.2, 0.1), 0.1, 1.0, (0.2, 0.6, 0.9)),
            ((3.0, -0.3, 0.0), 0.3, -60.0, (1.0, 0.0, 0.0)),  # sigmoid ~ 1e-26
        ])
        f1 = render(base, cam, (0, 0, 0))
        f2 = render(with_ghost, cam, (0, 0, 0))
        assert np.array_equal(f1.pixels, f2.pixels)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_tiled_matches_untiled_exactly(self, backend, rng):
        cam = make_camera(width=97, height=63)
        entries = [((rng.uniform(2, 8), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                    rng.uniform(0.05, 0.4), rng.uniform(-2, 4), rng.uniform(0, 1, 3))
                   for _ in range(60)]
        scene = splat_scene(entries)
        whole = render(scene, cam, (0.1, 0.2, 0.3), backend=backend)
        tiled = render(scene, cam, (0.1, 0.2, 0.3), backend=backend, tile_size=16)
        threaded = render(scene, cam, (0.1, 0.2, 0.3), backend=backend,
                          tile_size=16, threads=4)
        assert np.array_equal(whole.pixels, tiled.pixels)
        assert np.array_equal(whole.pixels, threaded.pixels)

    def test_backends_match_within_quantization(self, rng):
        if len(BACKENDS) < 2:
            pytest.skip("native backend not built")
        cam = make_camera()
        entries = [((rng.uniform(2, 8), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                    rng.uniform(0.05, 0.4), rng.uniform(-2, 4), rng.uniform(0, 1, 3))
                   for _ in range(30)]
        scene = splat_scene(entries)
        f1 = render(scene, cam, (0, 0, 0), backend="python")
        f2 = render(scene, cam, (0, 0, 0), backend="native")
        diff = np.abs(f1.pixels.astype(int) - f2.pixels.astype(int))
        assert diff.max() <= 1


class TestSphericalHarmonics:
    def test_degree_zero_is_base_color(self, rng):
        dc = rng.uniform(-1, 1, (5, 3))
        rest = rng.uniform(-1, 1, (5, 45))
        dirs = rng.standard_normal((5, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        out = eval_sh(dc, rest, dirs, 0)
        assert np.allclose(out, np.clip(0.5 + SH_C0 * dc, 0, 1))

    def test_degree_one_single_coefficient(self):
        # only the z-linear band-1 coefficient set on the red channel
        dc = np.zeros((1, 3))
        rest = np.zeros((1, 45))
        rest[0, 1] = 1.0  # red channel, k=1 basis element (C1 * z)
        d = np.array([[0.0, 0.0, 1.0]])
        out = eval_sh(dc, rest, d, 1)
        expect = 0.5 + 0.4886025119029199 * 1.0
        assert out[0, 0] == pytest.approx(expect, rel=1e-12)
        assert out[0, 1] == pytest.approx(0.5)


class TestSequence:
    def _scene_and_cam(self):
        cam = make_camera()
        scene = splat_scene([
            ((4.0, 0.0, 0.0), 0.1, 1.5, (1.0, 0.2, 0.2)),
            ((5.0, 0.5, 0.2), 0.1, 1.5, (0.2, 1.0, 0.2)),
        ])
        return scene, cam

    def test_zero_motion_frames_identical(self, tmp_path):
        scene, cam = self._scene_and_cam()
        entries = [
            {"step": 0, "x": scene.centers.copy(),
             "source": np.arange(2, dtype=np.uint32)},
            {"step": 10, "x": scene.centers.copy(),
             "source": np.arange(2, dtype=np.uint32)},
        ]
        files = render_sequence(entries, scene, cam, tmp_path, (0, 0, 0))
        assert [f.name for f in files] == ["frame_000000.ppm", "frame_000001.ppm"]
        assert files[0].read_bytes()[files[0].read_bytes().index(b"255"):] \
            == files[1].read_bytes()[files[1].read_bytes().index(b"255"):]

    def test_translation_shifts_projection(self):
        scene, cam = self._scene_and_cam()
        delta = 0.2  # along ENU y = camera -x direction
        moved = scene_with_checkpoint(
            scene, scene.centers + np.array([0.0, delta, 0.0]),
            np.arange(2, dtype=np.uint32))
        m0, _, z0 = project_gaussian(scene[0], cam)
        m1, _, _ = project_gaussian(moved[0], cam)
        assert abs(abs(m1[0] - m0[0]) - cam.fx * delta / z0) < 1e-9

    def test_source_none_rows_stay_put(self):
        scene, cam = self._scene_and_cam()
        x = scene.centers + 7.0
        source = np.array([SOURCE_NONE, 1], dtype=np.uint32)
        posed = scene_with_checkpoint(scene, x, source)
        assert np.allclose(posed.centers[0], scene.centers[0])
        assert np.allclose(posed.centers[1], x[1])

    def test_bad_source_index_raises(self):
        scene, cam = self._scene_and_cam()
        with pytest.raises(CheckpointError, match="5"):
            scene_with_checkpoint(scene, scene.centers,
                                  np.array([0, 5], dtype=np.uint32))

    def test_sequence_reads_checkpoint_files(self, tmp_path):
        from splatsim.mpm import write_checkpoint
        scene, cam = self._scene_and_cam()
        p = tmp_path / "c0.bin"
        write_checkpoint(p, 0, scene.centers, np.zeros((2, 3)),
                         np.arange(2, dtype=np.uint32))
        files = render_sequence([{"file": str(p)}], scene, cam,
                                tmp_path / "frames", (0, 0, 0), png=True)
        assert files[0].exists()
        assert files[0].with_suffix(".png").exists()


class TestImageIO:
    def test_ppm_round_trip(self, rng):
        img = rng.integers(0, 256, (7, 5, 3), dtype=np.uint8)
        back = read_ppm(ppm_bytes(img))
        assert np.array_equal(img, back)

    def test_png_decodes(self, rng):
        import struct
        import zlib
        img = rng.integers(0, 256, (4, 3, 3), dtype=np.uint8)
        data = png_bytes(img)
        assert data.startswith(b"\x89PNG")
        # decode IDAT manually and undo the per-row null filter
        idat_start = data.index(b"IDAT") + 4
        (length,) = struct.unpack(">I", data[idat_start - 8:idat_start - 4])
        raw = zlib.decompress(data[idat_start:idat_start + length])
        rows = np.frombuffer(raw, np.uint8).reshape(4, 1 + 3 * 3)
        assert np.all(rows[:, 0] == 0)
        assert np.array_equal(rows[:, 1:].reshape(4, 3, 3), img)


class TestRasterizerKnobs:
    def test_cov_floor_exposed(self):
        cam = make_camera()
        scene = splat_scene([((4.0, 0.0, 0.0), 0.05, 0.0, (1, 0, 0))])
        _, cov_a, _ = project_gaussian(scene[0], cam, cov_floor=0.3)
        _, cov_b, _ = project_gaussian(scene[0], cam, cov_floor=1.3)
        assert cov_b[0, 0] - cov_a[0, 0] == pytest.approx(1.0, rel=1e-12)

    def test_alpha_cutoff_widens_footprint(self):
        cam = make_camera()
        scene = splat_scene([((4.0, 0.0, 0.0), 0.15, 2.0, (1, 1, 1))])
        strict = render(scene, cam, (0, 0, 0), alpha_cutoff=0.2)
        loose = render(scene, cam, (0, 0, 0), alpha_cutoff=1.0 / 255.0)
        lit_strict = (strict.pixels.max(axis=2) > 0).sum()
        lit_loose = (loose.pixels.max(axis=2) > 0).sum()
        assert lit_loose > lit_strict > 0
