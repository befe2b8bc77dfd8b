"""WGS84/ENU conversions and COLMAP record generation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatsim.errors import InvalidPoseError
from splatsim.geo_pose import (
    BODY_TO_CAMERA_AXES,
    GeoPose,
    attitude_to_rotation,
    ecef_to_enu,
    ecef_to_wgs84,
    enu_to_ecef,
    geopose_to_enu,
    matrix_to_quat,
    read_images_txt,
    read_pose_csv,
    to_colmap,
    wgs84_to_ecef,
    wrap_longitude,
    write_images_txt,
    write_origin_json,
)

A = 6378137.0
F = 1.0 / 298.257223563
B = A * (1.0 - F)

lat_st = st.floats(-89.9, 89.9, allow_nan=False)
lon_st = st.floats(-179.9, 180.0, allow_nan=False)
alt_st = st.floats(-100.0, 4000.0, allow_nan=False)


class TestEcef:
    def test_equator_prime_meridian(self):
        assert np.allclose(wgs84_to_ecef(0.0, 0.0, 0.0), [A, 0.0, 0.0], atol=1e-6)

    def test_north_pole(self):
        p = wgs84_to_ecef(90.0, 37.0, 0.0)
        assert np.allclose(p, [0.0, 0.0, B], atol=1e-6)

    def test_equator_90_east_with_altitude(self):
        p = wgs84_to_ecef(0.0, 90.0, 100.0)
        assert np.allclose(p, [0.0, A + 100.0, 0.0], atol=1e-6)

    def test_altitude_radial_at_equator(self):
        p0 = wgs84_to_ecef(0.0, 45.0, 0.0)
        p1 = wgs84_to_ecef(0.0, 45.0, 123.0)
        assert np.linalg.norm(p1) - np.linalg.norm(p0) == pytest.approx(123.0, abs=1e-6)


class TestEnu:
    def test_origin_maps_to_zero(self):
        origin = GeoPose(22.28, 114.22, 35.0)
        p = wgs84_to_ecef(origin.latitude, origin.longitude, origin.altitude)
        assert np.allclose(ecef_to_enu(p, origin), 0.0, atol=1e-9)

    def test_pure_up_displacement(self):
        origin = GeoPose(0.0, 0.0, 0.0)
        p = wgs84_to_ecef(0.0, 0.0, 50.0)
        assert np.allclose(ecef_to_enu(p, origin), [0.0, 0.0, 50.0], atol=1e-6)

    def test_small_northward_arc(self):
        # 1e-5 degrees along the meridian at the equator: M(0) * dphi.
        origin = GeoPose(0.0, 0.0, 0.0)
        p = wgs84_to_ecef(1e-5, 0.0, 0.0)
        enu = ecef_to_enu(p, origin)
        e2 = F * (2 - F)
        m0 = A * (1 - e2)  # meridian radius of curvature at the equator
        assert enu[1] == pytest.approx(m0 * math.radians(1e-5), abs=1e-4)
        assert enu[1] == pytest.approx(1.1057, abs=1e-3)
        assert abs(enu[0]) < 1e-3 and abs(enu[2]) < 1e-3

    @given(lat_st, lon_st, alt_st)
    @settings(max_examples=200, deadline=None)
    def test_round_trip_to_self(self, lat, lon, alt):
        origin = GeoPose(lat, lon, alt)
        p = wgs84_to_ecef(lat, lon, alt)
        assert np.linalg.norm(ecef_to_enu(p, origin)) < 1e-9

    def test_rebasing_between_origins(self, rng):
        # ENU under origin 1, re-expressed via ECEF under origin 2, matches
        # the direct conversion for points within 10 km of both.
        o1 = GeoPose(22.28, 114.22, 10.0)
        o2 = GeoPose(22.30, 114.25, 60.0)
        for _ in range(50):
            pose = GeoPose(22.28 + rng.uniform(-0.02, 0.02),
                           114.22 + rng.uniform(-0.02, 0.02),
                           rng.uniform(0, 300))
            p = wgs84_to_ecef(pose.latitude, pose.longitude, pose.altitude)
            via = enu_to_ecef(ecef_to_enu(p, o1), o1)
            assert np.allclose(ecef_to_enu(via, o2), ecef_to_enu(p, o2), atol=1e-6)


class TestAttitude:
    def test_zero_attitude_camera_points_north(self):
        r = attitude_to_rotation(0.0, 0.0, 0.0) @ BODY_TO_CAMERA_AXES
        optical = r[:, 2]  # camera z (forward) in ENU
        cam_up = -r[:, 1]  # camera -y in ENU
        assert np.allclose(optical, [0.0, 1.0, 0.0], atol=1e-12)
        assert np.allclose(cam_up, [0.0, 0.0, 1.0], atol=1e-12)

    def test_yaw_90_points_east(self):
        r = attitude_to_rotation(90.0, 0.0, 0.0)
        nose = r @ np.array([1.0, 0.0, 0.0])
        assert np.allclose(nose, [1.0, 0.0, 0.0], atol=1e-12)  # east

    def test_nadir_pitch(self):
        r = attitude_to_rotation(0.0, -90.0, 0.0) @ BODY_TO_CAMERA_AXES
        optical = r[:, 2]
        assert np.allclose(optical, [0.0, 0.0, -1.0], atol=1e-12)

    @given(st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180))
    @settings(max_examples=200, deadline=None)
    def test_orthonormal_proper(self, yaw, pitch, roll):
        r = attitude_to_rotation(yaw, pitch, roll)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestColmap:
    def test_single_pose_at_origin(self):
        pose = GeoPose(22.0, 114.0, 100.0, image_name="a.jpg")
        (cam,) = to_colmap([pose])
        assert cam.image_id == 1
        assert np.allclose(cam.t, 0.0, atol=1e-9)  # C = 0 forces t = 0
        assert np.linalg.norm(cam.q) == pytest.approx(1.0, abs=1e-9)

    def test_two_poses_ten_meters_east(self):
        origin = GeoPose(22.28, 114.16, 40.0, yaw=35.0, pitch=-20.0, roll=3.0)
        # second pose exactly 10 m east of the first in the shared ENU frame
        lat, lon, alt = ecef_to_wgs84(enu_to_ecef([10.0, 0.0, 0.0], origin))
        other = GeoPose(lat, lon, alt, yaw=35.0, pitch=-20.0, roll=3.0)
        cams = to_colmap([origin, other])
        c0, c1 = cams[0].center(), cams[1].center()
        assert np.allclose(c1 - c0, [10.0, 0.0, 0.0], atol=1e-6)

    def test_center_recovery(self, rng):
        poses = [GeoPose(22.28 + rng.uniform(-0.001, 0.001),
                         114.16 + rng.uniform(-0.001, 0.001),
                         rng.uniform(50, 150),
                         yaw=rng.uniform(-180, 180),
                         pitch=rng.uniform(-90, 20),
                         roll=rng.uniform(-10, 10),
                         image_name=f"im{i}.jpg") for i in range(20)]
        cams = to_colmap(poses)
        for pose, cam in zip(poses, cams):
            enu = geopose_to_enu(pose, poses[0])
            assert np.allclose(cam.center(), enu, atol=1e-9)
            assert np.linalg.norm(cam.q) == pytest.approx(1.0, abs=1e-9)

    def test_empty_input(self):
        assert to_colmap([]) == []

    def test_quaternion_matches_rotation(self, rng):
        for _ in range(20):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            pose_m = np.array([
                [1 - 2 * (q[2] ** 2 + q[3] ** 2), 2 * (q[1] * q[2] - q[0] * q[3]),
                 2 * (q[1] * q[3] + q[0] * q[2])],
                [2 * (q[1] * q[2] + q[0] * q[3]), 1 - 2 * (q[1] ** 2 + q[3] ** 2),
                 2 * (q[2] * q[3] - q[0] * q[1])],
                [2 * (q[1] * q[3] - q[0] * q[2]), 2 * (q[2] * q[3] + q[0] * q[1]),
                 1 - 2 * (q[1] ** 2 + q[2] ** 2)],
            ])
            assert np.allclose(matrix_to_quat(pose_m), q, atol=1e-9)


class TestPoseValidation:
    def test_latitude_bound(self):
        with pytest.raises(InvalidPoseError):
            GeoPose(91.2, 0.0, 0.0)

    def test_nonfinite(self):
        with pytest.raises(InvalidPoseError):
            GeoPose(0.0, float("nan"), 0.0)

    def test_longitude_wrapping(self):
        assert GeoPose(0.0, 200.0, 0.0).longitude == pytest.approx(-160.0)
        assert GeoPose(0.0, -180.0, 0.0).longitude == pytest.approx(180.0)
        assert wrap_longitude(540.0) == pytest.approx(180.0)


class TestFileInterfaces:
    CSV = ("image_name,latitude,longitude,altitude,yaw,pitch,roll\n"
           "a.jpg,22.281,114.161,80.0,10.0,-45.0,0.0\n"
           "b.jpg,22.282,114.162,81.0,12.0,-45.0,0.5\n"
           "c.jpg,22.283,114.163,82.0,14.0,-45.0,-0.5\n")

    def test_csv_and_images_txt_round_trip(self, tmp_path):
        csv_path = tmp_path / "poses.csv"
        csv_path.write_text(self.CSV)
        poses = read_pose_csv(csv_path)
        assert [p.image_name for p in poses] == ["a.jpg", "b.jpg", "c.jpg"]
        cams = to_colmap(poses)
        out = tmp_path / "images.txt"
        write_images_txt(cams, out)
        back = read_images_txt(out)
        assert [c.image_id for c in back] == [1, 2, 3]
        for orig, rec in zip(cams, back):
            assert np.allclose(rec.q, orig.q, atol=1e-15)
            assert np.allclose(rec.t, orig.t, atol=1e-15)
            assert rec.image_name == orig.image_name

    def test_images_txt_layout(self, tmp_path):
        csv_path = tmp_path / "poses.csv"
        csv_path.write_text(self.CSV)
        cams = to_colmap(read_pose_csv(csv_path))
        out = tmp_path / "images.txt"
        write_images_txt(cams, out)
        lines = out.read_text().splitlines()
        data = [ln for ln in lines if ln and not ln.startswith("#")]
        # one pose line per image, each followed by an empty points line
        assert len(data) == 3
        for ln in data:
            parts = ln.split()
            assert len(parts) == 10
        idx = lines.index(data[0])
        assert lines[idx + 1] == ""

    def test_malformed_latitude_names_row(self, tmp_path):
        csv_path = tmp_path / "poses.csv"
        csv_path.write_text(
            "image_name,latitude,longitude,altitude,yaw,pitch,roll\n"
            "a.jpg,22.0,114.0,80.0,0,0,0\n"
            "b.jpg,91.2,114.0,80.0,0,0,0\n")
        with pytest.raises(InvalidPoseError, match="row 3"):
            read_pose_csv(csv_path)

    def test_origin_json(self, tmp_path):
        origin = GeoPose(22.281, 114.161, 80.0)
        path = tmp_path / "origin.json"
        write_origin_json(origin, path, source="first_pose")
        doc = json.loads(path.read_text())
        assert doc["latitude"] == pytest.approx(22.281)
        assert doc["source"] == "first_pose"
