"""Geo-referenced UAV poses: WGS84 -> ECEF -> local ENU -> COLMAP camera records.

Angle conventions (fixed here because RTK flight logs do not carry them):

* yaw, pitch, roll are aircraft angles in degrees, applied yaw -> pitch -> roll.
  Yaw is measured clockwise from true north about the down axis, pitch about
  the right wing (positive nose-up), roll about the nose.
* The camera is rigidly attached with x right, y down, z forward (optical
  axis). Zero attitude points the optical axis north; pitch = -90 deg is nadir,
  matching DJI gimbal logs.
* COLMAP records store the world-to-camera rotation as a (w, x, y, z)
  quaternion and t = -R C, where C is the camera center in the ENU frame.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from splatsim.errors import InvalidPoseError

# WGS84 ellipsoid
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


@dataclass
class GeoPose:
    """One geo-referenced image pose from the flight log."""

    latitude: float      # degrees
    longitude: float     # degrees, wrapped to (-180, 180]
    altitude: float      # meters above the WGS84 ellipsoid
    yaw: float = 0.0     # degrees, clockwise from true north
    pitch: float = 0.0   # degrees, positive nose-up; -90 is nadir
    roll: float = 0.0    # degrees
    image_name: str = ""

    def __post_init__(self):
        vals = [self.latitude, self.longitude, self.altitude, self.yaw, self.pitch, self.roll]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidPoseError(f"non-finite pose fields for '{self.image_name}': {vals}")
        if abs(self.latitude) > 90.0:
            raise InvalidPoseError(f"latitude {self.latitude} out of [-90, 90] for '{self.image_name}'")
        self.longitude = wrap_longitude(self.longitude)


@dataclass
class ColmapCamera:
    """COLMAP-convention image record (world -> camera)."""

    image_id: int
    q: np.ndarray        # (4,) unit quaternion (w, x, y, z)
    t: np.ndarray        # (3,) translation, t = -R C
    camera_id: int = 1
    image_name: str = ""

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    def rotation(self):
        """World-to-camera rotation matrix."""
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def center(self):
        """Camera center in the world (ENU) frame, C = -R^T t."""
        return -self.rotation().T @ self.t


def wrap_longitude(lon):
    """Wrap a longitude in degrees to (-180, 180]."""
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


def wgs84_to_ecef(latitude, longitude, altitude):
    """Closed-form geodetic -> ECEF on the WGS84 ellipsoid. Returns (3,) meters."""
    lat = math.radians(latitude)
    lon = math.radians(longitude)
    slat, clat = math.sin(lat), math.cos(lat)
    slon, clon = math.sin(lon), math.cos(lon)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)  # prime-vertical radius
    return np.array(
        [
            (n + altitude) * clat * clon,
            (n + altitude) * clat * slon,
            (n * (1.0 - WGS84_E2) + altitude) * slat,
        ]
    )


def ecef_to_wgs84(p):
    """ECEF -> (latitude, longitude, altitude), iterative on the latitude."""
    x, y, z = (float(v) for v in np.asarray(p, dtype=np.float64).reshape(3))
    lon = math.atan2(y, x)
    rho = math.hypot(x, y)
    if rho < 1e-9:  # on the polar axis
        lat = math.copysign(math.pi / 2.0, z)
        alt = abs(z) - WGS84_A * (1.0 - WGS84_F)
        return math.degrees(lat), math.degrees(lon), alt
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    alt = 0.0
    for _ in range(10):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        alt = rho / math.cos(lat) - n
        lat = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + alt)))
    return math.degrees(lat), math.degrees(lon), alt


def enu_basis(origin: GeoPose):
    """Rows are the ECEF unit vectors of local east, north, up at origin."""
    lat = math.radians(origin.latitude)
    lon = math.radians(origin.longitude)
    slat, clat = math.sin(lat), math.cos(lat)
    slon, clon = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-slon, clon, 0.0],
            [-slat * clon, -slat * slon, clat],
            [clat * clon, clat * slon, slat],
        ]
    )


def ecef_to_enu(p, origin: GeoPose):
    """ECEF point -> local ENU coordinates anchored at origin."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    o = wgs84_to_ecef(origin.latitude, origin.longitude, origin.altitude)
    return enu_basis(origin) @ (p - o)


def enu_to_ecef(v, origin: GeoPose):
    """Inverse of ecef_to_enu."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    o = wgs84_to_ecef(origin.latitude, origin.longitude, origin.altitude)
    return enu_basis(origin).T @ v + o


def geopose_to_enu(pose: GeoPose, origin: GeoPose):
    """ENU position of a pose's camera center."""
    return ecef_to_enu(wgs84_to_ecef(pose.latitude, pose.longitude, pose.altitude), origin)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# NED -> ENU axis swap (proper rotation, det +1).
_NED_TO_ENU = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])

# Camera axes (x right, y down, z forward) expressed in body axes
# (x nose, y right wing, z down): columns are the camera axes.
BODY_TO_CAMERA_AXES = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def attitude_to_rotation(yaw, pitch, roll):
    """Body-to-ENU rotation for aircraft yaw/pitch/roll in degrees.

    Composed in the NED frame as Rz(yaw) Ry(pitch) Rx(roll) and re-expressed
    in ENU; yaw about the down axis is clockwise from north when seen from
    above, which is the flight-log convention.
    """
    r_ned_body = _rz(math.radians(yaw)) @ _ry(math.radians(pitch)) @ _rx(math.radians(roll))
    return _NED_TO_ENU @ r_ned_body


def matrix_to_quat(m):
    """Rotation matrix -> quaternion (w, x, y, z) with w >= 0."""
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def to_colmap(poses, origin: GeoPose | None = None):
    """Convert geo poses into COLMAP image records in a shared ENU frame.

    The ENU origin defaults to the first pose. Image ids are assigned
    sequentially from 1 in input order.
    """
    poses = list(poses)
    if not poses:
        return []
    if origin is None:
        origin = poses[0]
    cams = []
    for i, pose in enumerate(poses):
        c = geopose_to_enu(pose, origin)
        r_enu_cam = attitude_to_rotation(pose.yaw, pose.pitch, pose.roll) @ BODY_TO_CAMERA_AXES
        r_w2c = r_enu_cam.T
        cams.append(
            ColmapCamera(
                image_id=i + 1,
                q=matrix_to_quat(r_w2c),
                t=-r_w2c @ c,
                camera_id=1,
                image_name=pose.image_name,
            )
        )
    return cams


# ---------------------------------------------------------------------------
# File interfaces: pose CSV in, COLMAP images.txt + origin sidecar out
# ---------------------------------------------------------------------------

CSV_FIELDS = ["image_name", "latitude", "longitude", "altitude", "yaw", "pitch", "roll"]


def read_pose_csv(path):
    """Read the flight-log CSV; raises InvalidPoseError naming the bad row."""
    poses = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CSV_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise InvalidPoseError(f"pose CSV missing columns: {missing}")
        for rownum, row in enumerate(reader, start=2):  # header is line 1
            try:
                pose = GeoPose(
                    latitude=float(row["latitude"]),
                    longitude=float(row["longitude"]),
                    altitude=float(row["altitude"]),
                    yaw=float(row["yaw"]),
                    pitch=float(row["pitch"]),
                    roll=float(row["roll"]),
                    image_name=row["image_name"],
                )
            except (ValueError, InvalidPoseError) as e:
                raise InvalidPoseError(f"row {rownum} of {path}: {e}") from e
            poses.append(pose)
    return poses


def write_images_txt(cams, path):
    """Write COLMAP text-format images.txt (pose line + empty points line)."""
    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for c in cams:
        qw, qx, qy, qz = c.q
        tx, ty, tz = c.t
        lines.append(
            f"{c.image_id} {qw:.17g} {qx:.17g} {qy:.17g} {qz:.17g} "
            f"{tx:.17g} {ty:.17g} {tz:.17g} {c.camera_id} {c.image_name}"
        )
        lines.append("")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_images_txt(path):
    """Parse an images.txt written by write_images_txt (round-trip helper)."""
    cams = []
    with open(path) as f:
        rows = [ln.rstrip("\n") for ln in f]
    data = [r for r in rows if r.strip() and not r.startswith("#")]
    for row in data:
        parts = row.split()
        cams.append(
            ColmapCamera(
                image_id=int(parts[0]),
                q=np.array([float(v) for v in parts[1:5]]),
                t=np.array([float(v) for v in parts[5:8]]),
                camera_id=int(parts[8]),
                image_name=parts[9] if len(parts) > 9 else "",
            )
        )
    return cams


def write_origin_json(origin: GeoPose, path, source="first_pose"):
    """Record the ENU origin next to images.txt for reproducibility."""
    with open(path, "w") as f:
        json.dump(
            {
                "latitude": origin.latitude,
                "longitude": origin.longitude,
                "altitude": origin.altitude,
                "source": source,
            },
            f,
            indent=2,
        )
        f.write("\n")
