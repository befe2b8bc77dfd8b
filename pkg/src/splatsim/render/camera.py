"""Pinhole camera model tied to a COLMAP-convention pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatsim.errors import ConfigError
from splatsim.geo_pose import ColmapCamera, matrix_to_quat


@dataclass
class Camera:
    pose: ColmapCamera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not self.near > 0:
            raise ConfigError("near plane must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError("image dimensions must be positive")

    def world_to_camera(self):
        """(R, t) with camera-space point = R x + t."""
        return self.pose.rotation(), self.pose.t

    def center(self):
        return self.pose.center()

    @classmethod
    def from_look_at(cls, position, target, fx, width, height, fy=None,
                     cx=None, cy=None, near=0.01, up=(0.0, 0.0, 1.0)):
        """Camera at `position` looking at `target`, x right / y down / z forward."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        nf = np.linalg.norm(forward)
        if nf == 0:
            raise ConfigError("look-at target coincides with the camera position")
        forward = forward / nf
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            # Looking straight along `up`: pick an arbitrary horizontal right.
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
            nr = np.linalg.norm(right)
        right = right / nr
        down = np.cross(forward, right)
        r_cam_in_world = np.stack([right, down, forward], axis=1)
        r_w2c = r_cam_in_world.T
        t = -r_w2c @ position
        pose = ColmapCamera(image_id=1, q=matrix_to_quat(r_w2c), t=t,
                            camera_id=1, image_name="")
        return cls(pose=pose, fx=fx, fy=fy if fy is not None else fx,
                   cx=cx if cx is not None else (width - 1) / 2.0,
                   cy=cy if cy is not None else (height - 1) / 2.0,
                   width=int(width), height=int(height), near=near)


@dataclass
class Frame:
    """Rendered 8-bit RGB image plus the background it was composited over."""

    pixels: np.ndarray        # (H, W, 3) uint8
    background: np.ndarray    # (3,) float in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
