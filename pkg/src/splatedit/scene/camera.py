"""Pinhole camera: intrinsics, world-to-camera pose, and projection helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform.

    K is the 3x3 intrinsic matrix in pixels, (R, t) map world points into
    camera coordinates via x_cam = R @ x_world + t. Depths are camera-space z.
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    near: float = 0.01
    far: float = 1000.0
    cam_id: str = ""

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-9):
            raise ValueError("R must be orthonormal (RR^T = I within 1e-9)")
        if self.near <= 0 or self.far <= 0:
            raise ValueError("near/far must be positive")

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.R.T @ self.t

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self.R.T + self.t

    def cam_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return (pts - self.t) @ self.R

    def project(self, pts_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixel coordinates.

        Returns (pixels (N,2), depths (N,)); callers decide what to do with
        non-positive depths.
        """
        cam = self.world_to_cam(pts_world)
        z = cam[:, 2]
        # avoid division blowups for points at the camera plane
        safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = self.fx * cam[:, 0] / safe_z + self.cx
        v = self.fy * cam[:, 1] / safe_z + self.cy
        return np.stack([u, v], axis=1), z

    def backproject(self, pixel: np.ndarray, depth: float) -> np.ndarray:
        """Lift a pixel at a given camera-space depth back to a world point."""
        u, v = float(pixel[0]), float(pixel[1])
        ray = np.linalg.inv(self.K) @ np.array([u, v, 1.0])
        cam_pt = ray * depth / ray[2] if ray[2] != 0 else ray * depth
        return self.cam_to_world(cam_pt)[0]

    def resized(self, width: int, height: int) -> "Camera":
        """Camera viewing the same frustum at a different pixel resolution."""
        sx = width / self.width
        sy = height / self.height
        K = self.K.copy()
        K[0, :] *= sx
        K[1, :] *= sy
        return Camera(K, self.R.copy(), self.t.copy(), width, height,
                      self.near, self.far, self.cam_id)

    def to_json(self) -> dict:
        return {
            "K": self.K.tolist(),
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "w": self.width,
            "h": self.height,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_json(cls, obj: dict, cam_id: str = "") -> "Camera":
        return cls(
            K=np.array(obj["K"], dtype=np.float64),
            R=np.array(obj["R"], dtype=np.float64),
            t=np.array(obj["t"], dtype=np.float64),
            width=int(obj["w"]),
            height=int(obj["h"]),
            near=float(obj.get("near", 0.01)),
            far=float(obj.get("far", 1000.0)),
            cam_id=cam_id,
        )


def look_at(eye, target, up=(0.0, 1.0, 0.0), K=None, width=256, height=256,
            fov_deg=60.0, near=0.01, far=1000.0, cam_id="") -> Camera:
    """Build a camera at `eye` looking toward `target` (+z into the scene)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    if np.linalg.norm(right) < 1e-12:
        upv = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, upv)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ eye
    if K is None:
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
        K = np.array([[f, 0.0, width / 2.0],
                      [0.0, f, height / 2.0],
                      [0.0, 0.0, 1.0]])
    return Camera(K, R, t, width, height, near, far, cam_id)


def orbit_camera(center, radius, azimuth_deg, elevation_deg, width=256,
                 height=256, fov_deg=60.0, near=0.01, far=1000.0,
                 cam_id="") -> Camera:
    """Camera on an orbit sphere around `center`, looking at it."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    center = np.asarray(center, dtype=np.float64)
    offset = radius * np.array([
        np.cos(el) * np.sin(az),
        np.sin(el),
        np.cos(el) * np.cos(az),
    ])
    return look_at(center + offset, center, width=width, height=height,
                   fov_deg=fov_deg, near=near, far=far, cam_id=cam_id)
