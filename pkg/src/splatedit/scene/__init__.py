from .camera import Camera, look_at, orbit_camera
from .gaussians import (Gaussian, GaussianScene, concatenate,
                        covariance_matrices, logit, normalize_quats,
                        quat_to_rotmat, scenes_equal, sigmoid)
from .ply_io import load_scene, save_scene, sidecar_path

__all__ = [
    "Camera", "look_at", "orbit_camera", "Gaussian", "GaussianScene",
    "concatenate", "covariance_matrices", "logit", "normalize_quats",
    "quat_to_rotmat", "scenes_equal", "sigmoid", "load_scene",
    "save_scene", "sidecar_path",
]
