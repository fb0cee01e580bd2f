"""splatedit: an editing engine for explicit Gaussian-splat scenes."""

from .config import (DensifyConfig, EditConfig, OptimizerConfig, RenderConfig,
                     ScheduleConfig, edit_config_from_dict, load_edit_config)
from .scene import (Camera, GaussianScene, concatenate, load_scene,
                    look_at, orbit_camera, save_scene, scenes_equal)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianScene", "concatenate", "load_scene", "look_at",
    "orbit_camera", "save_scene", "scenes_equal", "RenderConfig",
    "EditConfig", "OptimizerConfig", "ScheduleConfig", "DensifyConfig",
    "edit_config_from_dict", "load_edit_config",
]
