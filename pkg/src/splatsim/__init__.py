"""splatsim: scan-to-simulation toolkit for Gaussian-splat slope scenes.

Pipeline stages: geo-referenced pose conversion (geo_pose), scene aspect-ratio
regularization (anisotropy), volumetric interior filling (interior_fill), MPM
sand simulation (mpm), and forward splat rendering (render), orchestrated by
the `splatsim` command line (cli).
"""

__version__ = "0.1.0"

from splatsim.gaussian_scene import (
    Gaussian,
    Scene,
    base_color,
    concat_scenes,
    covariance,
    density_at,
    load_ply,
    load_ply_file,
    save_ply,
    save_ply_file,
)

__all__ = [
    "Gaussian", "Scene", "__version__", "base_color", "concat_scenes",
    "covariance", "density_at", "load_ply", "load_ply_file", "save_ply",
    "save_ply_file",
]
