"""Forward splat rendering of scenes and simulation checkpoints."""

from splatsim.render.camera import Camera, Frame
from splatsim.render.image_io import png_bytes, ppm_bytes, read_ppm, write_png, write_ppm
from splatsim.render.rasterizer import (
    eval_sh,
    project_gaussian,
    render,
    render_sequence,
    scene_with_checkpoint,
)

__all__ = [
    "Camera", "Frame", "eval_sh", "png_bytes", "ppm_bytes", "project_gaussian",
    "read_ppm", "render", "render_sequence", "scene_with_checkpoint",
    "write_png", "write_ppm",
]
