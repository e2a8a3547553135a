"""rigsplat: deformable 3D Gaussian splatting on a parametric mesh rig.

Gaussian primitives live in triangle-local coordinates of a blendshape+LBS
rig; coarse motion comes from the mesh, fine motion from a tri-plane/MLP
morph adjuster, and everything optimizes against rendered images through
hand-written analytic gradients.
"""

from .config import TrainConfig, format_config, load_config
from .dataset import Dataset, FrameRecord, load_dataset, save_dataset
from .gaussians import GaussianSet
from .model import AvatarModel
from .rasterizer import RasterSettings, brute_force_render, render_forward
from .rig import Camera, ParamRig, RigParams, evaluate_rig, load_rig, save_rig, \
    triangle_frame, triangle_frames, world_to_pixel
from .toydata import make_gt_gaussians, make_param_sequence, make_ring_cameras, \
    make_toy_dataset, make_toy_rig
from .trainer import evaluate, model_from_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AvatarModel",
    "Camera",
    "Dataset",
    "FrameRecord",
    "GaussianSet",
    "ParamRig",
    "RasterSettings",
    "RigParams",
    "TrainConfig",
    "brute_force_render",
    "evaluate",
    "evaluate_rig",
    "format_config",
    "load_config",
    "load_dataset",
    "load_rig",
    "make_gt_gaussians",
    "make_param_sequence",
    "make_ring_cameras",
    "make_toy_dataset",
    "make_toy_rig",
    "model_from_checkpoint",
    "render_forward",
    "save_dataset",
    "save_rig",
    "train",
    "triangle_frame",
    "triangle_frames",
    "world_to_pixel",
]
