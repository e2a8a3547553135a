"""Dataset ingestion and writing.

On-disk layout (flat, diff-able):
    frames/%06d.png     8-bit RGB frames
    masks/%06d.png      8-bit grayscale, >=128 means foreground
    params.jsonl        one record per frame: psi, theta, head_rot,
                        head_trans, camera {fx fy cx cy width height near far
                        R_wc (3x3 row-major) t_wc}
    rig.txt             the parametric rig (rig module format)
    meta.txt            background r g b / resolution W H

Masked-out pixels are composited to the configured background color exactly
at load time.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import LoadError, ShapeError
from .imgio import load_png, save_png
from .rig import Camera, RigParams, load_rig, save_rig


@dataclass
class FrameRecord:
    image: np.ndarray      # (H, W, 3) float64 in [0, 1], background composited
    mask: np.ndarray       # (H, W) bool
    params: RigParams
    camera: Camera


@dataclass
class Dataset:
    frames: list
    rig: object
    background: np.ndarray

    def __len__(self):
        return len(self.frames)


def camera_to_dict(cam):
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "near": cam.near, "far": cam.far,
        "R_wc": cam.R_wc.tolist(), "t_wc": cam.t_wc.tolist(),
    }


def camera_from_dict(d):
    return Camera(
        fx=float(d["fx"]), fy=float(d["fy"]),
        cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["width"]), height=int(d["height"]),
        near=float(d["near"]), far=float(d["far"]),
        R_wc=np.array(d["R_wc"], dtype=np.float64),
        t_wc=np.array(d["t_wc"], dtype=np.float64),
    ).validate()


def params_to_dict(p):
    return {
        "psi": p.psi.tolist(),
        "theta": p.theta.tolist(),
        "head_rot": p.head_rot.tolist(),
        "head_trans": p.head_trans.tolist(),
    }


def params_from_dict(d):
    return RigParams(
        psi=np.array(d["psi"], dtype=np.float64),
        theta=np.array(d["theta"], dtype=np.float64),
        head_rot=np.array(d["head_rot"], dtype=np.float64),
        head_trans=np.array(d["head_trans"], dtype=np.float64),
    )


def load_params_file(path):
    """Read a params.jsonl-style file: list of (RigParams, Camera|None)."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise LoadError(f"{path}:{lineno + 1}: bad JSON record") from e
            cam = camera_from_dict(d["camera"]) if "camera" in d else None
            records.append((params_from_dict(d), cam))
    return records


def save_dataset(path, frames, rig, background):
    """frames: list of (image, mask, RigParams, Camera)."""
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    os.makedirs(os.path.join(path, "masks"), exist_ok=True)
    lines = []
    for i, (image, mask, params, cam) in enumerate(frames):
        save_png(os.path.join(path, "frames", f"{i:06d}.png"), image)
        save_png(os.path.join(path, "masks", f"{i:06d}.png"),
                 mask.astype(np.float64))
        rec = params_to_dict(params)
        rec["camera"] = camera_to_dict(cam)
        lines.append(json.dumps(rec))
    with open(os.path.join(path, "params.jsonl"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    save_rig(rig, os.path.join(path, "rig.txt"))
    h, w = frames[0][0].shape[:2]
    bg = [float(v) for v in background]
    with open(os.path.join(path, "meta.txt"), "w") as fh:
        fh.write(f"background {bg[0]!r} {bg[1]!r} {bg[2]!r}\n")
        fh.write(f"resolution {w} {h}\n")


def load_dataset(path):
    meta_path = os.path.join(path, "meta.txt")
    if not os.path.exists(meta_path):
        raise LoadError(f"{path}: missing meta.txt")
    background = None
    resolution = None
    with open(meta_path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "background":
                background = np.array([float(v) for v in parts[1:4]])
            elif parts[0] == "resolution":
                resolution = (int(parts[1]), int(parts[2]))
    if background is None or resolution is None:
        raise LoadError(f"{path}: meta.txt lacks background or resolution")

    rig = load_rig(os.path.join(path, "rig.txt"))
    records = load_params_file(os.path.join(path, "params.jsonl"))

    frames = []
    for i, (params, cam) in enumerate(records):
        if cam is None:
            raise LoadError(f"{path}: params record {i} has no camera")
        frame_path = os.path.join(path, "frames", f"{i:06d}.png")
        mask_path = os.path.join(path, "masks", f"{i:06d}.png")
        if not os.path.exists(frame_path):
            raise LoadError(f"{path}: missing frame {i:06d}.png")
        if not os.path.exists(mask_path):
            raise LoadError(f"{path}: frame {i:06d} has no matching mask")
        image = load_png(frame_path)
        mask = load_png(mask_path) >= 0.5
        if image.shape[:2] != (resolution[1], resolution[0]):
            raise LoadError(
                f"{path}: frame {i:06d} is {image.shape[1]}x{image.shape[0]}, "
                f"meta says {resolution[0]}x{resolution[1]}")
        if image.shape[:2] != (cam.height, cam.width):
            raise LoadError(f"{path}: frame {i:06d} dims disagree with its camera")
        if params.psi.shape != (rig.n_blendshapes,):
            raise ShapeError(
                f"frame {i}: psi length {params.psi.shape[0]} != "
                f"{rig.n_blendshapes} blendshapes")
        image = image.copy()
        image[~mask] = background
        frames.append(FrameRecord(image=image, mask=mask, params=params, camera=cam))
    return Dataset(frames=frames, rig=rig, background=background)
