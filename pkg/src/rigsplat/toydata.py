"""Synthetic rigs and ground-truth datasets for recovery experiments.

The toy rig is a closed UV-sphere with smooth random blendshape deltas and a
two-joint chain; ground-truth Gaussian sets are rendered through the binding
pipeline with the brute-force reference renderer, so a trained model can in
principle reproduce every frame exactly.
"""

import numpy as np

from .gaussians import GaussianSet, SH_C0, activate_params, bind_to_global, \
    build_covariance, sh_to_color
from .adjuster import apply_deformation, DELTA_ROWS
from .dataset import Dataset, FrameRecord
from .imgio import quantize
from .rasterizer import RasterSettings, brute_force_render, make_splats, \
    project_gaussians
from .rig import Camera, ParamRig, RigParams, compose_head_pose, evaluate_rig, \
    triangle_frames
from .transforms import inverse_sigmoid


def make_toy_rig(seed=0, n_rings=16, n_segments=16, n_blendshapes=4,
                 n_joints=2, blend_amplitude=0.25):
    """Deterministic sphere rig: 2 + (n_rings-1)*n_segments vertices,
    2*n_segments*(n_rings-1) triangles, smooth random blendshapes, a short
    joint chain skinned by height."""
    rng = np.random.default_rng(seed)
    verts = [np.array([0.0, 1.0, 0.0])]
    for i in range(1, n_rings):
        phi = np.pi * i / n_rings
        for j in range(n_segments):
            th = 2.0 * np.pi * j / n_segments
            verts.append(np.array([
                np.sin(phi) * np.cos(th), np.cos(phi), np.sin(phi) * np.sin(th)]))
    verts.append(np.array([0.0, -1.0, 0.0]))
    verts = np.array(verts)

    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_segments + (j % n_segments)
    for j in range(n_segments):  # top cap
        faces.append((0, ring(1, j + 1), ring(1, j)))
    for i in range(1, n_rings - 1):
        for j in range(n_segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    bottom = len(verts) - 1
    for j in range(n_segments):  # bottom cap
        faces.append((bottom, ring(n_rings - 1, j), ring(n_rings - 1, j + 1)))
    faces = np.array(faces, dtype=np.int64)

    # smooth blendshapes: random low-frequency sinusoids of position
    blendshapes = np.zeros((n_blendshapes, len(verts), 3))
    for k in range(n_blendshapes):
        for c in range(3):
            w = rng.normal(0.0, 1.0, size=3)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            blendshapes[k, :, c] = np.sin(verts @ w + phase)
        mx = np.abs(blendshapes[k]).max()
        blendshapes[k] *= blend_amplitude / mx

    parents = np.arange(-1, n_joints - 1, dtype=np.int64)
    rest_rot = np.tile(np.eye(3), (n_joints, 1, 1))
    rest_trans = np.zeros((n_joints, 3))
    for j in range(1, n_joints):
        rest_trans[j] = (0.0, 0.8 / max(1, n_joints - 1), 0.0)

    # skin: root below, the chain blends in smoothly with height
    y = verts[:, 1]
    weights = np.zeros((len(verts), n_joints))
    if n_joints == 1:
        weights[:, 0] = 1.0
    else:
        s = np.clip((y + 0.2) / 0.9, 0.0, 1.0)
        blend = s * s * (3.0 - 2.0 * s)  # smoothstep
        weights[:, 0] = 1.0 - blend
        weights[:, -1] = blend
    weights /= weights.sum(axis=1, keepdims=True)

    rig = ParamRig(
        template_vertices=verts, faces=faces, blendshapes=blendshapes,
        joint_parents=parents, joint_rest_rot=rest_rot,
        joint_rest_trans=rest_trans, skin_weights=weights)
    return rig.validate()


def make_gt_gaussians(rig, n_gaussians=64, seed=1, sh_degree=0):
    """A random but orderly ground-truth Gaussian set over the rig."""
    rng = np.random.default_rng(seed)
    parent = rng.choice(rig.n_faces, size=n_gaussians, replace=n_gaussians > rig.n_faces)
    parent = np.sort(parent).astype(np.int64)
    mu0 = rng.normal(0.0, 0.25, size=(n_gaussians, 3)).clip(-0.9, 0.9)
    rot0 = rng.normal(size=(n_gaussians, 4))
    rot0 /= np.linalg.norm(rot0, axis=1, keepdims=True)
    log_scale0 = np.log(rng.uniform(0.25, 0.55, size=(n_gaussians, 3)))
    opacity_raw = inverse_sigmoid(rng.uniform(0.55, 0.9, size=n_gaussians))
    B = (sh_degree + 1) ** 2
    sh = np.zeros((n_gaussians, 3, B))
    sh[:, :, 0] = (rng.uniform(0.15, 0.85, size=(n_gaussians, 3)) - 0.5) / SH_C0
    if B > 1:
        sh[:, :, 1:] = rng.normal(0.0, 0.05, size=(n_gaussians, 3, B - 1))
    return GaussianSet(mu0=mu0, rot0=rot0, log_scale0=log_scale0,
                       opacity_raw=opacity_raw, sh=sh, parent_tri=parent)


def make_ring_cameras(n_cameras=20, radius=3.0, focal=80.0, size=64,
                      elevation=0.25):
    """Cameras on a ring, all looking at the origin."""
    cams = []
    for k in range(n_cameras):
        az = 2.0 * np.pi * k / n_cameras
        el = elevation * (1 if k % 2 == 0 else -1)
        p = radius * np.array([
            np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        z = -p / np.linalg.norm(p)
        up = np.array([0.0, 1.0, 0.0])
        x = np.cross(up, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        cams.append(Camera(
            fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0,
            width=size, height=size, near=0.1, far=20.0,
            R_wc=R, t_wc=-R @ p).validate())
    return cams


def make_param_sequence(rig, n_settings=10, seed=2, psi_amplitude=1.0,
                        theta_amplitude=0.25, head_amplitude=0.15):
    rng = np.random.default_rng(seed)
    seq = []
    for _ in range(n_settings):
        seq.append(RigParams(
            psi=rng.uniform(-psi_amplitude, psi_amplitude, size=rig.n_blendshapes),
            theta=rng.uniform(-theta_amplitude, theta_amplitude,
                              size=(rig.n_joints, 3)),
            head_rot=rng.uniform(-head_amplitude, head_amplitude, size=3),
            head_trans=rng.uniform(-0.05, 0.05, size=3),
        ))
    return seq


def spatial_sine_warp(amplitude=0.12, wave=np.pi, drive_gain=3.0,
                      hf_amplitude=0.0, hf_wave=8.0):
    """A fine-deformation field deliberately outside the rig's LBS span:
    a world-space offset, sinusoidal in position and (nonlinearly) in the
    first expression coefficient, plus an optional small high-spatial-
    frequency term riding on the same driver."""
    k = np.array([1.3, 0.7, 1.9])
    k2 = np.array([-2.1, 3.4, 1.2])
    d = np.array([0.5, 1.0, 0.3])
    d = d / np.linalg.norm(d)
    d2 = np.array([1.0, -0.4, 0.8])
    d2 = d2 / np.linalg.norm(d2)

    def warp(neutral_x, params):
        drive = np.sin(params.psi[0] * 2.0)
        phase = wave * (neutral_x @ k) + drive_gain * drive
        out = amplitude * np.sin(phase)[:, None] * d[None, :]
        if hf_amplitude:
            phase2 = hf_wave * (neutral_x @ k2) + drive_gain * drive
            out = out + hf_amplitude * np.sin(phase2)[:, None] * d2[None, :]
        return out

    return warp


def render_gt_frame(rig, gt, params, camera, background, settings,
                    neutral_frames=None, warp=None):
    """Render the ground-truth Gaussians for one frame with the brute-force
    reference renderer (binding composition identical to the trained model)."""
    cam = compose_head_pose(camera, params.head_rot, params.head_trans)
    posed = evaluate_rig(rig, RigParams(
        psi=params.psi, theta=params.theta,
        head_rot=np.zeros(3), head_trans=np.zeros(3)))
    frames = triangle_frames(posed, rig.faces)
    act = activate_params(gt)
    bound = bind_to_global(act, frames, gt.parent_tri)
    zero_basis = np.zeros((len(gt), DELTA_ROWS, 1))
    refined, _ = apply_deformation(bound["mu"], bound["r"], bound["s"],
                                   zero_basis, np.zeros(1))
    if warp is not None:
        if neutral_frames is None:
            neutral_frames = triangle_frames(
                evaluate_rig(rig, RigParams.zero(rig)), rig.faces)
        neutral = bind_to_global(act, neutral_frames, gt.parent_tri)["mu"]
        refined["mu"] = refined["mu"] + warp(neutral, params)
    cov3d = build_covariance(refined["r"], refined["s"])
    proj = project_gaussians(refined["mu"], cov3d, cam, lowpass=settings.lowpass)
    v = refined["mu"] - cam.center()
    dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    color, _ = sh_to_color(gt.sh, dirs)
    splats = make_splats(proj, color, act["o"])
    return brute_force_render(splats, camera.width, camera.height, background,
                              settings)


def make_toy_dataset(rig, gt, cameras, param_sequence, background=(0.0, 0.0, 0.0),
                     settings=None, warp=None, pairing="product"):
    """Ground-truth dataset: every configured (params, camera) pair rendered
    with the reference renderer; masks are all-foreground. Images are stored
    already quantized to the 8-bit PNG grid, so re-rendering reproduces them
    bit-exactly after the same quantization."""
    settings = settings or RasterSettings()
    background = np.asarray(background, dtype=np.float64)
    neutral_frames = triangle_frames(
        evaluate_rig(rig, RigParams.zero(rig)), rig.faces)
    if pairing == "product":
        pairs = [(p, c) for p in param_sequence for c in cameras]
    elif pairing == "zip":
        pairs = list(zip(param_sequence, cameras))
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    frames = []
    for params, cam in pairs:
        img = render_gt_frame(rig, gt, params, cam, background, settings,
                              neutral_frames=neutral_frames, warp=warp)
        frames.append(FrameRecord(
            image=quantize(img),
            mask=np.ones((cam.height, cam.width), dtype=bool),
            params=params, camera=cam))
    return Dataset(frames=frames, rig=rig, background=background)
