"""Central finite-difference verification of the analytic backward passes.

The full-pipeline check builds a tiny scene (small rig, 8 Gaussians, 8x8
image), evaluates the complete training loss, and compares the hand-written
gradients of every trainable parameter class against central differences.
The Gaussian cutoff and the saturation stop are disabled for these scenes:
both are intentional discontinuities and FD straddling them measures the
discontinuity, not the gradient.
"""

import numpy as np

from .config import TrainConfig
from .losses import total_loss
from .model import AvatarModel
from .rasterizer import RasterSettings
from .toydata import make_ring_cameras, make_param_sequence, make_toy_rig
from .trainer import loss_weights


def central_diff(fn, arr, h=1e-6):
    """Numeric gradient of scalar fn w.r.t. every element of arr (in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric, floor=1e-7):
    """Worst relative disagreement; tiny pairs compare absolutely."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    rel = np.where(scale > floor, err / np.maximum(scale, floor), err / floor)
    return float(rel.max()) if rel.size else 0.0


def gradcheck_config():
    """Desk-drawer dimensions: everything small enough for exhaustive FD."""
    return TrainConfig(
        sh_degree=1,
        latent_dim=4,
        triplane_resolutions=(4, 8),
        triplane_features=2,
        basis_hidden=(16, 16),
        latent_hidden=(16, 16),
        cutoff_enabled=False,
        saturation_threshold=0.0,
        seed=7,
    )


def build_gradcheck_scene(cfg=None, seed=7, n_gaussians=8, image_size=8):
    """Returns (model, loss_closure, analytic_fn, settings)."""
    cfg = cfg or gradcheck_config()
    rng = np.random.default_rng(seed)
    rig = make_toy_rig(seed=seed, n_rings=4, n_segments=5,
                       n_blendshapes=3, n_joints=2)
    model = AvatarModel.build(rig, cfg, rng)

    # trim to a handful of Gaussians and roughen every parameter
    gs = model.gaussians
    pick = rng.choice(len(gs), size=n_gaussians, replace=False)
    gs.mu0 = gs.mu0[pick] + rng.normal(0.0, 0.2, size=(n_gaussians, 3))
    gs.rot0 = rng.normal(size=(n_gaussians, 4))
    gs.log_scale0 = gs.log_scale0[pick] + rng.normal(0.0, 0.2, size=(n_gaussians, 3))
    gs.opacity_raw = rng.uniform(-0.5, 0.9, size=n_gaussians)
    gs.sh = rng.normal(0.0, 0.15, size=gs.sh[pick].shape)
    gs.parent_tri = gs.parent_tri[pick]
    # a nonzero final basis layer so adjuster grads flow end to end
    model.basis_net.weights[-1][:] = rng.normal(
        0.0, 0.02, size=model.basis_net.weights[-1].shape)
    model.refresh_neutral()

    camera = make_ring_cameras(n_cameras=1, radius=3.0, focal=9.0,
                               size=image_size)[0]
    params = make_param_sequence(rig, n_settings=1, seed=seed + 1)[0]
    gt = rng.uniform(0.0, 1.0, size=(image_size, image_size, 3))
    settings = RasterSettings(
        lowpass=cfg.lowpass, cutoff_enabled=cfg.cutoff_enabled,
        cutoff_radius=cfg.cutoff_radius,
        saturation_threshold=cfg.saturation_threshold)
    background = np.array([0.1, 0.2, 0.3])
    weights = loss_weights(cfg)

    def loss_value():
        image, cache = model.forward_frame(
            params, camera, background, settings, adjuster_on=True)
        act = cache["act"]
        value, _ = total_loss(image, gt, act["mu0"], act["s0"], weights)
        return value

    def analytic():
        image, cache = model.forward_frame(
            params, camera, background, settings, adjuster_on=True)
        act = cache["act"]
        value, parts, d_render, d_mu0, d_s0 = total_loss(
            image, gt, act["mu0"], act["s0"], weights, with_grad=True)
        return value, model.backward_frame(cache, d_render, d_mu0, d_s0)

    return model, loss_value, analytic, settings


def full_pipeline_gradcheck(h=1e-5, cfg=None, floor=3e-6):
    """FD-check every trainable parameter class through the full loss.

    Returns dict: class name -> max relative error. The comparison floor sits
    above the central-difference noise floor (eps * |loss| / h ~ 5e-12
    absolute here); entries below it compare absolutely against it.
    """
    model, loss_value, analytic, _ = build_gradcheck_scene(cfg=cfg)
    model.neutral_positions()  # pin the stop-gradient query cache before FD
    _, grads = analytic()

    flat_analytic = {
        "mu0": grads["mu0"], "rot0": grads["rot0"],
        "log_scale0": grads["log_scale0"], "opacity_raw": grads["opacity_raw"],
        "sh": grads["sh"],
    }
    for i, g in enumerate(grads["planes"]):
        flat_analytic[f"plane{i}"] = g
    for tag in ("basis", "latent"):
        for i, g in enumerate(grads[f"{tag}_w"]):
            flat_analytic[f"{tag}_w{i}"] = g
        for i, g in enumerate(grads[f"{tag}_b"]):
            flat_analytic[f"{tag}_b{i}"] = g

    params = model.named_parameters()
    report = {}
    for name, arr in params.items():
        numeric = central_diff(loss_value, arr, h=h)
        report[name] = max_rel_err(flat_analytic[name], numeric, floor=floor)
    return report


def module_gradcheck(module, h=1e-6, seed=3):
    """FD checks scoped to one subsystem; returns name -> max rel err."""
    rng = np.random.default_rng(seed)
    if module == "covariance":
        return _check_covariance(rng, h)
    if module == "rasterizer":
        return _check_rasterizer(rng, h)
    if module == "adjuster":
        return _check_adjuster(rng, h)
    if module == "losses":
        return _check_losses(rng, h)
    raise ValueError(f"unknown gradcheck module {module!r}")


def _check_covariance(rng, h):
    from .gaussians import build_covariance, build_covariance_backward

    r = rng.normal(size=(6, 4))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    s = rng.uniform(0.3, 1.5, size=(6, 3))
    W = rng.normal(size=(6, 3, 3))

    def loss():
        return float(np.sum(W * build_covariance(r, s)))

    dr, ds = build_covariance_backward(r, s, W)
    return {
        "quaternion": max_rel_err(dr, central_diff(loss, r, h)),
        "scale": max_rel_err(ds, central_diff(loss, s, h)),
    }


def _check_rasterizer(rng, h):
    from .rasterizer import RasterSettings, Splats2D, render_backward, \
        render_forward

    n, size = 6, 12
    mean2d = rng.uniform(2.0, size - 2.0, size=(n, 2))
    L = rng.normal(0.0, 1.0, size=(n, 2, 2))
    cov2d = L @ np.swapaxes(L, 1, 2) + 2.0 * np.eye(2)
    depth = rng.uniform(1.0, 5.0, size=n)
    color = rng.uniform(0.1, 0.9, size=(n, 3))
    opacity = rng.uniform(0.2, 0.8, size=n)
    splats = Splats2D(mean2d, cov2d, depth, color, opacity,
                      np.arange(n, dtype=np.int64))
    W = rng.normal(size=(size, size, 3))
    settings = RasterSettings(cutoff_enabled=False, saturation_threshold=0.0)
    bg = np.array([0.3, 0.1, 0.2])

    def loss():
        img, _ = render_forward(splats, size, size, bg, settings)
        return float(np.sum(W * img))

    _, aux = render_forward(splats, size, size, bg, settings)
    grads = render_backward(aux, W)
    return {
        "mean2d": max_rel_err(grads["mean2d"], central_diff(loss, mean2d, h)),
        "cov2d": max_rel_err(grads["cov2d"], central_diff(loss, cov2d, h)),
        "color": max_rel_err(grads["color"], central_diff(loss, color, h)),
        "opacity": max_rel_err(grads["opacity"], central_diff(loss, opacity, h)),
    }


def _check_adjuster(rng, h):
    from .adjuster import (
        MLP,
        TriPlane,
        apply_deformation,
        apply_deformation_backward,
        encode_driving,
        encode_driving_backward,
        encode_position,
        encode_position_backward,
        predict_basis,
        predict_basis_backward,
    )

    n, d = 5, 3
    tp = TriPlane.create(lo=(-1, -1, -1), hi=(1, 1, 1), resolutions=(3, 5),
                         n_features=2, rng=rng)
    basis_net = MLP((tp.out_dim, 8, 10 * d), rng)
    latent_net = MLP((4, 8, d), rng)
    x = rng.uniform(-0.9, 0.9, size=(n, 3))
    psi = rng.normal(size=2)
    theta = rng.normal(size=2)
    mu = rng.normal(size=(n, 3))
    r = rng.normal(size=(n, 4))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    s = rng.uniform(0.3, 1.0, size=(n, 3))
    Wm = rng.normal(size=(n, 3))
    Wr = rng.normal(size=(n, 4))
    Ws = rng.normal(size=(n, 3))

    def loss():
        feats, _ = encode_position(tp, x)
        basis, _ = predict_basis(basis_net, feats, d)
        f, _ = encode_driving(latent_net, psi, theta)
        ref, _ = apply_deformation(mu, r, s, basis, f)
        return float(np.sum(Wm * ref["mu"]) + np.sum(Wr * ref["r"])
                     + np.sum(Ws * ref["s"]))

    feats, enc_cache = encode_position(tp, x)
    basis, basis_cache = predict_basis(basis_net, feats, d)
    f, lat_cache = encode_driving(latent_net, psi, theta)
    _, def_cache = apply_deformation(mu, r, s, basis, f)
    basis_net.zero_grads()
    latent_net.zero_grads()
    d_def = apply_deformation_backward(def_cache, Wm, Wr, Ws)
    d_feats = predict_basis_backward(basis_net, basis_cache, d_def["basis"])
    plane_grads = encode_position_backward(tp, enc_cache, d_feats)
    encode_driving_backward(latent_net, lat_cache, d_def["f"])

    report = {}
    for i, p in enumerate(tp.planes):
        report[f"plane{i}"] = max_rel_err(plane_grads[i], central_diff(loss, p, h))
    for i, w in enumerate(basis_net.weights):
        report[f"basis_w{i}"] = max_rel_err(
            basis_net.w_grads[i], central_diff(loss, w, h))
    for i, w in enumerate(latent_net.weights):
        report[f"latent_w{i}"] = max_rel_err(
            latent_net.w_grads[i], central_diff(loss, w, h))
    return report


def _check_losses(rng, h):
    from .losses import d_ssim, l1_loss, local_regularizers

    a = rng.uniform(0.1, 0.9, size=(16, 16, 3))
    b = rng.uniform(0.1, 0.9, size=(16, 16, 3))

    def ds_loss():
        return d_ssim(a, b)

    _, g_ds = d_ssim(a, b, with_grad=True)
    num_ds = central_diff(ds_loss, a, h)
    # window-corner entries sit at ~1e-8 where FD bottoms out on roundoff;
    # normalize by the dominant gradient magnitude instead
    ds_err = float(np.abs(g_ds - num_ds).max() / np.abs(num_ds).max())

    def l1():
        return l1_loss(a, b)

    _, g_l1 = l1_loss(a, b, with_grad=True)

    mu0 = rng.uniform(-1.6, 1.6, size=(6, 3))
    s0 = rng.uniform(0.2, 1.2, size=(6, 3))
    # keep components clearly off the kink at the threshold
    mu0[np.abs(mu0 - 1.0) < 0.05] += 0.1
    s0[np.abs(s0 - 0.6) < 0.05] += 0.1

    def reg_pos():
        return local_regularizers(mu0, s0)[0]

    def reg_scale():
        return local_regularizers(mu0, s0)[1]

    _, _, gp, gs = local_regularizers(mu0, s0, with_grad=True)
    return {
        "d_ssim": ds_err,
        "l1": max_rel_err(g_l1, central_diff(l1, a, h)),
        "position": max_rel_err(gp, central_diff(reg_pos, mu0, h)),
        "scaling": max_rel_err(gs, central_diff(reg_scale, s0, h)),
    }
