"""Two-phase training orchestration.

Phase 1 ("neutral initialization"): only the local Gaussians train, driven
through the full LBS mesh with the morph adjuster inactive. From
adjuster_start_iter the tri-plane and both MLPs join, along with the optional
perceptual plugin. Densification with binding inheritance runs on its own
window/stride; opacity resets on a third stride. All randomness flows from
one seeded generator, so runs are bit-reproducible.
"""

import os

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .densify import DensifyStats, densify_and_prune, reset_opacity
from .errors import TrainingDiverged
from .imgio import quantize
from .losses import total_loss
from .metrics import psnr, ssim
from .model import AvatarModel
from .optim import Adam, lr_schedule
from .rasterizer import RasterSettings
from .rig import RigParams

GAUSSIAN_GROUPS = ("mu0", "rot0", "log_scale0", "opacity_raw", "sh")

LOG_HEADER = "iter,l1,d_ssim,position,scaling,total,lr"


def raster_settings(cfg):
    return RasterSettings(
        tile_size=cfg.tile_size, lowpass=cfg.lowpass,
        cutoff_enabled=cfg.cutoff_enabled, cutoff_radius=cfg.cutoff_radius,
        saturation_threshold=cfg.saturation_threshold)


def densify_due(cfg, t):
    return cfg.densify_start <= t <= cfg.densify_end and t % cfg.densify_stride == 0


def opacity_reset_due(cfg, t):
    return t % cfg.opacity_reset_stride == 0


def adjuster_active(cfg, t):
    """The adjuster joins strictly after its start iteration (or from the
    first iteration under the no-initialization ablation)."""
    return not cfg.no_adjuster and (cfg.no_init or t > cfg.adjuster_start_iter)


def loss_weights(cfg):
    return {
        "lambda1": cfg.lambda1, "lambda2": cfg.lambda2,
        "lambda3": cfg.lambda3, "lambda4": cfg.lambda4,
        "eps_position": cfg.eps_position, "eps_scaling": cfg.eps_scaling,
    }


def make_checkpoint(model, opt, iteration, cfg):
    return Checkpoint(
        config=cfg.to_dict(),
        rig=model.rig,
        gaussians=model.gaussians,
        triplane_planes=list(model.triplane.planes) if model.triplane else [],
        triplane_domain=(model.triplane.lo, model.triplane.hi)
        if model.triplane else None,
        basis_params=dict(model.basis_net.parameters())
        if model.has_adjuster else {},
        latent_params=dict(model.latent_net.parameters())
        if model.has_adjuster else {},
        optimizer_state=opt.state_dict() if opt is not None else {},
        iteration=iteration,
        neutral_x=model._neutral_x,
    )


def model_from_checkpoint(ckpt):
    """Rebuild a renderable AvatarModel (and its config) from a checkpoint."""
    from .adjuster import MLP, TriPlane

    cfg = TrainConfig.from_dict(ckpt.config)
    model = AvatarModel(ckpt.rig, ckpt.gaussians, cfg)
    if ckpt.triplane_planes:
        model.triplane = TriPlane(
            planes=list(ckpt.triplane_planes),
            lo=ckpt.triplane_domain[0], hi=ckpt.triplane_domain[1])
    if ckpt.basis_params:
        model.basis_net = _mlp_from_params(ckpt.basis_params)
        model.latent_net = _mlp_from_params(ckpt.latent_params)
    if ckpt.neutral_x is not None:
        model._neutral_x = ckpt.neutral_x.copy()
    return model, cfg


def _mlp_from_params(params):
    from .adjuster import MLP

    n_layers = sum(1 for k in params if k.startswith("w"))
    sizes = [params["w0"].shape[0]]
    for i in range(n_layers):
        sizes.append(params[f"w{i}"].shape[1])
    net = MLP(sizes, np.random.default_rng(0))
    for i in range(n_layers):
        net.weights[i] = params[f"w{i}"].copy()
        net.biases[i] = params[f"b{i}"].copy()
    net.zero_grads()
    return net


def train(cfg, dataset, out_dir=None, perceptual=None, progress=None):
    """Run the optimization; returns (model, history dict).

    Writes checkpoint.ckpt and loss_log.csv into out_dir when given. Raises
    TrainingDiverged on a non-finite loss after dumping a diagnostic snapshot.
    """
    rng = np.random.default_rng(cfg.seed)
    rig = dataset.rig
    model = AvatarModel.build(rig, cfg, rng)
    settings = raster_settings(cfg)
    weights = loss_weights(cfg)
    opt = Adam(model.named_parameters(),
               betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    stats = DensifyStats.zeros(len(model.gaussians))
    split_thresh = cfg.percent_dense * rig.scene_extent()
    zero_psi = np.zeros(rig.n_blendshapes)

    log_lines = [LOG_HEADER]
    history = {"loss": [], "n_gaussians": [], "events": []}
    order = []
    adjuster_active_logged = False

    for t in range(1, cfg.total_iters + 1):
        if not order:
            order = list(rng.permutation(len(dataset)))
        frame = dataset.frames[order.pop()]

        adjuster_on = model.has_adjuster and adjuster_active(cfg, t)
        if adjuster_on and not adjuster_active_logged:
            history["events"].append(("adjuster_active", t))
            adjuster_active_logged = True
        mesh_psi = None
        if cfg.strict_zero_expression and not adjuster_on:
            mesh_psi = zero_psi
        image, cache = model.forward_frame(
            frame.params, frame.camera, dataset.background, settings,
            adjuster_on=adjuster_on, mesh_psi=mesh_psi)

        plugin = perceptual if (perceptual is not None and adjuster_on) else None
        act = cache["act"]
        value, parts, d_render, d_mu0, d_s0 = total_loss(
            image, frame.image, act["mu0"], act["s0"], weights,
            perceptual=plugin, with_grad=True)
        lr_pos = lr_schedule(t, cfg.lr_position, cfg.lr_position_decay_target,
                             cfg.lr_position_decay_end)
        if not np.isfinite(value):
            dump = None
            if out_dir:
                dump = os.path.join(out_dir, f"diverged_iter{t:06d}.ckpt")
                save_checkpoint(dump, make_checkpoint(model, opt, t, cfg))
            raise TrainingDiverged(
                f"non-finite loss at iteration {t}", iteration=t, dump_path=dump)

        grads = model.backward_frame(cache, d_render, d_mu0, d_s0)
        stats.update(grads["mean2d_viewspace"], grads["visible"])

        lrs = {
            "mu0": lr_pos, "rot0": cfg.lr_rotation,
            "log_scale0": cfg.lr_scaling, "opacity_raw": cfg.lr_opacity,
            "sh": cfg.lr_sh,
        }
        step_grads = {name: grads[name] for name in GAUSSIAN_GROUPS}
        if adjuster_on:
            if "planes" in grads:
                for i, g in enumerate(grads["planes"]):
                    step_grads[f"plane{i}"] = g
                    lrs[f"plane{i}"] = cfg.lr_triplane
            for tag in ("basis", "latent"):
                for i, g in enumerate(grads[f"{tag}_w"]):
                    step_grads[f"{tag}_w{i}"] = g
                    lrs[f"{tag}_w{i}"] = cfg.lr_mlp
                for i, g in enumerate(grads[f"{tag}_b"]):
                    step_grads[f"{tag}_b{i}"] = g
                    lrs[f"{tag}_b{i}"] = cfg.lr_mlp
        opt.step(step_grads, lrs)

        if densify_due(cfg, t):
            merged, stats, report = densify_and_prune(
                model.gaussians, stats,
                grad_threshold=cfg.densify_grad_threshold,
                split_scale_threshold=split_thresh,
                split_factor=cfg.split_factor,
                prune_opacity=cfg.prune_opacity, rng=rng)
            for name in GAUSSIAN_GROUPS:
                opt.select_and_extend_rows(
                    name, getattr(merged, _FIELD[name]),
                    report["keep"], report["n_new"])
            model.gaussians = merged
            model.refresh_neutral()
            history["events"].append(("densify", t))

        if opacity_reset_due(cfg, t):
            reset_opacity(model.gaussians, cfg.opacity_reset_ceiling)
            opt.replace_param("opacity_raw", model.gaussians.opacity_raw)
            history["events"].append(("opacity_reset", t))

        log_lines.append(
            f"{t},{parts['l1']!r},{parts['d_ssim']!r},{parts['position']!r},"
            f"{parts['scaling']!r},{parts['total']!r},{lr_pos!r}")
        history["loss"].append(parts["total"])
        history["n_gaussians"].append(len(model.gaussians))
        if progress and t % progress == 0:
            print(f"iter {t:6d}  loss {parts['total']:.5f}  "
                  f"gaussians {len(model.gaussians)}")

    ckpt = make_checkpoint(model, opt, cfg.total_iters, cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"), ckpt)
        with open(os.path.join(out_dir, "loss_log.csv"), "w") as fh:
            fh.write("\n".join(log_lines) + "\n")
    history["log_lines"] = log_lines
    history["checkpoint"] = ckpt
    return model, history


_FIELD = {
    "mu0": "mu0", "rot0": "rot0", "log_scale0": "log_scale0",
    "opacity_raw": "opacity_raw", "sh": "sh",
}


def render_frames(model, records, background, settings=None):
    """Render (params, camera) records with a trained model; adjuster on."""
    settings = settings or RasterSettings()
    images = []
    for params, camera in records:
        img, _ = model.forward_frame(
            params, camera, background, settings,
            adjuster_on=model.has_adjuster)
        images.append(img)
    return images


def evaluate(model, dataset, settings=None):
    """Mean PSNR/SSIM of the model against a dataset (8-bit comparison)."""
    settings = settings or RasterSettings()
    records = [(f.params, f.camera) for f in dataset.frames]
    renders = render_frames(model, records, dataset.background, settings)
    scores = []
    for render, frame in zip(renders, dataset.frames):
        q = quantize(render)
        scores.append((psnr(q, frame.image), ssim(q, frame.image)))
    arr = np.array(scores)
    return {"psnr": float(arr[:, 0].mean()), "ssim": float(arr[:, 1].mean()),
            "per_frame": scores}
