"""End-to-end avatar model: rig -> frames -> bound Gaussians -> fine
deformation -> projection -> splatting, with the matching analytic backward.

The model owns the trainable state (local Gaussians, tri-plane, both MLPs)
and the caches that stay fixed between densification events: the neutral
frames, the neutral query positions, and the tri-plane interpolation stencil.
"""

import numpy as np

from . import adjuster as adj
from .config import TrainConfig
from .gaussians import (
    GaussianSet,
    activate_backward,
    activate_params,
    bind_backward,
    bind_to_global,
    build_covariance,
    build_covariance_backward,
    sh_to_color,
    sh_to_color_backward,
)
from .rasterizer import (
    RasterSettings,
    make_splats,
    project_backward,
    project_gaussians,
    render_backward,
    render_forward,
    scatter_splat_grads,
)
from .rig import RigParams, compose_head_pose, evaluate_rig, triangle_frames


class AvatarModel:
    def __init__(self, rig, gaussians, cfg, triplane=None, basis_net=None,
                 latent_net=None):
        self.rig = rig
        self.gaussians = gaussians
        self.cfg = cfg
        self.triplane = triplane
        self.basis_net = basis_net
        self.latent_net = latent_net
        neutral = evaluate_rig(rig, RigParams.zero(rig))
        self.neutral_frames = triangle_frames(neutral, rig.faces)
        self._last_frames = self.neutral_frames
        lo = neutral.min(axis=0)
        hi = neutral.max(axis=0)
        pad = cfg.domain_pad * (hi - lo)
        self.domain_lo = lo - pad
        self.domain_hi = hi + pad
        self._neutral_x = None
        self._encode_cache = None

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, rig, cfg: TrainConfig, rng):
        gaussians = GaussianSet.from_mesh(
            rig.n_faces, sh_degree=cfg.sh_degree,
            init_local_scale=cfg.init_local_scale,
            init_opacity=cfg.init_opacity, init_grey=cfg.init_grey)
        model = cls(rig, gaussians, cfg)
        if not cfg.no_adjuster:
            model._init_adjuster(rng)
        return model

    def _init_adjuster(self, rng):
        cfg = self.cfg
        if cfg.no_triplane:
            in_dim = adj.fourier_dim(cfg.fourier_bands)
        else:
            self.triplane = adj.TriPlane.create(
                self.domain_lo, self.domain_hi,
                resolutions=cfg.triplane_resolutions,
                n_features=cfg.triplane_features,
                init_std=cfg.triplane_init_std, rng=rng)
            in_dim = self.triplane.out_dim
        self.basis_net = adj.MLP(
            (in_dim, *cfg.basis_hidden, adj.DELTA_ROWS * cfg.latent_dim),
            rng, zero_last=True)
        drive_dim = self.rig.n_blendshapes + 3 * self.rig.n_joints
        self.latent_net = adj.MLP(
            (drive_dim, *cfg.latent_hidden, cfg.latent_dim), rng)

    @property
    def has_adjuster(self):
        return self.basis_net is not None

    # -- caches tied to the Gaussian set ------------------------------------

    def refresh_neutral(self):
        """Recompute neutral query positions (and the tri-plane stencil);
        call after any change to the Gaussian set."""
        self._neutral_x = None
        self._encode_cache = None

    def neutral_positions(self):
        """World positions of the Gaussians under the neutral pose; constant
        w.r.t. gradients (stop-gradient by construction)."""
        if self._neutral_x is None:
            act = activate_params(self.gaussians)
            bound = bind_to_global(act, self.neutral_frames,
                                   self.gaussians.parent_tri)
            self._neutral_x = bound["mu"].copy()
        return self._neutral_x

    def _encode(self):
        """Positional features for every Gaussian (cached stencil)."""
        x = self.neutral_positions()
        if self.cfg.no_triplane:
            if self._encode_cache is None:
                self._encode_cache = adj.fourier_encode(
                    x, self.domain_lo, self.domain_hi, self.cfg.fourier_bands)
            return self._encode_cache, None
        feats, self._encode_cache = adj.encode_position(
            self.triplane, x, cache=self._encode_cache)
        return feats, self._encode_cache

    # -- forward / backward --------------------------------------------------

    def frame_frames(self, params, mesh_psi=None):
        """Triangle frames for one animation frame (head pose excluded)."""
        if self.cfg.no_lbs:
            return self.neutral_frames
        psi = params.psi if mesh_psi is None else mesh_psi
        posed = evaluate_rig(self.rig, RigParams(
            psi=psi, theta=params.theta,
            head_rot=np.zeros(3), head_trans=np.zeros(3)))
        frames = triangle_frames(posed, self.rig.faces, fallback=self._last_frames)
        self._last_frames = frames
        return frames

    def forward_frame(self, params, camera, background, settings=None,
                      adjuster_on=False, mesh_psi=None):
        """Render one frame. Returns (image, cache for backward_frame)."""
        settings = settings or RasterSettings()
        cam = compose_head_pose(camera, params.head_rot, params.head_trans)
        frames = self.frame_frames(params, mesh_psi=mesh_psi)
        gs = self.gaussians
        act = activate_params(gs)
        bound = bind_to_global(act, frames, gs.parent_tri)

        enc_cache = None
        basis_cache = None
        latent_cache = None
        if adjuster_on and self.has_adjuster:
            feats, enc_cache = self._encode()
            basis, basis_cache = adj.predict_basis(
                self.basis_net, feats, self.cfg.latent_dim)
            f, latent_cache = adj.encode_driving(
                self.latent_net, params.psi, params.theta)
        else:
            basis = np.zeros((len(gs), adj.DELTA_ROWS, 1))
            f = np.zeros(1)
        refined, def_cache = adj.apply_deformation(
            bound["mu"], bound["r"], bound["s"], basis, f,
            eps_scale=self.cfg.eps_scale_clamp,
            quat_compose=self.cfg.quat_delta_compose)

        cov3d = build_covariance(refined["r"], refined["s"])
        proj = project_gaussians(refined["mu"], cov3d, cam,
                                 lowpass=settings.lowpass)
        v = refined["mu"] - cam.center()
        vnorm = np.linalg.norm(v, axis=1, keepdims=True)
        dirs = v / vnorm
        color, sh_cache = sh_to_color(gs.sh, dirs)
        splats = make_splats(proj, color, act["o"])
        image, aux = render_forward(
            splats, camera.width, camera.height, background, settings)
        cache = {
            "act": act, "bound": bound, "refined": refined,
            "def_cache": def_cache, "proj": proj, "sh_cache": sh_cache,
            "vnorm": vnorm, "dirs": dirs, "splats": splats, "aux": aux,
            "cam": cam, "adjuster_on": adjuster_on and self.has_adjuster,
            "enc_cache": enc_cache, "basis_cache": basis_cache,
            "latent_cache": latent_cache,
        }
        return image, cache

    def backward_frame(self, cache, d_image, d_mu0_direct=None, d_s0_direct=None):
        """Chain image grads back to every trainable parameter.

        d_mu0_direct / d_s0_direct let the caller inject regularizer grads on
        the local position and the activated local scale. Returns a dict of
        raw-parameter grads plus the view-space positional grads and the
        visibility mask used by densification stats.
        """
        gs = self.gaussians
        n = len(gs)
        if self.has_adjuster:
            self.basis_net.zero_grads()
            self.latent_net.zero_grads()
        splat_grads = render_backward(cache["aux"], d_image)
        full = scatter_splat_grads(splat_grads, cache["splats"].source_id, n)

        # color -> sh and, for view-dependent bands, back into positions
        d_sh, d_dir = sh_to_color_backward(gs.sh, cache["sh_cache"], full["color"])
        dirs, vnorm = cache["dirs"], cache["vnorm"]
        d_v = (d_dir - dirs * np.sum(dirs * d_dir, axis=1, keepdims=True)) / vnorm
        d_mu_ref = d_v

        d_mu_p, d_cov3d = project_backward(
            cache["proj"], cache["cam"], full["mean2d"], full["cov2d"])
        d_mu_ref = d_mu_ref + d_mu_p
        d_r_ref, d_s_ref = build_covariance_backward(
            cache["refined"]["r"], cache["refined"]["s"], d_cov3d)

        d_def = adj.apply_deformation_backward(
            cache["def_cache"], d_mu_ref, d_r_ref, d_s_ref)
        grads = {"sh": d_sh}
        if cache["adjuster_on"]:
            d_feats = adj.predict_basis_backward(
                self.basis_net, cache["basis_cache"], d_def["basis"])
            if not self.cfg.no_triplane:
                grads["planes"] = adj.encode_position_backward(
                    self.triplane, cache["enc_cache"], d_feats)
            adj.encode_driving_backward(
                self.latent_net, cache["latent_cache"], d_def["f"])
            grads["basis_w"] = self.basis_net.w_grads
            grads["basis_b"] = self.basis_net.b_grads
            grads["latent_w"] = self.latent_net.w_grads
            grads["latent_b"] = self.latent_net.b_grads

        d_local = bind_backward(cache["bound"], d_def["mu"], d_def["r"], d_def["s"])
        d_act = {
            "mu0": d_local["mu0"],
            "r0": d_local["r0"],
            "s0": d_local["s0"],
            "o": full["opacity"],
        }
        if d_s0_direct is not None:
            d_act["s0"] = d_act["s0"] + d_s0_direct
        raw = activate_backward(gs, cache["act"], d_act)
        if d_mu0_direct is not None:
            raw["mu0"] = raw["mu0"] + d_mu0_direct
        grads.update(raw)
        grads["mean2d_viewspace"] = full["mean2d"]
        grads["visible"] = cache["proj"]["valid"]
        return grads

    # -- parameter registry (shared by the optimizer and checkpoints) --------

    def named_parameters(self):
        """All trainable arrays keyed by optimizer group names."""
        gs = self.gaussians
        out = {
            "mu0": gs.mu0,
            "rot0": gs.rot0,
            "log_scale0": gs.log_scale0,
            "opacity_raw": gs.opacity_raw,
            "sh": gs.sh,
        }
        if self.triplane is not None:
            for i, p in enumerate(self.triplane.planes):
                out[f"plane{i}"] = p
        if self.has_adjuster:
            for tag, net in (("basis", self.basis_net), ("latent", self.latent_net)):
                for name, arr in net.parameters():
                    out[f"{tag}_{name}"] = arr
        return out

    def adjuster_param_names(self):
        names = []
        if self.triplane is not None:
            names += [f"plane{i}" for i in range(len(self.triplane.planes))]
        if self.has_adjuster:
            for tag, net in (("basis", self.basis_net), ("latent", self.latent_net)):
                names += [f"{tag}_{name}" for name, _ in net.parameters()]
        return names
