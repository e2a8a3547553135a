import numpy as np
import pytest

from rigsplat.config import TrainConfig
from rigsplat.gradcheck import build_gradcheck_scene, full_pipeline_gradcheck, \
    gradcheck_config
from rigsplat.model import AvatarModel
from rigsplat.rasterizer import RasterSettings
from rigsplat.toydata import make_param_sequence, make_ring_cameras, make_toy_rig


def small_cfg(**kw):
    base = dict(
        sh_degree=0, latent_dim=4, triplane_resolutions=(4, 8),
        triplane_features=2, basis_hidden=(8, 8), latent_hidden=(8, 8),
        seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


def scene(cfg, seed=0, size=16):
    rng = np.random.default_rng(seed)
    rig = make_toy_rig(seed=seed, n_rings=5, n_segments=6, n_blendshapes=3,
                       n_joints=2)
    model = AvatarModel.build(rig, cfg, rng)
    cam = make_ring_cameras(n_cameras=1, focal=size * 1.2, size=size)[0]
    params = make_param_sequence(rig, n_settings=1, seed=seed + 1)[0]
    return model, params, cam


def test_zero_adjuster_bit_identical_to_lbs_only():
    # zero-initialized final basis layer: the full pipeline must render the
    # same bits as the pipeline with the adjuster disabled
    cfg = small_cfg()
    model, params, cam = scene(cfg)
    bg = np.array([0.2, 0.2, 0.2])
    img_off, _ = model.forward_frame(params, cam, bg, adjuster_on=False)
    img_on, _ = model.forward_frame(params, cam, bg, adjuster_on=True)
    np.testing.assert_array_equal(img_on, img_off)


def test_no_adjuster_config_matches_zero_adjuster():
    cfg_on = small_cfg()
    cfg_off = small_cfg(no_adjuster=True)
    model_on, params, cam = scene(cfg_on)
    model_off, params2, cam2 = scene(cfg_off)
    bg = np.zeros(3)
    a, _ = model_on.forward_frame(params, cam, bg, adjuster_on=True)
    b, _ = model_off.forward_frame(params2, cam2, bg, adjuster_on=False)
    np.testing.assert_array_equal(a, b)


def test_forward_deterministic():
    cfg = small_cfg()
    model, params, cam = scene(cfg)
    bg = np.array([0.5, 0.1, 0.3])
    a, _ = model.forward_frame(params, cam, bg, adjuster_on=True)
    b, _ = model.forward_frame(params, cam, bg, adjuster_on=True)
    np.testing.assert_array_equal(a, b)


def test_no_lbs_ignores_mesh_motion():
    cfg = small_cfg(no_lbs=True)
    model, params, cam = scene(cfg)
    bg = np.zeros(3)
    img1, _ = model.forward_frame(params, cam, bg, adjuster_on=False)
    still = make_param_sequence(model.rig, n_settings=1, seed=77)[0]
    still.head_rot = params.head_rot.copy()
    still.head_trans = params.head_trans.copy()
    img2, _ = model.forward_frame(still, cam, bg, adjuster_on=False)
    np.testing.assert_array_equal(img1, img2)  # psi/theta have no effect


def test_mesh_psi_override():
    cfg = small_cfg()
    model, params, cam = scene(cfg)
    bg = np.zeros(3)
    zero = np.zeros(model.rig.n_blendshapes)
    img1, _ = model.forward_frame(params, cam, bg, adjuster_on=False,
                                  mesh_psi=zero)
    neutral = make_param_sequence(model.rig, n_settings=1, seed=5)[0]
    neutral.psi = zero
    neutral.theta = params.theta
    neutral.head_rot = params.head_rot
    neutral.head_trans = params.head_trans
    img2, _ = model.forward_frame(neutral, cam, bg, adjuster_on=False)
    np.testing.assert_array_equal(img1, img2)


def test_neutral_positions_cache_refresh():
    cfg = small_cfg()
    model, params, cam = scene(cfg)
    x1 = model.neutral_positions()
    model.gaussians.mu0 += 0.1
    x2 = model.neutral_positions()
    np.testing.assert_array_equal(x1, x2)  # cached until refreshed
    model.refresh_neutral()
    x3 = model.neutral_positions()
    assert np.abs(x3 - x1).max() > 0.01


def test_fourier_mode_runs_and_differs_from_triplane():
    cfg_f = small_cfg(no_triplane=True)
    model, params, cam = scene(cfg_f)
    assert model.triplane is None
    bg = np.zeros(3)
    img, cache = model.forward_frame(params, cam, bg, adjuster_on=True)
    assert np.all(np.isfinite(img))
    grads = model.backward_frame(cache, np.ones_like(img))
    assert "planes" not in grads
    assert any(np.abs(g).max() > 0 for g in grads["basis_w"])


def test_full_gradcheck_under_tolerance():
    report = full_pipeline_gradcheck()
    assert max(report.values()) <= 1e-4, report


def test_gradcheck_scene_quaternions_stay_unit():
    model, loss_value, analytic, _ = build_gradcheck_scene()
    _, grads = analytic()
    assert set(grads) >= {"mu0", "rot0", "log_scale0", "opacity_raw", "sh",
                          "planes", "mean2d_viewspace", "visible"}


def test_named_parameters_cover_adjuster():
    cfg = small_cfg()
    model, _, _ = scene(cfg)
    names = set(model.named_parameters())
    assert {"mu0", "rot0", "log_scale0", "opacity_raw", "sh",
            "plane0", "plane1", "basis_w0", "latent_w0"} <= names
    assert set(model.adjuster_param_names()) == {
        n for n in names if n.startswith(("plane", "basis", "latent"))}
