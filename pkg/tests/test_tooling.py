import numpy as np
import pytest

from rigsplat.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from rigsplat.config import TrainConfig, format_config, load_config
from rigsplat.dataset import load_dataset, load_params_file, save_dataset
from rigsplat.errors import LoadError
from rigsplat.imgio import load_float_image, load_png, quantize, save_float_image, \
    save_png
from rigsplat.metrics import PSNR_CAP, psnr, psnr_ssim
from rigsplat.rasterizer import RasterSettings
from rigsplat.toydata import (
    make_gt_gaussians,
    make_param_sequence,
    make_ring_cameras,
    make_toy_dataset,
    make_toy_rig,
    render_gt_frame,
    spatial_sine_warp,
)
from rigsplat.imgio import quantize


# ------------------------------------------------------------- image I/O

def test_png_roundtrip_is_identity_on_quantized(tmp_path):
    rng = np.random.default_rng(0)
    img = quantize(rng.uniform(0, 1, size=(16, 16, 3)))
    p = tmp_path / "img.png"
    save_png(p, img)
    np.testing.assert_array_equal(load_png(p), img)


def test_float_dump_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, size=(9, 13, 3))
    p = tmp_path / "img.f64"
    save_float_image(p, img)
    np.testing.assert_array_equal(load_float_image(p), img)


def test_float_dump_bad_magic(tmp_path):
    p = tmp_path / "img.f64"
    p.write_bytes(b"JUNK\n1 1 1\n" + b"\x00" * 8)
    with pytest.raises(LoadError):
        load_float_image(p)


# ------------------------------------------------------------- metrics

def test_psnr_identical_capped():
    img = np.full((8, 8, 3), 0.25)
    p, s = psnr_ssim(img, img.copy())
    assert p == PSNR_CAP
    assert s == pytest.approx(1.0, abs=1e-12)


def test_psnr_uniform_error():
    a = np.zeros((10, 10, 3))
    b = np.full((10, 10, 3), 0.1)  # mse = 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetric():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, size=(12, 12, 3))
    b = rng.uniform(0, 1, size=(12, 12, 3))
    assert psnr(a, b) == psnr(b, a)


# ------------------------------------------------------------- toy data

def test_toy_rig_deterministic():
    r1 = make_toy_rig(seed=5)
    r2 = make_toy_rig(seed=5)
    np.testing.assert_array_equal(r1.template_vertices, r2.template_vertices)
    np.testing.assert_array_equal(r1.blendshapes, r2.blendshapes)
    np.testing.assert_array_equal(r1.skin_weights, r2.skin_weights)


def test_toy_rig_budget_and_invariants():
    rig = make_toy_rig(seed=0)  # default 16x16 sphere
    assert rig.n_faces == 480
    assert rig.n_blendshapes == 4
    assert rig.n_joints == 2
    np.testing.assert_allclose(rig.skin_weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.abs(rig.blendshapes).max() <= 0.25 + 1e-12


def test_toy_dataset_shapes_and_determinism():
    rig = make_toy_rig(seed=1)
    gt = make_gt_gaussians(rig, n_gaussians=16, seed=2)
    cams = make_ring_cameras(n_cameras=3, size=32)
    params = make_param_sequence(rig, n_settings=2, seed=3)
    ds1 = make_toy_dataset(rig, gt, cams, params)
    ds2 = make_toy_dataset(rig, gt, cams, params)
    assert len(ds1) == 6  # cameras x settings
    for f1, f2 in zip(ds1.frames, ds2.frames):
        np.testing.assert_array_equal(f1.image, f2.image)
        assert f1.mask.all()


def test_toy_dataset_rerender_bit_exact():
    rig = make_toy_rig(seed=4)
    gt = make_gt_gaussians(rig, n_gaussians=12, seed=5)
    cams = make_ring_cameras(n_cameras=2, size=32)
    params = make_param_sequence(rig, n_settings=2, seed=6)
    settings = RasterSettings()
    ds = make_toy_dataset(rig, gt, cams, params, settings=settings)
    frame = ds.frames[3]
    img = render_gt_frame(rig, gt, frame.params, frame.camera, ds.background,
                          settings)
    np.testing.assert_array_equal(quantize(img), frame.image)


def test_toy_dataset_zero_params_vary_only_by_camera():
    rig = make_toy_rig(seed=7)
    gt = make_gt_gaussians(rig, n_gaussians=10, seed=8)
    cams = make_ring_cameras(n_cameras=3, size=24)
    from rigsplat.rig import RigParams

    zero = [RigParams.zero(rig)]
    ds = make_toy_dataset(rig, gt, cams, zero)
    assert len(ds) == 3
    # same params, different cameras -> images genuinely differ
    assert np.abs(ds.frames[0].image - ds.frames[1].image).max() > 0


def test_warp_moves_images():
    rig = make_toy_rig(seed=9)
    gt = make_gt_gaussians(rig, n_gaussians=24, seed=10)
    cams = make_ring_cameras(n_cameras=1, size=32)
    params = make_param_sequence(rig, n_settings=1, seed=11)
    plain = make_toy_dataset(rig, gt, cams, params)
    warped = make_toy_dataset(rig, gt, cams, params, warp=spatial_sine_warp())
    assert np.abs(plain.frames[0].image - warped.frames[0].image).max() > 0.01


# ------------------------------------------------------------- dataset I/O

def build_dataset(tmp_path, n_cams=2, n_params=2, size=24):
    rig = make_toy_rig(seed=12)
    gt = make_gt_gaussians(rig, n_gaussians=8, seed=13)
    cams = make_ring_cameras(n_cameras=n_cams, size=size)
    params = make_param_sequence(rig, n_settings=n_params, seed=14)
    ds = make_toy_dataset(rig, gt, cams, params, background=(0.1, 0.2, 0.3))
    root = tmp_path / "ds"
    save_dataset(root, [(f.image, f.mask, f.params, f.camera)
                        for f in ds.frames], rig, ds.background)
    return root, ds


def test_dataset_roundtrip(tmp_path):
    root, ds = build_dataset(tmp_path)
    back = load_dataset(root)
    assert len(back) == len(ds)
    for f1, f2 in zip(back.frames, ds.frames):
        np.testing.assert_array_equal(f1.image, f2.image)
        np.testing.assert_array_equal(f1.params.psi, f2.params.psi)
        assert f1.camera.fx == f2.camera.fx
    np.testing.assert_array_equal(back.background, ds.background)


def test_dataset_missing_mask_errors_with_frame_name(tmp_path):
    root, _ = build_dataset(tmp_path)
    (root / "masks" / "000001.png").unlink()
    with pytest.raises(LoadError, match="000001"):
        load_dataset(root)


def test_dataset_missing_frame_errors(tmp_path):
    root, _ = build_dataset(tmp_path)
    (root / "frames" / "000000.png").unlink()
    with pytest.raises(LoadError, match="missing frame"):
        load_dataset(root)


def test_dataset_masked_pixels_equal_background(tmp_path):
    root, ds = build_dataset(tmp_path)
    # punch a hole in one mask
    mask = load_png(root / "masks" / "000000.png") >= 0.5
    mask[:5, :5] = False
    save_png(root / "masks" / "000000.png", mask.astype(np.float64))
    back = load_dataset(root)
    np.testing.assert_array_equal(
        back.frames[0].image[:5, :5],
        np.broadcast_to(back.background, (5, 5, 3)))


def test_params_file_roundtrip(tmp_path):
    root, ds = build_dataset(tmp_path)
    records = load_params_file(root / "params.jsonl")
    assert len(records) == len(ds)
    p, cam = records[0]
    np.testing.assert_array_equal(p.psi, ds.frames[0].params.psi)
    np.testing.assert_array_equal(p.theta, ds.frames[0].params.theta)
    assert cam.width == ds.frames[0].camera.width


# ------------------------------------------------------------- checkpoint

def make_ckpt():
    rig = make_toy_rig(seed=15, n_rings=4, n_segments=5)
    gt = make_gt_gaussians(rig, n_gaussians=6, seed=16)
    rng = np.random.default_rng(17)
    planes = [rng.normal(size=(3, 4, 4, 2)), rng.normal(size=(3, 8, 8, 2))]
    return Checkpoint(
        config=TrainConfig().to_dict(),
        rig=rig,
        gaussians=gt,
        triplane_planes=planes,
        triplane_domain=(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0])),
        basis_params={"w0": rng.normal(size=(12, 8)), "b0": np.zeros(8),
                      "w1": rng.normal(size=(8, 40)), "b1": np.zeros(40)},
        latent_params={"w0": rng.normal(size=(10, 8)), "b0": np.zeros(8),
                       "w1": rng.normal(size=(8, 4)), "b1": np.zeros(4)},
        optimizer_state={
            "m": {"mu0": rng.normal(size=(6, 3))},
            "v": {"mu0": rng.normal(size=(6, 3)) ** 2},
            "steps": {"mu0": 12}, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
        },
        iteration=1234,
    )


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    ckpt = make_ckpt()
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, ckpt)
    back = load_checkpoint(p1)
    save_checkpoint(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(back.gaussians.mu0, ckpt.gaussians.mu0)
    np.testing.assert_array_equal(back.triplane_planes[1],
                                  ckpt.triplane_planes[1])
    assert back.iteration == 1234
    assert back.optimizer_state["steps"]["mu0"] == 12
    assert back.config == ckpt.config


def test_checkpoint_corrupted_header(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"XXXX" + b"\x00" * 100)
    with pytest.raises(LoadError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_bad_version(tmp_path):
    ckpt = make_ckpt()
    p = tmp_path / "v.ckpt"
    save_checkpoint(p, ckpt)
    blob = bytearray(p.read_bytes())
    blob[4] = 99
    p.write_bytes(bytes(blob))
    with pytest.raises(LoadError, match="version"):
        load_checkpoint(p)


def test_checkpoint_truncation(tmp_path):
    ckpt = make_ckpt()
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, ckpt)
    blob = p.read_bytes()
    p.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(LoadError):
        load_checkpoint(p)


# ------------------------------------------------------------- config

def test_config_defaults_match_recipe_constants():
    cfg = TrainConfig()
    assert cfg.lambda1 == 0.2
    assert cfg.lambda2 == 0.02
    assert cfg.lambda3 == 0.01
    assert cfg.lambda4 == 1.0
    assert cfg.eps_position == 1.0
    assert cfg.eps_scaling == 0.6
    assert cfg.lr_position == 5e-3
    assert cfg.lr_triplane == 5e-3
    assert cfg.lr_mlp == 1e-4
    assert cfg.adjuster_start_iter == 5000
    assert (cfg.densify_start, cfg.densify_end, cfg.densify_stride) == (500, 60000, 100)
    assert cfg.opacity_reset_stride == 3000
    assert cfg.total_iters == 120000
    assert (cfg.adam_beta1, cfg.adam_beta2) == (0.9, 0.999)


def test_config_file_roundtrip(tmp_path):
    cfg = TrainConfig(total_iters=500, no_adjuster=True,
                      triplane_resolutions=(8, 16), seed=42)
    p = tmp_path / "cfg.txt"
    p.write_text(format_config(cfg) + "\n# trailing comment\n")
    back = load_config(p)
    assert back == cfg


def test_config_unknown_key(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("not_a_key 17\n")
    with pytest.raises(LoadError, match="not_a_key"):
        load_config(p)
