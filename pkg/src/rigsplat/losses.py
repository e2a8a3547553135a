"""Training objectives: weighted L1 + D-SSIM photometric term, local
position/scale regularizers, and the pluggable perceptual term.

Every loss returns (value, backward-ready gradients). The SSIM here uses an
11x11 Gaussian window (sigma 1.5, stability constants for unit dynamic range)
over fully-interior windows only, which matches scikit-image's
gaussian-weighted SSIM with its edge crop. Images smaller than the window
fall back to the largest odd window that fits.
"""

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_taps(win, sigma):
    r = (win - 1) // 2
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * sigma**2))
    return g / g.sum()


def _sep_valid(x, g1):
    """Valid-mode 2D correlation with the separable window."""
    r = (len(g1) - 1) // 2
    y = correlate1d(x, g1, axis=0, mode="constant")
    y = correlate1d(y, g1, axis=1, mode="constant")
    return y[r:-r, r:-r]


def _sep_full(x, g1):
    """Full-mode 2D convolution (kernel is symmetric) with zero padding."""
    r = (len(g1) - 1) // 2
    y = np.pad(x, r, mode="constant")
    y = correlate1d(y, g1, axis=0, mode="constant")
    return correlate1d(y, g1, axis=1, mode="constant")


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    return a, b


def _effective_window(shape):
    win = min(SSIM_WINDOW, shape[0], shape[1])
    if win % 2 == 0:
        win -= 1
    if win < 3:
        raise ShapeError("images too small for any SSIM window")
    return win


def ssim(a, b, with_grad=False):
    """Mean SSIM over channels and interior windows.

    With `with_grad`, also returns d(mSSIM)/da.
    """
    a, b = _check_pair(np.asarray(a, dtype=np.float64),
                       np.asarray(b, dtype=np.float64))
    win = _effective_window(a.shape)
    kern = _gaussian_taps(win, SSIM_SIGMA)
    C1 = SSIM_K1**2
    C2 = SSIM_K2**2
    n_ch = a.shape[2]
    total = 0.0
    grad = np.zeros_like(a) if with_grad else None
    n_windows = None
    for ch in range(n_ch):
        x = a[:, :, ch]
        y = b[:, :, ch]
        ux = _sep_valid(x, kern)
        uy = _sep_valid(y, kern)
        uxx = _sep_valid(x * x, kern)
        uyy = _sep_valid(y * y, kern)
        uxy = _sep_valid(x * y, kern)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy
        A1 = 2.0 * ux * uy + C1
        A2 = 2.0 * vxy + C2
        B1 = ux * ux + uy * uy + C1
        B2 = vx + vy + C2
        S = (A1 * A2) / (B1 * B2)
        n_windows = S.size
        total += S.sum()
        if with_grad:
            # dm/dS for the mean comes later; here: window-stat derivatives
            dS_dux = 2.0 * uy * A2 / (B1 * B2) - S * 2.0 * ux / B1
            dS_dvx = -S / B2
            dS_dvxy = 2.0 * A1 / (B1 * B2)
            # chain into pixels: ux is a window mean, vx/vxy weighted moments
            scat_u = _sep_full(dS_dux, kern)
            scat_q = _sep_full(dS_dvx, kern)
            scat_qu = _sep_full(dS_dvx * ux, kern)
            scat_r = _sep_full(dS_dvxy, kern)
            scat_ru = _sep_full(dS_dvxy * uy, kern)
            grad[:, :, ch] = (
                scat_u + 2.0 * (x * scat_q - scat_qu) + (y * scat_r - scat_ru))
    denom = n_windows * n_ch
    value = float(total / denom)
    if with_grad:
        return value, grad / denom
    return value


def d_ssim(a, b, with_grad=False):
    """Structural dissimilarity (1 - SSIM) / 2; symmetric, 0 iff identical."""
    if with_grad:
        s, g = ssim(a, b, with_grad=True)
        return (1.0 - s) / 2.0, -0.5 * g
    return (1.0 - ssim(a, b)) / 2.0


def l1_loss(a, b, with_grad=False):
    """Mean absolute difference."""
    a, b = _check_pair(np.asarray(a, dtype=np.float64),
                       np.asarray(b, dtype=np.float64))
    diff = a - b
    value = float(np.mean(np.abs(diff)))
    if with_grad:
        return value, np.sign(diff) / diff.size
    return value


def rgb_loss(render, gt, lambda1=0.2, with_grad=False):
    """(1 - l1) L1 + l1 D-SSIM photometric loss."""
    if with_grad:
        v1, g1 = l1_loss(render, gt, with_grad=True)
        v2, g2 = d_ssim(render, gt, with_grad=True)
        return ((1.0 - lambda1) * v1 + lambda1 * v2,
                (1.0 - lambda1) * g1 + lambda1 * g2)
    return (1.0 - lambda1) * l1_loss(render, gt) + lambda1 * d_ssim(render, gt)


def local_regularizers(mu0, s0, eps_position=1.0, eps_scaling=0.6,
                       with_grad=False):
    """Thresholded l2 penalties on local positions and activated scales.

    Each is the l2 norm over all componentwise positive excesses above the
    threshold; components at or below threshold contribute (and receive)
    exactly zero.
    """
    rp = np.maximum(mu0 - eps_position, 0.0)
    rs = np.maximum(s0 - eps_scaling, 0.0)
    lp = float(np.sqrt(np.sum(rp * rp)))
    ls = float(np.sqrt(np.sum(rs * rs)))
    if not with_grad:
        return lp, ls
    gp = rp / lp if lp > 0.0 else np.zeros_like(rp)
    gs = rs / ls if ls > 0.0 else np.zeros_like(rs)
    return lp, ls, gp, gs


def total_loss(render, gt, mu0, s0, weights, perceptual=None, with_grad=False):
    """Full objective: rgb + l2*perceptual + l3*position + l4*scaling.

    weights: dict with lambda1..lambda4, eps_position, eps_scaling.
    perceptual: optional plugin, callable (render, gt) -> (value, d/d render);
    absent plugin contributes exactly zero.

    Returns (value, parts) or, with grads, (value, parts, d_render, d_mu0, d_s0).
    """
    l1v = l1_loss(render, gt)
    if with_grad:
        dsv, g_ds = d_ssim(render, gt, with_grad=True)
        lp, ls, gp, gs = local_regularizers(
            mu0, s0, weights["eps_position"], weights["eps_scaling"],
            with_grad=True)
    else:
        dsv = d_ssim(render, gt)
        lp, ls = local_regularizers(
            mu0, s0, weights["eps_position"], weights["eps_scaling"])
    lam1 = weights["lambda1"]
    rgb = (1.0 - lam1) * l1v + lam1 * dsv
    if perceptual is not None:
        if with_grad:
            pv, g_p = perceptual(render, gt)
        else:
            pv = perceptual(render, gt)[0]
    else:
        pv = 0.0
    value = float(rgb + weights["lambda2"] * pv + weights["lambda3"] * lp
                  + weights["lambda4"] * ls)
    parts = {"l1": l1v, "d_ssim": dsv, "perceptual": float(pv),
             "position": lp, "scaling": ls, "total": value}
    if not with_grad:
        return value, parts
    _, g_l1 = l1_loss(render, gt, with_grad=True)
    d_render = (1.0 - lam1) * g_l1 + lam1 * g_ds
    if perceptual is not None:
        d_render = d_render + weights["lambda2"] * g_p
    d_mu0 = weights["lambda3"] * gp
    d_s0 = weights["lambda4"] * gs
    return value, parts, d_render, d_mu0, d_s0
