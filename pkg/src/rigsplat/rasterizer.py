"""Differentiable tile-based splatting on the CPU.

Forward: EWA projection of world-space Gaussians to 2D splats, stable depth
sort, front-to-back alpha compositing per 16x16 tile. Backward: analytic
gradients for every splat field, chained back to world-space Gaussian fields.
`brute_force_render` is an independently-structured per-splat full-image
compositor used as the rendering oracle.

Conventions: pixel (row i, col j) has center (j + 0.5, i + 0.5); images are
(H, W, 3) float64 in [0, 1]; compositing is C = sum_i c_i a_i prod_j<i (1-a_j)
plus background times the final transmittance, with a_i = o_i exp(-d2/2) and
d2 the Mahalanobis distance to the splat center under cov2d.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError

TILE = 16


@dataclass
class RasterSettings:
    tile_size: int = TILE
    lowpass: float = 0.3            # px^2 added to cov2d diagonal before inversion
    cutoff_enabled: bool = True     # hard zero outside the 3-sigma ellipse
    cutoff_radius: float = 3.0      # Mahalanobis radius of the cutoff
    saturation_threshold: float = 1e-4  # stop compositing below this T; 0 disables


@dataclass
class Splats2D:
    """Depth-unsorted 2D splats; source_id indexes the originating Gaussian."""

    mean2d: np.ndarray   # (M, 2)
    cov2d: np.ndarray    # (M, 2, 2), already low-pass floored
    depth: np.ndarray    # (M,)
    color: np.ndarray    # (M, 3)
    opacity: np.ndarray  # (M,)
    source_id: np.ndarray  # (M,) int

    def __len__(self):
        return self.mean2d.shape[0]


@dataclass
class RenderAux:
    """Backward-pass bookkeeping: per-tile contributor caches."""

    splats: Splats2D
    order: np.ndarray          # depth sort, stable, ties by source_id
    tile_members: list         # per tile: indices into `order`d arrays
    tile_cache: list           # per tile: forward intermediates (or None)
    tile_grid: tuple           # (tiles_y, tiles_x)
    width: int
    height: int
    background: np.ndarray
    settings: RasterSettings
    transmittance: np.ndarray  # (H, W) final per-pixel T
    weight_sum: np.ndarray     # (H, W) sum of blending weights


def project_gaussians(mu, cov3d, camera, lowpass=0.3):
    """EWA local-affine projection of 3D Gaussians into pixel space.

    Returns a dict over all N inputs: mean2d, cov2d (low-pass floored),
    depth, valid (frustum mask), plus caches for the backward pass. Rows
    with valid=False hold neutral placeholder values.
    """
    mu = np.asarray(mu, dtype=np.float64)
    R = camera.R_wc
    t = mu @ R.T + camera.t_wc
    tz = t[:, 2]
    valid = (tz >= camera.near) & (tz <= camera.far)
    tzs = np.where(valid, tz, 1.0)

    J = np.zeros((mu.shape[0], 2, 3))
    J[:, 0, 0] = camera.fx / tzs
    J[:, 0, 2] = -camera.fx * t[:, 0] / tzs**2
    J[:, 1, 1] = camera.fy / tzs
    J[:, 1, 2] = -camera.fy * t[:, 1] / tzs**2
    T = J @ R                                   # (N, 2, 3)
    cov2d = T @ cov3d @ np.swapaxes(T, 1, 2)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass

    mean2d = np.stack(
        [camera.fx * t[:, 0] / tzs + camera.cx,
         camera.fy * t[:, 1] / tzs + camera.cy], axis=-1)
    mean2d[~valid] = 0.0
    cov2d[~valid] = np.eye(2)
    return {
        "mean2d": mean2d,
        "cov2d": cov2d,
        "depth": tz,
        "valid": valid,
        "_t": t,
        "_T": T,
        "_cov3d": cov3d,
    }


def project_backward(proj, camera, d_mean2d, d_cov2d):
    """Chain splat-space grads through the projection: returns (d_mu, d_cov3d)."""
    t, T, cov3d = proj["_t"], proj["_T"], proj["_cov3d"]
    valid = proj["valid"]
    R = camera.R_wc
    tzs = np.where(valid, t[:, 2], 1.0)

    d_sigma = np.einsum("nai,nab,nbj->nij", T, d_cov2d, T)
    dT = np.einsum("nab,nbi,nij->naj", d_cov2d + np.swapaxes(d_cov2d, 1, 2), T, cov3d)
    dJ = dT @ R.T

    fx, fy = camera.fx, camera.fy
    dt = np.zeros_like(t)
    dt[:, 0] = dJ[:, 0, 2] * (-fx / tzs**2)
    dt[:, 1] = dJ[:, 1, 2] * (-fy / tzs**2)
    dt[:, 2] = (
        dJ[:, 0, 0] * (-fx / tzs**2)
        + dJ[:, 1, 1] * (-fy / tzs**2)
        + dJ[:, 0, 2] * (2.0 * fx * t[:, 0] / tzs**3)
        + dJ[:, 1, 2] * (2.0 * fy * t[:, 1] / tzs**3)
    )
    dt[:, 0] += d_mean2d[:, 0] * fx / tzs
    dt[:, 2] += d_mean2d[:, 0] * (-fx * t[:, 0] / tzs**2)
    dt[:, 1] += d_mean2d[:, 1] * fy / tzs
    dt[:, 2] += d_mean2d[:, 1] * (-fy * t[:, 1] / tzs**2)

    d_mu = dt @ R
    d_mu[~valid] = 0.0
    d_sigma[~valid] = 0.0
    return d_mu, d_sigma


def make_splats(proj, color, opacity):
    """Compact the valid projected Gaussians into a Splats2D batch."""
    valid = proj["valid"]
    ids = np.nonzero(valid)[0]
    return Splats2D(
        mean2d=proj["mean2d"][ids],
        cov2d=proj["cov2d"][ids],
        depth=proj["depth"][ids],
        color=color[ids],
        opacity=opacity[ids],
        source_id=ids,
    )


def _conics(cov2d):
    a = cov2d[:, 0, 0]
    b = cov2d[:, 1, 1]
    # symmetrized read: both off-diagonal entries are honored equally, which
    # keeps the full-matrix gradient convention exact
    c = 0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0])
    det = a * b - c * c
    return b / det, a / det, -c / det  # conic A, B, C with d2 = A dx^2 + B dy^2 + 2C dxdy


def _sort_order(splats):
    # stable sort on depth; equal depths keep source_id order
    return np.argsort(splats.depth, kind="stable")


def _tile_layout(splats, width, height, settings):
    """Assign each (sorted) splat to every tile its extent overlaps."""
    ts = settings.tile_size
    tiles_x = (width + ts - 1) // ts
    tiles_y = (height + ts - 1) // ts
    n = len(splats)
    if settings.cutoff_enabled:
        r = settings.cutoff_radius
        rx = r * np.sqrt(splats.cov2d[:, 0, 0])
        ry = r * np.sqrt(splats.cov2d[:, 1, 1])
    else:
        rx = np.full(n, float(width))   # unbounded support: every tile
        ry = np.full(n, float(height))
    x0 = np.clip(np.floor((splats.mean2d[:, 0] - rx) / ts).astype(int), 0, tiles_x)
    x1 = np.clip(np.floor((splats.mean2d[:, 0] + rx) / ts).astype(int) + 1, 0, tiles_x)
    y0 = np.clip(np.floor((splats.mean2d[:, 1] - ry) / ts).astype(int), 0, tiles_y)
    y1 = np.clip(np.floor((splats.mean2d[:, 1] + ry) / ts).astype(int) + 1, 0, tiles_y)
    members = [[] for _ in range(tiles_x * tiles_y)]
    for k in range(n):  # k indexes the depth-sorted arrays
        for ty in range(y0[k], y1[k]):
            for tx in range(x0[k], x1[k]):
                members[ty * tiles_x + tx].append(k)
    members = [np.asarray(m, dtype=np.int64) for m in members]
    return members, (tiles_y, tiles_x)


def _tile_pixels(tile_idx, tiles_x, width, height, ts):
    ty, tx = divmod(tile_idx, tiles_x)
    xs = np.arange(tx * ts, min((tx + 1) * ts, width))
    ys = np.arange(ty * ts, min((ty + 1) * ts, height))
    px = (xs[None, :] + 0.5).repeat(len(ys), axis=0).ravel()
    py = (ys[:, None] + 0.5).repeat(len(xs), axis=1).ravel()
    return xs, ys, px, py


def _tile_alphas(splats, order, members, px, py, settings):
    """Alpha of each member splat at each tile pixel: (n_members, n_pixels)."""
    idx = order[members]
    A, B, C = _conics(splats.cov2d[idx])
    dx = px[None, :] - splats.mean2d[idx, 0][:, None]
    dy = py[None, :] - splats.mean2d[idx, 1][:, None]
    d2 = A[:, None] * dx * dx + B[:, None] * dy * dy + 2.0 * C[:, None] * dx * dy
    g = np.exp(-0.5 * d2)
    if settings.cutoff_enabled:
        g = np.where(d2 <= settings.cutoff_radius**2, g, 0.0)
    alpha = splats.opacity[idx][:, None] * g
    return idx, alpha, g, dx, dy, (A, B, C)


def _composite(alpha, tau):
    """Front-to-back weights with the saturation stop.

    Returns (weights, T_prev, active, T_final) where T_prev is the
    transmittance just before each splat and active marks splats composited
    before T fell under tau.
    """
    n, p = alpha.shape
    if n == 0:
        return (np.zeros((0, p)), np.zeros((0, p)),
                np.zeros((0, p), dtype=bool), np.ones(p))
    if tau > 0.0:
        full_prev = np.ones((n, p))
        np.cumprod(1.0 - alpha[:-1], axis=0, out=full_prev[1:])
        active = full_prev >= tau
        a_eff = alpha * active
    else:
        active = np.ones((n, p), dtype=bool)
        a_eff = alpha
    cp = np.cumprod(1.0 - a_eff, axis=0)
    T_prev = np.ones((n, p))
    T_prev[1:] = cp[:-1]
    weights = a_eff * T_prev
    return weights, T_prev, active, cp[-1]


def render_forward(splats, width, height, background, settings=None):
    """Tile-based front-to-back compositing. Returns (image, RenderAux)."""
    settings = settings or RasterSettings()
    background = np.asarray(background, dtype=np.float64)
    order = _sort_order(splats)
    members, grid = _tile_layout(
        Splats2D(splats.mean2d[order], splats.cov2d[order], splats.depth[order],
                 splats.color[order], splats.opacity[order], splats.source_id[order]),
        width, height, settings)
    image = np.empty((height, width, 3))
    image[:] = background
    T_final = np.ones((height, width))
    weight_sum = np.zeros((height, width))
    ts = settings.tile_size
    tiles_x = grid[1]
    tile_cache = [None] * len(members)
    for tid, mem in enumerate(members):
        if len(mem) == 0:
            continue
        xs, ys, px, py = _tile_pixels(tid, tiles_x, width, height, ts)
        idx, alpha, g, dx, dy, conic = _tile_alphas(
            splats, order, mem, px, py, settings)
        w, T_prev, active, T_last = _composite(
            alpha, settings.saturation_threshold)
        tile_cache[tid] = (idx, alpha, g, dx, dy, conic, w, T_prev, active)
        tile_img = np.einsum("np,nc->pc", w, splats.color[idx])
        tile_img += T_last[:, None] * background[None, :]
        block = (ys[0], ys[-1] + 1, xs[0], xs[-1] + 1)
        image[block[0]:block[1], block[2]:block[3]] = (
            tile_img.reshape(len(ys), len(xs), 3))
        T_final[block[0]:block[1], block[2]:block[3]] = T_last.reshape(len(ys), len(xs))
        weight_sum[block[0]:block[1], block[2]:block[3]] = (
            w.sum(axis=0).reshape(len(ys), len(xs)))
    aux = RenderAux(
        splats=splats, order=order, tile_members=members, tile_cache=tile_cache,
        tile_grid=grid, width=width, height=height, background=background,
        settings=settings, transmittance=T_final, weight_sum=weight_sum)
    return image, aux


def render_backward(aux, d_image):
    """Gradients of the rendered image w.r.t. every splat field.

    Works off the per-tile contributor caches; accumulation is tile-major
    then pixel-major so repeated runs are bit-identical. Returns a dict of
    full-length (per input splat) arrays: mean2d, cov2d, color, opacity.
    """
    splats = aux.splats
    if d_image.shape != (aux.height, aux.width, 3):
        raise ConsistencyError(
            f"gradient image {d_image.shape} does not match the forward render "
            f"({aux.height}, {aux.width}, 3)")
    settings = aux.settings
    n = len(splats)
    d_mean2d = np.zeros((n, 2))
    d_cov2d = np.zeros((n, 2, 2))
    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)
    ts = settings.tile_size
    tiles_x = aux.tile_grid[1]
    for tid, mem in enumerate(aux.tile_members):
        if len(mem) == 0:
            continue
        xs, ys, px, py = _tile_pixels(tid, tiles_x, aux.width, aux.height, ts)
        idx, alpha, g, dx, dy, (A, B, C), w, T_prev, active = aux.tile_cache[tid]
        dC_pix = d_image[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1].reshape(-1, 3)  # (P, 3)
        color = splats.color[idx]                                            # (n, 3)

        # dC/dalpha_i = T_prev_i c_i - (suffix contribution behind i)/(1-a_i);
        # the suffix is a reversed cumulative sum of the blended terms, which
        # vectorizes when every alpha stays clear of 1 (the loop handles the
        # alpha == 1 corner exactly)
        a_eff = alpha * active
        nm = len(mem)
        P = px.shape[0]
        dc_dot_c = color @ dC_pix.T                                          # (n, P)
        if np.all(a_eff < 1.0 - 1e-9):
            terms = w * dc_dot_c                                             # w_k <dC, c_k>
            rest = np.cumsum(terms[::-1], axis=0)[::-1] - terms              # sum over k > i
            T_fin = T_prev[-1] * (1.0 - a_eff[-1])
            rest = rest + (T_fin * (dC_pix @ aux.background))[None, :]
            d_alpha = (T_prev * dc_dot_c - rest / (1.0 - a_eff)) * active
        else:
            behind = np.broadcast_to(aux.background[None, :], (P, 3)).copy()
            d_alpha = np.empty((nm, P))
            for i in range(nm - 1, -1, -1):
                dc_behind = np.einsum("pc,pc->p", dC_pix, behind)
                d_alpha[i] = (dc_dot_c[i] - dc_behind) * T_prev[i]
                behind = a_eff[i][:, None] * color[i][None, :] + \
                    (1.0 - a_eff[i])[:, None] * behind
            d_alpha *= active

        d_color_t = np.einsum("np,pc->nc", w, dC_pix)
        d_opacity_t = np.einsum("np,np->n", d_alpha, g)
        dd2 = -0.5 * d_alpha * alpha
        dmx = np.einsum("np,np->n", dd2,
                        -(2.0 * A[:, None] * dx + 2.0 * C[:, None] * dy))
        dmy = np.einsum("np,np->n", dd2,
                        -(2.0 * B[:, None] * dy + 2.0 * C[:, None] * dx))
        dA = np.einsum("np,np->n", dd2, dx * dx)
        dB = np.einsum("np,np->n", dd2, dy * dy)
        dCC = np.einsum("np,np->n", dd2, dx * dy)  # per off-diagonal entry

        # conic -> cov2d: dL/dS = -S^-1 dL/dconic S^-1 (S symmetric)
        d_conic = np.empty((nm, 2, 2))
        d_conic[:, 0, 0] = dA
        d_conic[:, 1, 1] = dB
        d_conic[:, 0, 1] = dCC
        d_conic[:, 1, 0] = dCC
        conic = np.empty((nm, 2, 2))
        conic[:, 0, 0] = A
        conic[:, 1, 1] = B
        conic[:, 0, 1] = C
        conic[:, 1, 0] = C
        d_cov_t = -conic @ d_conic @ conic

        d_mean2d[idx, 0] += dmx
        d_mean2d[idx, 1] += dmy
        d_cov2d[idx] += d_cov_t
        d_color[idx] += d_color_t
        d_opacity[idx] += d_opacity_t
    return {
        "mean2d": d_mean2d,
        "cov2d": d_cov2d,
        "color": d_color,
        "opacity": d_opacity,
    }


def brute_force_render(splats, width, height, background, settings=None):
    """Reference renderer: exact depth sort, per-splat whole-image compositing,
    no tiles, no cutoff unless the settings enable it.

    Structured independently of the tile path so it can serve as an oracle.
    """
    settings = settings or RasterSettings(cutoff_enabled=False)
    background = np.asarray(background, dtype=np.float64)
    order = _sort_order(splats)
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    T = np.ones((height, width))
    image = np.zeros((height, width, 3))
    tau = settings.saturation_threshold
    for k in order:
        cov = splats.cov2d[k]
        off = 0.5 * (cov[0, 1] + cov[1, 0])
        det = cov[0, 0] * cov[1, 1] - off**2
        ia, ib, ic = cov[1, 1] / det, cov[0, 0] / det, -off / det
        dx = px - splats.mean2d[k, 0]
        dy = py - splats.mean2d[k, 1]
        d2 = ia * dx * dx + ib * dy * dy + 2.0 * ic * dx * dy
        g = np.exp(-0.5 * d2)
        if settings.cutoff_enabled:
            g = np.where(d2 <= settings.cutoff_radius**2, g, 0.0)
        alpha = splats.opacity[k] * g
        if tau > 0.0:
            alpha = np.where(T >= tau, alpha, 0.0)
        image += (alpha * T)[:, :, None] * splats.color[k][None, None, :]
        T = T * (1.0 - alpha)
    image += T[:, :, None] * background[None, None, :]
    return image


def scatter_splat_grads(grads, source_id, n_gaussians):
    """Map compacted splat grads back to full-length per-Gaussian arrays."""
    out = {
        "mean2d": np.zeros((n_gaussians, 2)),
        "cov2d": np.zeros((n_gaussians, 2, 2)),
        "color": np.zeros((n_gaussians, 3)),
        "opacity": np.zeros(n_gaussians),
    }
    for key in out:
        out[key][source_id] = grads[key]
    return out
