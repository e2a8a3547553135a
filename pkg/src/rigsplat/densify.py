"""Adaptive density control with binding inheritance.

High-gradient Gaussians are cloned (small ones) or split (large ones, children
sampled inside the parent's 1-sigma local ellipsoid at scale/split_factor);
low-opacity ones are pruned. Offspring always inherit the parent triangle.
Called between iterations from the single-threaded training loop only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError
from .gaussians import GaussianSet
from .transforms import inverse_sigmoid, quat_normalize, quat_to_rotmat, sigmoid


@dataclass
class DensifyStats:
    """Accumulated view-space positional gradient norms per Gaussian."""

    grad_accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(grad_accum=np.zeros(n), count=np.zeros(n, dtype=np.int64))

    def update(self, d_mean2d, visible):
        if d_mean2d.shape[0] != self.grad_accum.shape[0]:
            raise ConsistencyError(
                "densification stats are stale: "
                f"{self.grad_accum.shape[0]} tracked vs {d_mean2d.shape[0]} Gaussians")
        norms = np.linalg.norm(d_mean2d, axis=1)
        self.grad_accum[visible] += norms[visible]
        self.count[visible] += 1

    def averages(self):
        return self.grad_accum / np.maximum(self.count, 1)


def densify_and_prune(gs, stats, grad_threshold=2e-4, split_scale_threshold=0.01,
                      split_factor=1.6, prune_opacity=0.005, rng=None):
    """One densification pass. Returns (new GaussianSet, fresh stats, report).

    report: dict with n_cloned / n_split / n_pruned plus `keep` (bool mask over
    the pre-existing set) and `n_new`, which the optimizer uses for row surgery.
    """
    n = len(gs)
    if stats.grad_accum.shape[0] != n:
        raise ConsistencyError(
            f"stats track {stats.grad_accum.shape[0]} Gaussians, set has {n}")
    rng = rng or np.random.default_rng(0)
    avg = stats.averages()
    s0 = np.exp(gs.log_scale0)
    max_s = s0.max(axis=1) if n else np.zeros(0)
    hot = avg >= grad_threshold
    split_mask = hot & (max_s > split_scale_threshold)
    clone_mask = hot & ~split_mask
    opacity = sigmoid(gs.opacity_raw)
    prune_mask = opacity < prune_opacity
    # split parents are replaced by their children; pruning also removes parents
    keep = ~(prune_mask | split_mask)

    new_rows = {k: [] for k in
                ("mu0", "rot0", "log_scale0", "opacity_raw", "sh", "parent_tri")}

    def append(i, mu0, log_scale0):
        new_rows["mu0"].append(mu0)
        new_rows["rot0"].append(gs.rot0[i].copy())
        new_rows["log_scale0"].append(log_scale0)
        new_rows["opacity_raw"].append(gs.opacity_raw[i])
        new_rows["sh"].append(gs.sh[i].copy())
        new_rows["parent_tri"].append(gs.parent_tri[i])

    for i in np.nonzero(clone_mask & ~prune_mask)[0]:
        append(i, gs.mu0[i].copy(), gs.log_scale0[i].copy())

    log_sf = np.log(split_factor)
    for i in np.nonzero(split_mask & ~prune_mask)[0]:
        R0 = quat_to_rotmat(quat_normalize(gs.rot0[i]))
        for _ in range(2):
            # uniform draw inside the unit ball, mapped through the 1-sigma ellipsoid
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ball = d * rng.uniform() ** (1.0 / 3.0)
            mu0 = gs.mu0[i] + R0 @ (s0[i] * ball)
            append(i, mu0, gs.log_scale0[i] - log_sf)

    n_new = len(new_rows["mu0"])
    merged = GaussianSet(
        mu0=np.concatenate([gs.mu0[keep]] + _stackif(new_rows["mu0"], (0, 3))),
        rot0=np.concatenate([gs.rot0[keep]] + _stackif(new_rows["rot0"], (0, 4))),
        log_scale0=np.concatenate(
            [gs.log_scale0[keep]] + _stackif(new_rows["log_scale0"], (0, 3))),
        opacity_raw=np.concatenate(
            [gs.opacity_raw[keep]]
            + ([np.array(new_rows["opacity_raw"])] if n_new else [])),
        sh=np.concatenate(
            [gs.sh[keep]] + _stackif(new_rows["sh"], (0,) + gs.sh.shape[1:])),
        parent_tri=np.concatenate(
            [gs.parent_tri[keep]]
            + ([np.array(new_rows["parent_tri"], dtype=np.int64)] if n_new else [])),
    )
    report = {
        "n_cloned": int((clone_mask & ~prune_mask).sum()),
        "n_split": int((split_mask & ~prune_mask).sum()),
        "n_pruned": int(prune_mask.sum()),
        "keep": keep,
        "n_new": n_new,
    }
    return merged, DensifyStats.zeros(len(merged)), report


def _stackif(rows, shape):
    return [np.stack(rows)] if rows else [np.zeros(shape)]


def reset_opacity(gs, ceiling=0.01):
    """Clamp every activated opacity down to the ceiling (in raw space)."""
    o = sigmoid(gs.opacity_raw)
    gs.opacity_raw = inverse_sigmoid(np.minimum(o, ceiling))
    return gs
