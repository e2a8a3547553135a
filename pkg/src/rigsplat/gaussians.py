"""Gaussian primitives parameterized in triangle-local space.

Raw (pre-activation) parameters are what the optimizer touches; activation
maps them to the constrained domain, binding carries them into world space
through the parent triangle's frame. Every op has an analytic backward.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .transforms import (
    inverse_sigmoid,
    quat_multiply,
    quat_multiply_backward_right,
    quat_normalize,
    quat_normalize_backward,
    quat_to_rotmat,
    quat_to_rotmat_backward,
    rotmat_to_quat,
    sigmoid,
)

# real SH basis constants, bands 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_band_count(degree):
    return (degree + 1) ** 2


@dataclass
class GaussianSet:
    """Structure-of-arrays local Gaussian parameters.

    mu0         : (N, 3) position in the parent triangle's local units
    rot0        : (N, 4) quaternion, pre-normalization
    log_scale0  : (N, 3) log of the local scale
    opacity_raw : (N,) pre-sigmoid opacity
    sh          : (N, 3, B) SH coefficients, B = (degree+1)^2
    parent_tri  : (N,) int parent triangle index
    """

    mu0: np.ndarray
    rot0: np.ndarray
    log_scale0: np.ndarray
    opacity_raw: np.ndarray
    sh: np.ndarray
    parent_tri: np.ndarray

    def __len__(self):
        return self.mu0.shape[0]

    @property
    def sh_degree(self):
        return int(round(self.sh.shape[2] ** 0.5)) - 1

    def validate(self, n_triangles):
        n = len(self)
        if self.rot0.shape != (n, 4) or self.log_scale0.shape != (n, 3):
            raise ShapeError("rotation/scale arrays misshaped")
        if self.opacity_raw.shape != (n,) or self.parent_tri.shape != (n,):
            raise ShapeError("opacity/parent arrays misshaped")
        if n and (self.parent_tri.min() < 0 or self.parent_tri.max() >= n_triangles):
            raise ShapeError("parent_tri out of range")
        return self

    def copy(self):
        return GaussianSet(
            mu0=self.mu0.copy(),
            rot0=self.rot0.copy(),
            log_scale0=self.log_scale0.copy(),
            opacity_raw=self.opacity_raw.copy(),
            sh=self.sh.copy(),
            parent_tri=self.parent_tri.copy(),
        )

    @classmethod
    def from_mesh(cls, n_triangles, sh_degree=0, init_local_scale=0.3,
                  init_opacity=0.1, init_grey=0.5):
        """One Gaussian at each triangle centroid (mu0 = 0 in local space)."""
        n = n_triangles
        B = sh_band_count(sh_degree)
        rot0 = np.zeros((n, 4))
        rot0[:, 0] = 1.0
        sh = np.zeros((n, 3, B))
        sh[:, :, 0] = (init_grey - 0.5) / SH_C0
        return cls(
            mu0=np.zeros((n, 3)),
            rot0=rot0,
            log_scale0=np.full((n, 3), np.log(init_local_scale)),
            opacity_raw=np.full((n,), inverse_sigmoid(init_opacity)),
            sh=sh,
            parent_tri=np.arange(n, dtype=np.int64),
        )


def activate_params(gs):
    """Map raw parameters to their constrained domain.

    Returns dict with mu0 (N, 3), r0 unit quats (N, 4), s0 positive scales
    (N, 3), o opacities in (0, 1).
    """
    return {
        "mu0": gs.mu0,
        "r0": quat_normalize(gs.rot0),
        "s0": np.exp(gs.log_scale0),
        "o": sigmoid(gs.opacity_raw),
    }


def activate_backward(gs, act, d_act):
    """Chain grads on activated params back to the raw arrays."""
    return {
        "mu0": d_act["mu0"],
        "rot0": quat_normalize_backward(gs.rot0, d_act["r0"]),
        "log_scale0": d_act["s0"] * act["s0"],
        "opacity_raw": d_act["o"] * act["o"] * (1.0 - act["o"]),
    }


def bind_to_global(act, frames, parent_tri):
    """Local -> world binding through the parent triangle frames.

    r' = quat(R) * r0, mu' = S R mu0 + M, s' = S s0.
    Returns dict with mu (N, 3), r unit quats (N, 4), s (N, 3) and the cache
    needed by the backward pass.
    """
    Rf = frames.R[parent_tri]          # (N, 3, 3)
    Sf = frames.S[parent_tri]          # (N,)
    Mf = frames.M[parent_tri]          # (N, 3)
    qf = rotmat_to_quat(Rf)
    mu = Sf[:, None] * np.einsum("nij,nj->ni", Rf, act["mu0"]) + Mf
    r = quat_multiply(qf, act["r0"])
    s = Sf[:, None] * act["s0"]
    return {"mu": mu, "r": r, "s": s, "_Rf": Rf, "_Sf": Sf, "_qf": qf}


def bind_backward(bound, d_mu, d_r, d_s):
    """Grads on world-space (mu, r, s) back to activated local params."""
    Rf, Sf, qf = bound["_Rf"], bound["_Sf"], bound["_qf"]
    d_mu0 = Sf[:, None] * np.einsum("nji,nj->ni", Rf, d_mu)
    d_r0 = quat_multiply_backward_right(qf, d_r)
    d_s0 = Sf[:, None] * d_s
    return {"mu0": d_mu0, "r0": d_r0, "s0": d_s0}


def build_covariance(r, s):
    """Sigma = R diag(s)^2 R^T from a unit quaternion and positive scales."""
    R = quat_to_rotmat(r)
    M = R * s[..., None, :]          # R @ diag(s)
    return M @ np.swapaxes(M, -1, -2)


def build_covariance_backward(r, s, d_cov):
    """Grads of build_covariance w.r.t. the quaternion and the scales."""
    R = quat_to_rotmat(r)
    M = R * s[..., None, :]
    dM = (d_cov + np.swapaxes(d_cov, -1, -2)) @ M
    dR = dM * s[..., None, :]
    ds = np.sum(dM * R, axis=-2)
    dr = quat_to_rotmat_backward(r, dR)
    return dr, ds


def sh_to_color(sh, view_dir):
    """Evaluate SH color: clamp(basis(view_dir) . sh + 0.5, 0, 1) per channel.

    sh (N, 3, B), view_dir (N, 3) unit vectors. Returns (color (N, 3), cache).
    """
    n, _, B = sh.shape
    basis = _sh_basis(view_dir, B)                      # (N, B)
    raw = np.einsum("ncb,nb->nc", sh, basis) + 0.5
    color = np.clip(raw, 0.0, 1.0)
    inside = (raw > 0.0) & (raw < 1.0)
    return color, {"basis": basis, "inside": inside, "dir": view_dir}


def sh_to_color_backward(sh, cache, d_color):
    """Grads w.r.t. the coefficients and the (unnormalized-upstream) view dir."""
    d_raw = d_color * cache["inside"]
    d_sh = np.einsum("nc,nb->ncb", d_raw, cache["basis"])
    B = sh.shape[2]
    if B == 1:
        d_dir = np.zeros_like(cache["dir"])
    else:
        d_basis = np.einsum("ncb,nc->nb", sh, d_raw)    # (N, B)
        d_dir = _sh_basis_dir_backward(cache["dir"], B, d_basis)
    return d_sh, d_dir


def _sh_basis(d, B):
    n = d.shape[0]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((n, B))
    out[:, 0] = SH_C0
    if B > 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if B > 4:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[:, 4] = SH_C2[0] * xy
        out[:, 5] = SH_C2[1] * yz
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * xz
        out[:, 8] = SH_C2[4] * (xx - yy)
    if B > 9:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def _sh_basis_dir_backward(d, B, d_basis):
    """Contract d(basis)/d(dir) with upstream (N, B) grads -> (N, 3)."""
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    gz = np.zeros_like(z)
    if B > 1:
        gy += -SH_C1 * d_basis[:, 1]
        gz += SH_C1 * d_basis[:, 2]
        gx += -SH_C1 * d_basis[:, 3]
    if B > 4:
        gx += SH_C2[0] * y * d_basis[:, 4]
        gy += SH_C2[0] * x * d_basis[:, 4]
        gy += SH_C2[1] * z * d_basis[:, 5]
        gz += SH_C2[1] * y * d_basis[:, 5]
        gx += SH_C2[2] * (-2.0 * x) * d_basis[:, 6]
        gy += SH_C2[2] * (-2.0 * y) * d_basis[:, 6]
        gz += SH_C2[2] * (4.0 * z) * d_basis[:, 6]
        gx += SH_C2[3] * z * d_basis[:, 7]
        gz += SH_C2[3] * x * d_basis[:, 7]
        gx += SH_C2[4] * (2.0 * x) * d_basis[:, 8]
        gy += SH_C2[4] * (-2.0 * y) * d_basis[:, 8]
    if B > 9:
        xx, yy, zz = x * x, y * y, z * z
        gx += SH_C3[0] * 6.0 * x * y * d_basis[:, 9]
        gy += SH_C3[0] * (3.0 * xx - 3.0 * yy) * d_basis[:, 9]
        gx += SH_C3[1] * y * z * d_basis[:, 10]
        gy += SH_C3[1] * x * z * d_basis[:, 10]
        gz += SH_C3[1] * x * y * d_basis[:, 10]
        gx += SH_C3[2] * (-2.0 * x * y) * d_basis[:, 11]
        gy += SH_C3[2] * (4.0 * zz - xx - 3.0 * yy) * d_basis[:, 11]
        gz += SH_C3[2] * (8.0 * y * z) * d_basis[:, 11]
        gx += SH_C3[3] * (-6.0 * x * z) * d_basis[:, 12]
        gy += SH_C3[3] * (-6.0 * y * z) * d_basis[:, 12]
        gz += SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy) * d_basis[:, 12]
        gx += SH_C3[4] * (4.0 * zz - 3.0 * xx - yy) * d_basis[:, 13]
        gy += SH_C3[4] * (-2.0 * x * y) * d_basis[:, 13]
        gz += SH_C3[4] * (8.0 * x * z) * d_basis[:, 13]
        gx += SH_C3[5] * (2.0 * x * z) * d_basis[:, 14]
        gy += SH_C3[5] * (-2.0 * y * z) * d_basis[:, 14]
        gz += SH_C3[5] * (xx - yy) * d_basis[:, 14]
        gx += SH_C3[6] * (3.0 * xx - 3.0 * yy) * d_basis[:, 15]
        gy += SH_C3[6] * (-6.0 * x * y) * d_basis[:, 15]
    return np.stack([gx, gy, gz], axis=-1)
