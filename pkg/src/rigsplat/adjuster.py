"""Fine deformation on top of the coarse mesh-driven motion.

A multi-resolution tri-plane encodes each Gaussian's neutral world position;
a basis network maps the encoding to a per-Gaussian deformation basis (10 x d:
3 position + 4 quaternion + 3 scale rows); a latent network compresses the
driving (psi, theta) into a d-vector; their product gives additive deltas that
are composed onto the coarse world-space Gaussians.

Query positions are treated as constants: no gradient flows back into them.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .transforms import quat_multiply, quat_multiply_backward_right, sigmoid, softplus

DELTA_ROWS = 10  # 3 position + 4 quaternion + 3 scale


@dataclass
class TriPlane:
    """Per level: 3 axis-aligned feature planes (XY, XZ, YZ).

    planes : list over levels of (3, res_l, res_l, F) arrays, res strictly
             increasing with the level
    lo, hi : domain bounding box corners (world units)
    """

    planes: list
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n_features(self):
        return self.planes[0].shape[-1]

    @property
    def out_dim(self):
        return 3 * len(self.planes) * self.n_features

    @classmethod
    def create(cls, lo, hi, resolutions=(64, 128, 256), n_features=4,
               init_std=0.1, rng=None):
        rng = rng or np.random.default_rng(0)
        if list(resolutions) != sorted(set(resolutions)):
            raise ShapeError("tri-plane resolutions must be strictly increasing")
        planes = [
            rng.normal(0.0, init_std, size=(3, r, r, n_features))
            for r in resolutions
        ]
        return cls(planes=planes, lo=np.asarray(lo, dtype=np.float64),
                   hi=np.asarray(hi, dtype=np.float64))

    def zero_grads(self):
        return [np.zeros_like(p) for p in self.planes]


# plane -> which two coordinates index it
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


def encode_position(triplane, x, cache=None):
    """Concatenated bilinear features for points x (N, 3).

    Out-of-domain points clamp to the boundary. Returns (features (N, 3LF),
    cache). Pass a previous cache to skip recomputing the interpolation
    stencil when x has not changed (only the stored features have).
    """
    if cache is None:
        x = np.asarray(x, dtype=np.float64)
        u = (x - triplane.lo) / (triplane.hi - triplane.lo)
        u = np.clip(u, 0.0, 1.0)
        cache = []
        for plane in triplane.planes:
            res = plane.shape[1]
            uv = u * (res - 1)
            for p, (ax_a, ax_b) in enumerate(_PLANE_AXES):
                ua, ub = uv[:, ax_a], uv[:, ax_b]
                ia = np.clip(np.floor(ua).astype(np.int64), 0, res - 2)
                ib = np.clip(np.floor(ub).astype(np.int64), 0, res - 2)
                fa = ua - ia
                fb = ub - ib
                cache.append((p, ia, ib,
                              (1 - fa) * (1 - fb), fa * (1 - fb),
                              (1 - fa) * fb, fa * fb))
    feats = []
    for lvl, plane in enumerate(triplane.planes):
        for p_idx in range(3):
            p, ia, ib, w00, w10, w01, w11 = cache[lvl * 3 + p_idx]
            grid = plane[p]
            feats.append(w00[:, None] * grid[ia, ib]
                         + w10[:, None] * grid[ia + 1, ib]
                         + w01[:, None] * grid[ia, ib + 1]
                         + w11[:, None] * grid[ia + 1, ib + 1])
    return np.concatenate(feats, axis=1), cache


def encode_position_backward(triplane, cache, d_features):
    """Scatter upstream feature grads into per-plane gradient arrays."""
    grads = triplane.zero_grads()
    F = triplane.n_features
    col = 0
    for lvl, plane in enumerate(triplane.planes):
        for p_idx in range(3):
            p, ia, ib, w00, w10, w01, w11 = cache[lvl * 3 + p_idx]
            df = d_features[:, col:col + F]
            g = grads[lvl][p]
            np.add.at(g, (ia, ib), w00[:, None] * df)
            np.add.at(g, (ia + 1, ib), w10[:, None] * df)
            np.add.at(g, (ia, ib + 1), w01[:, None] * df)
            np.add.at(g, (ia + 1, ib + 1), w11[:, None] * df)
            col += F
    return grads


def fourier_encode(x, lo, hi, n_bands=8):
    """Positional-encoding fallback: sin/cos bands of the domain-normalized x.

    Output length 3 * 2 * n_bands, ordered band-major (sin triple then cos
    triple per band).
    """
    y = 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0
    parts = []
    for k in range(n_bands):
        arg = (2.0**k) * np.pi * y
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=1)


def fourier_dim(n_bands=8):
    return 3 * 2 * n_bands


class MLP:
    """Dense network with softplus hidden activations and a linear head.

    Weights are a list of (W (in, out), b (out,)) float64 pairs; `grads`
    mirrors the parameters and accumulates across backward calls until
    `zero_grads`.
    """

    def __init__(self, sizes, rng, zero_last=False):
        self.sizes = tuple(sizes)
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            last = i == len(sizes) - 2
            if last and zero_last:
                W = np.zeros((fan_in, fan_out))
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))
        self.zero_grads()

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def zero_grads(self):
        self.w_grads = [np.zeros_like(w) for w in self.weights]
        self.b_grads = [np.zeros_like(b) for b in self.biases]

    def forward(self, x):
        """x (N, in) -> (out (N, out), cache)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"MLP expects input dim {self.in_dim}, got {x.shape[1]}")
        acts = [x]
        pre = []
        h = x
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < n_layers - 1:
                pre.append(z)
                h = softplus(z)
                acts.append(h)
            else:
                h = z
        return h, {"acts": acts, "pre": pre}

    def backward(self, cache, d_out):
        """Accumulate parameter grads; returns grad w.r.t. the input."""
        d = np.atleast_2d(d_out)
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            a = cache["acts"][i]
            self.w_grads[i] += a.T @ d
            self.b_grads[i] += d.sum(axis=0)
            d = d @ self.weights[i].T
            if i > 0:
                d = d * sigmoid(cache["pre"][i - 1])  # softplus'
        return d

    def parameters(self):
        for i in range(len(self.weights)):
            yield f"w{i}", self.weights[i]
            yield f"b{i}", self.biases[i]


def predict_basis(basis_net, features, latent_dim):
    """Per-Gaussian deformation bases W (N, 10, d) from encoded positions."""
    out, cache = basis_net.forward(features)
    if out.shape[1] != DELTA_ROWS * latent_dim:
        raise ShapeError(
            f"basis net emits {out.shape[1]} values, need {DELTA_ROWS * latent_dim}")
    return out.reshape(-1, DELTA_ROWS, latent_dim), cache


def predict_basis_backward(basis_net, cache, d_basis):
    return basis_net.backward(cache, d_basis.reshape(d_basis.shape[0], -1))


def encode_driving(latent_net, psi, theta):
    """Latent driver f (d,) from the expression and pose parameters."""
    inp = np.concatenate([np.ravel(psi), np.ravel(theta)])[None, :]
    if inp.shape[1] != latent_net.in_dim:
        raise ShapeError(
            f"driving vector has length {inp.shape[1]}, latent net expects "
            f"{latent_net.in_dim}")
    f, cache = latent_net.forward(inp)
    return f[0], cache


def encode_driving_backward(latent_net, cache, d_f):
    return latent_net.backward(cache, d_f[None, :])[0]


def apply_deformation(mu, r, s, basis, f, eps_scale=1e-6, quat_compose=False):
    """Compose predicted deltas onto the coarse world-space Gaussians.

    deltas = basis @ f, split (3, 4, 3); positions and scales add (scales
    clamped to eps_scale), quaternions add-then-renormalize by default or
    Hamilton-compose when quat_compose is set.
    Returns (refined dict, cache).
    """
    deltas = np.einsum("nrd,d->nr", basis, f)
    d_mu = deltas[:, :3]
    d_r = deltas[:, 3:7]
    d_s = deltas[:, 7:10]
    mu_out = mu + d_mu
    if quat_compose:
        dq = d_r.copy()
        dq[:, 0] += 1.0  # identity-offset delta quaternion
        r_sum = quat_multiply(dq, r)
    else:
        r_sum = r + d_r
    norm = np.linalg.norm(r_sum, axis=1, keepdims=True)
    r_out = r_sum / norm
    s_sum = s + d_s
    s_out = np.maximum(s_sum, eps_scale)
    cache = {
        "basis": basis, "f": f, "r_sum": r_sum, "norm": norm,
        "clamped": s_sum < eps_scale, "quat_compose": quat_compose, "r_in": r,
        "d_r": d_r,
    }
    return {"mu": mu_out, "r": r_out, "s": s_out}, cache


def apply_deformation_backward(cache, d_mu_out, d_r_out, d_s_out):
    """Grads w.r.t. the coarse inputs, the basis, and the latent."""
    basis, f = cache["basis"], cache["f"]
    r_sum, norm = cache["r_sum"], cache["norm"]
    u = r_sum / norm
    d_r_sum = (d_r_out - u * np.sum(u * d_r_out, axis=1, keepdims=True)) / norm
    d_s_sum = d_s_out * ~cache["clamped"]
    if cache["quat_compose"]:
        # r_sum = dq * r ; grads to both factors
        dq = cache["d_r"].copy()
        dq[:, 0] += 1.0
        d_r_in = quat_multiply_backward_right(dq, d_r_sum)
        d_dq = _quat_multiply_backward_left(cache["r_in"], d_r_sum)
    else:
        d_r_in = d_r_sum
        d_dq = d_r_sum
    d_deltas = np.concatenate([d_mu_out, d_dq, d_s_sum], axis=1)
    d_basis = np.einsum("nr,d->nrd", d_deltas, f)
    d_f = np.einsum("nrd,nr->d", basis, d_deltas)
    return {
        "mu": d_mu_out,
        "r": d_r_in,
        "s": d_s_sum,
        "basis": d_basis,
        "f": d_f,
    }


def _quat_multiply_backward_left(b, d_out):
    """Grad of quat_multiply(a, b) w.r.t. a (b constant)."""
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    dw, dx, dy, dz = d_out[..., 0], d_out[..., 1], d_out[..., 2], d_out[..., 3]
    return np.stack(
        [
            bw * dw + bx * dx + by * dy + bz * dz,
            -bx * dw + bw * dx - bz * dy + by * dz,
            -by * dw + bz * dx + bw * dy - bx * dz,
            -bz * dw - by * dx + bx * dy + bw * dz,
        ],
        axis=-1,
    )
