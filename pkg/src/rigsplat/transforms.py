"""Quaternion / rotation helpers with analytic backward passes.

Quaternions are scalar-first (w, x, y, z) throughout. All batched functions
take (..., 4) / (..., 3, 3) float64 arrays.
"""

import numpy as np

from .errors import ShapeError


def quat_normalize(q):
    """Normalize quaternions to unit length. Raises on zero quaternions."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ShapeError("cannot normalize a zero quaternion")
    return q / norm


def quat_normalize_backward(q_raw, d_unit):
    """Gradient of quat_normalize: d_raw given upstream grad on the unit quat."""
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    u = q_raw / norm
    dot = np.sum(u * d_unit, axis=-1, keepdims=True)
    return (d_unit - u * dot) / norm


def quat_to_rotmat(q):
    """Unit quaternion (..., 4) -> rotation matrix (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, dR):
    """Chain upstream grad on R (..., 3, 3) back to the quaternion (..., 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dq = np.empty_like(q)
    # dR/dw, dR/dx, dR/dy, dR/dz contracted with dR entry by entry
    dq[..., 0] = 2 * (
        -z * dR[..., 0, 1] + y * dR[..., 0, 2]
        + z * dR[..., 1, 0] - x * dR[..., 1, 2]
        - y * dR[..., 2, 0] + x * dR[..., 2, 1]
    )
    dq[..., 1] = 2 * (
        y * dR[..., 0, 1] + z * dR[..., 0, 2]
        + y * dR[..., 1, 0] - 2 * x * dR[..., 1, 1] - w * dR[..., 1, 2]
        + z * dR[..., 2, 0] + w * dR[..., 2, 1] - 2 * x * dR[..., 2, 2]
    )
    dq[..., 2] = 2 * (
        -2 * y * dR[..., 0, 0] + x * dR[..., 0, 1] + w * dR[..., 0, 2]
        + x * dR[..., 1, 0] + z * dR[..., 1, 2]
        - w * dR[..., 2, 0] + z * dR[..., 2, 1] - 2 * y * dR[..., 2, 2]
    )
    dq[..., 3] = 2 * (
        -2 * z * dR[..., 0, 0] - w * dR[..., 0, 1] + x * dR[..., 0, 2]
        + w * dR[..., 1, 0] - 2 * z * dR[..., 1, 1] + y * dR[..., 1, 2]
        + x * dR[..., 2, 0] + y * dR[..., 2, 1]
    )
    return dq


def quat_multiply(a, b):
    """Hamilton product a * b, scalar-first, broadcastable over leading dims."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_multiply_backward_right(a, d_out):
    """Grad of quat_multiply(a, b) w.r.t. b; a is treated as constant."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    dw, dx, dy, dz = d_out[..., 0], d_out[..., 1], d_out[..., 2], d_out[..., 3]
    # transpose of the left-multiplication matrix Q_L(a)
    return np.stack(
        [
            aw * dw + ax * dx + ay * dy + az * dz,
            -ax * dw + aw * dx + az * dy - ay * dz,
            -ay * dw - az * dx + aw * dy + ax * dz,
            -az * dw + ay * dx - ax * dy + aw * dz,
        ],
        axis=-1,
    )


def rotmat_to_quat(R):
    """Rotation matrix (..., 3, 3) -> unit quaternion with w >= 0.

    Shepperd's method, vectorized: compute all four candidate forms and pick
    the numerically largest pivot per matrix.
    """
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    m = R.reshape((-1, 3, 3))
    n = m.shape[0]
    d0, d1, d2 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    pivot = np.stack([d0 + d1 + d2, d0, d1, d2], axis=1)
    best = np.argmax(pivot, axis=1)
    s = 2.0 * np.sqrt(np.maximum(
        1.0 + np.choose(best, [d0 + d1 + d2, d0 - d1 - d2,
                               d1 - d0 - d2, d2 - d0 - d1]), 0.0))
    cands = np.empty((4, n, 4))
    cands[0, :, 0] = 0.25 * s
    cands[0, :, 1] = (m[:, 2, 1] - m[:, 1, 2]) / s
    cands[0, :, 2] = (m[:, 0, 2] - m[:, 2, 0]) / s
    cands[0, :, 3] = (m[:, 1, 0] - m[:, 0, 1]) / s
    cands[1, :, 0] = (m[:, 2, 1] - m[:, 1, 2]) / s
    cands[1, :, 1] = 0.25 * s
    cands[1, :, 2] = (m[:, 0, 1] + m[:, 1, 0]) / s
    cands[1, :, 3] = (m[:, 0, 2] + m[:, 2, 0]) / s
    cands[2, :, 0] = (m[:, 0, 2] - m[:, 2, 0]) / s
    cands[2, :, 1] = (m[:, 0, 1] + m[:, 1, 0]) / s
    cands[2, :, 2] = 0.25 * s
    cands[2, :, 3] = (m[:, 1, 2] + m[:, 2, 1]) / s
    cands[3, :, 0] = (m[:, 1, 0] - m[:, 0, 1]) / s
    cands[3, :, 1] = (m[:, 0, 2] + m[:, 2, 0]) / s
    cands[3, :, 2] = (m[:, 1, 2] + m[:, 2, 1]) / s
    cands[3, :, 3] = 0.25 * s
    q = cands[best, np.arange(n)]
    q[q[:, 0] < 0] *= -1.0
    return q.reshape(batch + (4,))


def axis_angle_to_rotmat(v):
    """Axis-angle vectors (..., 3) -> rotation matrices via Rodrigues."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    batch = v.shape[:-1]
    R = np.zeros(batch + (3, 3), dtype=np.float64)
    R[..., 0, 0] = R[..., 1, 1] = R[..., 2, 2] = 1.0
    small = theta < 1e-12
    # sin(t)/t and (1-cos(t))/t^2 with series fallback near zero
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    K = np.zeros(batch + (3, 3), dtype=np.float64)
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return R + a[..., None, None] * K + b[..., None, None] * (K @ K)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(y):
    return np.log(y / (1.0 - y))


def softplus(x):
    return np.logaddexp(0.0, x)
