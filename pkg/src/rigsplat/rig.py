"""Parametric triangle-mesh rig: blendshapes + linear blend skinning,
per-triangle frames, and pinhole camera projection.

Everything here is a pure function over immutable float64 arrays; no gradient
flows into the rig (mesh drivers are data, not trainable parameters).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateTriangleError, LoadError, ShapeError
from .transforms import axis_angle_to_rotmat

AREA_EPS = 1e-12  # triangles below this squared-unit area reuse their last valid frame

RIG_FORMAT_HEADER = "rigsplat-rig v1"


@dataclass
class ParamRig:
    """Template mesh + expression blendshapes + a skinned joint tree.

    template_vertices : (V, 3)
    faces             : (T, 3) int
    blendshapes       : (K, V, 3) per-expression-dim vertex deltas
    joint_parents     : (J,) int, parent index, -1 for the root; topologically ordered
    joint_rest_rot    : (J, 3, 3) rest rotation relative to the parent
    joint_rest_trans  : (J, 3) rest offset relative to the parent
    skin_weights      : (V, J) non-negative, rows sum to 1
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    blendshapes: np.ndarray
    joint_parents: np.ndarray
    joint_rest_rot: np.ndarray
    joint_rest_trans: np.ndarray
    skin_weights: np.ndarray

    @property
    def n_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    @property
    def n_blendshapes(self):
        return self.blendshapes.shape[0]

    @property
    def n_joints(self):
        return self.joint_parents.shape[0]

    def validate(self):
        V, T, K, J = self.n_vertices, self.n_faces, self.n_blendshapes, self.n_joints
        if self.template_vertices.shape != (V, 3):
            raise ShapeError("template_vertices must be (V, 3)")
        if self.faces.shape != (T, 3):
            raise ShapeError("faces must be (T, 3)")
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= V:
            raise ShapeError("face indices out of vertex range")
        if self.blendshapes.shape != (K, V, 3):
            raise ShapeError("blendshapes must be (K, V, 3)")
        if self.skin_weights.shape != (V, J):
            raise ShapeError("skin_weights must be (V, J)")
        if np.any(self.skin_weights < 0):
            raise ShapeError("skin weights must be non-negative")
        if np.max(np.abs(self.skin_weights.sum(axis=1) - 1.0)) > 1e-6:
            raise ShapeError("skin weight rows must sum to 1 within 1e-6")
        for j, p in enumerate(self.joint_parents):
            if p >= j or (j == 0 and p != -1):
                raise ShapeError("joints must be topologically ordered with root first")
        return self

    def scene_extent(self):
        """Radius of the template's bounding sphere around its centroid."""
        c = self.template_vertices.mean(axis=0)
        return float(np.linalg.norm(self.template_vertices - c, axis=1).max())


@dataclass
class RigParams:
    """Expression coefficients, per-joint axis-angle rotations, rigid head pose."""

    psi: np.ndarray          # (K,)
    theta: np.ndarray        # (J, 3) axis-angle per joint, radians
    head_rot: np.ndarray     # (3,) axis-angle
    head_trans: np.ndarray   # (3,)

    @classmethod
    def zero(cls, rig):
        return cls(
            psi=np.zeros(rig.n_blendshapes),
            theta=np.zeros((rig.n_joints, 3)),
            head_rot=np.zeros(3),
            head_trans=np.zeros(3),
        )


@dataclass
class TriangleFrames:
    """Per-triangle frames: centroid M (T, 3), rotation R (T, 3, 3) with
    columns [n0, n1, n2], scalar scale S (T,)."""

    M: np.ndarray
    R: np.ndarray
    S: np.ndarray


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float
    R_wc: np.ndarray = field(default_factory=lambda: np.eye(3))  # world-to-camera
    t_wc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ShapeError("focal lengths must be positive")
        if not self.near < self.far:
            raise ShapeError("near must be below far")
        return self

    def center(self):
        """Camera origin in world coordinates."""
        return -self.R_wc.T @ self.t_wc


def joint_matrices(rig, theta):
    """Per-joint LBS skinning matrices M_j = W_j A_j^{-1} as (J, 3, 4) [R | t].

    W_j is the posed world transform (rest chain composed with the axis-angle
    joint rotations), A_j the rest-pose world transform.
    """
    if theta.shape != (rig.n_joints, 3):
        raise ShapeError(
            f"theta must be ({rig.n_joints}, 3), got {theta.shape}")
    J = rig.n_joints
    pose_rot = axis_angle_to_rotmat(theta)
    W_R = np.empty((J, 3, 3))
    W_t = np.empty((J, 3))
    A_R = np.empty((J, 3, 3))
    A_t = np.empty((J, 3))
    for j in range(J):
        p = rig.joint_parents[j]
        if p < 0:
            pR, pt = np.eye(3), np.zeros(3)
            aR, at = np.eye(3), np.zeros(3)
        else:
            pR, pt = W_R[p], W_t[p]
            aR, at = A_R[p], A_t[p]
        # world = parent ∘ rest ∘ pose(theta_j)
        W_R[j] = pR @ rig.joint_rest_rot[j] @ pose_rot[j]
        W_t[j] = pR @ rig.joint_rest_trans[j] + pt
        A_R[j] = aR @ rig.joint_rest_rot[j]
        A_t[j] = aR @ rig.joint_rest_trans[j] + at
    M = np.empty((J, 3, 4))
    for j in range(J):
        AinvR = A_R[j].T
        M[j, :, :3] = W_R[j] @ AinvR
        M[j, :, 3] = W_t[j] - M[j, :, :3] @ A_t[j]
    return M


def apply_lbs(vertices, weights, mats):
    """Blend (J, 3, 4) skinning matrices per vertex and transform: (V, 3)."""
    blended = np.einsum("vj,jab->vab", weights, mats)  # (V, 3, 4)
    return np.einsum("vab,vb->va", blended[:, :, :3], vertices) + blended[:, :, 3]


def evaluate_rig(rig, params):
    """Pose the rig: template + blendshapes, then LBS, then head pose.

    Returns posed vertices (V, 3); faces are unchanged.
    """
    if params.psi.shape != (rig.n_blendshapes,):
        raise ShapeError(
            f"psi must be ({rig.n_blendshapes},), got {params.psi.shape}")
    verts = rig.template_vertices
    if rig.n_blendshapes:
        verts = verts + np.einsum("k,kvc->vc", params.psi, rig.blendshapes)
    if rig.n_joints:
        verts = apply_lbs(verts, rig.skin_weights, joint_matrices(rig, params.theta))
    Rh = axis_angle_to_rotmat(params.head_rot)
    return verts @ Rh.T + params.head_trans


def triangle_frame(v0, v1, v2):
    """Frame of one triangle: centroid, orthonormal [n0|n1|n2], scalar scale.

    n0 is the unit first edge, n1 the unit face normal, n2 = n0 x n1; the
    scale averages |v2-v0| with the perpendicular extent |n2 . (v2-v1)|.
    """
    v0 = np.asarray(v0, dtype=np.float64)
    a10 = np.asarray(v1, dtype=np.float64) - v0
    a20 = np.asarray(v2, dtype=np.float64) - v0
    cross = np.cross(a10, a20)
    area = 0.5 * np.linalg.norm(cross)
    if area <= AREA_EPS:
        raise DegenerateTriangleError(f"triangle area {area:g} below {AREA_EPS:g}")
    n0 = a10 / np.linalg.norm(a10)
    n1 = cross / np.linalg.norm(cross)
    n2 = np.cross(n0, n1)
    a21 = np.asarray(v2, dtype=np.float64) - v1
    S = 0.5 * (np.linalg.norm(a20) + abs(n2 @ a21))
    M = (v0 + v1 + v2) / 3.0
    R = np.stack([n0, n1, n2], axis=-1)
    return TriangleFrames(M=M, R=R, S=float(S))


def triangle_frames(vertices, faces, fallback=None):
    """Frames for every face of a mesh, vectorized.

    Degenerate triangles reuse the matching frame from `fallback` (the last
    valid frames of the same mesh); with no fallback available they raise.
    """
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    a10 = v1 - v0
    a20 = v2 - v0
    a21 = v2 - v1
    cross = np.cross(a10, a20)
    area = 0.5 * np.linalg.norm(cross, axis=1)
    bad = area <= AREA_EPS
    if np.any(bad) and fallback is None:
        idx = int(np.nonzero(bad)[0][0])
        raise DegenerateTriangleError(
            f"triangle {idx} has area {area[idx]:g} and no fallback frame")
    safe = ~bad
    n0 = np.empty_like(a10)
    n1 = np.empty_like(a10)
    n0[safe] = a10[safe] / np.linalg.norm(a10[safe], axis=1, keepdims=True)
    n1[safe] = cross[safe] / np.linalg.norm(cross[safe], axis=1, keepdims=True)
    n0[bad] = 0.0
    n1[bad] = 0.0
    n2 = np.cross(n0, n1)
    R = np.stack([n0, n1, n2], axis=-1)
    S = 0.5 * (np.linalg.norm(a20, axis=1) + np.abs(np.einsum("tc,tc->t", n2, a21)))
    M = (v0 + v1 + v2) / 3.0
    if np.any(bad):
        R[bad] = fallback.R[bad]
        S[bad] = fallback.S[bad]
        M[bad] = fallback.M[bad]
    return TriangleFrames(M=M, R=R, S=S)


def world_to_pixel(camera, x):
    """Pinhole projection of world points (..., 3).

    Returns (pixel (..., 2), depth (...,), in_frustum (...,) bool); the flag
    is false when the camera-space depth leaves [near, far].
    """
    x = np.asarray(x, dtype=np.float64)
    xc = x @ camera.R_wc.T + camera.t_wc
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = camera.fx * xc[..., 0] / z + camera.cx
        py = camera.fy * xc[..., 1] / z + camera.cy
    pixel = np.stack([px, py], axis=-1)
    flag = (z >= camera.near) & (z <= camera.far)
    return pixel, z, flag


def compose_head_pose(camera, head_rot, head_trans):
    """Fold a rigid head pose into the camera extrinsics.

    Rendering a head posed by (Rh, th) through `camera` equals rendering the
    unposed head through the returned camera.
    """
    Rh = axis_angle_to_rotmat(np.asarray(head_rot, dtype=np.float64))
    th = np.asarray(head_trans, dtype=np.float64)
    return replace(
        camera,
        R_wc=camera.R_wc @ Rh,
        t_wc=camera.R_wc @ th + camera.t_wc,
    )


# ---------------------------------------------------------------------------
# rig file format: versioned structured text, round-trips exactly via repr()

def _fmt(x):
    return repr(float(x))


def save_rig(rig, path):
    rig.validate()
    lines = [RIG_FORMAT_HEADER]
    lines.append(f"vertices {rig.n_vertices}")
    for v in rig.template_vertices:
        lines.append(" ".join(_fmt(c) for c in v))
    lines.append(f"faces {rig.n_faces}")
    for f in rig.faces:
        lines.append(f"{f[0]} {f[1]} {f[2]}")
    lines.append(f"blendshapes {rig.n_blendshapes}")
    for k in range(rig.n_blendshapes):
        for d in rig.blendshapes[k]:
            lines.append(" ".join(_fmt(c) for c in d))
    lines.append(f"joints {rig.n_joints}")
    for j in range(rig.n_joints):
        aa = _rotmat_to_axis_angle(rig.joint_rest_rot[j])
        row = [str(int(rig.joint_parents[j]))]
        row += [_fmt(c) for c in aa]
        row += [_fmt(c) for c in rig.joint_rest_trans[j]]
        lines.append(" ".join(row))
    lines.append(f"skin_weights {rig.n_vertices}")
    for v in range(rig.n_vertices):
        nz = np.nonzero(rig.skin_weights[v])[0]
        row = [str(len(nz))]
        for j in nz:
            row.append(str(int(j)))
            row.append(_fmt(rig.skin_weights[v, j]))
        lines.append(" ".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _rotmat_to_axis_angle(R):
    from .transforms import rotmat_to_quat

    q = rotmat_to_quat(R)
    w = min(1.0, max(-1.0, q[0]))
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return np.zeros(3)
    return q[1:] / s * angle


def load_rig(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    it = iter(lines)

    def take():
        try:
            return next(it)
        except StopIteration:
            raise LoadError(f"{path}: truncated rig file") from None

    header = take()
    if header != RIG_FORMAT_HEADER:
        raise LoadError(f"{path}: unrecognized rig header {header!r}")

    def section(name):
        ln = take().split()
        if len(ln) != 2 or ln[0] != name:
            raise LoadError(f"{path}: expected '{name} N', got {' '.join(ln)!r}")
        return int(ln[1])

    V = section("vertices")
    verts = np.array([[float(c) for c in take().split()] for _ in range(V)])
    T = section("faces")
    faces = np.array([[int(c) for c in take().split()] for _ in range(T)], dtype=np.int64)
    K = section("blendshapes")
    bs = np.array(
        [[[float(c) for c in take().split()] for _ in range(V)] for _ in range(K)]
    ).reshape((K, V, 3))
    J = section("joints")
    parents = np.empty(J, dtype=np.int64)
    rest_rot = np.empty((J, 3, 3))
    rest_trans = np.empty((J, 3))
    for j in range(J):
        row = take().split()
        parents[j] = int(row[0])
        rest_rot[j] = axis_angle_to_rotmat(np.array([float(c) for c in row[1:4]]))
        rest_trans[j] = [float(c) for c in row[4:7]]
    section("skin_weights")
    weights = np.zeros((V, J))
    for v in range(V):
        row = take().split()
        n = int(row[0])
        for i in range(n):
            weights[v, int(row[1 + 2 * i])] = float(row[2 + 2 * i])
    rig = ParamRig(
        template_vertices=verts,
        faces=faces,
        blendshapes=bs,
        joint_parents=parents,
        joint_rest_rot=rest_rot,
        joint_rest_trans=rest_trans,
        skin_weights=weights,
    )
    try:
        rig.validate()
    except ShapeError as e:
        raise LoadError(f"{path}: {e}") from e
    return rig
