"""Checkpoint serialization: little-endian binary, magic + version + TLV
sections. Floats are stored at training precision (float64 raw bytes), so a
save/load round trip is bit-exact and a reloaded model renders identically.

Sections (tag, payload):
    CONF  config snapshot as UTF-8 JSON
    RIGS  rig arrays (the checkpoint is self-contained for rendering)
    GAUS  local Gaussian arrays
    TRIP  tri-plane planes + domain corners (absent without a tri-plane)
    BNET / LNET  MLP weight and bias arrays (absent without the adjuster)
    NTRX  cached neutral query positions (absent if never computed)
    OPTM  optimizer moments + JSON header (steps, betas, eps)
    ITER  iteration counter (u64)
"""

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import LoadError
from .gaussians import GaussianSet
from .rig import ParamRig

MAGIC = b"RSCK"
VERSION = 1


def _write_array(buf, name, arr):
    arr = np.ascontiguousarray(arr)
    nb = name.encode("ascii")
    dt = arr.dtype.str.encode("ascii")  # e.g. b"<f8"
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<H", len(dt)))
    buf.write(dt)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<Q", d))
    raw = arr.tobytes()
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)


def _read_array(buf):
    (nlen,) = struct.unpack("<H", buf.read(2))
    name = buf.read(nlen).decode("ascii")
    (dlen,) = struct.unpack("<H", buf.read(2))
    dt = buf.read(dlen).decode("ascii")
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    (nbytes,) = struct.unpack("<Q", buf.read(8))
    data = buf.read(nbytes)
    if len(data) != nbytes:
        raise LoadError("truncated array block in checkpoint")
    return name, np.frombuffer(data, dtype=np.dtype(dt)).reshape(shape).copy()


def _array_section(arrays):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        _write_array(buf, name, arr)
    return buf.getvalue()


def _parse_array_section(payload):
    buf = io.BytesIO(payload)
    (count,) = struct.unpack("<I", buf.read(4))
    return dict(_read_array(buf) for _ in range(count))


@dataclass
class Checkpoint:
    config: dict
    rig: ParamRig
    gaussians: GaussianSet
    triplane_planes: list        # [] when absent
    triplane_domain: tuple       # (lo, hi) or None
    basis_params: dict           # name -> array, {} when absent
    latent_params: dict
    optimizer_state: dict        # m/v arrays, steps, betas, eps; {} when absent
    iteration: int
    neutral_x: np.ndarray = None  # cached adjuster query positions, optional


def save_checkpoint(path, ckpt):
    sections = []
    sections.append((b"CONF", json.dumps(ckpt.config, sort_keys=True).encode()))
    rig = ckpt.rig
    sections.append((b"RIGS", _array_section([
        ("template_vertices", rig.template_vertices),
        ("faces", rig.faces),
        ("blendshapes", rig.blendshapes),
        ("joint_parents", rig.joint_parents),
        ("joint_rest_rot", rig.joint_rest_rot),
        ("joint_rest_trans", rig.joint_rest_trans),
        ("skin_weights", rig.skin_weights),
    ])))
    gs = ckpt.gaussians
    sections.append((b"GAUS", _array_section([
        ("mu0", gs.mu0), ("rot0", gs.rot0), ("log_scale0", gs.log_scale0),
        ("opacity_raw", gs.opacity_raw), ("sh", gs.sh),
        ("parent_tri", gs.parent_tri),
    ])))
    if ckpt.triplane_planes:
        arrays = [(f"plane{i}", p) for i, p in enumerate(ckpt.triplane_planes)]
        arrays += [("lo", ckpt.triplane_domain[0]), ("hi", ckpt.triplane_domain[1])]
        sections.append((b"TRIP", _array_section(arrays)))
    if ckpt.basis_params:
        sections.append((b"BNET", _array_section(sorted(ckpt.basis_params.items()))))
    if ckpt.latent_params:
        sections.append((b"LNET", _array_section(sorted(ckpt.latent_params.items()))))
    if ckpt.neutral_x is not None:
        sections.append((b"NTRX", _array_section([("neutral_x", ckpt.neutral_x)])))
    if ckpt.optimizer_state:
        st = ckpt.optimizer_state
        head = json.dumps({"steps": st["steps"], "beta1": st["beta1"],
                           "beta2": st["beta2"], "eps": st["eps"]},
                          sort_keys=True).encode()
        arrays = [(f"m/{k}", v) for k, v in sorted(st["m"].items())]
        arrays += [(f"v/{k}", v) for k, v in sorted(st["v"].items())]
        body = _array_section(arrays)
        sections.append((b"OPTM", struct.pack("<Q", len(head)) + head + body))
    sections.append((b"ITER", struct.pack("<Q", ckpt.iteration)))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for tag, payload in sections:
            fh.write(tag)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise LoadError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    sections = {}
    while pos < len(blob):
        if pos + 12 > len(blob):
            raise LoadError(f"{path}: truncated section header")
        tag = blob[pos:pos + 4]
        (length,) = struct.unpack("<Q", blob[pos + 4:pos + 12])
        payload = blob[pos + 12:pos + 12 + length]
        if len(payload) != length:
            raise LoadError(f"{path}: truncated section {tag!r}")
        sections[tag] = payload
        pos += 12 + length
    for required in (b"CONF", b"RIGS", b"GAUS", b"ITER"):
        if required not in sections:
            raise LoadError(f"{path}: missing section {required!r}")

    config = json.loads(sections[b"CONF"].decode())
    r = _parse_array_section(sections[b"RIGS"])
    rig = ParamRig(
        template_vertices=r["template_vertices"], faces=r["faces"],
        blendshapes=r["blendshapes"], joint_parents=r["joint_parents"],
        joint_rest_rot=r["joint_rest_rot"], joint_rest_trans=r["joint_rest_trans"],
        skin_weights=r["skin_weights"])
    g = _parse_array_section(sections[b"GAUS"])
    gaussians = GaussianSet(
        mu0=g["mu0"], rot0=g["rot0"], log_scale0=g["log_scale0"],
        opacity_raw=g["opacity_raw"], sh=g["sh"], parent_tri=g["parent_tri"])

    planes, domain = [], None
    if b"TRIP" in sections:
        t = _parse_array_section(sections[b"TRIP"])
        planes = [t[f"plane{i}"] for i in range(sum(k.startswith("plane") for k in t))]
        domain = (t["lo"], t["hi"])
    basis = _parse_array_section(sections[b"BNET"]) if b"BNET" in sections else {}
    latent = _parse_array_section(sections[b"LNET"]) if b"LNET" in sections else {}
    neutral_x = None
    if b"NTRX" in sections:
        neutral_x = _parse_array_section(sections[b"NTRX"])["neutral_x"]

    opt_state = {}
    if b"OPTM" in sections:
        payload = sections[b"OPTM"]
        (hlen,) = struct.unpack("<Q", payload[:8])
        head = json.loads(payload[8:8 + hlen].decode())
        arrays = _parse_array_section(payload[8 + hlen:])
        opt_state = {
            "m": {k[2:]: v for k, v in arrays.items() if k.startswith("m/")},
            "v": {k[2:]: v for k, v in arrays.items() if k.startswith("v/")},
            "steps": head["steps"], "beta1": head["beta1"],
            "beta2": head["beta2"], "eps": head["eps"],
        }
    (iteration,) = struct.unpack("<Q", sections[b"ITER"])
    return Checkpoint(
        config=config, rig=rig, gaussians=gaussians,
        triplane_planes=planes, triplane_domain=domain,
        basis_params=basis, latent_params=latent,
        optimizer_state=opt_state, iteration=iteration, neutral_x=neutral_x)
