"""Training configuration: defaults, text-file loading, and printing.

Defaults follow the training recipe constants (loss weights, thresholds,
learning rates, schedule strides); desk-scale runs override sizes and
iteration counts through a config file.
"""

import dataclasses
from dataclasses import dataclass

from .errors import LoadError


@dataclass
class TrainConfig:
    # loss weights and regularizer thresholds
    lambda1: float = 0.2
    lambda2: float = 0.02
    lambda3: float = 0.01
    lambda4: float = 1.0
    eps_position: float = 1.0
    eps_scaling: float = 0.6

    # learning rates; the position rate decays exponentially, scaling stays flat
    lr_position: float = 5e-3
    lr_position_decay_target: float = 0.01
    lr_position_decay_end: int = 60000
    lr_scaling: float = 5e-3
    lr_opacity: float = 0.05
    lr_rotation: float = 1e-3
    lr_sh: float = 2.5e-3
    lr_mlp: float = 1e-4
    lr_triplane: float = 5e-3

    # schedule
    total_iters: int = 120000
    adjuster_start_iter: int = 5000
    densify_start: int = 500
    densify_end: int = 60000
    densify_stride: int = 100
    opacity_reset_stride: int = 3000

    # density control
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    split_factor: float = 1.6
    prune_opacity: float = 0.005
    opacity_reset_ceiling: float = 0.01

    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # model dimensions
    sh_degree: int = 0
    latent_dim: int = 32
    triplane_resolutions: tuple = (64, 128, 256)
    triplane_features: int = 4
    triplane_init_std: float = 0.1
    basis_hidden: tuple = (64, 64)
    latent_hidden: tuple = (64, 64)
    fourier_bands: int = 8
    eps_scale_clamp: float = 1e-6
    quat_delta_compose: bool = False
    domain_pad: float = 0.05

    # Gaussian initialization
    init_local_scale: float = 0.3
    init_opacity: float = 0.1
    init_grey: float = 0.5

    # rasterizer
    tile_size: int = 16
    lowpass: float = 0.3
    cutoff_enabled: bool = True
    cutoff_radius: float = 3.0
    saturation_threshold: float = 1e-4

    # ablations
    no_adjuster: bool = False
    no_triplane: bool = False
    no_lbs: bool = False
    no_init: bool = False
    strict_zero_expression: bool = False

    seed: int = 0

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in fields:
                raise LoadError(f"unknown config key {k!r}")
            if isinstance(getattr(cls, k), tuple):
                v = tuple(v)
            kwargs[k] = v
        return cls(**kwargs)


def _parse_value(text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        elem = type(default[0])
        return tuple(elem(part) for part in text.split(","))
    raise ValueError(f"unsupported config type for {text!r}")


def load_config(path):
    """Parse a `key value` text config; '#' starts a comment."""
    cfg = TrainConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise LoadError(f"{path}:{lineno}: expected 'key value'")
            key, text = parts
            if not hasattr(cfg, key):
                raise LoadError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                value = _parse_value(text, getattr(TrainConfig, key))
            except ValueError as e:
                raise LoadError(f"{path}:{lineno}: {e}") from e
            setattr(cfg, key, value)
    return cfg


def format_config(cfg):
    """One `key value` line per field, in declaration order."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} {v}")
    return "\n".join(lines)
