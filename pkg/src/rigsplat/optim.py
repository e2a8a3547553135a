"""Adam with per-group learning rates, plus the position learning-rate decay.

The optimizer owns one (m, v, step) state triple per named parameter; the
training loop resizes rows in place when densification grows or prunes the
Gaussian set.
"""

import numpy as np

from .errors import ShapeError


def lr_schedule(iteration, lr_init=5e-3, decay_target=0.01, decay_end=60000):
    """Exponential interpolation lr0 * target^(min(t, T)/T); constant after T."""
    frac = min(iteration, decay_end) / decay_end
    return lr_init * decay_target**frac


class Adam:
    """Standard bias-corrected Adam over a dict of named numpy parameters."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.steps = {k: 0 for k in self.params}

    def step(self, grads, lrs):
        """Update every param that has a gradient; lrs maps name -> lr."""
        for name, g in grads.items():
            if g is None:
                continue
            p = self.params[name]
            if g.shape != p.shape:
                raise ShapeError(
                    f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
            self.steps[name] += 1
            t = self.steps[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)

    def replace_param(self, name, new_value, keep_state=False):
        """Swap a parameter array; state zeroes unless keep_state."""
        self.params[name] = new_value
        if not keep_state:
            self.m[name] = np.zeros_like(new_value)
            self.v[name] = np.zeros_like(new_value)

    def select_and_extend_rows(self, name, new_value, keep, n_new):
        """Row-surgery after densification: survivors keep their moments,
        appended rows start from zero."""
        self.params[name] = new_value
        for store in (self.m, self.v):
            kept = store[name][keep]
            pad = np.zeros((n_new,) + kept.shape[1:])
            store[name] = np.concatenate([kept, pad], axis=0)
        if self.m[name].shape != new_value.shape:
            raise ShapeError(
                f"optimizer rows for {name!r} disagree with the new parameter")

    def reset_state(self, name):
        self.m[name][:] = 0.0
        self.v[name][:] = 0.0

    def state_dict(self):
        return {
            "m": dict(self.m),
            "v": dict(self.v),
            "steps": dict(self.steps),
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    def load_state_dict(self, state):
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}
        self.steps = {k: int(v) for k, v in state["steps"].items()}
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.eps = state["eps"]
