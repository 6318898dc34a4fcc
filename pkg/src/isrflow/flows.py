"""Model variants over an invertible stack and their likelihood losses.

* :class:`FlowModel`  -- density estimation, x -> z with d_z = d_x.
* :class:`IsrModel`   -- supervised inverse problems, x -> [y, z] with
  d_z = d_x - d_y; y is fitted to ground truth with a narrow Gaussian.
* :class:`CisrModel`  -- conditional variant, x -> z given y, where y is
  concatenated onto every subnetwork input (d_z = d_x).

All losses are negative log-likelihoods up to additive constants; the
latent z is pushed to a standard normal and the log-Jacobian enters with
a minus sign.  Posterior sampling draws z from the standard normal and
runs the stack backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import InvertibleStack

LOG_2PI = math.log(2.0 * math.pi)


def _as_batch(x, d, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"{what}: expected {d} columns, got {x.shape[1]}")
    return x, single


def _check_trained(stack):
    if not stack.params_finite():
        raise ValueError("model has non-finite weights; train it before sampling")


@dataclass
class FlowModel:
    """Square map x -> z trained as a normalizing flow."""

    stack: InvertibleStack
    kind = "flow"

    def __post_init__(self):
        if self.stack.cond_dim != 0:
            raise ValueError("flow stacks must be unconditional")

    @property
    def d_x(self):
        return self.stack.data_dim

    @property
    def d_z(self):
        return self.d_x

    def param_items(self):
        return self.stack.param_items()

    def forward(self, x):
        """Returns (z, per-sample logdet); z excludes padded slots."""
        x, single = _as_batch(x, self.d_x, "flow forward")
        out, logdet = self.stack.forward(x)
        z = out[:, :self.d_z]
        return (z[0], logdet[0]) if single else (z, logdet)

    def inverse(self, z):
        z, single = _as_batch(z, self.d_z, "flow inverse")
        full = np.hstack([z, np.zeros((z.shape[0], self.stack.pad_count))])
        x = self.stack.inverse(full)
        return x[0] if single else x

    def nll(self, x):
        """Mean of 0.5*||f(x)||^2 - logdet (+ weighted pad penalty if padded)."""
        x, _ = _as_batch(x, self.d_x, "nll_flow")
        out, logdet = self.stack.forward(x)
        z = out[:, :self.d_z]
        val = float(np.mean(0.5 * np.sum(z ** 2, axis=1) - logdet))
        if self.stack.pad_count:
            pads = out[:, self.d_z:]
            val += self.stack.pad_weight * float(np.mean(pads ** 2))
        return val

    def nll_on_tape(self, tape, x):
        xn = tape.input("x", x)
        n = np.atleast_2d(x).shape[0]
        out, logdet, pad = self.stack.forward_on_tape(tape, xn)
        z = tape.slice_cols(out, 0, self.d_z) if self.stack.pad_count else out
        loss = tape.scale(tape.sub(tape.scale(tape.sum(tape.square(z)), 0.5), logdet), 1.0 / n)
        if pad is not None:
            loss = tape.add(loss, tape.scale(pad, self.stack.pad_weight))
        return loss

    def log_density(self, x):
        """Exact log p(x) by change of variables (unpadded models only)."""
        if self.stack.pad_count:
            raise ValueError("log density is only exact for unpadded flows")
        x, single = _as_batch(x, self.d_x, "log_density")
        z, logdet = self.stack.forward(x)
        ll = -0.5 * self.d_z * LOG_2PI - 0.5 * np.sum(z ** 2, axis=1) + logdet
        return float(ll[0]) if single else ll

    def sample(self, n, seed=0):
        _check_trained(self.stack)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        z = rng.standard_normal((n, self.d_z))
        if n == 0:
            return np.zeros((0, self.d_x))
        return self.inverse(z)


@dataclass
class IsrModel:
    """Bijective map x -> [y, z]; the first d_y outputs approximate the
    forward process, the remaining d_z = d_x - d_y capture what y misses."""

    stack: InvertibleStack
    d_y: int
    sigma2: float = 1e-2
    d_z: int = None
    kind = "isr"

    def __post_init__(self):
        if self.stack.cond_dim != 0:
            raise ValueError("ISR stacks must be unconditional")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")
        if self.d_z is None:
            self.d_z = self.d_x - self.d_y
        if self.d_y <= 0 or self.d_z < 0 or self.d_y + self.d_z > self.d_x:
            raise ValueError(
                f"invalid partition: d_y={self.d_y}, d_z={self.d_z}, d_x={self.d_x}"
            )

    @property
    def d_x(self):
        return self.stack.data_dim

    def param_items(self):
        return self.stack.param_items()

    def forward(self, x):
        """Returns (y_pred, z, per-sample logdet)."""
        x, single = _as_batch(x, self.d_x, "isr forward")
        out, logdet = self.stack.forward(x)
        y, z = out[:, :self.d_y], out[:, self.d_y:self.d_y + self.d_z]
        if single:
            return y[0], z[0], logdet[0]
        return y, z, logdet

    def inverse(self, y, z):
        y, sy = _as_batch(y, self.d_y, "isr inverse (y)")
        z, sz = _as_batch(z, self.d_z, "isr inverse (z)")
        if y.shape[0] != z.shape[0]:
            raise ValueError("y and z batch sizes differ")
        pads = np.zeros((y.shape[0], self.stack.width - self.d_y - self.d_z))
        x = self.stack.inverse(np.hstack([y, z, pads]))
        return x[0] if sy and sz else x

    def nll(self, x, y_gt):
        """Mean of 0.5*||f_y - y_gt||^2/sigma2 + 0.5*||f_z||^2 - logdet."""
        x, _ = _as_batch(x, self.d_x, "nll_supervised (x)")
        y_gt, _ = _as_batch(y_gt, self.d_y, "nll_supervised (y)")
        out, logdet = self.stack.forward(x)
        y, z = out[:, :self.d_y], out[:, self.d_y:self.d_y + self.d_z]
        per = (0.5 * np.sum((y - y_gt) ** 2, axis=1) / self.sigma2
               + 0.5 * np.sum(z ** 2, axis=1) - logdet)
        val = float(np.mean(per))
        if self.stack.pad_count:
            val += self.stack.pad_weight * float(np.mean(out[:, out.shape[1] - self.stack.pad_count:] ** 2))
        return val

    def nll_on_tape(self, tape, x, y_gt):
        xn = tape.input("x", x)
        yn = tape.input("y_gt", y_gt)
        n = np.atleast_2d(x).shape[0]
        out, logdet, pad = self.stack.forward_on_tape(tape, xn)
        y = tape.slice_cols(out, 0, self.d_y)
        z = tape.slice_cols(out, self.d_y, self.d_y + self.d_z)
        fit = tape.scale(tape.sum(tape.square(tape.sub(y, yn))), 0.5 / self.sigma2)
        prior = tape.scale(tape.sum(tape.square(z)), 0.5)
        loss = tape.scale(tape.sub(tape.add(fit, prior), logdet), 1.0 / n)
        if pad is not None:
            loss = tape.add(loss, tape.scale(pad, self.stack.pad_weight))
        return loss

    def predict(self, x):
        return self.forward(x)[0]

    def sample_posterior(self, y_star, n, seed=0):
        """n draws from p(x | y_star): z ~ N(0, I_dz), x = f^{-1}(y_star, z)."""
        _check_trained(self.stack)
        y_star = np.asarray(y_star, dtype=np.float64).reshape(-1)
        if y_star.shape[0] != self.d_y:
            raise ValueError(f"y_star must have {self.d_y} entries")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        z = rng.standard_normal((n, self.d_z))
        if n == 0:
            return np.zeros((0, self.d_x))
        return self.inverse(np.tile(y_star, (n, 1)), z)


@dataclass
class CisrModel:
    """Conditional map x -> z given y; y feeds every subnetwork input."""

    stack: InvertibleStack
    kind = "cisr"

    def __post_init__(self):
        if self.stack.cond_dim <= 0:
            raise ValueError("cISR needs a conditional stack (cond_dim > 0)")

    @property
    def d_x(self):
        return self.stack.data_dim

    @property
    def d_y(self):
        return self.stack.cond_dim

    @property
    def d_z(self):
        return self.d_x

    def param_items(self):
        return self.stack.param_items()

    def forward(self, x, y):
        x, single = _as_batch(x, self.d_x, "cisr forward (x)")
        y, _ = _as_batch(y, self.d_y, "cisr forward (y)")
        out, logdet = self.stack.forward(x, cond=y)
        z = out[:, :self.d_z]
        return (z[0], logdet[0]) if single else (z, logdet)

    def inverse(self, z, y):
        z, single = _as_batch(z, self.d_z, "cisr inverse (z)")
        y, _ = _as_batch(y, self.d_y, "cisr inverse (y)")
        full = np.hstack([z, np.zeros((z.shape[0], self.stack.pad_count))])
        x = self.stack.inverse(full, cond=y)
        return x[0] if single else x

    def nll(self, x, y):
        """Mean of 0.5*||f(x; y)||^2 - logdet."""
        x, _ = _as_batch(x, self.d_x, "nll_conditional (x)")
        y, _ = _as_batch(y, self.d_y, "nll_conditional (y)")
        out, logdet = self.stack.forward(x, cond=y)
        z = out[:, :self.d_z]
        val = float(np.mean(0.5 * np.sum(z ** 2, axis=1) - logdet))
        if self.stack.pad_count:
            val += self.stack.pad_weight * float(np.mean(out[:, self.d_z:] ** 2))
        return val

    def nll_on_tape(self, tape, x, y):
        xn = tape.input("x", x)
        yn = tape.input("y_cond", y)
        n = np.atleast_2d(x).shape[0]
        out, logdet, pad = self.stack.forward_on_tape(tape, xn, cond=yn)
        z = tape.slice_cols(out, 0, self.d_z) if self.stack.pad_count else out
        loss = tape.scale(tape.sub(tape.scale(tape.sum(tape.square(z)), 0.5), logdet), 1.0 / n)
        if pad is not None:
            loss = tape.add(loss, tape.scale(pad, self.stack.pad_weight))
        return loss

    def sample_posterior(self, y_star, n, seed=0):
        _check_trained(self.stack)
        y_star = np.asarray(y_star, dtype=np.float64).reshape(-1)
        if y_star.shape[0] != self.d_y:
            raise ValueError(f"y_star must have {self.d_y} entries")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        z = rng.standard_normal((n, self.d_z))
        if n == 0:
            return np.zeros((0, self.d_x))
        return self.inverse(z, np.tile(y_star, (n, 1)))


# -- functional surface ------------------------------------------------------

def isr_forward(m, x):
    return m.forward(x)


def isr_inverse(m, y, z):
    return m.inverse(y, z)


def nll_supervised(m, x, y_gt):
    return m.nll(x, y_gt)


def nll_flow(m, x):
    return m.nll(x)


def nll_conditional(m, x, y):
    return m.nll(x, y)


def sample_posterior(m, y_star, n, seed=0):
    return m.sample_posterior(y_star, n, seed=seed)


def model_log_density(m, x):
    return m.log_density(x)
