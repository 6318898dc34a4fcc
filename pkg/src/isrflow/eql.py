"""Equation-learner subnetworks.

An :class:`EqlNetwork` is a fully connected network whose hidden neurons
apply symbolic primitives (constant one, identity, square, sin(2*pi*x),
sigmoid, optionally clamped exp, and a two-argument product) instead of
conventional activations, so a trained network reads off directly as a
formula.  The final layer is always linear.

These networks serve as the scale/translation functions inside coupling
blocks; they are never inverted, only evaluated forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import _sigmoid

TWO_PI = 2.0 * math.pi

CONST_ONE = "one"
IDENTITY = "id"
SQUARE = "square"
SINE = "sin"          # sin(2*pi*x)
SIGMOID = "sigmoid"
EXP = "exp"           # exp with soft clamp, off by default
PRODUCT = "product"   # consumes two pre-activations

ACTIVATION_KINDS = (CONST_ONE, IDENTITY, SQUARE, SINE, SIGMOID, EXP, PRODUCT)

# per-hidden-layer library: {1, id x2, square x4, sin(2pi.) x2, sigmoid x2, product x2}
DEFAULT_LIBRARY = (
    (CONST_ONE,)
    + (IDENTITY,) * 2
    + (SQUARE,) * 4
    + (SINE,) * 2
    + (SIGMOID,) * 2
    + (PRODUCT,) * 2
)


def preactivation_width(activations):
    """Number of pre-activation units a layer needs (products consume two)."""
    return sum(2 if a == PRODUCT else 1 for a in activations)


def soft_clamp(v, c):
    return c * np.tanh(np.asarray(v) / c)


@dataclass
class EqlNetwork:
    """Stacked symbolic layers: weights[i], biases[i] feed activations[i];
    the last weight/bias pair is the linear output layer (no activation)."""

    weights: list
    biases: list
    activations: list
    exp_clamp: float = 2.0
    n_calls: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.activations) + 1:
            raise ValueError("need exactly one weight matrix per hidden layer plus the output layer")
        prev = self.weights[0].shape[1]
        for i, acts in enumerate(self.activations):
            bad = [a for a in acts if a not in ACTIVATION_KINDS]
            if bad:
                raise ValueError(f"unknown activation kinds {bad}")
            need = preactivation_width(acts)
            if self.weights[i].shape != (need, prev):
                raise ValueError(
                    f"layer {i}: weight shape {self.weights[i].shape} != ({need}, {prev})"
                )
            prev = len(acts)
        if self.weights[-1].shape[1] != prev:
            raise ValueError("output layer width mismatch")

    # -- construction --------------------------------------------------------

    @classmethod
    def init(cls, d_in, d_out, hidden_layers=2, library=DEFAULT_LIBRARY, rng=None,
             exp_clamp=2.0, out_scale=1.0):
        """Fresh network with uniform(-r, r) weights, r = sqrt(6/(fan_in+fan_out)),
        and zero biases.  ``out_scale`` multiplies the output-layer range;
        coupling blocks use 0 so a fresh stack starts as the identity map,
        which keeps deep stacks finite and invertible from step one."""
        rng = np.random.default_rng(rng)
        weights, biases, activations = [], [], []
        prev = d_in
        for _ in range(hidden_layers):
            acts = tuple(library)
            width = preactivation_width(acts)
            r = math.sqrt(6.0 / (prev + width))
            weights.append(rng.uniform(-r, r, size=(width, prev)))
            biases.append(np.zeros(width))
            activations.append(acts)
            prev = len(acts)
        r = out_scale * math.sqrt(6.0 / (prev + d_out))
        weights.append(rng.uniform(-r, r, size=(d_out, prev)))
        biases.append(np.zeros(d_out))
        return cls(weights, biases, activations, exp_clamp=exp_clamp)

    @property
    def d_in(self):
        return self.weights[0].shape[1]

    @property
    def d_out(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return EqlNetwork(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [tuple(a) for a in self.activations],
            exp_clamp=self.exp_clamp,
        )

    def weight_arrays(self):
        """All trainable arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_items(self, prefix):
        items = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            items.append((f"{prefix}.L{i}.W", w))
            items.append((f"{prefix}.L{i}.b", b))
        return items

    # -- evaluation ----------------------------------------------------------

    def forward(self, x):
        """Plain numpy forward pass; x is (n, d_in) or (d_in,)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.d_in:
            raise ValueError(f"expected {self.d_in} input columns, got {h.shape[1]}")
        self.n_calls += 1
        for w, b, acts in zip(self.weights, self.biases, self.activations):
            g = h @ w.T + b
            h = self._apply(g, acts)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out[0] if single else out

    def _apply(self, g, acts):
        cols = []
        j = 0
        n = g.shape[0]
        for a in acts:
            if a == PRODUCT:
                cols.append(g[:, j] * g[:, j + 1])
                j += 2
                continue
            v = g[:, j]
            j += 1
            if a == CONST_ONE:
                cols.append(np.ones(n))
            elif a == IDENTITY:
                cols.append(v)
            elif a == SQUARE:
                cols.append(v * v)
            elif a == SINE:
                cols.append(np.sin(TWO_PI * v))
            elif a == SIGMOID:
                cols.append(_sigmoid(v))
            else:  # EXP, always behind the soft clamp
                cols.append(np.exp(soft_clamp(v, self.exp_clamp)))
        return np.column_stack(cols)

    def forward_on_tape(self, tape, x, name):
        """Tape forward pass; registers parameters under ``name`` so gradients
        map back to this network's arrays."""
        n = tape.value(x).shape[0]
        h = x
        for i, acts in enumerate(self.activations):
            w = tape.param(f"{name}.L{i}.W", self.weights[i])
            b = tape.param(f"{name}.L{i}.b", self.biases[i])
            g = tape.affine(h, w, b)
            h = tape.concat_cols(self._apply_on_tape(tape, g, acts, n))
        i = len(self.activations)
        w = tape.param(f"{name}.L{i}.W", self.weights[i])
        b = tape.param(f"{name}.L{i}.b", self.biases[i])
        return tape.affine(h, w, b)

    def _apply_on_tape(self, tape, g, acts, n):
        # contiguous runs of one kind become a single sliced op
        parts = []
        j = 0
        k = 0
        while k < len(acts):
            kind = acts[k]
            run = 1
            while k + run < len(acts) and acts[k + run] == kind:
                run += 1
            if kind == PRODUCT:
                for _ in range(run):
                    parts.append(tape.mul(tape.slice_cols(g, j, j + 1), tape.slice_cols(g, j + 1, j + 2)))
                    j += 2
            else:
                seg = tape.slice_cols(g, j, j + run)
                j += run
                if kind == CONST_ONE:
                    parts.append(tape.const(np.ones((n, run))))
                elif kind == IDENTITY:
                    parts.append(seg)
                elif kind == SQUARE:
                    parts.append(tape.square(seg))
                elif kind == SINE:
                    parts.append(tape.sin(seg, TWO_PI))
                elif kind == SIGMOID:
                    parts.append(tape.sigmoid(seg))
                else:
                    parts.append(tape.exp(tape.soft_clamp(seg, self.exp_clamp)))
            k += run
        return parts


# -- sparsity --------------------------------------------------------------

def l05_rho(w, a):
    """Smoothed L0.5 magnitude: |w|^(1/2) for |w| >= a, else the quartic
    smoothing (-w^4/(8a^3) + 3w^2/(4a) + 3a/8)^(1/2)."""
    if a <= 0:
        raise ValueError("smoothing threshold must be > 0")
    w = np.asarray(w, dtype=np.float64)
    absw = np.abs(w)
    # the polynomial is only meaningful for |w| < a; clip the dead branch
    smooth = np.sqrt(np.maximum(-(w ** 4) / (8.0 * a ** 3) + 3.0 * w * w / (4.0 * a) + 3.0 * a / 8.0, 0.0))
    return np.where(absw >= a, np.sqrt(absw), smooth)


def l05_penalty(net, a=0.05):
    """Sum of the smoothed-L0.5 magnitudes over every weight and bias."""
    return float(sum(l05_rho(arr, a).sum() for arr in net.weight_arrays()))


def l05_penalty_on_tape(tape, params, a=0.05):
    """Tape node for the penalty over (name, array) parameter pairs."""
    total = None
    for name, arr in params:
        node = tape.sum(tape.l05(tape.param(name, arr), a))
        total = node if total is None else tape.add(total, node)
    if total is None:
        raise ValueError("no parameters to penalize")
    return total


def threshold_weights(net, tol):
    """Zero every weight with |w| < tol.  Returns (pruned copy, #newly zeroed)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    pruned = net.copy()
    zeroed = 0
    for arr in pruned.weight_arrays():
        kill = (np.abs(arr) < tol) & (arr != 0.0)
        zeroed += int(kill.sum())
        arr[kill] = 0.0
    return pruned, zeroed
