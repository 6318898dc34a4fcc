"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records a dynamic computation graph node by node.  Values are
64-bit numpy arrays of any shape (training code uses ``(batch, features)``
matrices so one tape differentiates a whole batch at once).  The op set is
deliberately small: affine maps, elementwise arithmetic, the symbolic
activation primitives (square, scaled sine, sigmoid, exp, log), clamping,
column slicing/concatenation, and full-sum reductions -- enough to express
every training loss in this package, nothing more.

Tapes are rebuilt per batch and are single-writer.  Gradients are exact,
deterministic (fixed accumulation order) and validated against central
finite differences by :func:`finite_difference_check`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["Tape", "GradientMap", "finite_difference_check"]

# parameter name -> d(loss)/d(parameter), same shape as the parameter
GradientMap = dict


def _sigmoid(v):
    # exp(-|v|) keeps both branches overflow-free
    ez = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


# --- op table -------------------------------------------------------------
# forward: (parent_values, aux) -> value
# vjp:     (grad, parent_values, value, aux) -> tuple of parent adjoints

def _f_add(p, aux):
    return p[0] + p[1]


def _v_add(g, p, v, aux):
    return g, g


def _f_sub(p, aux):
    return p[0] - p[1]


def _v_sub(g, p, v, aux):
    return g, -g


def _f_mul(p, aux):
    return p[0] * p[1]


def _v_mul(g, p, v, aux):
    return g * p[1], g * p[0]


def _f_scale(p, aux):
    return p[0] * aux


def _v_scale(g, p, v, aux):
    return (g * aux,)


def _f_add_const(p, aux):
    return p[0] + aux


def _v_add_const(g, p, v, aux):
    return (g,)


def _f_affine(p, aux):
    x, w, b = p
    return x @ w.T + b


def _v_affine(g, p, v, aux):
    x, w, b = p
    return g @ w, g.T @ x, g.sum(axis=0)


def _f_square(p, aux):
    return p[0] * p[0]


def _v_square(g, p, v, aux):
    return (2.0 * p[0] * g,)


def _f_sin(p, aux):
    return np.sin(aux * p[0])


def _v_sin(g, p, v, aux):
    return (aux * np.cos(aux * p[0]) * g,)


def _f_sigmoid(p, aux):
    return _sigmoid(p[0])


def _v_sigmoid(g, p, v, aux):
    return (v * (1.0 - v) * g,)


def _f_exp(p, aux):
    return np.exp(p[0])


def _v_exp(g, p, v, aux):
    return (v * g,)


def _f_log(p, aux):
    return np.log(p[0])


def _v_log(g, p, v, aux):
    return (g / p[0],)


def _f_soft_clamp(p, aux):
    # smooth clamp to (-C, C); keeps gradients alive at the edges
    return aux * np.tanh(p[0] / aux)


def _v_soft_clamp(g, p, v, aux):
    t = v / aux
    return ((1.0 - t * t) * g,)


def _f_hard_clamp(p, aux):
    return np.clip(p[0], -aux, aux)


def _v_hard_clamp(g, p, v, aux):
    inside = (p[0] >= -aux) & (p[0] <= aux)
    return (g * inside,)


def _l05_rho(w, a):
    absw = np.abs(w)
    # the polynomial is only meaningful for |w| < a; clip the dead branch
    smooth = np.sqrt(np.maximum(-(w ** 4) / (8.0 * a ** 3) + 3.0 * w * w / (4.0 * a) + 3.0 * a / 8.0, 0.0))
    return np.where(absw >= a, np.sqrt(absw), smooth)


def _f_l05(p, aux):
    return _l05_rho(p[0], aux)


def _v_l05(g, p, v, aux):
    w = p[0]
    a = aux
    absw = np.abs(w)
    outer = np.sign(w) / (2.0 * np.sqrt(np.maximum(absw, a)))
    inner = (-(w ** 3) / (2.0 * a ** 3) + 3.0 * w / (2.0 * a)) / (2.0 * v)
    return (np.where(absw >= a, outer, inner) * g,)


def _f_slice_cols(p, aux):
    j0, j1 = aux
    return p[0][:, j0:j1]


def _v_slice_cols(g, p, v, aux):
    j0, j1 = aux
    out = np.zeros_like(p[0])
    out[:, j0:j1] = g
    return (out,)


def _f_concat_cols(p, aux):
    return np.concatenate(p, axis=1)


def _v_concat_cols(g, p, v, aux):
    grads = []
    j = 0
    for part in p:
        w = part.shape[1]
        grads.append(g[:, j:j + w])
        j += w
    return tuple(grads)


def _f_permute_cols(p, aux):
    return p[0][:, aux]


def _v_permute_cols(g, p, v, aux):
    out = np.empty_like(p[0])
    out[:, aux] = g
    return (out,)


def _f_sum(p, aux):
    return np.asarray(np.sum(p[0]))


def _v_sum(g, p, v, aux):
    return (np.broadcast_to(g, p[0].shape),)


_OPS = {
    "add": (_f_add, _v_add),
    "sub": (_f_sub, _v_sub),
    "mul": (_f_mul, _v_mul),
    "scale": (_f_scale, _v_scale),
    "add_const": (_f_add_const, _v_add_const),
    "affine": (_f_affine, _v_affine),
    "square": (_f_square, _v_square),
    "sin": (_f_sin, _v_sin),
    "sigmoid": (_f_sigmoid, _v_sigmoid),
    "exp": (_f_exp, _v_exp),
    "log": (_f_log, _v_log),
    "soft_clamp": (_f_soft_clamp, _v_soft_clamp),
    "hard_clamp": (_f_hard_clamp, _v_hard_clamp),
    "l05": (_f_l05, _v_l05),
    "slice_cols": (_f_slice_cols, _v_slice_cols),
    "concat_cols": (_f_concat_cols, _v_concat_cols),
    "permute_cols": (_f_permute_cols, _v_permute_cols),
    "sum": (_f_sum, _v_sum),
}

_LEAF_OPS = ("input", "param", "const")


@dataclass(slots=True)
class Node:
    op: str
    parents: tuple
    value: Any
    aux: Any = None
    name: str = None


@dataclass
class Tape:
    """Append-only record of one forward computation.

    Nodes are created eagerly (value computed at append time), so the
    returned handles can be inspected immediately.  ``forward_eval``
    re-runs the recorded graph, which is what the finite-difference
    checker uses to probe perturbed parameters cheaply.
    """

    nodes: list = field(default_factory=list)
    _params: dict = field(default_factory=dict)    # name -> node index
    _inputs: dict = field(default_factory=dict)    # name -> node index
    _outputs: list = field(default_factory=list)   # node indices, declaration order

    # -- leaves ------------------------------------------------------------

    def _leaf(self, op, name, value):
        idx = len(self.nodes)
        self.nodes.append(Node(op, (), None if value is None else np.asarray(value, dtype=np.float64), name=name))
        return idx

    def input(self, name, value=None):
        """Declare an input slot; ``value=None`` leaves it unbound."""
        if name in self._inputs:
            raise ValueError(f"duplicate input {name!r}")
        idx = self._leaf("input", name, value)
        self._inputs[name] = idx
        return idx

    def param(self, name, value):
        """Register a trainable parameter leaf; idempotent per name."""
        if name in self._params:
            return self._params[name]
        idx = self._leaf("param", name, value)
        self._params[name] = idx
        return idx

    def const(self, value):
        return self._leaf("const", None, value)

    # -- interior ops --------------------------------------------------------

    def _append(self, op, parents, aux=None):
        fwd = _OPS[op][0]
        vals = tuple(self.nodes[i].value for i in parents)
        for i, v in zip(parents, vals):
            if v is None:
                raise ValueError(f"node {i} has no value; bind inputs before building on them")
        idx = len(self.nodes)
        self.nodes.append(Node(op, tuple(parents), fwd(vals, aux), aux=aux))
        return idx

    def add(self, a, b):
        return self._append("add", (a, b))

    def sub(self, a, b):
        return self._append("sub", (a, b))

    def mul(self, a, b):
        return self._append("mul", (a, b))

    def scale(self, a, c):
        return self._append("scale", (a,), aux=float(c))

    def add_const(self, a, c):
        return self._append("add_const", (a,), aux=float(c))

    def affine(self, x, w, b):
        """x @ w.T + b with x:(n,din), w:(dout,din), b:(dout,)."""
        return self._append("affine", (x, w, b))

    def square(self, a):
        return self._append("square", (a,))

    def sin(self, a, omega=1.0):
        """sin(omega * a); omega=2*pi gives the scaled-sine activation."""
        return self._append("sin", (a,), aux=float(omega))

    def sigmoid(self, a):
        return self._append("sigmoid", (a,))

    def exp(self, a):
        return self._append("exp", (a,))

    def log(self, a):
        return self._append("log", (a,))

    def soft_clamp(self, a, c):
        return self._append("soft_clamp", (a,), aux=float(c))

    def hard_clamp(self, a, c):
        """clip to [-c, c]; derivative is zero outside the clamp band."""
        return self._append("hard_clamp", (a,), aux=float(c))

    def l05(self, a, threshold):
        """Elementwise smoothed-L0.5 magnitude |w|^(1/2) (polynomial core below threshold)."""
        if threshold <= 0:
            raise ValueError("l05 smoothing threshold must be > 0")
        return self._append("l05", (a,), aux=float(threshold))

    def slice_cols(self, a, j0, j1):
        return self._append("slice_cols", (a,), aux=(int(j0), int(j1)))

    def concat_cols(self, parts):
        parts = tuple(parts)
        if len(parts) == 1:
            return parts[0]
        return self._append("concat_cols", parts)

    def permute_cols(self, a, perm):
        return self._append("permute_cols", (a,), aux=np.asarray(perm, dtype=np.intp))

    def sum(self, a):
        """Sum every element down to a () scalar."""
        return self._append("sum", (a,))

    def mark_output(self, a):
        self._outputs.append(a)
        return a

    # -- evaluation ----------------------------------------------------------

    def value(self, a):
        return self.nodes[a].value

    def forward_eval(self, bindings=None):
        """(Re)evaluate every node in topological (=append) order.

        ``bindings`` maps input names to values; every input slot must be
        bound here or at declaration.  Returns the values of the nodes
        marked as outputs, in declaration order.  Raises on non-finite
        intermediates, naming the offending node.
        """
        bindings = bindings or {}
        for name, val in bindings.items():
            if name not in self._inputs:
                raise KeyError(f"unknown input {name!r}")
            self.nodes[self._inputs[name]].value = np.asarray(val, dtype=np.float64)
        for name, idx in self._inputs.items():
            if self.nodes[idx].value is None:
                raise ValueError(f"unbound input {name!r}")
        for idx, node in enumerate(self.nodes):
            if node.op in _LEAF_OPS:
                if not np.all(np.isfinite(node.value)):
                    raise FloatingPointError(f"non-finite value at node {idx} ({node.op} {node.name!r})")
                continue
            vals = tuple(self.nodes[i].value for i in node.parents)
            node.value = _OPS[node.op][0](vals, node.aux)
            if not np.all(np.isfinite(node.value)):
                raise FloatingPointError(f"non-finite value at node {idx} ({node.op})")
        return [self.nodes[i].value for i in self._outputs]

    def backward(self, loss):
        """Reverse-mode gradients of a scalar loss node.

        Returns a :data:`GradientMap` covering every registered parameter;
        parameters the loss does not reach get exact zeros.  Repeat calls
        on the same primal state return identical arrays.
        """
        node = self.nodes[loss]
        if node.value is None:
            raise ValueError("backward before forward: loss has no value")
        if np.ndim(node.value) != 0:
            raise ValueError(f"loss node must be scalar, got shape {np.shape(node.value)}")
        adjoints = [None] * (loss + 1)
        owned = [False] * (loss + 1)  # safe to accumulate in place
        adjoints[loss] = np.asarray(1.0)
        nodes = self.nodes
        for idx in range(loss, -1, -1):
            g = adjoints[idx]
            if g is None:
                continue
            n = nodes[idx]
            if not n.parents:
                continue
            vals = tuple(nodes[i].value for i in n.parents)
            contribs = _OPS[n.op][1](g, vals, n.value, n.aux)
            for parent, contrib in zip(n.parents, contribs):
                if adjoints[parent] is None:
                    # store by reference; promoted to an owned array on reuse
                    adjoints[parent] = contrib
                elif owned[parent]:
                    adjoints[parent] += contrib
                else:
                    adjoints[parent] = adjoints[parent] + contrib
                    owned[parent] = True
        grads = {}
        for name, idx in self._params.items():
            if idx <= loss and adjoints[idx] is not None:
                grads[name] = np.array(adjoints[idx])
            else:
                grads[name] = np.zeros_like(self.nodes[idx].value)
        return grads


def finite_difference_check(tape, loss, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Perturbs every element of every registered parameter in place (values
    restored exactly afterwards) and re-runs the recorded graph.  Relative
    error is |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    tape.forward_eval()
    analytic = tape.backward(loss)
    worst = 0.0
    for name, idx in tape._params.items():
        arr = tape.nodes[idx].value
        grad = analytic[name]
        for k in range(arr.size):
            orig = arr.flat[k]
            arr.flat[k] = orig + step
            tape.forward_eval()
            hi = float(tape.nodes[loss].value)
            arr.flat[k] = orig - step
            tape.forward_eval()
            lo = float(tape.nodes[loss].value)
            arr.flat[k] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = float(grad.flat[k]) if grad.shape else float(grad)
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    tape.forward_eval()
    return worst
