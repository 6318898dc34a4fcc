"""Closed-form expression extraction from trained networks.

Expressions are immutable trees over {const, var, +, *, square, sin,
sigmoid, exp}.  :func:`extract` converts an equation-learner network into
one tree per output, algebraically equal to the (pruned) network function;
:func:`compose_model` assembles per-block trees into the full invertible
map with both the forward chain and the mirrored inverse chain, each of
which can be evaluated numerically to verify faithfulness.

The scale expressions stored for each block are the *effective* log-scales,
i.e. the soft clamp is folded in via tanh(v) = 2*sigmoid(2v) - 1, so the
trees reproduce exactly what the model exponentiates.

Constants keep full precision internally; display rounding (3 significant
digits, Table-style) happens only at render time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .coupling import CouplingBlock, InvertibleStack, PermutationLayer
from .eql import (
    CONST_ONE,
    EXP,
    IDENTITY,
    PRODUCT,
    SIGMOID,
    SINE,
    SQUARE,
    TWO_PI,
    threshold_weights,
)

_OPS = ("const", "var", "add", "mul", "square", "sin", "sigmoid", "exp")


@dataclass(frozen=True)
class Expr:
    op: str
    args: tuple = ()
    value: float = None
    name: str = None

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown expression op {self.op!r}")
        if self.op == "const" and not math.isfinite(self.value):
            raise ValueError("constants must be finite")


def const(v):
    return Expr("const", value=float(v))


def var(name):
    return Expr("var", name=str(name))


def add(*args):
    return Expr("add", args=tuple(args))


def mul(*args):
    return Expr("mul", args=tuple(args))


def square(x):
    return Expr("square", args=(x,))


def sin(x):
    return Expr("sin", args=(x,))


def sigmoid(x):
    return Expr("sigmoid", args=(x,))


def exp(x):
    return Expr("exp", args=(x,))


ZERO = const(0.0)
ONE = const(1.0)


def node_count(e):
    return 1 + sum(node_count(a) for a in e.args)


def eval_expression(e, bindings):
    """Evaluate a tree; bindings map variable names to floats or arrays."""
    if e.op == "const":
        return e.value
    if e.op == "var":
        try:
            return bindings[e.name]
        except KeyError:
            raise KeyError(f"unbound variable {e.name!r}") from None
    vals = [eval_expression(a, bindings) for a in e.args]
    if e.op == "add":
        out = vals[0]
        for v in vals[1:]:
            out = out + v
        return out
    if e.op == "mul":
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out
    if e.op == "square":
        return vals[0] * vals[0]
    if e.op == "sin":
        return np.sin(vals[0])
    if e.op == "sigmoid":
        ez = np.exp(-np.abs(vals[0]))
        return np.where(np.asarray(vals[0]) >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return np.exp(vals[0])


# -- simplification -----------------------------------------------------------

def _simplify_once(e):
    if e.op in ("const", "var"):
        return e
    args = tuple(_simplify_once(a) for a in e.args)
    if e.op in ("square", "sin", "sigmoid", "exp") and args[0].op == "const":
        return const(float(eval_expression(Expr(e.op, args=args), {})))
    if e.op == "add":
        flat = []
        csum = 0.0
        seen_const = False
        for a in args:
            if a.op == "add":
                parts = a.args
            else:
                parts = (a,)
            for p in parts:
                if p.op == "const":
                    csum += p.value
                    seen_const = True
                else:
                    flat.append(p)
        if seen_const and (csum != 0.0 or not flat):
            flat.append(const(csum))
        if not flat:
            return ZERO
        if len(flat) == 1:
            return flat[0]
        return Expr("add", args=tuple(flat))
    if e.op == "mul":
        flat = []
        cprod = 1.0
        seen_const = False
        for a in args:
            if a.op == "mul":
                parts = a.args
            else:
                parts = (a,)
            for p in parts:
                if p.op == "const":
                    cprod *= p.value
                    seen_const = True
                else:
                    flat.append(p)
        if seen_const and cprod == 0.0:
            return ZERO
        if len(flat) == 1 and seen_const and flat[0].op == "add":
            # distribute a scalar over a sum when every addend absorbs it
            terms = flat[0].args
            if all(t.op == "const" or (t.op == "mul" and t.args and t.args[0].op == "const")
                   for t in terms):
                out = []
                for t in terms:
                    if t.op == "const":
                        out.append(const(cprod * t.value))
                    else:
                        out.append(Expr("mul", args=(const(cprod * t.args[0].value),) + t.args[1:]))
                return _simplify_once(Expr("add", args=tuple(out)))
        if seen_const and cprod != 1.0:
            flat = [const(cprod)] + flat
        if not flat:
            return ONE
        if len(flat) == 1:
            return flat[0]
        return Expr("mul", args=tuple(flat))
    return Expr(e.op, args=args)


def simplify(e):
    """Constant folding, x*0 / x*1 / x+0 elimination and affine collapsing.

    Evaluation-equivalent (floating-point reassociation aside) and never
    increases the node count.
    """
    cur = e
    for _ in range(node_count(e) + 8):
        nxt = _simplify_once(cur)
        if nxt == cur:
            return cur
        cur = nxt
    return cur


# -- extraction ----------------------------------------------------------------

def _affine_exprs(weights, biases, inputs):
    """Rows of W @ inputs + b as expression trees, skipping exact-zero weights."""
    out = []
    for k in range(weights.shape[0]):
        terms = []
        for j, w in enumerate(weights[k]):
            if w != 0.0:
                terms.append(mul(const(w), inputs[j]))
        if biases[k] != 0.0 or not terms:
            terms.append(const(biases[k]))
        out.append(terms[0] if len(terms) == 1 else add(*terms))
    return out


def extract(net, prune_tol=0.0, const_tol=0.0, var_names=None):
    """Expression trees (one per output) equal to the pruned network.

    Weights below ``prune_tol`` are dropped first.  ``const_tol`` is kept at
    0 by default; a positive value additionally drops additive constants
    smaller than it, trading exactness for brevity.
    """
    if prune_tol > 0:
        net, _ = threshold_weights(net, prune_tol)
    names = var_names or [f"x{i + 1}" for i in range(net.d_in)]
    if len(names) != net.d_in:
        raise ValueError("need one variable name per input")
    exprs = [var(n) for n in names]
    for layer, acts in enumerate(net.activations):
        pre = _affine_exprs(net.weights[layer], net.biases[layer], exprs)
        nxt = []
        j = 0
        for a in acts:
            if a == PRODUCT:
                nxt.append(mul(pre[j], pre[j + 1]))
                j += 2
                continue
            g = pre[j]
            j += 1
            if a == CONST_ONE:
                nxt.append(ONE)
            elif a == IDENTITY:
                nxt.append(g)
            elif a == SQUARE:
                nxt.append(square(g))
            elif a == SINE:
                nxt.append(sin(mul(const(TWO_PI), g)))
            elif a == SIGMOID:
                nxt.append(sigmoid(g))
            elif a == EXP:
                nxt.append(exp(_clamped(g, net.exp_clamp)))
        exprs = nxt
    out = _affine_exprs(net.weights[-1], net.biases[-1], exprs)
    out = [simplify(e) for e in out]
    if const_tol > 0:
        out = [simplify(_drop_small_consts(e, const_tol)) for e in out]
    return out


def _clamped(e, c):
    # c*tanh(v/c) written with the sigmoid primitive: 2c*sigmoid(2v/c) - c
    return add(mul(const(2.0 * c), sigmoid(mul(const(2.0 / c), e))), const(-c))


def _drop_small_consts(e, tol):
    if e.op in ("const", "var"):
        return e
    args = tuple(_drop_small_consts(a, tol) for a in e.args)
    if e.op == "add":
        kept = tuple(a for a in args if not (a.op == "const" and abs(a.value) < tol))
        if not kept:
            return ZERO
        args = kept
    return Expr(e.op, args=args)


# -- whole-model composition -----------------------------------------------------

@dataclass
class BlockExpressions:
    d1: int
    d2: int
    cond_dim: int
    s1: list
    t1: list
    s2: list
    t2: list

    @property
    def width(self):
        return self.d1 + self.d2

    @property
    def u2_names(self):
        return _subnet_names(self.d1, self.width, "u", self.cond_dim)

    @property
    def v1_names(self):
        return _subnet_names(0, self.d1, "v", self.cond_dim)


def _subnet_names(j0, j1, prefix, cond_dim):
    names = [f"{prefix}{i + 1}" for i in range(j0, j1)]
    names += [f"y{i + 1}" for i in range(cond_dim)]
    return names


@dataclass
class InvertibleExpressionSet:
    """Block-by-block closed form of the whole map, forward and inverse.

    ``steps`` alternates ("block", BlockExpressions) and ("perm", array)
    entries in forward order.  The s-expressions are effective (clamped)
    log-scales: the forward template multiplies by exp(s), the inverse
    template divides by it, referencing the very same trees.
    """

    kind: str
    width: int
    pad_count: int = 0
    cond_dim: int = 0
    d_y: int = 0
    steps: list = None

    @property
    def data_dim(self):
        return self.width - self.pad_count

    def evaluate_forward(self, x, cond=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise ValueError(f"expected {self.data_dim} data columns")
        h = np.hstack([x, np.zeros((x.shape[0], self.pad_count))])
        if cond is not None:
            cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        for tag, payload in self.steps:
            if tag == "perm":
                h = h[:, payload]
                continue
            b = payload
            u1, u2 = h[:, :b.d1], h[:, b.d1:]
            args2 = u2 if cond is None else np.hstack([u2, cond])
            a1 = _eval_rows(b.s1, args2, b.u2_names)
            v1 = u1 * np.exp(a1) + _eval_rows(b.t1, args2, b.u2_names)
            args1 = v1 if cond is None else np.hstack([v1, cond])
            a2 = _eval_rows(b.s2, args1, b.v1_names)
            o2 = u2 * np.exp(a2) + _eval_rows(b.t2, args1, b.v1_names)
            h = np.hstack([v1, o2])
        return h

    def evaluate_inverse(self, o, cond=None):
        h = np.atleast_2d(np.asarray(o, dtype=np.float64))
        if h.shape[1] != self.width:
            raise ValueError(f"expected {self.width} columns")
        if cond is not None:
            cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        for tag, payload in reversed(self.steps):
            if tag == "perm":
                h = h[:, np.argsort(payload)]
                continue
            b = payload
            o1, o2 = h[:, :b.d1], h[:, b.d1:]
            args1 = o1 if cond is None else np.hstack([o1, cond])
            u2 = (o2 - _eval_rows(b.t2, args1, b.v1_names)) * np.exp(-_eval_rows(b.s2, args1, b.v1_names))
            args2 = u2 if cond is None else np.hstack([u2, cond])
            u1 = (o1 - _eval_rows(b.t1, args2, b.u2_names)) * np.exp(-_eval_rows(b.s1, args2, b.u2_names))
            h = np.hstack([u1, u2])
        return h[:, :self.data_dim]

    # -- presentation -----------------------------------------------------------

    def render_text(self):
        lines = []
        head = {"flow": "z = f(x)", "isr": "[y, z] = f(x)", "cisr": "z = f(x; y)"}[self.kind]
        lines.append(f"forward map: {head}")
        lines.append("  u = x" + (f" padded with {self.pad_count} zero(s)" if self.pad_count else ""))
        blocks = [p for t, p in self.steps if t == "block"]
        bi = 0
        for tag, payload in self.steps:
            if tag == "perm":
                lines.append(f"  u = o shuffled by permutation {list(payload)}")
                continue
            bi += 1
            b = payload
            if len(blocks) > 1:
                lines.append(f"  block {bi}:")
            pad = "    " if len(blocks) > 1 else "  "
            u2n = _vec_name("u", b.d1, b.width)
            v1n = _vec_name("v", 0, b.d1)
            ctx = ", y" if self.cond_dim else ""
            for i, e in enumerate(b.s1):
                lines.append(f"{pad}{_comp('s1', i, b.d1)}({u2n}{ctx}) = {render_expression(e)}")
            for i, e in enumerate(b.t1):
                lines.append(f"{pad}{_comp('t1', i, b.d1)}({u2n}{ctx}) = {render_expression(e)}")
            lines.append(f"{pad}v1 = u1 * exp(s1({u2n}{ctx})) + t1({u2n}{ctx})")
            lines.append(f"{pad}v2 = u2")
            for i, e in enumerate(b.s2):
                lines.append(f"{pad}{_comp('s2', i, b.d2)}({v1n}{ctx}) = {render_expression(e)}")
            for i, e in enumerate(b.t2):
                lines.append(f"{pad}{_comp('t2', i, b.d2)}({v1n}{ctx}) = {render_expression(e)}")
            lines.append(f"{pad}o1 = v1")
            lines.append(f"{pad}o2 = v2 * exp(s2({v1n}{ctx})) + t2({v1n}{ctx})")
        if self.kind == "isr":
            lines.append(f"  y = o[1..{self.d_y}], z = o[{self.d_y + 1}..{self.width}]")
        else:
            lines.append("  z = o")
        lines.append("")
        lines.append("inverse map (same subnetwork expressions, never inverted):")
        lines.append("  o = " + ("[y, z]" if self.kind == "isr" else "z"))
        for bi in range(len(blocks), 0, -1):
            pad = "    " if len(blocks) > 1 else "  "
            if len(blocks) > 1:
                lines.append(f"  block {bi} (inverted):")
            ctx = ", y" if self.cond_dim else ""
            lines.append(f"{pad}u2 = (o2 - t2(o1{ctx})) / exp(s2(o1{ctx}))")
            lines.append(f"{pad}u1 = (o1 - t1(u2{ctx})) / exp(s1(u2{ctx}))")
        lines.append("  x = u" + (" with padded slot(s) dropped" if self.pad_count else ""))
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        steps = []
        for tag, payload in self.steps:
            if tag == "perm":
                steps.append({"type": "permutation", "perm": [int(i) for i in payload]})
            else:
                steps.append({
                    "type": "block",
                    "d1": payload.d1,
                    "d2": payload.d2,
                    "s1": [expr_to_json(e) for e in payload.s1],
                    "t1": [expr_to_json(e) for e in payload.t1],
                    "s2": [expr_to_json(e) for e in payload.s2],
                    "t2": [expr_to_json(e) for e in payload.t2],
                })
        return {
            "kind": self.kind,
            "width": self.width,
            "pad_count": self.pad_count,
            "cond_dim": self.cond_dim,
            "d_y": self.d_y,
            "steps": steps,
        }

    @classmethod
    def from_json_dict(cls, d):
        steps = []
        for s in d["steps"]:
            if s["type"] == "permutation":
                steps.append(("perm", np.asarray(s["perm"], dtype=np.intp)))
            else:
                steps.append(("block", BlockExpressions(
                    s["d1"], s["d2"], d["cond_dim"],
                    [expr_from_json(e) for e in s["s1"]],
                    [expr_from_json(e) for e in s["t1"]],
                    [expr_from_json(e) for e in s["s2"]],
                    [expr_from_json(e) for e in s["t2"]],
                )))
        return cls(d["kind"], d["width"], d["pad_count"], d["cond_dim"], d["d_y"], steps)


def _eval_rows(exprs, args, names):
    binds = {nm: args[:, i] for i, nm in enumerate(names)}
    cols = [np.broadcast_to(eval_expression(e, binds), args.shape[0]).astype(float) for e in exprs]
    return np.column_stack(cols)


def _comp(tag, i, d):
    return tag if d == 1 else f"{tag}_{i + 1}"


def _vec_name(prefix, j0, j1):
    if j1 - j0 == 1:
        return f"{prefix}{j0 + 1}"
    return prefix + "(" + ",".join(f"{prefix}{j + 1}" for j in range(j0, j1)) + ")"


def compose_model(m, prune_tol=0.0):
    """Full symbolic form of a model (or bare stack): per-block expressions
    for s1, t1, s2, t2 plus permutation steps, with evaluable forward and
    inverse chains."""
    stack = m if isinstance(m, InvertibleStack) else m.stack
    kind = getattr(m, "kind", "flow")
    d_y = getattr(m, "d_y", 0) if kind == "isr" else 0
    steps = []
    for layer in stack.layers:
        if isinstance(layer, PermutationLayer):
            steps.append(("perm", layer.perm.copy()))
            continue
        b: CouplingBlock = layer
        arg2 = _subnet_names(b.d1, b.width, "u", b.cond_dim)
        arg1 = _subnet_names(0, b.d1, "v", b.cond_dim)
        s1 = [simplify(_clamped(e, b.clamp))
              for e in extract(b.s1, prune_tol, var_names=arg2)]
        t1 = extract(b.t1, prune_tol, var_names=arg2)
        s2 = [simplify(_clamped(e, b.clamp))
              for e in extract(b.s2, prune_tol, var_names=arg1)]
        t2 = extract(b.t2, prune_tol, var_names=arg1)
        steps.append(("block", BlockExpressions(b.d1, b.d2, b.cond_dim, s1, t1, s2, t2)))
    return InvertibleExpressionSet(
        kind=kind,
        width=stack.width,
        pad_count=stack.pad_count,
        cond_dim=stack.cond_dim,
        d_y=d_y,
        steps=steps,
    )


# -- rendering / serialization ----------------------------------------------------

def _fmt(c, precision=3):
    if c == int(c) and abs(c) < 1e12:
        return str(int(c))
    return f"{c:.{precision}g}"


def render_expression(e, precision=3):
    """Human-readable form, constants rounded to ``precision`` significant digits."""
    if e.op == "const":
        return _fmt(e.value, precision)
    if e.op == "var":
        return e.name
    if e.op == "add":
        out = render_expression(e.args[0], precision)
        for a in e.args[1:]:
            s = render_expression(a, precision)
            if s.startswith("-"):
                out += " - " + s[1:]
            else:
                out += " + " + s
        return out
    if e.op == "mul":
        parts = []
        for a in e.args:
            s = render_expression(a, precision)
            parts.append(f"({s})" if a.op == "add" else s)
        return "*".join(parts)
    if e.op == "square":
        inner = render_expression(e.args[0], precision)
        if e.args[0].op in ("var", "const"):
            return f"{inner}^2"
        return f"({inner})^2"
    return f"{e.op}({render_expression(e.args[0], precision)})"


def expr_to_json(e):
    if e.op == "const":
        return {"op": "const", "value": e.value}
    if e.op == "var":
        return {"op": "var", "name": e.name}
    return {"op": e.op, "args": [expr_to_json(a) for a in e.args]}


def expr_from_json(d):
    if d["op"] == "const":
        return const(d["value"])
    if d["op"] == "var":
        return var(d["name"])
    return Expr(d["op"], args=tuple(expr_from_json(a) for a in d["args"]))


def expression_set_to_json(es, path=None):
    text = json.dumps(es.to_json_dict(), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text
