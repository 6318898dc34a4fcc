"""Invertible affine coupling blocks and stacks.

A block splits its input u into halves (u1, u2), then applies

    v1 = u1 * exp(s1(u2)) + t1(u2)
    o2 = u2 * exp(s2(v1)) + t2(v1)

with equation-learner subnetworks s1, t1, s2, t2.  The scale outputs are
soft-clamped to (-C, C) before exponentiation, which also bounds each
coordinate's log-Jacobian contribution.  Inversion solves the same two
equations backwards, so the subnetworks themselves are only ever run
forward and both directions cost the same subnetwork evaluations.

A stack alternates blocks with fixed random permutations and owns the
zero-padding used to lift one-dimensional inputs to the minimum width 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eql import DEFAULT_LIBRARY, EqlNetwork, soft_clamp


def pad_input(x, pad_count):
    """Append ``pad_count`` zero columns (trailing coordinates)."""
    if pad_count < 0:
        raise ValueError("pad_count must be >= 0")
    if pad_count == 0:
        return np.asarray(x, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.hstack([x, np.zeros((x.shape[0], pad_count))])


def pad_penalty(outputs, pad_count):
    """Mean squared value of the trailing padded coordinates of ``outputs``."""
    if pad_count == 0:
        return 0.0
    outputs = np.atleast_2d(outputs)
    return float(np.mean(outputs[:, outputs.shape[1] - pad_count:] ** 2))


@dataclass
class PermutationLayer:
    """Fixed permutation of coordinates; volume preserving (logdet 0)."""

    perm: np.ndarray
    inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.intp)
        if sorted(self.perm.tolist()) != list(range(len(self.perm))):
            raise ValueError("not a permutation")
        self.inv = np.argsort(self.perm)

    @classmethod
    def random(cls, width, seed):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        return cls(rng.permutation(width))

    @property
    def width(self):
        return len(self.perm)

    def forward(self, x):
        return np.asarray(x)[..., self.perm]

    def inverse(self, x):
        return np.asarray(x)[..., self.inv]


@dataclass
class CouplingBlock:
    s1: EqlNetwork
    t1: EqlNetwork
    s2: EqlNetwork
    t2: EqlNetwork
    d1: int
    d2: int
    clamp: float = 2.0

    def __post_init__(self):
        if self.clamp <= 0:
            raise ValueError("clamp must be > 0")
        cond = self.cond_dim
        if cond < 0:
            raise ValueError("subnet input narrower than its split")
        for net, din, dout in (
            (self.s1, self.d2, self.d1),
            (self.t1, self.d2, self.d1),
            (self.s2, self.d1, self.d2),
            (self.t2, self.d1, self.d2),
        ):
            if net.d_in != din + cond or net.d_out != dout:
                raise ValueError(
                    f"subnet dims {net.d_in}->{net.d_out} incompatible with splits "
                    f"({self.d1},{self.d2}) and condition width {cond}"
                )

    @classmethod
    def build(cls, width, subnet_layers=2, library=DEFAULT_LIBRARY, clamp=2.0, cond_dim=0,
              rng=None, init_gain=0.0):
        """Standard split d1 = floor(width/2), d2 = width - d1.

        ``init_gain`` scales the subnet output layers; the default 0 makes a
        fresh block the identity (s = t = 0), so stacks of any depth start
        numerically tame and exactly invertible."""
        rng = np.random.default_rng(rng)
        d1 = width // 2
        d2 = width - d1
        mk = lambda din, dout: EqlNetwork.init(
            din + cond_dim, dout, subnet_layers, library, rng=rng, exp_clamp=clamp,
            out_scale=init_gain,
        )
        return cls(mk(d2, d1), mk(d2, d1), mk(d1, d2), mk(d1, d2), d1, d2, clamp=clamp)

    @property
    def width(self):
        return self.d1 + self.d2

    @property
    def cond_dim(self):
        return self.s1.d_in - self.d2

    def subnets(self):
        return {"s1": self.s1, "t1": self.t1, "s2": self.s2, "t2": self.t2}

    def param_items(self, prefix):
        items = []
        for tag, net in self.subnets().items():
            items.extend(net.param_items(f"{prefix}.{tag}"))
        return items

    def _with_cond(self, v, cond):
        return v if cond is None else np.hstack([v, cond])

    def forward(self, u, cond=None):
        """Returns (output, per-sample logdet)."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        if u.shape[1] != self.width:
            raise ValueError(f"expected width {self.width}, got {u.shape[1]}")
        u1, u2 = u[:, :self.d1], u[:, self.d1:]
        h2 = self._with_cond(u2, cond)
        a1 = soft_clamp(self.s1.forward(h2), self.clamp)
        v1 = u1 * np.exp(a1) + self.t1.forward(h2)
        h1 = self._with_cond(v1, cond)
        a2 = soft_clamp(self.s2.forward(h1), self.clamp)
        o2 = u2 * np.exp(a2) + self.t2.forward(h1)
        out = np.hstack([v1, o2])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite coupling output")
        return out, a1.sum(axis=1) + a2.sum(axis=1)

    def inverse(self, o, cond=None):
        o = np.atleast_2d(np.asarray(o, dtype=np.float64))
        if o.shape[1] != self.width:
            raise ValueError(f"expected width {self.width}, got {o.shape[1]}")
        o1, o2 = o[:, :self.d1], o[:, self.d1:]
        h1 = self._with_cond(o1, cond)
        a2 = soft_clamp(self.s2.forward(h1), self.clamp)
        u2 = (o2 - self.t2.forward(h1)) * np.exp(-a2)
        h2 = self._with_cond(u2, cond)
        a1 = soft_clamp(self.s1.forward(h2), self.clamp)
        u1 = (o1 - self.t1.forward(h2)) * np.exp(-a1)
        return np.hstack([u1, u2])

    def forward_on_tape(self, tape, u, prefix, cond=None):
        """Tape version; returns (output node, logdet-sum node over batch and coords)."""
        u1 = tape.slice_cols(u, 0, self.d1)
        u2 = tape.slice_cols(u, self.d1, self.width)
        h2 = u2 if cond is None else tape.concat_cols([u2, cond])
        a1 = tape.soft_clamp(self.s1.forward_on_tape(tape, h2, f"{prefix}.s1"), self.clamp)
        v1 = tape.add(tape.mul(u1, tape.exp(a1)), self.t1.forward_on_tape(tape, h2, f"{prefix}.t1"))
        h1 = v1 if cond is None else tape.concat_cols([v1, cond])
        a2 = tape.soft_clamp(self.s2.forward_on_tape(tape, h1, f"{prefix}.s2"), self.clamp)
        o2 = tape.add(tape.mul(u2, tape.exp(a2)), self.t2.forward_on_tape(tape, h1, f"{prefix}.t2"))
        out = tape.concat_cols([v1, o2])
        logdet = tape.add(tape.sum(a1), tape.sum(a2))
        return out, logdet


@dataclass
class InvertibleStack:
    """Ordered sequence of coupling blocks and permutation layers.

    ``width`` includes ``pad_count`` trailing zero-padded slots; the public
    forward/inverse accept data of width ``width - pad_count`` and pad or
    drop those slots internally.
    """

    width: int
    layers: list
    pad_count: int = 0
    pad_weight: float = 1.0
    cond_dim: int = 0

    def __post_init__(self):
        if not 0 <= self.pad_count < self.width:
            raise ValueError("pad_count must be in [0, width)")
        for layer in self.layers:
            if layer.width != self.width:
                raise ValueError("all layers must match the stack width")
            if isinstance(layer, CouplingBlock) and layer.cond_dim != self.cond_dim:
                raise ValueError("block condition width must match the stack")

    @classmethod
    def build(cls, data_dim, n_blocks, subnet_layers=2, library=DEFAULT_LIBRARY,
              clamp=2.0, cond_dim=0, seed=0, pad_weight=1.0, init_gain=0.0):
        """Alternating [block, perm, block, ...]; permutation seeds derive from
        (seed, layer index), so runs reproduce exactly.  One-dimensional data is
        zero-padded up to width 2."""
        pad = 1 if data_dim == 1 else 0
        width = data_dim + pad
        layers = []
        for i in range(n_blocks):
            if i > 0:
                layers.append(PermutationLayer.random(width, [seed, 2 * i - 1]))
            rng = np.random.default_rng(np.random.SeedSequence([seed, 2 * i]))
            layers.append(CouplingBlock.build(width, subnet_layers, library, clamp,
                                              cond_dim, rng, init_gain=init_gain))
        return cls(width, layers, pad_count=pad, pad_weight=pad_weight, cond_dim=cond_dim)

    @property
    def data_dim(self):
        return self.width - self.pad_count

    def blocks(self):
        return [l for l in self.layers if isinstance(l, CouplingBlock)]

    def param_items(self):
        items = []
        b = 0
        for layer in self.layers:
            if isinstance(layer, CouplingBlock):
                items.extend(layer.param_items(f"block{b}"))
                b += 1
        return items

    def params_finite(self):
        return all(np.all(np.isfinite(arr)) for _, arr in self.param_items())

    def forward(self, x, cond=None):
        """Data (n, data_dim) -> (full-width output, per-sample logdet)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise ValueError(f"expected {self.data_dim} data columns, got {x.shape[1]}")
        h = pad_input(x, self.pad_count)
        logdet = np.zeros(h.shape[0])
        for layer in self.layers:
            if isinstance(layer, CouplingBlock):
                h, ld = layer.forward(h, cond)
                logdet += ld
            else:
                h = layer.forward(h)
        return h, logdet

    def inverse(self, o, cond=None):
        """Full-width output -> data (padded slots dropped)."""
        h = np.atleast_2d(np.asarray(o, dtype=np.float64))
        if h.shape[1] != self.width:
            raise ValueError(f"expected {self.width} columns, got {h.shape[1]}")
        for layer in reversed(self.layers):
            if isinstance(layer, CouplingBlock):
                h = layer.inverse(h, cond)
            else:
                h = layer.inverse(h)
        return h[:, :self.data_dim]

    def forward_on_tape(self, tape, x, cond=None):
        """Tape version over a data-width input node.  Returns
        (full-width output node, summed-logdet node, pad-penalty node or None)."""
        n = tape.value(x).shape[0]
        h = x
        if self.pad_count:
            h = tape.concat_cols([x, tape.const(np.zeros((n, self.pad_count)))])
        logdet = None
        b = 0
        for layer in self.layers:
            if isinstance(layer, CouplingBlock):
                h, ld = layer.forward_on_tape(tape, h, f"block{b}", cond)
                logdet = ld if logdet is None else tape.add(logdet, ld)
                b += 1
            else:
                h = tape.permute_cols(h, layer.perm)
        if logdet is None:
            logdet = tape.const(0.0)
        penalty = None
        if self.pad_count:
            pads = tape.slice_cols(h, self.width - self.pad_count, self.width)
            penalty = tape.scale(tape.sum(tape.square(pads)), 1.0 / (n * self.pad_count))
        return h, logdet, penalty
