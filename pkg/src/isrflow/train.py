"""Adam training loop with a geometric learning-rate schedule and phased
sparsity regularization.

The sparsity weight follows four phases over the epoch budget: off during
warmup, a linear ramp up to the configured weight, a hold, then a hard
threshold that zeroes small weights and freezes them for the remaining
fine-tuning epochs.  A final threshold pass guarantees no weight is left
with 0 < |w| < prune_tol.

Everything is deterministic given (seed, config, dataset): batch shuffles
draw from per-epoch seed streams and gradient reductions are ordered.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .eql import l05_penalty_on_tape


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    schedule: str = "geometric"        # or "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    reg_weight: float = 0.0            # sparsity weight (lambda)
    reg_warmup: float = 0.25           # epoch fraction with lambda = 0
    reg_ramp: float = 0.25             # epoch fraction to ramp 0 -> lambda
    threshold_at: float = 0.85         # epoch fraction at which weights are pruned
    prune_tol: float = 0.0             # 0 disables pruning
    l05_a: float = 0.05
    seed: int = 0
    checkpoint_every: int = 0          # epochs; 0 disables
    total_steps: int = None            # filled in by train()

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("geometric", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    penalty: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def final_loss(self):
        return self.records[-1].loss if self.records else float("nan")

    def to_csv(self, path, include_seconds=False):
        # wall time is excluded by default so artifacts stay byte-reproducible
        cols = ["epoch", "loss", "penalty", "lr"] + (["seconds"] if include_seconds else [])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                row = [str(r.epoch), repr(r.loss), repr(r.penalty), repr(r.lr)]
                if include_seconds:
                    row.append(repr(r.seconds))
                fh.write(",".join(row) + "\n")


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite parameter snapshot."""

    def __init__(self, message, epoch, last_good):
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good


def lr_at(config, step):
    """Learning rate at a global step: geometric interpolation from lr_start
    (step 0) to lr_end (final step)."""
    if config.schedule == "constant":
        return config.lr_start
    if config.total_steps is None:
        raise ValueError("config.total_steps is unset; call within train() or set it")
    span = max(1, config.total_steps - 1)
    frac = min(max(step / span, 0.0), 1.0)
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


def adam_init(params):
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard Adam update with bias correction, applied in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {k}", -1, None)
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def reg_weight_at(config, epoch):
    """Phased sparsity weight: 0 during warmup, linear ramp, then flat."""
    if config.reg_weight <= 0 or config.epochs == 0:
        return 0.0
    frac = epoch / config.epochs
    if frac < config.reg_warmup:
        return 0.0
    if config.reg_ramp > 0 and frac < config.reg_warmup + config.reg_ramp:
        return config.reg_weight * (frac - config.reg_warmup) / config.reg_ramp
    return config.reg_weight


def _apply_masks(params, masks, state=None):
    for k, mask in masks.items():
        params[k][mask] = 0.0
        if state is not None:
            state["m"][k][mask] = 0.0
            state["v"][k][mask] = 0.0


def _threshold_params(params, tol):
    """Returns bool masks of entries zeroed at |w| < tol."""
    masks = {}
    for k, p in params.items():
        mask = np.abs(p) < tol
        p[mask] = 0.0
        masks[k] = mask
    return masks


def train(model, data, config, checkpoint_cb=None):
    """Train a flow/ISR/cISR model in place; returns (model, TrainHistory).

    ``data`` is ``(X,)`` for flows and ``(X, Y)`` for supervised and
    conditional models.  Non-finite losses abort with the previous epoch's
    weights attached to the exception.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in data]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("dataset arrays must share the leading dimension")
    params = dict(model.param_items())
    n_batches = max(1, (n + config.batch_size - 1) // config.batch_size)
    cfg = replace(config, total_steps=max(1, config.epochs * n_batches))
    state = adam_init(params)
    history = TrainHistory()
    masks = None
    threshold_epoch = None
    if cfg.prune_tol > 0 and cfg.threshold_at is not None:
        threshold_epoch = min(cfg.epochs, max(0, int(round(cfg.threshold_at * cfg.epochs))))
    step = 0
    for epoch in range(cfg.epochs):
        last_good = {k: p.copy() for k, p in params.items()}
        t0 = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
        lam = reg_weight_at(cfg, epoch)
        loss_sum = 0.0
        pen_sum = 0.0
        lr = cfg.lr_start
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [a[idx] for a in arrays]
            tape = Tape()
            nll_node = model.nll_on_tape(tape, *batch)
            loss_node = nll_node
            pen_val = 0.0
            if lam > 0.0:
                pen_node = l05_penalty_on_tape(tape, model.param_items(), cfg.l05_a)
                loss_node = tape.add(loss_node, tape.scale(pen_node, lam))
                pen_val = float(tape.value(pen_node))
            loss_val = float(tape.value(loss_node))
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}", epoch, last_good
                )
            grads = tape.backward(loss_node)
            if masks is not None:
                for k, mask in masks.items():
                    grads[k][mask] = 0.0
            lr = lr_at(cfg, step)
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            if masks is not None:
                _apply_masks(params, masks, state)
            loss_sum += loss_val
            pen_sum += pen_val
            step += 1
        if threshold_epoch is not None and epoch + 1 == threshold_epoch and masks is None:
            masks = _threshold_params(params, cfg.prune_tol)
            _apply_masks(params, masks, state)
        history.append(EpochRecord(
            epoch, loss_sum / n_batches, pen_sum / n_batches, lr,
            time.perf_counter() - t0,
        ))
        if checkpoint_cb and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            checkpoint_cb(epoch, model)
    if threshold_epoch is not None and cfg.epochs > 0:
        _threshold_params(params, cfg.prune_tol)
    return model, history
