"""Built-in invariant battery behind ``isrflow selftest``.

A compact, dependency-free re-check of the core guarantees: gradient
correctness, invertibility, log-Jacobian consistency, extraction
faithfulness and metric identities.  Prints one line per suite and
returns a nonzero exit code on any failure.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tape, finite_difference_check
from .bench import mmd, rejection_sample, resim_error, kinematics_forward
from .coupling import InvertibleStack
from .flows import CisrModel, FlowModel, IsrModel
from .symbolic import compose_model


def _perturbed(width, blocks, seed, cond_dim=0):
    stack = InvertibleStack.build(width, blocks, cond_dim=cond_dim, seed=seed, init_gain=0.05)
    rng = np.random.default_rng(seed + 500)
    for _, arr in stack.param_items():
        arr += rng.standard_normal(arr.shape) * 0.03
    return stack


def _suite_gradients():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(10):
        stack = _perturbed(3, 1, trial)
        m = FlowModel(stack)
        x = rng.standard_normal((4, 3))
        tape = Tape()
        worst = max(worst, finite_difference_check(tape, m.nll_on_tape(tape, x), step=1e-5))
    return worst < 1e-4, f"max fd error {worst:.2e} (tol 1e-4)"


def _suite_invertibility():
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(50):
        width = int(rng.integers(2, 7))
        stack = _perturbed(width, int(rng.integers(1, 5)), 100 + trial)
        x = rng.standard_normal((3, width))
        out, _ = stack.forward(x)
        worst = max(worst, np.max(np.abs(stack.inverse(out) - x)))
    return worst < 1e-9, f"max roundtrip error {worst:.2e} (tol 1e-9)"


def _suite_logdet():
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(10):
        width = int(rng.integers(2, 5))
        stack = _perturbed(width, 2, 300 + trial)
        x = rng.standard_normal(width)
        _, logdet = stack.forward(x[None])
        jac = np.zeros((width, width))
        h = 1e-6
        for j in range(width):
            e = np.zeros(width)
            e[j] = h
            hi, _ = stack.forward((x + e)[None])
            lo, _ = stack.forward((x - e)[None])
            jac[:, j] = (hi[0] - lo[0]) / (2 * h)
        worst = max(worst, abs(float(logdet[0]) - np.linalg.slogdet(jac)[1]))
    return worst < 1e-4, f"max |logdet - numeric| {worst:.2e} (tol 1e-4)"


def _suite_extraction():
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(5):
        stack = _perturbed(3, 2, 400 + trial)
        es = compose_model(FlowModel(stack))
        x = rng.standard_normal((100, 3))
        out, _ = stack.forward(x)
        worst = max(worst, np.max(np.abs(es.evaluate_forward(x) - out)))
        back = es.evaluate_inverse(es.evaluate_forward(x))
        worst = max(worst, np.max(np.abs(back - x)))
    return worst < 1e-6, f"max extraction error {worst:.2e} (tol 1e-6)"


def _suite_metrics():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((500, 4))
    ident = mmd(a, a)
    sym = abs(mmd(a[:200], a[200:]) - mmd(a[200:], a[:200]))
    samples, _ = rejection_sample((0.0, 1.5), 0.1, 100, seed=5, batch=1 << 14)
    resim = resim_error(samples, (0.0, 1.5))
    ok = ident <= 1e-6 and sym < 1e-12 and resim <= 0.1 ** 2
    return ok, f"mmd(A,A)={ident:.2e}, asymmetry={sym:.2e}, oracle resim={resim:.2e}"


def _suite_conditional():
    rng = np.random.default_rng(6)
    stack = _perturbed(3, 2, 700, cond_dim=2)
    m = CisrModel(stack)
    y = rng.standard_normal(2)
    xs = m.sample_posterior(y, 8, seed=7)
    z, _ = m.forward(xs, np.tile(y, (8, 1)))
    expect = np.random.default_rng(np.random.SeedSequence(7)).standard_normal((8, 3))
    worst = np.max(np.abs(z - expect))
    return worst < 1e-9, f"conditional roundtrip {worst:.2e} (tol 1e-9)"


SUITES = [
    ("gradients", _suite_gradients),
    ("invertibility", _suite_invertibility),
    ("log-jacobian", _suite_logdet),
    ("extraction", _suite_extraction),
    ("metrics", _suite_metrics),
    ("conditional", _suite_conditional),
]


def run_selftest():
    failures = 0
    for name, fn in SUITES:
        ok, detail = fn()
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} suite(s) failed")
        return 1
    print("all suites passed")
    return 0
