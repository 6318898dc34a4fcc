import math

import numpy as np
import pytest

from isrflow.autodiff import Tape, finite_difference_check
from isrflow.eql import EqlNetwork


def scalar(v):
    return np.asarray(float(v))


def test_forward_square():
    t = Tape()
    w = t.param("w", scalar(3.0))
    out = t.mark_output(t.square(w))
    assert t.forward_eval()[0] == 9.0


def test_forward_product():
    t = Tape()
    a = t.param("a", scalar(2.0))
    b = t.param("b", scalar(5.0))
    assert float(t.value(t.mul(a, b))) == 10.0


def test_forward_scaled_sine():
    t = Tape()
    w = t.param("w", scalar(0.25))
    out = t.sin(w, 2.0 * math.pi)
    assert float(t.value(out)) == pytest.approx(1.0, abs=1e-12)


def test_backward_square():
    t = Tape()
    w = t.param("w", scalar(3.0))
    loss = t.square(w)
    assert float(t.backward(loss)["w"]) == pytest.approx(6.0)


def test_backward_product():
    t = Tape()
    a = t.param("a", scalar(2.0))
    b = t.param("b", scalar(5.0))
    g = t.backward(t.mul(a, b))
    assert float(g["a"]) == 5.0
    assert float(g["b"]) == 2.0


def test_backward_sine_chain_rule():
    t = Tape()
    w = t.param("w", scalar(0.0))
    g = t.backward(t.sin(w, 2.0 * math.pi))
    assert float(g["w"]) == pytest.approx(2.0 * math.pi, rel=1e-12)


def test_backward_requires_scalar_loss():
    t = Tape()
    w = t.param("w", np.ones(3))
    out = t.square(w)
    with pytest.raises(ValueError, match="scalar"):
        t.backward(out)


def test_unbound_input_rejected():
    t = Tape()
    t.input("x")
    with pytest.raises(ValueError, match="unbound"):
        t.forward_eval()


def test_building_on_unbound_input_rejected():
    t = Tape()
    x = t.input("x")
    with pytest.raises(ValueError, match="no value"):
        t.square(x)


def test_nonfinite_intermediate_reported_with_node():
    t = Tape()
    x = t.input("x", scalar(1.0))
    t.mark_output(t.log(x))
    with pytest.raises(FloatingPointError, match="node"):
        t.forward_eval({"x": scalar(-1.0)})


def test_unreachable_param_gets_zero_gradient():
    t = Tape()
    a = t.param("a", scalar(1.0))
    t.param("b", np.ones(4))
    g = t.backward(t.square(a))
    assert np.array_equal(g["b"], np.zeros(4))


def test_fd_check_linear_loss_is_exact():
    t = Tape()
    w = t.param("w", np.array([1.0, -2.0, 0.5]))
    loss = t.sum(t.scale(w, 3.0))
    assert finite_difference_check(t, loss, step=1e-5) < 1e-10


def test_fd_check_random_eql_loss():
    rng = np.random.default_rng(0)
    net = EqlNetwork.init(3, 2, hidden_layers=2, rng=rng)
    x = rng.standard_normal((4, 3))
    t = Tape()
    out = net.forward_on_tape(t, t.input("x", x), "net")
    loss = t.sum(t.square(out))
    assert finite_difference_check(t, loss, step=1e-5) < 1e-4


def test_fd_check_clamped_exp_interior():
    t = Tape()
    w = t.param("w", np.array([0.3, -0.8, 1.4]))
    loss = t.sum(t.exp(t.soft_clamp(w, 2.0)))
    assert finite_difference_check(t, loss, step=1e-5) < 1e-4
    t = Tape()
    w = t.param("w", np.array([0.3, -0.8, 1.4]))
    loss = t.sum(t.exp(t.hard_clamp(w, 2.0)))
    assert finite_difference_check(t, loss, step=1e-5) < 1e-4


def _random_composition_loss(rng):
    """A tape exercising every supported op with random parameters."""
    t = Tape()
    n, d = 3, 4
    x = t.input("x", rng.standard_normal((n, d)))
    w = t.param("w", rng.standard_normal((d, d)) * 0.4)
    b = t.param("b", rng.standard_normal(d) * 0.2)
    c = t.param("c", rng.standard_normal((n, d)) * 0.5)
    h = t.affine(x, w, b)
    h = t.add(t.mul(h, c), t.sin(h, 2.0 * math.pi))
    h = t.concat_cols([
        t.sigmoid(t.slice_cols(h, 0, 2)),
        t.exp(t.soft_clamp(t.slice_cols(h, 2, 4), 2.0)),
    ])
    h = t.permute_cols(h, [2, 0, 3, 1])
    h = t.sub(t.square(h), t.scale(h, 0.7))
    h = t.add_const(h, 0.1)
    h = t.add(h, t.log(t.add_const(t.square(c), 1.0)))
    h = t.add(h, t.hard_clamp(c, 0.4))
    h = t.add(h, t.l05(c, 0.05))
    return t, t.sum(h)


def test_gradient_correctness_over_random_compositions():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        t, loss = _random_composition_loss(rng)
        worst = max(worst, finite_difference_check(t, loss, step=1e-5))
    assert worst < 1e-4


def test_backward_linearity():
    rng = np.random.default_rng(5)
    t = Tape()
    w = t.param("w", rng.standard_normal(6))
    l1 = t.sum(t.square(w))
    l2 = t.sum(t.sin(w, 2.0 * math.pi))
    a, b = 0.7, -1.3
    combo = t.add(t.scale(l1, a), t.scale(l2, b))
    g1 = t.backward(l1)["w"]
    g2 = t.backward(l2)["w"]
    gc = t.backward(combo)["w"]
    assert np.max(np.abs(gc - (a * g1 + b * g2))) < 1e-12


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(9)
    t, loss = _random_composition_loss(rng)
    g1 = t.backward(loss)
    g2 = t.backward(loss)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_repeat_backward_identical_after_reeval():
    t = Tape()
    w = t.param("w", scalar(1.5))
    loss = t.mul(t.square(w), t.sin(w, 1.0))
    g1 = float(t.backward(loss)["w"])
    t.forward_eval()
    g2 = float(t.backward(loss)["w"])
    assert g1 == g2


def test_param_registration_idempotent():
    t = Tape()
    arr = np.ones(2)
    assert t.param("w", arr) == t.param("w", arr)


def test_outputs_returned_in_declaration_order():
    t = Tape()
    a = t.param("a", scalar(2.0))
    t.mark_output(t.square(a))
    t.mark_output(t.scale(a, 10.0))
    outs = t.forward_eval()
    assert float(outs[0]) == 4.0 and float(outs[1]) == 20.0
