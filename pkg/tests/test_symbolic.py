import json
import math

import numpy as np
import pytest

from isrflow.coupling import CouplingBlock, InvertibleStack
from isrflow.eql import EqlNetwork
from isrflow.flows import FlowModel, IsrModel
from isrflow.symbolic import (
    InvertibleExpressionSet,
    add,
    compose_model,
    const,
    eval_expression,
    expr_from_json,
    expr_to_json,
    expression_set_to_json,
    extract,
    mul,
    node_count,
    render_expression,
    sigmoid,
    simplify,
    sin,
    square,
    var,
)


def random_expr(rng, depth=3):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return const(float(rng.normal()))
        return var(f"x{rng.integers(1, 4)}")
    op = rng.choice(["add", "mul", "square", "sin", "sigmoid"])
    if op in ("add", "mul"):
        kids = [random_expr(rng, depth - 1) for _ in range(rng.integers(2, 4))]
        return add(*kids) if op == "add" else mul(*kids)
    kid = random_expr(rng, depth - 1)
    return {"square": square, "sin": sin, "sigmoid": sigmoid}[op](kid)


def random_bindings(rng):
    return {f"x{i}": rng.standard_normal(7) for i in range(1, 4)}


# -- evaluation ----------------------------------------------------------------

def test_eval_constant():
    assert eval_expression(const(2.5), {}) == 2.5


def test_eval_quarter_period_sine():
    e = sin(mul(const(2.0 * math.pi), const(0.25)))
    assert eval_expression(e, {}) == pytest.approx(1.0, abs=1e-12)


def test_eval_unbound_variable():
    with pytest.raises(KeyError, match="unbound"):
        eval_expression(var("u9"), {})


# -- extraction ----------------------------------------------------------------

def test_extract_all_zero_net_is_bias_constant():
    net = EqlNetwork.init(2, 1, hidden_layers=2, rng=np.random.default_rng(0))
    for arr in net.weight_arrays():
        arr[:] = 0.0
    net.biases[-1][0] = -9.39
    (e,) = extract(net)
    assert e.op == "const"
    assert e.value == pytest.approx(-9.39)
    assert render_expression(e) == "-9.39"


def test_extract_matches_pruned_network_on_1000_points():
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(5):
        net = EqlNetwork.init(2, 1, hidden_layers=2, rng=rng)
        for arr in net.weight_arrays():
            arr += rng.standard_normal(arr.shape) * 0.1
        tol = 0.05
        exprs = extract(net, prune_tol=tol, var_names=["x1", "x2"])
        from isrflow.eql import threshold_weights

        pruned, _ = threshold_weights(net, tol)
        pts = rng.standard_normal((1000, 2))
        got = np.column_stack([
            np.broadcast_to(eval_expression(e, {"x1": pts[:, 0], "x2": pts[:, 1]}), len(pts))
            for e in exprs
        ])
        worst = max(worst, np.max(np.abs(got - pruned.forward(pts))))
    assert worst < 1e-9


def test_extract_handles_every_activation_kind():
    rng = np.random.default_rng(2)
    net = EqlNetwork.init(2, 1, hidden_layers=1,
                          library=("one", "id", "square", "sin", "sigmoid", "exp", "product"),
                          rng=rng)
    (e,) = extract(net, var_names=["x1", "x2"])
    pts = rng.standard_normal((200, 2))
    got = eval_expression(e, {"x1": pts[:, 0], "x2": pts[:, 1]})
    assert np.max(np.abs(got - net.forward(pts)[:, 0])) < 1e-9


# -- simplify -------------------------------------------------------------------

def test_simplify_zero_times_x_plus_c():
    e = add(mul(const(0.0), var("x1")), const(3.25))
    s = simplify(e)
    assert s == const(3.25)


def test_simplify_one_times_x():
    assert simplify(mul(const(1.0), var("x1"))) == var("x1")


def test_simplify_folds_constants():
    e = add(const(1.0), mul(const(2.0), const(3.0)), square(const(2.0)))
    assert simplify(e) == const(11.0)


def test_simplify_collapses_nested_affine():
    # 2*(3*x + 1) -> 6*x + 2
    e = mul(const(2.0), add(mul(const(3.0), var("x1")), const(1.0)))
    s = simplify(e)
    assert s == add(mul(const(6.0), var("x1")), const(2.0))


def test_simplify_preserves_evaluation_and_node_count():
    rng = np.random.default_rng(3)
    for trial in range(100):
        e = random_expr(rng)
        s = simplify(e)
        binds = random_bindings(rng)
        before = np.asarray(eval_expression(e, binds), dtype=float)
        after = np.asarray(eval_expression(s, binds), dtype=float)
        assert np.max(np.abs(before - after)) < 1e-12 * max(1.0, np.max(np.abs(before)))
        assert node_count(s) <= node_count(e)


def test_simplify_idempotent():
    rng = np.random.default_rng(4)
    for _ in range(25):
        s = simplify(random_expr(rng))
        assert simplify(s) == s


# -- rendering & json -------------------------------------------------------------

def test_render_three_significant_digits():
    assert render_expression(const(1.16049)) == "1.16"
    assert render_expression(const(-9.3912)) == "-9.39"
    assert render_expression(const(0.0)) == "0"


def test_render_products_of_sums_parenthesized():
    e = mul(add(const(0.025), var("v1")), add(var("v1"), const(-0.29)))
    assert render_expression(e) == "(0.025 + v1)*(v1 - 0.29)"


def test_render_does_not_change_internal_precision():
    e = const(1.1604921)
    assert render_expression(e) == "1.16"
    assert eval_expression(e, {}) == 1.1604921


def test_expr_json_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(25):
        e = random_expr(rng)
        back = expr_from_json(json.loads(json.dumps(expr_to_json(e))))
        assert back == e


# -- whole-model composition --------------------------------------------------------

def make_gaussian_model():
    def constant_net(value):
        net = EqlNetwork.init(1, 1, hidden_layers=1, rng=np.random.default_rng(0))
        for arr in net.weight_arrays():
            arr[:] = 0.0
        net.biases[-1][0] = value
        return net

    clamp = 2.0
    block = CouplingBlock(
        constant_net(clamp * math.atanh(1.16 / clamp)),
        constant_net(0.0),
        constant_net(clamp * math.atanh(1.14 / clamp)),
        constant_net(-9.39),
        d1=1, d2=1, clamp=clamp,
    )
    return FlowModel(InvertibleStack(2, [block]))


def test_compose_identity_model_renders_z_equals_x():
    stack = InvertibleStack.build(2, 1, seed=0)  # zero-init -> identity
    es = compose_model(FlowModel(stack))
    blk = es.steps[0][1]
    assert [e.value for e in blk.s1] == [0.0]
    assert [e.value for e in blk.t1] == [0.0]
    x = np.random.default_rng(1).standard_normal((10, 2))
    assert np.allclose(es.evaluate_forward(x), x)
    assert "z = o" in es.render_text()


def test_compose_gaussian_model_constants():
    m = make_gaussian_model()
    es = compose_model(m)
    blk = es.steps[0][1]
    assert blk.s1[0].op == "const"
    assert blk.s1[0].value == pytest.approx(1.16, abs=1e-12)
    assert blk.t2[0].value == pytest.approx(-9.39)
    # z1 = x1*e^1.16, z2 = x2*e^1.14 - 9.39
    x = np.array([[1.0, 1.0]])
    z = es.evaluate_forward(x)
    assert z[0, 0] == pytest.approx(math.exp(1.16), rel=1e-12)
    assert z[0, 1] == pytest.approx(math.exp(1.14) - 9.39, rel=1e-12)
    # inverse: x2 = (z2 + 9.39) * e^-1.14 = 0.319 z2 + 3.00
    back = es.evaluate_inverse(np.array([[0.0, 0.0]]))
    assert back[0, 1] == pytest.approx(9.39 * math.exp(-1.14), rel=1e-12)
    assert back[0, 1] == pytest.approx(3.00, abs=5e-3)


def test_composed_expressions_match_model_forward():
    rng = np.random.default_rng(6)
    stack = InvertibleStack.build(4, 2, seed=3, init_gain=0.05)
    for _, arr in stack.param_items():
        arr += rng.standard_normal(arr.shape) * 0.04
    m = IsrModel(stack, d_y=2)
    es = compose_model(m)
    x = rng.standard_normal((1000, 4))
    out, _ = stack.forward(x)
    got = es.evaluate_forward(x)
    assert np.max(np.abs(got - out)) < 1e-9


def test_composed_inverse_chain_roundtrips():
    rng = np.random.default_rng(7)
    stack = InvertibleStack.build(3, 2, seed=4, init_gain=0.05)
    for _, arr in stack.param_items():
        arr += rng.standard_normal(arr.shape) * 0.04
    es = compose_model(FlowModel(stack))
    x = rng.standard_normal((200, 3))
    z = es.evaluate_forward(x)
    back = es.evaluate_inverse(z)
    assert np.max(np.abs(back - x)) < 1e-6


def test_composed_conditional_model():
    rng = np.random.default_rng(8)
    stack = InvertibleStack.build(3, 1, cond_dim=2, seed=5, init_gain=0.05)
    for _, arr in stack.param_items():
        arr += rng.standard_normal(arr.shape) * 0.04
    from isrflow.flows import CisrModel

    m = CisrModel(stack)
    es = compose_model(m)
    x = rng.standard_normal((50, 3))
    y = rng.standard_normal((50, 2))
    out, _ = stack.forward(x, cond=y)
    assert np.max(np.abs(es.evaluate_forward(x, cond=y) - out)) < 1e-9
    back = es.evaluate_inverse(out, cond=y)
    assert np.max(np.abs(back - x)) < 1e-6


def test_two_block_render_structure():
    rng = np.random.default_rng(9)
    stack = InvertibleStack.build(2, 2, seed=6, init_gain=0.05)
    es = compose_model(FlowModel(stack))
    text = es.render_text()
    assert "block 1:" in text and "block 2:" in text
    assert "shuffled by permutation" in text
    assert "v1 = u1 * exp(s1(u2)) + t1(u2)" in text
    assert "u2 = (o2 - t2(o1)) / exp(s2(o1))" in text


def test_expression_set_json_roundtrip(tmp_path):
    m = make_gaussian_model()
    es = compose_model(m)
    path = tmp_path / "expr.json"
    expression_set_to_json(es, path)
    with open(path) as fh:
        es2 = InvertibleExpressionSet.from_json_dict(json.load(fh))
    x = np.random.default_rng(10).standard_normal((20, 2))
    assert np.allclose(es.evaluate_forward(x), es2.evaluate_forward(x))
    assert np.max(np.abs(es2.evaluate_inverse(es2.evaluate_forward(x)) - x)) < 1e-9
