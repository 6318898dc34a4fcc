import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from isrflow.bench import kinematics_dataset
from isrflow.estimators import (
    ConditionalSymbolicFlow,
    SymbolicFlow,
    SymbolicInverseModel,
)


def gaussian_data(n=1500, seed=0):
    rng = np.random.default_rng(seed)
    return np.array([0.0, 3.0]) + math.sqrt(0.1) * rng.standard_normal((n, 2))


@pytest.fixture(scope="module")
def fitted_flow():
    return SymbolicFlow(n_blocks=1, epochs=40, batch_size=64, random_state=0).fit(gaussian_data())


def test_get_set_params_roundtrip():
    est = SymbolicFlow(n_blocks=3, epochs=7)
    params = est.get_params()
    assert params["n_blocks"] == 3 and params["epochs"] == 7
    est2 = clone(est)
    assert est2.get_params() == params


def test_unfitted_estimator_raises():
    with pytest.raises(NotFittedError):
        SymbolicFlow().transform(np.zeros((2, 2)))


def test_flow_fit_transform_inverse(fitted_flow):
    x = gaussian_data(200, seed=1)
    z = fitted_flow.transform(x)
    assert z.shape == x.shape
    back = fitted_flow.inverse_transform(z)
    assert np.max(np.abs(back - x)) < 1e-8


def test_flow_learns_the_target(fitted_flow):
    x = gaussian_data(4000, seed=2)
    z = fitted_flow.transform(x)
    assert np.abs(z.mean(axis=0)).max() < 0.1
    assert np.abs(z.var(axis=0) - 1.0).max() < 0.15
    # score is mean log density; the target's differential entropy is
    # log(2*pi*e*0.1) ~ -0.3379 per two dims
    want = -(math.log(2.0 * math.pi * 0.1) + 1.0)
    assert fitted_flow.score(x) == pytest.approx(want, abs=0.1)


def test_flow_sampling_matches_moments(fitted_flow):
    s = fitted_flow.sample(4000, random_state=3)
    assert np.abs(s.mean(axis=0) - [0.0, 3.0]).max() < 0.1
    assert np.array_equal(s, fitted_flow.sample(4000, random_state=3))


def test_flow_extract_expressions(fitted_flow):
    es = fitted_flow.extract_expressions()
    x = gaussian_data(100, seed=4)
    got = es.evaluate_forward(x)
    want, _ = fitted_flow.model_.stack.forward(x)
    assert np.max(np.abs(got - want)) < 1e-9


def test_inverse_model_end_to_end():
    x, y = kinematics_dataset(3000, seed=5)
    est = SymbolicInverseModel(n_blocks=2, subnet_layers=2, epochs=15,
                               batch_size=100, lr_start=1e-3, random_state=1)
    est.fit(x, y)
    pred = est.predict(x[:500])
    assert pred.shape == (500, 2)
    # the learned forward map should beat a constant predictor easily
    mse = float(np.mean((pred - y[:500]) ** 2))
    base = float(np.mean((y[:500] - y[:500].mean(0)) ** 2))
    assert mse < base * 0.5
    post = est.sample_posterior([0.0, 1.5], 64, random_state=2)
    assert post.shape == (64, 4)


def test_inverse_model_requires_room_for_latents():
    x = np.zeros((10, 2))
    y = np.zeros((10, 2))
    with pytest.raises(ValueError, match="d_y < d_x"):
        SymbolicInverseModel(epochs=1).fit(x, y)


def test_conditional_flow_end_to_end():
    x, y = kinematics_dataset(2000, seed=6)
    est = ConditionalSymbolicFlow(n_blocks=2, subnet_layers=2, epochs=10,
                                  batch_size=100, lr_start=1e-3, random_state=3)
    est.fit(x, y)
    z = est.latent(x[:100], y[:100])
    assert z.shape == (100, 4)
    post = est.sample_posterior([0.0, 1.5], 32, random_state=4)
    assert post.shape == (32, 4)
    assert np.array_equal(post, est.sample_posterior([0.0, 1.5], 32, random_state=4))
