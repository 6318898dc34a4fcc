import math

import numpy as np
import pytest

from isrflow.bench import (
    DistributionSpec,
    KinematicsSpec,
    MetricsReport,
    kinematics_dataset,
    kinematics_forward,
    mmd,
    rejection_sample,
    resim_error,
    sample_prior,
    sample_target,
    target_log_density,
)


def brute_force_mmd(a, b, scales=(0.05, 0.2, 0.9)):
    """Quadratic-loop oracle for the unbiased U-statistic."""
    def k(p, q):
        r2 = float(np.sum((p - q) ** 2))
        return sum(c / (c + r2) for c in scales)

    m, n = len(a), len(b)
    s_aa = sum(k(a[i], a[j]) for i in range(m) for j in range(m) if i != j)
    s_bb = sum(k(b[i], b[j]) for i in range(n) for j in range(n) if i != j)
    s_ab = sum(k(x, y) for x in a for y in b)
    return s_aa / (m * (m - 1)) + s_bb / (n * (n - 1)) - 2.0 * s_ab / (m * n)


# -- target densities -------------------------------------------------------------

def test_gaussian_sample_mean():
    x = sample_target(DistributionSpec("gaussian"), 100000, seed=0)
    assert np.abs(x.mean(axis=0) - [0.0, 3.0]).max() < 0.01
    assert abs(x.var(axis=0).mean() - 0.1) < 0.005


def test_ring_radius_mean():
    x = sample_target(DistributionSpec("ring"), 100000, seed=1)
    r = np.linalg.norm(x, axis=1)
    assert abs(r.mean() - 2.0) < 0.01


def test_banana_shape():
    x = sample_target(DistributionSpec("banana"), 100000, seed=2)
    # second coordinate concentrates on the parabola z1^2/2 - 1 with spread 0.5
    resid = x[:, 1] - (0.5 * x[:, 0] ** 2 - 1.0)
    assert abs(resid.mean()) < 0.01
    assert abs(resid.std() - 0.5) < 0.01


def test_mog_modes():
    x = sample_target(DistributionSpec("mog"), 40000, seed=3)
    centers = np.array([[2, 2], [2, -2], [-2, 2], [-2, -2]], dtype=float)
    d = np.linalg.norm(x[:, None, :] - centers[None], axis=2)
    share = np.bincount(np.argmin(d, axis=1), minlength=4) / len(x)
    assert np.all(share > 0.2)


def test_sample_target_seed_repeatable():
    spec = DistributionSpec("banana")
    assert np.array_equal(sample_target(spec, 100, seed=5), sample_target(spec, 100, seed=5))


def test_sample_target_rejects_bad_n():
    with pytest.raises(ValueError):
        sample_target(DistributionSpec("gaussian"), 0)


def test_unknown_distribution_rejected():
    with pytest.raises(ValueError, match="unknown distribution"):
        DistributionSpec("spiral")


def test_gaussian_log_density_exact():
    spec = DistributionSpec("gaussian")
    x = np.array([[0.0, 3.0], [1.0, 3.0]])
    want0 = -math.log(2.0 * math.pi * 0.1)
    got = target_log_density(spec, x)
    assert got[0] == pytest.approx(want0, rel=1e-12)
    assert got[1] == pytest.approx(want0 - 0.5 / 0.1, rel=1e-12)
    with pytest.raises(NotImplementedError):
        target_log_density(DistributionSpec("ring"), x)


# -- kinematics --------------------------------------------------------------------

def test_kinematics_straight_arm():
    assert np.allclose(kinematics_forward(np.zeros(4)), [0.0, 2.0])


def test_kinematics_rail_offset():
    assert np.allclose(kinematics_forward(np.array([1.0, 0, 0, 0])), [1.0, 2.0])


def test_kinematics_quarter_turn():
    got = kinematics_forward(np.array([0.0, math.pi / 2.0, 0, 0]))
    assert np.allclose(got, [2.0, 0.0], atol=1e-12)


def test_kinematics_reach_bound():
    rng = np.random.default_rng(4)
    x = rng.uniform(-math.pi, math.pi, size=(10000, 4))
    y = kinematics_forward(x)
    assert np.all(np.abs(y[:, 1]) <= 2.0 + 1e-12)


def test_dataset_prior_variance():
    x, y = kinematics_dataset(100000, seed=5)
    assert abs(x[:, 0].var() - 0.0625) < 0.003
    assert np.allclose(x[:, 1:].var(axis=0), 0.25, atol=0.01)
    assert np.array_equal(y, kinematics_forward(x))


def test_dataset_seed_repeatable():
    a = kinematics_dataset(256, seed=6)
    b = kinematics_dataset(256, seed=6)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_kinematics_spec_validation():
    with pytest.raises(ValueError):
        KinematicsSpec(lengths=(0.5, 0.0, 1.0))


# -- rejection oracle ---------------------------------------------------------------

def test_rejection_with_huge_eps_accepts_everything():
    y_star = (0.0, 1.5)
    samples, rate = rejection_sample(y_star, 1e3, 500, seed=7, batch=512)
    assert rate == 1.0
    assert np.array_equal(samples, sample_prior(512, seed=7)[:500])


def test_rejection_acceptance_monotone_in_eps():
    y_star = (0.0, 1.5)
    rates = []
    for eps in (0.8, 0.4, 0.2):
        _, rate = rejection_sample(y_star, eps, 50, seed=8, batch=1 << 14)
        rates.append(rate)
    assert rates[0] >= rates[1] >= rates[2]


def test_rejection_samples_satisfy_predicate():
    y_star = np.array([0.0, 1.5])
    samples, _ = rejection_sample(y_star, 0.1, 200, seed=9, batch=1 << 15)
    d = np.linalg.norm(kinematics_forward(samples) - y_star, axis=1)
    assert np.all(d < 0.1)
    assert len(samples) == 200


def test_rejection_aborts_when_rate_too_low():
    with pytest.raises(RuntimeError, match="raise eps"):
        rejection_sample((50.0, 50.0), 1e-3, 10, seed=10, batch=2048, min_rate=1e-3)


def test_rejection_rejects_bad_args():
    with pytest.raises(ValueError):
        rejection_sample((0, 1.5), 0.0, 10)
    with pytest.raises(ValueError):
        rejection_sample((0, 1.5), 0.1, 0)


# -- metrics -----------------------------------------------------------------------

def test_mmd_identical_sets_is_tiny():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((1000, 4))
    raw = mmd(a, a)
    assert raw <= 1e-6
    assert MetricsReport.clamp(raw) == 0.0


def test_mmd_symmetry():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((300, 3))
    b = rng.standard_normal((400, 3)) + 0.3
    assert mmd(a, b) == pytest.approx(mmd(b, a), abs=1e-12)


def test_mmd_far_separated_sets():
    # oracle-computed magnitude for N(0, I4) vs itself shifted by (10,0,0,0):
    # the unbiased estimator with the c/(c+r^2) scale mixture sits near 0.395
    rng = np.random.default_rng(13)
    a = rng.standard_normal((1500, 4))
    b = a + np.array([10.0, 0.0, 0.0, 0.0])
    v = mmd(a, b)
    assert 0.35 < v < 0.45


def test_mmd_matches_brute_force_oracle():
    rng = np.random.default_rng(14)
    a = rng.standard_normal((40, 2))
    b = rng.standard_normal((60, 2)) + 0.5
    assert mmd(a, b) == pytest.approx(brute_force_mmd(a, b), rel=1e-10)


def test_mmd_needs_two_samples():
    with pytest.raises(ValueError):
        mmd(np.zeros((1, 2)), np.zeros((5, 2)))


def test_mmd_thread_count_does_not_change_result(monkeypatch):
    rng = np.random.default_rng(15)
    a = rng.standard_normal((3000, 4))
    b = rng.standard_normal((3000, 4))
    monkeypatch.setenv("ISRFLOW_THREADS", "1")
    serial = mmd(a, b)
    monkeypatch.setenv("ISRFLOW_THREADS", "4")
    threaded = mmd(a, b)
    assert serial == threaded


def test_resim_error_zero_when_exact():
    x = np.zeros((5, 4))
    assert resim_error(x, (0.0, 2.0)) == 0.0


def test_resim_error_single_offset():
    x = np.zeros((1, 4))
    assert resim_error(x, (-0.1, 2.0)) == pytest.approx(0.01, rel=1e-12)


def test_metrics_report_roundtrip():
    rep = MetricsReport(err_post=0.01, err_post_raw=0.01, err_resim=0.02,
                        nll=-1.0, n_model_samples=10, n_reference_samples=10,
                        seed=3, y_target=(0.0, 1.5), eps=0.02, benchmark="kinematics")
    d = rep.to_dict()
    assert d["err_post"] == 0.01
    assert d["y_target"] == [0.0, 1.5]
    assert d["kernel_scales"] == [0.05, 0.2, 0.9]
