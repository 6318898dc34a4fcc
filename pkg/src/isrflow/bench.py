"""Benchmark generators and evaluation metrics.

Four two-dimensional target densities (gaussian, banana, ring, mixture of
gaussians), the planar-arm inverse kinematics problem with its Gaussian
prior and forward model, a rejection-sampling oracle for ground-truth
posteriors, and the two posterior-quality metrics: squared maximum mean
discrepancy (inverse-multiquadric kernel mixture, unbiased U-statistic)
and the re-simulation error.

All generators are pure functions of (spec, n, seed).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# inverse-multiquadric mixture k(a,b) = sum_c c / (c + ||a-b||^2)
MMD_SCALES = (0.05, 0.2, 0.9)

DENSITY_KINDS = ("gaussian", "banana", "ring", "mog")

GAUSSIAN_MEAN = np.array([0.0, 3.0])
GAUSSIAN_VAR = 0.1
RING_RADIUS = 2.0
RING_VAR = 0.1
MOG_STD = 0.4
MOG_CENTERS = np.array([[2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [-2.0, -2.0]])


def max_workers():
    """Parallelism cap: ISRFLOW_THREADS if set, else available cores."""
    v = os.environ.get("ISRFLOW_THREADS", "").strip()
    if v:
        return max(1, int(v))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}; pick one of {DENSITY_KINDS}")


def sample_target(spec, n, seed=None):
    """n i.i.d. samples (n, 2) from the named target density."""
    if n <= 0:
        raise ValueError("n must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed if seed is None else seed))
    if spec.kind == "gaussian":
        return GAUSSIAN_MEAN + math.sqrt(GAUSSIAN_VAR) * rng.standard_normal((n, 2))
    if spec.kind == "banana":
        z = rng.standard_normal((n, 2))
        return np.column_stack([z[:, 0], 0.5 * z[:, 0] ** 2 + 0.5 * z[:, 1] - 1.0])
    if spec.kind == "ring":
        r = RING_RADIUS + math.sqrt(RING_VAR) * rng.standard_normal(n)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    comp = rng.integers(0, 4, n)
    return MOG_CENTERS[comp] + MOG_STD * rng.standard_normal((n, 2))


def target_log_density(spec, x):
    """Exact log density; only the gaussian target supports this."""
    if spec.kind != "gaussian":
        raise NotImplementedError(f"exact log density not available for {spec.kind!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = np.sum((x - GAUSSIAN_MEAN) ** 2, axis=1)
    return -LOG_2PI - math.log(GAUSSIAN_VAR) - 0.5 * d2 / GAUSSIAN_VAR


# -- inverse kinematics ------------------------------------------------------

@dataclass(frozen=True)
class KinematicsSpec:
    """Planar three-segment arm on a vertical rail.

    x = (rail height, three joint angles); y = end-point coordinates.
    y1 carries the height offset (sum of sines + x1), y2 the reach
    (sum of cosines), so |y2| <= l1 + l2 + l3.
    """

    lengths: tuple = (0.5, 0.5, 1.0)
    prior_var: tuple = (0.25 ** 2, 0.25, 0.25, 0.25)
    y_target: tuple = (0.0, 1.5)
    eps: float = 0.02

    def __post_init__(self):
        if any(l <= 0 for l in self.lengths) or any(v <= 0 for v in self.prior_var):
            raise ValueError("segment lengths and prior variances must be > 0")


DEFAULT_KINEMATICS = KinematicsSpec()


def kinematics_forward(x, spec=DEFAULT_KINEMATICS):
    """End-point (y1, y2) of the arm for configurations x (n, 4) or (4,)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    l1, l2, l3 = spec.lengths
    a1 = x[:, 1]
    a2 = x[:, 1] + x[:, 2]
    a3 = x[:, 1] + x[:, 2] + x[:, 3]
    y1 = l1 * np.sin(a1) + l2 * np.sin(a2) + l3 * np.sin(a3) + x[:, 0]
    y2 = l1 * np.cos(a1) + l2 * np.cos(a2) + l3 * np.cos(a3)
    y = np.column_stack([y1, y2])
    return y[0] if single else y


def sample_prior(n, seed=0, spec=DEFAULT_KINEMATICS):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    std = np.sqrt(np.asarray(spec.prior_var))
    return rng.standard_normal((n, 4)) * std


def kinematics_dataset(n, seed=0, spec=DEFAULT_KINEMATICS):
    """(x, y) pairs: x from the Gaussian prior, y = forward(x)."""
    x = sample_prior(n, seed, spec)
    return x, kinematics_forward(x, spec)


def rejection_sample(y_star, eps, n_keep, seed=0, spec=DEFAULT_KINEMATICS,
                     batch=1 << 17, min_rate=1e-7):
    """Ground-truth posterior samples by accept/reject against the prior.

    Draws prior batches, keeps x whose simulated end point lies within
    ``eps`` (Euclidean) of ``y_star``, until ``n_keep`` are accepted.
    Returns (samples, acceptance rate).  Aborts once the running acceptance
    rate falls below ``min_rate`` with at least 1/min_rate draws taken.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if n_keep <= 0:
        raise ValueError("n_keep must be > 0")
    y_star = np.asarray(y_star, dtype=np.float64).reshape(2)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    std = np.sqrt(np.asarray(spec.prior_var))
    kept = []
    accepted = 0
    drawn = 0
    while accepted < n_keep:
        x = rng.standard_normal((batch, 4)) * std
        y = kinematics_forward(x, spec)
        hit = np.sum((y - y_star) ** 2, axis=1) < eps * eps
        drawn += batch
        got = x[hit]
        accepted += got.shape[0]
        kept.append(got)
        if accepted < n_keep and drawn >= 1.0 / min_rate and accepted / drawn < min_rate:
            raise RuntimeError(
                f"acceptance rate {accepted / drawn:.2e} below {min_rate:.0e} after "
                f"{drawn} draws; raise eps (currently {eps}) or move y_star"
            )
    samples = np.concatenate(kept, axis=0)[:n_keep]
    return samples, accepted / drawn


def resim_error(samples, y_star, spec=DEFAULT_KINEMATICS):
    """Mean squared end-point distance: E ||forward(x) - y_star||^2."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    y_star = np.asarray(y_star, dtype=np.float64).reshape(2)
    y = kinematics_forward(samples, spec)
    return float(np.mean(np.sum((y - y_star) ** 2, axis=1)))


# -- maximum mean discrepancy -------------------------------------------------

def _kernel_block_sum(a, b, scales):
    # squared distances clipped at 0 against roundoff
    d = np.maximum(
        np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T),
        0.0,
    )
    total = 0.0
    for c in scales:
        total += float(np.sum(c / (c + d)))
    return total


def _kernel_sum(a, b, scales, block=2048):
    starts = range(0, a.shape[0], block)
    jobs = [(a[i:i + block], b) for i in starts]
    if len(jobs) > 1 and max_workers() > 1:
        with ThreadPoolExecutor(max_workers=max_workers()) as pool:
            parts = list(pool.map(lambda ab: _kernel_block_sum(ab[0], ab[1], scales), jobs))
    else:
        parts = [_kernel_block_sum(x, y, scales) for x, y in jobs]
    return sum(parts)  # ordered reduction keeps the result deterministic


def mmd(a, b, scales=MMD_SCALES):
    """Unbiased U-statistic estimate of squared MMD between sample sets.

    Kernel: sum_c c / (c + ||a-b||^2) over the scale mixture.  Within-set
    sums exclude the diagonal, so the estimate can be slightly negative
    for close distributions; callers that need a metric clamp at zero.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ValueError("mmd needs at least 2 samples on each side")
    k_diag = float(len(scales))  # k(x, x) = sum_c c/c
    s_aa = _kernel_sum(a, a, scales) - m * k_diag
    s_bb = _kernel_sum(b, b, scales) - n * k_diag
    s_ab = _kernel_sum(a, b, scales)
    return s_aa / (m * (m - 1)) + s_bb / (n * (n - 1)) - 2.0 * s_ab / (m * n)


@dataclass
class MetricsReport:
    """Posterior-quality metrics with enough context to reproduce them."""

    err_post: float = None       # squared MMD, clamped at 0
    err_post_raw: float = None   # unclamped estimator value
    err_resim: float = None
    nll: float = None
    n_model_samples: int = 0
    n_reference_samples: int = 0
    seed: int = 0
    kernel_scales: tuple = MMD_SCALES
    y_target: tuple = None
    eps: float = None
    benchmark: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "benchmark": self.benchmark,
            "err_post": self.err_post,
            "err_post_raw": self.err_post_raw,
            "err_resim": self.err_resim,
            "nll": self.nll,
            "n_model_samples": self.n_model_samples,
            "n_reference_samples": self.n_reference_samples,
            "seed": self.seed,
            "kernel_scales": list(self.kernel_scales),
            "y_target": None if self.y_target is None else list(self.y_target),
            "eps": self.eps,
        }
        out.update(self.extra)
        return out

    @staticmethod
    def clamp(raw):
        return max(0.0, float(raw))
