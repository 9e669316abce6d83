"""Fast built-in oracle checks, runnable from the command line.

Each check compares a production code path against an independent dense or
analytic computation. These are smaller, quicker variants of the full test
suite, meant as a smoke screen for broken builds. All checks call into the
library through module attributes so faults can be injected for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import harness, linalg, trust_region
from .policy import GaussianMlpPolicy


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng(stream: int) -> linalg.SeededRng:
    return linalg.SeededRng(20240901, stream)


def check_eig_reconstruction() -> CheckResult:
    rng = _rng(1)
    a = rng.standard_normal((30, 30))
    a = 0.5 * (a + a.T)
    v, lam = linalg.symmetric_eig(a)
    recon = float(np.linalg.norm(v @ np.diag(lam) @ v.T - a) / np.linalg.norm(a))
    ortho = float(np.linalg.norm(v.T @ v - np.eye(30)))
    ok = recon <= 1e-9 and ortho <= 1e-9
    return CheckResult("eig_reconstruction", ok, f"recon={recon:.2e} ortho={ortho:.2e}")


def check_orthonormalize() -> CheckResult:
    rng = _rng(2)
    y = rng.standard_normal((50, 5)) @ rng.standard_normal((5, 20))
    q, ell = linalg.orthonormalize(y)
    err = float(np.linalg.norm(q @ (q.T @ y) - y) / np.linalg.norm(y))
    ok = ell == 5 and err <= 1e-8
    return CheckResult("orthonormalize_reprojection", ok, f"ell={ell} err={err:.2e}")


def check_conjugate_gradient() -> CheckResult:
    rng = _rng(3)
    b_mat = rng.standard_normal((20, 20))
    a = b_mat @ b_mat.T + np.eye(20)
    rhs = rng.standard_normal(20)
    # a few iterations beyond the dimension absorb finite-precision
    # conjugacy loss
    x = linalg.conjugate_gradient(lambda v: a @ v, rhs, iters=26, damping=0.1)
    ref = np.linalg.solve(a + 0.1 * np.eye(20), rhs)
    err = float(np.linalg.norm(x - ref) / np.linalg.norm(ref))
    return CheckResult("cg_dense_equivalence", err <= 1e-6, f"err={err:.2e}")


def check_pseudoinverse(instances: int = 10) -> CheckResult:
    rng = _rng(4)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(4, 31))
        rank = int(rng.integers(1, d + 1))
        basis = np.linalg.qr(rng.standard_normal((d, rank)))[0]
        eigs = 0.5 + rng.generator.random(rank)
        m_dense = (basis * eigs) @ basis.T
        g = rng.standard_normal(d)
        omega = rng.standard_normal((d, max(rank, 1)))
        v, _ = trust_region.update_direction(m_dense @ omega, g,
                                             m_product=lambda x: m_dense @ x)
        ref = np.linalg.pinv(m_dense) @ g
        denom = max(float(np.linalg.norm(ref)), 1e-12)
        worst = max(worst, float(np.linalg.norm(v - ref)) / denom)
    return CheckResult("pseudoinverse_equivalence", worst <= 1e-6, f"worst={worst:.2e}")


def _boundary_min_search(g, sigma_sqrt, radius, delta, rng, points):
    """Random search for min u'delta over the confidence ellipsoid boundary.

    Uniform exploration plus shrinking local perturbation rounds around the
    incumbent; never consults the closed form.
    """
    d = len(g)
    rounds = 10
    per_round = max(points // rounds, 1)
    best_s = None
    best_val = np.inf
    scale = 1.0
    for r in range(rounds):
        props = rng.standard_normal((per_round, d))
        if best_s is not None:
            props = best_s + scale * props
            scale *= 0.5
        norms = np.linalg.norm(props, axis=1, keepdims=True)
        props = props / np.maximum(norms, 1e-300)
        vals = (g + radius * props @ sigma_sqrt.T) @ delta
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_s = props[idx]
    return best_val


def check_duality(points: int = 20000) -> CheckResult:
    rng = _rng(5)
    worst = 0.0
    for _ in range(5):
        d = int(rng.integers(2, 7))
        a = rng.standard_normal((d, d))
        sigma = a @ a.T + 0.5 * np.eye(d)
        v, lam = linalg.symmetric_eig(sigma)
        sigma_sqrt = (v * np.sqrt(lam)) @ v.T
        g = rng.standard_normal(d)
        delta = rng.standard_normal(d)
        radius = 0.7
        closed = radius * float(np.sqrt(delta @ sigma @ delta))
        searched = float(g @ delta) - _boundary_min_search(g, sigma_sqrt, radius, delta,
                                                           rng, points)
        gap = abs(searched - closed) / max(abs(closed), 1e-12)
        worst = max(worst, gap)
    return CheckResult("duality_gap", worst <= 1e-3, f"worst={worst:.2e}")


def check_coverage(trials: int = 2000) -> CheckResult:
    rng = _rng(6)
    d, n, alpha = 5, 100, 0.05
    a = rng.standard_normal((d, d))
    sigma = a @ a.T + 0.5 * np.eye(d)
    v, lam = linalg.symmetric_eig(sigma)
    sigma_sqrt = (v * np.sqrt(lam)) @ v.T
    sigma_inv = (v / lam) @ v.T
    g = rng.standard_normal(d)
    rn2 = trust_region.radius_sq(n, d, alpha)
    z = rng.standard_normal((trials, n, d))
    g_hats = g + (z @ sigma_sqrt.T).mean(axis=1)
    diffs = g_hats - g
    quad = np.einsum("td,de,te->t", diffs, sigma_inv, diffs)
    freq = float(np.mean(quad <= rn2))
    return CheckResult("coverage", freq >= 1.0 - alpha, f"freq={freq:.4f}")


def check_radius_value() -> CheckResult:
    value = trust_region.radius_sq(100, 5, 0.05)
    ok = abs(value - 0.18732) <= 1e-4
    return CheckResult("radius_value", ok, f"value={value:.6f}")


def check_cvar_examples() -> CheckResult:
    values = [10, 20, 30, 40, 50]
    ok = (abs(harness.cvar(values, 1.0) - 30.0) <= 1e-12
          and abs(harness.cvar(values, 0.2) - 10.0) <= 1e-12
          and abs(harness.cvar(values, 0.4) - 15.0) <= 1e-12)
    return CheckResult("cvar_examples", ok, "three-point table")


def check_ema_identity() -> CheckResult:
    rng = _rng(7)
    y_f = rng.standard_normal((12, 4))
    y_sigma = rng.standard_normal((12, 4))
    ema = trust_region.EmaSketch(12, 4, beta=0.9)
    combined = ema.update(y_f, y_sigma, c_rn2=0.3)
    err = float(np.max(np.abs(combined - (y_f + 0.3 * y_sigma))))
    return CheckResult("ema_first_step_identity", err <= 1e-12, f"err={err:.2e}")


def check_score_gradient() -> CheckResult:
    rng = _rng(8)
    policy = GaussianMlpPolicy(2, 1, hidden=(4,))
    theta = policy.init_params(rng) + 0.1 * rng.standard_normal(policy.num_params)
    state = rng.standard_normal(2)
    action = rng.standard_normal(1)
    analytic = policy.score(theta, state, action)
    h = 1e-5
    worst = 0.0
    for j in range(policy.num_params):
        probe = np.zeros_like(theta)
        probe[j] = h
        fd = (policy.log_prob(theta + probe, state, action)
              - policy.log_prob(theta - probe, state, action)) / (2 * h)
        worst = max(worst, abs(fd - analytic[j]) / max(1.0, abs(analytic[j])))
    return CheckResult("score_finite_difference", worst <= 1e-5, f"worst={worst:.2e}")


def run_all(quick: bool = False) -> list[CheckResult]:
    scale = 2 if quick else 1
    return [
        check_eig_reconstruction(),
        check_orthonormalize(),
        check_conjugate_gradient(),
        check_pseudoinverse(instances=10 // scale),
        check_duality(points=20000 // scale),
        check_coverage(trials=2000 // scale),
        check_radius_value(),
        check_cvar_examples(),
        check_ema_identity(),
        check_score_gradient(),
    ]
