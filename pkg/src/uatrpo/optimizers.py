"""One-iteration policy update rules.

``trpo_step`` solves the damped curvature system with conjugate gradient,
scales to the trust-region boundary, and backtracks until the surrogate
improves and the measured KL respects the radius. ``ua_trpo_step`` builds
the combined curvature-plus-noise operator, solves for the update direction
inside the sketched subspace, and applies the boundary step directly -- no
line search, by design: the restricted direction already keeps the realized
step size in line with the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, trust_region
from .envs import RolloutBatch
from .estimation import TrustRegionOperator
from .policy import GaussianMlpPolicy


@dataclass
class TrpoConfig:
    delta_kl: float = 0.01
    cg_iters: int = 20
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10

    def __post_init__(self):
        if self.delta_kl <= 0:
            raise ValueError("delta_kl must be positive")


@dataclass
class UaTrpoConfig:
    delta_ua: float = 0.03
    c: float = 6e-4
    alpha: float = 0.05
    m: int | None = None     # None: min(200, ceil(d/4), d); explicit values are honored
    beta: float = 0.9
    use_ema: bool = True
    # Subspace eigenvalues below eig_floor_rel * max(eig) are floored before
    # inversion. Small-sample spectra carry noise directions many decades
    # below the top; inverting those lets the update exploit directions whose
    # curvature measurement is unreliable, so the floor is deliberately much
    # stricter than round-off.
    eig_floor_rel: float = 1e-2

    def __post_init__(self):
        if self.delta_ua <= 0:
            raise ValueError("delta_ua must be positive")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    def projection_count(self, d: int) -> int:
        if self.m is not None:
            return self.m
        return max(1, min(200, -(-d // 4), d))


@dataclass
class StepReport:
    """Diagnostics for one proposed policy update.

    ``actual_kl`` measures the *proposed* step (before any backtracking) so
    the actual/estimated ratio reflects the raw update quality;
    ``applied_kl`` measures whatever step was finally taken (0 if none).
    """

    direction_norm: float = 0.0
    eta: float = 0.0
    est_kl: float = 0.0
    actual_kl: float = 0.0
    applied_kl: float = 0.0
    surrogate_improvement: float = 0.0
    accepted: bool = False
    ls_steps: int = 0
    rn2: float = 0.0
    ell: int = 0


def surrogate_improvement(policy: GaussianMlpPolicy, theta_k, theta,
                          batch: RolloutBatch, advantages: np.ndarray) -> float:
    """Importance-ratio surrogate gain over the current parameters."""
    ratios = np.exp(policy.log_prob(theta, batch.states, batch.actions) - batch.log_probs)
    return float(np.mean(ratios * advantages) - np.mean(advantages))


def trpo_direction(g_vec: np.ndarray, operator: TrustRegionOperator,
                   cfg: TrpoConfig) -> np.ndarray:
    """Conjugate-gradient solve of the damped curvature system."""
    return linalg.conjugate_gradient(operator.fisher_product, g_vec,
                                     cfg.cg_iters, cfg.cg_damping)


def trpo_step(policy: GaussianMlpPolicy, theta_k, batch: RolloutBatch,
              advantages: np.ndarray, g_vec: np.ndarray,
              operator: TrustRegionOperator, cfg: TrpoConfig):
    """Classic trust-region update with conjugate gradient and backtracking.

    Accepts the largest step (full step, then geometric shrinking up to
    max_backtracks times) with positive surrogate improvement and measured
    KL within delta_kl. Returns the unchanged parameters when no step
    qualifies; a zero gradient is an accepted no-op.
    """
    g_vec = np.asarray(g_vec, dtype=np.float64)
    if not np.any(g_vec):
        return np.array(theta_k, copy=True), StepReport(accepted=True)

    v = trpo_direction(g_vec, operator, cfg)
    v_fv = float(v @ operator.fisher_product(v))
    if not np.isfinite(v_fv) or v_fv <= 1e-300:
        return np.array(theta_k, copy=True), StepReport(direction_norm=float(np.linalg.norm(v)))

    eta0 = float(np.sqrt(2.0 * cfg.delta_kl / v_fv))
    est_kl = 0.5 * eta0 ** 2 * v_fv
    proposed = theta_k + eta0 * v
    actual_kl = policy.kl_between(theta_k, proposed, batch.states)

    report = StepReport(direction_norm=float(np.linalg.norm(v)), est_kl=est_kl,
                        actual_kl=actual_kl)
    eta = eta0
    for backtracks in range(cfg.max_backtracks + 1):
        candidate = theta_k + eta * v
        improvement = surrogate_improvement(policy, theta_k, candidate, batch, advantages)
        kl = actual_kl if backtracks == 0 else policy.kl_between(theta_k, candidate, batch.states)
        if improvement > 0 and kl <= cfg.delta_kl:
            report.eta = eta
            report.applied_kl = kl
            report.surrogate_improvement = improvement
            report.accepted = True
            report.ls_steps = backtracks
            return candidate, report
        eta *= cfg.backtrack_ratio
    report.ls_steps = cfg.max_backtracks
    return np.array(theta_k, copy=True), report


def ua_trpo_step(policy: GaussianMlpPolicy, theta_k, batch: RolloutBatch,
                 advantages: np.ndarray, g_vec: np.ndarray,
                 operator: TrustRegionOperator, omega: np.ndarray,
                 cfg: UaTrpoConfig, ema: trust_region.EmaSketch | None = None):
    """Uncertainty-aware update restricted to the sketched operator range.

    Sets the combination coefficient from the confidence radius at the
    operator's sample count, forms the sketch (averaged when an EMA state is
    supplied and cfg.use_ema), solves within the recovered subspace, and
    applies theta + eta v with eta = sqrt(2 delta_ua / v' M v), the
    quadratic form taken against the current batch's operator. Skips the
    update (accepted=False) when no subspace is available or the quadratic
    form degenerates.
    """
    g_vec = np.asarray(g_vec, dtype=np.float64)
    d = policy.num_params
    rn2 = trust_region.radius_sq(operator.n_samples, d, cfg.alpha)
    operator.c_rn2 = cfg.c * rn2

    y_f = trust_region.sketch(operator.fisher_product, omega)
    y_sigma = trust_region.sketch(operator.sigma_product, omega)
    use_ema = cfg.use_ema and ema is not None
    if use_ema:
        y = ema.update(y_f, y_sigma, operator.c_rn2)
    else:
        y = y_f + operator.c_rn2 * y_sigma

    report = StepReport(rn2=rn2)
    try:
        if use_ema:
            v, model = trust_region.update_direction(y, g_vec, omega=omega,
                                                     eig_floor_rel=cfg.eig_floor_rel)
        else:
            v, model = trust_region.update_direction(y, g_vec, m_product=operator.m_product,
                                                     eig_floor_rel=cfg.eig_floor_rel)
    except trust_region.NoSubspaceError:
        return np.array(theta_k, copy=True), report

    report.ell = model.subspace_dim
    report.direction_norm = float(np.linalg.norm(v))
    v_mv = float(v @ operator.m_product(v))
    if not np.isfinite(v_mv) or v_mv <= 1e-12 * float(v @ v):
        return np.array(theta_k, copy=True), report

    eta = float(np.sqrt(2.0 * cfg.delta_ua / v_mv))
    theta = theta_k + eta * v
    report.eta = eta
    report.est_kl = 0.5 * eta ** 2 * float(v @ operator.fisher_product(v))
    report.actual_kl = policy.kl_between(theta_k, theta, batch.states)
    report.applied_kl = report.actual_kl
    report.surrogate_improvement = surrogate_improvement(policy, theta_k, theta,
                                                         batch, advantages)
    report.accepted = True
    return theta, report
