"""Advantage estimation, value learning, and sample-based gradient machinery.

Per-step score vectors are advantage-weighted gradients of the policy
log-density. Their sample average is the policy gradient estimate; their
raw (unweighted) outer products give the curvature operator and their
centered outer products the gradient-noise covariance operator. All
operators are matrix-free: only products against vectors (or matrices,
columnwise) are ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .envs import RolloutBatch
from .mlp import Mlp
from .policy import GaussianMlpPolicy

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ValueFunction:
    """Tanh-MLP state-value model with its own Adam accumulators."""

    def __init__(self, state_dim: int, hidden: tuple[int, ...] = (8, 8),
                 rng: linalg.SeededRng | None = None):
        self.net = Mlp(state_dim, 1, hidden)
        if rng is not None:
            self.theta = self.net.init_params(rng, out_scale=1.0)
        else:
            self.theta = np.zeros(self.net.num_params)
        self.adam_m = np.zeros(self.net.num_params)
        self.adam_v = np.zeros(self.net.num_params)
        self.step_count = 0

    def predict(self, states) -> np.ndarray:
        out = self.net.forward(self.theta, states)
        return out[..., 0]


def fit_value(vf: ValueFunction, states, targets, step_size: float = 1e-3,
              iters: int = 5) -> float:
    """Full-batch Adam on mean-squared error; returns the final loss.

    Bias-corrected first/second moments, so the very first step moves each
    coordinate by roughly step_size * sign(gradient).
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if len(targets) == 0:
        raise ValueError("empty batch")
    n = len(targets)
    loss = np.inf
    for _ in range(iters):
        preds, cache = vf.net.forward_cache(vf.theta, states)
        err = preds[:, 0] - targets
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite value-function loss")
        grad = vf.net.grad_params(vf.theta, cache, (2.0 / n) * err[:, None])
        vf.step_count += 1
        vf.adam_m = ADAM_BETA1 * vf.adam_m + (1.0 - ADAM_BETA1) * grad
        vf.adam_v = ADAM_BETA2 * vf.adam_v + (1.0 - ADAM_BETA2) * grad ** 2
        m_hat = vf.adam_m / (1.0 - ADAM_BETA1 ** vf.step_count)
        v_hat = vf.adam_v / (1.0 - ADAM_BETA2 ** vf.step_count)
        vf.theta = vf.theta - step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return loss


def gae(batch: RolloutBatch, vf: ValueFunction, gamma: float,
        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted TD-residual advantages and value targets.

    Backward recursion adv_t = delta_t + gamma * lam * adv_{t+1} within each
    trajectory, where delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t)
    - V(s_t). A trajectory cut mid-episode (final done = False) bootstraps
    through V of its last next-state. Targets are adv + V(s).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    values = vf.predict(batch.states)
    next_values = vf.predict(batch.next_states)
    not_done = 1.0 - batch.dones.astype(np.float64)
    deltas = batch.rewards + gamma * next_values * not_done - values
    advantages = np.empty(batch.n_steps)
    for sl in batch.trajectory_slices():
        running = 0.0
        for t in range(sl.stop - 1, sl.start - 1, -1):
            running = deltas[t] + gamma * lam * not_done[t] * running
            advantages[t] = running
    return advantages, advantages + values


def standardize_advantages(adv: np.ndarray) -> np.ndarray:
    """Shift/scale to mean 0, population std 1 (std floor 1e-8)."""
    adv = np.asarray(adv, dtype=np.float64)
    if len(adv) < 2:
        raise ValueError("need at least 2 advantages to standardize")
    centered = adv - np.mean(adv)
    std = float(np.std(centered))
    return centered / max(std, 1e-8)


@dataclass
class ScoreSamples:
    """Per-step score data, stored columnwise: xi[i] = advantages[i] * raw[i]."""

    raw: np.ndarray         # (n, d) gradients of log-prob
    xi: np.ndarray          # (n, d) advantage-weighted gradients
    advantages: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.advantages)

    def take(self, indices: np.ndarray) -> "ScoreSamples":
        return ScoreSamples(self.raw[indices], self.xi[indices], self.advantages[indices])


@dataclass
class GradientEstimate:
    g_hat: np.ndarray
    n: int
    per_dim_stderr: np.ndarray


def summarize_scores(xi: np.ndarray) -> GradientEstimate:
    """Sample mean of the weighted scores plus a per-dimension standard error
    (sample std with n-1 denominator, divided by sqrt(n))."""
    n = len(xi)
    g_hat = xi.mean(axis=0)
    if n > 1:
        stderr = xi.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        stderr = np.zeros_like(g_hat)
    return GradientEstimate(g_hat, n, stderr)


def policy_gradient(batch: RolloutBatch, policy: GaussianMlpPolicy, theta_k,
                    advantages: np.ndarray) -> tuple[GradientEstimate, ScoreSamples]:
    """Sample-average policy gradient over the whole batch.

    ``advantages`` should already be standardized.
    """
    raw = policy.score_batch(theta_k, batch.states, batch.actions)
    advantages = np.asarray(advantages, dtype=np.float64)
    xi = advantages[:, None] * raw
    return summarize_scores(xi), ScoreSamples(raw, xi, advantages)


def subsample(samples: ScoreSamples, factor: int, rng: linalg.SeededRng) -> ScoreSamples:
    """Uniform without-replacement subsample of ceil(n / factor) steps."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    n = len(samples)
    k = max(1, int(np.ceil(n / factor)))
    if k >= n:
        return samples if factor == 1 else samples.take(np.arange(min(k, n)))
    return samples.take(rng.choice_without_replacement(n, k))


class TrustRegionOperator:
    """Matrix-free symmetric PSD products from subsampled score data.

    fisher_product(v)  = (1/n) sum_i s_i (s_i' v)        raw scores s_i
    sigma_product(v)   = (1/(n-1)) sum_i c_i (c_i' v)    c_i = xi_i - mean(xi)
    m_product(v)       = fisher_product(v) + c_rn2 * sigma_product(v)

    ``v`` may be a vector (d,) or a matrix (d, m), applied columnwise.
    ``c_rn2`` is the combination coefficient (trade-off times squared
    confidence radius); 0 reduces m_product to the curvature term alone.
    """

    def __init__(self, samples: ScoreSamples, c_rn2: float = 0.0):
        if c_rn2 < 0:
            raise ValueError("c_rn2 must be >= 0")
        self._raw = samples.raw
        self._centered = samples.xi - samples.xi.mean(axis=0)
        self.n_samples = len(samples)
        self.dim = samples.raw.shape[1]
        self.c_rn2 = float(c_rn2)

    def fisher_product(self, v: np.ndarray) -> np.ndarray:
        return self._raw.T @ (self._raw @ v) / self.n_samples

    def sigma_product(self, v: np.ndarray) -> np.ndarray:
        if self.n_samples < 2:
            raise ValueError("covariance operator needs at least 2 samples")
        return self._centered.T @ (self._centered @ v) / (self.n_samples - 1)

    def m_product(self, v: np.ndarray) -> np.ndarray:
        out = self.fisher_product(v)
        if self.c_rn2 > 0:
            out = out + self.c_rn2 * self.sigma_product(v)
        return out
