"""Diagonal-Gaussian policy: tanh MLP mean, state-independent log-std.

The flat parameter vector is the mean network's parameters (see
:mod:`uatrpo.mlp` for the layout) followed by one log-std entry per action
dimension. All public operations are pure in the parameters.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .mlp import Mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


class PolicyDivergedError(RuntimeError):
    """The policy produced a non-finite output."""


class GaussianMlpPolicy:
    def __init__(self, state_dim: int, action_dim: int, hidden: tuple[int, ...] = (8, 8)):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.mean_net = Mlp(state_dim, action_dim, hidden)
        self.num_params = self.mean_net.num_params + action_dim

    def init_params(self, rng: linalg.SeededRng) -> np.ndarray:
        """Orthogonal-ish hidden layers, output layer scaled by 0.01 so early
        actions stay near zero-mean; log-std starts at 0."""
        return np.concatenate([self.mean_net.init_params(rng), np.zeros(self.action_dim)])

    def split_params(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {theta.shape}")
        return theta[: self.mean_net.num_params], theta[self.mean_net.num_params:]

    def snapshot(self, theta: np.ndarray) -> np.ndarray:
        """Frozen copy of the parameters (read-only view for safety)."""
        copy = np.array(theta, dtype=np.float64, copy=True)
        copy.flags.writeable = False
        return copy

    def _std(self, log_std: np.ndarray) -> np.ndarray:
        return np.exp(np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))

    def mean_action(self, theta, states) -> np.ndarray:
        mean_theta, _ = self.split_params(theta)
        return self.mean_net.forward(mean_theta, states)

    def sample_action(self, theta, state, rng: linalg.SeededRng):
        """Draw action = mean + std * z with z standard normal.

        Returns ``(action, log_prob)``. Non-finite network output raises
        :class:`PolicyDivergedError`.
        """
        mean_theta, log_std = self.split_params(theta)
        mu = self.mean_net.forward(mean_theta, state)
        if not np.all(np.isfinite(mu)):
            raise PolicyDivergedError("policy mean is not finite")
        std = self._std(log_std)
        z = rng.standard_normal(self.action_dim)
        action = mu + std * z
        logp = float(-0.5 * np.sum(z ** 2) - np.sum(np.log(std))
                     - 0.5 * self.action_dim * _LOG_2PI)
        return action, logp

    def log_prob(self, theta, states, actions):
        """Log-density of actions under the policy at the given states.

        Accepts a single (state, action) pair or batched (n, dim) arrays.
        """
        mean_theta, log_std = self.split_params(theta)
        mu = self.mean_net.forward(mean_theta, states)
        std = self._std(log_std)
        z = (np.asarray(actions, dtype=np.float64) - mu) / std
        axis = -1
        return -0.5 * np.sum(z ** 2, axis=axis) - np.sum(np.log(std)) \
            - 0.5 * self.action_dim * _LOG_2PI

    def score_batch(self, theta, states, actions) -> np.ndarray:
        """Per-sample gradients of log-prob w.r.t. the flat parameters, (n, d).

        Mean-network coordinates come from exact backprop; each log-std
        coordinate is ((a - mu)^2 / std^2 - 1), zeroed where the clamp on
        log-std is active (the clamped value is constant there).
        """
        mean_theta, log_std = self.split_params(theta)
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        mu, cache = self.mean_net.forward_cache(mean_theta, states)
        std = self._std(log_std)
        diff = (actions - mu) / std ** 2
        mean_grads = self.mean_net.per_sample_grads(mean_theta, cache, diff)
        std_grads = (actions - mu) ** 2 / std ** 2 - 1.0
        clamped = (log_std < LOG_STD_MIN) | (log_std > LOG_STD_MAX)
        std_grads[:, clamped] = 0.0
        return np.concatenate([mean_grads, std_grads], axis=1)

    def score(self, theta, state, action) -> np.ndarray:
        return self.score_batch(theta, state[None, :], action[None, :])[0]

    def kl_between(self, theta_old, theta_new, states) -> float:
        """Closed-form KL(old || new) for diagonal Gaussians, averaged over
        the given states."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        old_mean_theta, old_log_std = self.split_params(theta_old)
        new_mean_theta, new_log_std = self.split_params(theta_new)
        mu_old = self.mean_net.forward(old_mean_theta, states)
        mu_new = self.mean_net.forward(new_mean_theta, states)
        std_old = self._std(old_log_std)
        std_new = self._std(new_log_std)
        var_old = std_old ** 2
        var_new = std_new ** 2
        per_state = np.sum(
            np.log(std_new / std_old)
            + (var_old + (mu_old - mu_new) ** 2) / (2.0 * var_new)
            - 0.5,
            axis=1,
        )
        return float(np.mean(per_state))

    def save_checkpoint(self, path, theta) -> None:
        """Text checkpoint: one header line ``state_dim,action_dim,h1,h2,...``
        then one parameter per line (full float64 precision)."""
        theta = np.asarray(theta, dtype=np.float64)
        dims = [self.state_dim, self.action_dim, *self.mean_net.hidden]
        with open(path, "w", encoding="ascii") as fh:
            fh.write(",".join(str(v) for v in dims) + "\n")
            for value in theta:
                fh.write("%.17g\n" % value)

    @classmethod
    def load_checkpoint(cls, path) -> tuple["GaussianMlpPolicy", np.ndarray]:
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip().split(",")
            values = [float(line) for line in fh if line.strip()]
        state_dim, action_dim, *hidden = (int(v) for v in header)
        policy = cls(state_dim, action_dim, tuple(hidden))
        theta = np.array(values, dtype=np.float64)
        if theta.shape != (policy.num_params,):
            raise ValueError("checkpoint parameter count does not match header")
        return policy, theta
