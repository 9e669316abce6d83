"""Analytic continuous-control environments and rollout collection.

Three small environments with fixed, documented dynamics constants:

* ``lqr`` -- linear dynamics with spectral radius 1.05, so an untrained
  policy diverges (the unstable benchmark of the trio);
* ``pointmass`` -- damped double integrator on the plane (stable);
* ``pendulum`` -- inverted pendulum near the upright equilibrium
  (nonlinear, mildly unstable).

Environments are stateless: ``step(state, action, rng)`` maps to
``(next_state, reward, done)``. Episodes end when the dynamics report
``done`` (state norm beyond the divergence bound) or at the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .policy import GaussianMlpPolicy, PolicyDivergedError

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    horizon: int
    gamma: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")


class LqrEnv:
    """Noisy linear dynamics with quadratic cost.

    next = A s + B a + w,  w ~ N(0, noise_std^2 I)
    reward = -(s' Q s + a' R a),   Q = I, R = 0.1 I

    A is upper triangular with spectral radius 1.05: the first mode grows
    5% per step until a policy counteracts it through B. The default
    horizon of 50 bounds an uncontrolled excursion to roughly 1.05^50 ~ 11x
    the start scale, keeping observations and rewards in a sane float range
    while failed episodes still cost an order of magnitude more than
    controlled ones.
    """

    A = np.array([
        [1.05, 0.10, 0.00, 0.00],
        [0.00, 1.00, 0.10, 0.00],
        [0.00, 0.00, 0.95, 0.10],
        [0.00, 0.00, 0.00, 0.90],
    ])
    B = np.array([
        [0.10, 0.00],
        [0.00, 0.10],
        [0.05, 0.00],
        [0.00, 0.05],
    ])
    Q_COST = np.eye(4)
    R_COST = 0.1 * np.eye(2)
    INIT_STD = 0.3

    def __init__(self, horizon: int = 50, gamma: float = 0.995, noise_std: float = 0.05):
        self.spec = EnvSpec(4, 2, horizon, gamma)
        self.noise_std = noise_std

    def reset(self, rng: linalg.SeededRng) -> np.ndarray:
        return self.INIT_STD * rng.standard_normal(4)

    def step(self, state, action, rng: linalg.SeededRng):
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        noise = self.noise_std * rng.standard_normal(4) if self.noise_std > 0 else 0.0
        next_state = self.A @ state + self.B @ action + noise
        reward = -float(state @ self.Q_COST @ state + action @ self.R_COST @ action)
        done = bool(np.linalg.norm(next_state) > DIVERGENCE_NORM)
        return next_state, reward, done


class PointMassEnv:
    """Damped double integrator: state (px, py, vx, vy), action (ax, ay).

    v' = (1 - drag) v + dt a + w
    p' = p + dt v'
    reward = -(|p|^2 + 0.1 |v'|^2 + 0.01 |a|^2)
    """

    DT = 0.1
    DRAG = 0.05
    INIT_SCALE = np.array([1.0, 1.0, 0.1, 0.1])

    def __init__(self, horizon: int = 200, gamma: float = 0.995, noise_std: float = 0.02):
        self.spec = EnvSpec(4, 2, horizon, gamma)
        self.noise_std = noise_std

    def reset(self, rng: linalg.SeededRng) -> np.ndarray:
        return self.INIT_SCALE * rng.standard_normal(4)

    def step(self, state, action, rng: linalg.SeededRng):
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        pos, vel = state[:2], state[2:]
        noise = self.noise_std * rng.standard_normal(2) if self.noise_std > 0 else 0.0
        new_vel = (1.0 - self.DRAG) * vel + self.DT * action + noise
        new_pos = pos + self.DT * new_vel
        next_state = np.concatenate([new_pos, new_vel])
        reward = -float(pos @ pos + 0.1 * (new_vel @ new_vel) + 0.01 * (action @ action))
        done = bool(np.linalg.norm(next_state) > DIVERGENCE_NORM)
        return next_state, reward, done


class PendulumEnv:
    """Inverted pendulum balancing: state (angle, angular velocity).

    omega' = omega + dt ((G / LENGTH) sin(angle) - friction omega + torque) + w
    angle' = angle + dt omega'
    reward = ALIVE_BONUS - (angle'^2 + 0.1 omega'^2 + 0.001 torque^2)

    angle = 0 is the (unstable) upright equilibrium. The episode ends once
    the pendulum leaves the upright neighborhood (|angle| > pi/2); the alive
    bonus makes an early fall strictly worse than balancing on.
    """

    DT = 0.05
    G = 8.0
    LENGTH = 1.0
    FRICTION = 0.05
    INIT_STD = 0.15
    ALIVE_BONUS = 2.0
    FALL_ANGLE = np.pi / 2

    def __init__(self, horizon: int = 200, gamma: float = 0.995, noise_std: float = 0.01):
        self.spec = EnvSpec(2, 1, horizon, gamma)
        self.noise_std = noise_std

    def reset(self, rng: linalg.SeededRng) -> np.ndarray:
        return self.INIT_STD * rng.standard_normal(2)

    def step(self, state, action, rng: linalg.SeededRng):
        angle, omega = float(state[0]), float(state[1])
        torque = float(np.asarray(action).ravel()[0])
        noise = float(self.noise_std * rng.standard_normal()) if self.noise_std > 0 else 0.0
        new_omega = omega + self.DT * ((self.G / self.LENGTH) * np.sin(angle)
                                       - self.FRICTION * omega + torque) + noise
        new_angle = angle + self.DT * new_omega
        next_state = np.array([new_angle, new_omega])
        reward = self.ALIVE_BONUS - (new_angle ** 2 + 0.1 * new_omega ** 2
                                     + 0.001 * torque ** 2)
        done = bool(abs(new_angle) > self.FALL_ANGLE
                    or np.linalg.norm(next_state) > DIVERGENCE_NORM)
        return next_state, float(reward), done


ENV_REGISTRY = {
    "lqr": LqrEnv,
    "pointmass": PointMassEnv,
    "pendulum": PendulumEnv,
}


def make_env(name: str, horizon: int | None = None, gamma: float | None = None):
    if name not in ENV_REGISTRY:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENV_REGISTRY)}")
    kwargs = {}
    if horizon is not None:
        kwargs["horizon"] = horizon
    if gamma is not None:
        kwargs["gamma"] = gamma
    return ENV_REGISTRY[name](**kwargs)


class ObsNormalizer:
    """Running mean / variance of raw observations (Welford accumulators).

    ``normalize`` uses whatever statistics have been accumulated so far with
    a standard-deviation floor of 1e-8. ``snapshot`` freezes the current
    statistics so a whole batch can be normalized consistently while the
    accumulators keep updating.
    """

    STD_FLOOR = 1e-8

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return self._m2 / self.count

    def update(self, obs: np.ndarray) -> None:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[None, :]
        for row in obs:
            self.count += 1
            delta = row - self.mean
            self.mean = self.mean + delta / self.count
            self._m2 = self._m2 + delta * (row - self.mean)

    def merge(self, other: "ObsNormalizer") -> None:
        """Fold another accumulator in (parallel Welford combination)."""
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self._m2 = other._m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self._m2 = self._m2 + other._m2 + delta ** 2 * self.count * other.count / total
        self.mean = self.mean + delta * other.count / total
        self.count = total

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        std = np.sqrt(self.variance)
        return self.mean.copy(), np.maximum(std, self.STD_FLOOR)

    def normalize(self, obs, frozen: tuple[np.ndarray, np.ndarray] | None = None):
        mean, std = frozen if frozen is not None else self.snapshot()
        return (np.asarray(obs, dtype=np.float64) - mean) / std


@dataclass
class RolloutBatch:
    """Fixed-size batch of transitions grouped into trajectories.

    ``states`` / ``next_states`` hold the normalized observations that were
    fed to the policy. ``dones[t]`` marks an episode end (divergence or
    horizon); a final trajectory cut mid-episode ends with done=False and
    is bootstrapped downstream.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    traj_starts: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.rewards)

    @property
    def n_trajectories(self) -> int:
        return len(self.traj_starts)

    def trajectory_slices(self) -> list[slice]:
        bounds = list(self.traj_starts) + [self.n_steps]
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def collect(policy: GaussianMlpPolicy, theta, env, normalizer: ObsNormalizer,
            n_steps: int, rng: linalg.SeededRng) -> RolloutBatch:
    """Roll out exactly ``n_steps`` transitions under the current policy.

    Observations are normalized with the statistics frozen at batch start;
    the accumulators are updated online with each raw observation, so the
    refreshed statistics take effect from the next batch on.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    frozen = normalizer.snapshot()
    horizon = env.spec.horizon
    states = np.empty((n_steps, env.spec.state_dim))
    actions = np.empty((n_steps, env.spec.action_dim))
    rewards = np.empty(n_steps)
    next_states = np.empty((n_steps, env.spec.state_dim))
    dones = np.zeros(n_steps, dtype=bool)
    log_probs = np.empty(n_steps)
    traj_starts = [0]

    state = env.reset(rng)
    ep_len = 0
    for t in range(n_steps):
        obs = normalizer.normalize(state, frozen)
        normalizer.update(state)
        action, logp = policy.sample_action(theta, obs, rng)
        if not np.all(np.isfinite(action)):
            raise PolicyDivergedError("non-finite action during rollout")
        next_state, reward, done_env = env.step(state, action, rng)
        ep_len += 1
        done = done_env or ep_len >= horizon
        states[t] = obs
        actions[t] = action
        rewards[t] = reward
        next_states[t] = normalizer.normalize(next_state, frozen)
        dones[t] = done
        log_probs[t] = logp
        if done:
            state = env.reset(rng)
            ep_len = 0
            if t + 1 < n_steps:
                traj_starts.append(t + 1)
        else:
            state = next_state
    return RolloutBatch(states, actions, rewards, next_states, dones, log_probs,
                        np.array(traj_starts, dtype=np.int64))


def evaluate(policy: GaussianMlpPolicy, theta, env, normalizer: ObsNormalizer,
             episodes: int, rng: linalg.SeededRng) -> np.ndarray:
    """Undiscounted episode returns for the stochastic policy.

    Uses the current normalizer statistics but never updates them, so
    evaluation rollouts do not contaminate training.
    """
    frozen = normalizer.snapshot()
    returns = np.empty(episodes)
    for e in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for _ in range(env.spec.horizon):
            obs = normalizer.normalize(state, frozen)
            action, _ = policy.sample_action(theta, obs, rng)
            if not np.all(np.isfinite(action)):
                raise PolicyDivergedError("non-finite action during evaluation")
            state, reward, done = env.step(state, action, rng)
            total += reward
            if done:
                break
        returns[e] = total
    return returns
