"""Exact policy-gradient ascent where the reward function is known.

No sampling anywhere: the tabular case sums over arms and the Gaussian case
integrates with Gauss-Legendre quadrature over the action interval.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TabularSoftmaxPolicy:
    prefs: np.ndarray

    @classmethod
    def uniform(cls, arms: int) -> "TabularSoftmaxPolicy":
        return cls(np.zeros(arms))

    def probs(self) -> np.ndarray:
        z = np.exp(self.prefs - self.prefs.max())
        return z / z.sum()


def true_pg_step(policy: TabularSoftmaxPolicy, rewards, lr: float) -> TabularSoftmaxPolicy:
    """prefs += lr * sum_a Q(a) grad pi(a); for a softmax this is pi_k (Q_k - J)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape != policy.prefs.shape or rewards.shape[0] < 2:
        raise ValueError("need one reward per arm and at least two arms")
    p = policy.probs()
    grad = p * (rewards - p @ rewards)
    return TabularSoftmaxPolicy(policy.prefs + lr * grad)


def run_true_pg(rewards, lr: float, steps: int, policy: TabularSoftmaxPolicy | None = None) -> np.ndarray:
    """Probability trajectory, shape (steps + 1, arms); row 0 is the initial policy."""
    policy = policy or TabularSoftmaxPolicy.uniform(len(rewards))
    out = [policy.probs()]
    for _ in range(steps):
        policy = true_pg_step(policy, rewards, lr)
        out.append(policy.probs())
    return np.array(out)


def delta_pg_step(mu: float, reward_grad, lr: float, low: float = -1.0, high: float = 1.0) -> float:
    """Deterministic policy: the gradient of r(mu) is the action gradient itself."""
    return float(np.clip(mu + lr * float(np.squeeze(reward_grad(np.atleast_1d(mu)))), low, high))


_NODES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _legendre(n: int):
    if n not in _NODES:
        _NODES[n] = np.polynomial.legendre.leggauss(n)
    return _NODES[n]


def _quadrature(low, high, nodes):
    x, w = _legendre(nodes)
    half = 0.5 * (high - low)
    return 0.5 * (high + low) + half * x, w * half


def gaussian_objective(mu: float, sigma: float, reward, low=-1.0, high=1.0, nodes: int = 512) -> float:
    """E[r(a)] for a ~ N(mu, sigma^2) restricted to [low, high] (mass outside is dropped)."""
    a, w = _quadrature(low, high, nodes)
    dens = np.exp(-0.5 * ((a - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
    return float(np.sum(w * dens * reward(a[:, None])))


def gaussian_policy_gradient(mu: float, sigma: float, reward, low=-1.0, high=1.0, nodes: int = 512) -> float:
    """d/dmu of :func:`gaussian_objective`, using d dens / d mu = dens (a - mu) / sigma^2."""
    a, w = _quadrature(low, high, nodes)
    dens = np.exp(-0.5 * ((a - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
    return float(np.sum(w * dens * (a - mu) / sigma**2 * reward(a[:, None])))


def gaussian_pg_step(mu: float, sigma: float, reward, lr: float, low=-1.0, high=1.0, nodes: int = 512) -> float:
    g = gaussian_policy_gradient(mu, sigma, reward, low, high, nodes)
    return float(np.clip(mu + lr * g, low, high))


def continuous_bandit_true_pg(surface, family: str, init: float, lr: float = 0.01, steps: int = 2000,
                              sigma: float = 0.1, nodes: int = 512) -> np.ndarray:
    """Trajectory of the policy mean on a 1-d reward ``surface`` (``value``/``grad`` methods)."""
    mu = float(init)
    out = [mu]
    for _ in range(steps):
        if family == "delta":
            mu = delta_pg_step(mu, surface.grad, lr)
        elif family == "gaussian":
            mu = gaussian_pg_step(mu, sigma, surface.value, lr, nodes=nodes)
        else:
            raise ValueError(f"unknown policy family {family!r}")
        out.append(mu)
    return np.array(out)
