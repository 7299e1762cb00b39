"""Dependency-free test environments and wrappers.

Interface (gym-like)::

    obs = env.reset(rng)
    obs, reward, terminated, truncated, info = env.step(action)

Reward surfaces that serve as ground truth expose ``value``/``grad`` so
oracles can query them directly without going through a learned model.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .distributions import ActionSpace


@dataclass
class EnvSpec:
    obs_dim: int
    action_space: ActionSpace
    horizon: int
    reward: str = ""
    terminal: str = ""


class Env:
    spec: EnvSpec

    @property
    def action_space(self) -> ActionSpace:
        return self.spec.action_space

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, action):
        raise NotImplementedError


# ------------------------------------------------------------ bandits


class KArmedBandit(Env):
    """One-state, one-step MDP with deterministic per-arm rewards."""

    def __init__(self, rewards):
        self.rewards = np.asarray(rewards, dtype=np.float64)
        if self.rewards.ndim != 1 or len(self.rewards) < 2:
            raise ValueError("need at least two arms")
        k = len(self.rewards)
        self.spec = EnvSpec(1, ActionSpace(np.zeros(1), np.full(1, k - 1.0), bins=k), 1,
                            "rewards[arm]", "after one pull")

    @property
    def optimal_arm(self) -> int:
        return int(np.argmax(self.rewards))

    def q_values(self) -> np.ndarray:
        # one state, one step: Q(a) = r(a) under every policy
        return self.rewards.copy()

    def reset(self, rng):
        return np.ones(1)

    def step(self, arm):
        r = float(self.rewards[int(np.asarray(arm).reshape(-1)[0])])
        return np.ones(1), r, True, False, {}


@dataclass
class BimodalSurface:
    """Sum of a narrow global and a broad local Gaussian bump on [-1, 1]^d."""

    global_center: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.6]))
    global_height: float = 1.0
    global_width: float = 0.15
    local_center: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.5]))
    local_height: float = 0.6
    local_width: float = 0.4

    def __post_init__(self):
        self.global_center = np.atleast_1d(np.asarray(self.global_center, dtype=np.float64))
        self.local_center = np.atleast_1d(np.asarray(self.local_center, dtype=np.float64))

    @classmethod
    def default(cls, dims: int = 2) -> "BimodalSurface":
        return cls(np.full(dims, 0.6), 1.0, 0.15, np.full(dims, -0.5), 0.6, 0.4)

    @property
    def dims(self) -> int:
        return self.global_center.shape[0]

    def _bumps(self, a):
        a = np.asarray(a, dtype=np.float64)
        d1 = a - self.global_center
        d2 = a - self.local_center
        b1 = self.global_height * np.exp(-np.sum(d1 * d1, -1) / (2 * self.global_width**2))
        b2 = self.local_height * np.exp(-np.sum(d2 * d2, -1) / (2 * self.local_width**2))
        return d1, d2, b1, b2

    def value(self, a) -> np.ndarray:
        _, _, b1, b2 = self._bumps(a)
        return b1 + b2

    def grad(self, a) -> np.ndarray:
        d1, d2, b1, b2 = self._bumps(a)
        return (-d1 * (b1 / self.global_width**2)[..., None]
                - d2 * (b2 / self.local_width**2)[..., None])


class BimodalBandit(Env):
    def __init__(self, surface: BimodalSurface | None = None, dims: int = 2):
        self.surface = surface or BimodalSurface.default(dims)
        d = self.surface.dims
        self.spec = EnvSpec(1, ActionSpace.box(d), 1, "two Gaussian bumps", "after one step")

    def reset(self, rng):
        return np.ones(1)

    def step(self, action):
        return np.ones(1), float(self.surface.value(action)), True, False, {}


# classic climbing payoffs; rows are agent 1's choice, columns agent 2's
CLIMBING_PAYOFF = np.array([[11.0, -30.0, 0.0],
                            [-30.0, 7.0, 6.0],
                            [0.0, 0.0, 5.0]])


class ClimbingGame(Env):
    """Two agents each pick a scalar in [-1, 1]; payoff bumps sit on the {-1, 0, 1}^2 grid.

    Bump weights solve ``K W K = payoff`` (``K`` the anchor kernel matrix) so the
    surface equals the payoff table exactly at every anchor.
    """

    n_agents = 2

    def __init__(self, payoff=None, width: float = 0.25):
        self.payoff = CLIMBING_PAYOFF.copy() if payoff is None else np.asarray(payoff, dtype=np.float64)
        self.width = width
        self.anchors = np.array([-1.0, 0.0, 1.0])
        k = self._kernel(self.anchors)
        self.weights = np.linalg.solve(k, np.linalg.solve(k, self.payoff).T).T
        self.spec = EnvSpec(1, ActionSpace.box(2), 1, "radial bumps at payoff anchors", "after one step")

    def _kernel(self, x) -> np.ndarray:
        return np.exp(-(np.asarray(x)[..., None] - self.anchors) ** 2 / (2 * self.width**2))

    def value(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        return np.einsum("...i,ij,...j->...", self._kernel(a[..., 0]), self.weights, self._kernel(a[..., 1]))

    def reset(self, rng):
        return np.ones(1)

    def step(self, action):
        return np.ones(1), float(self.value(action)), True, False, {}


# ------------------------------------------------------------ control


class SyntheticControl(Env):
    """Track a per-episode target: reward is -||a - target||^2 / d every step.

    The observation is the target, optionally followed by ``distractors``
    Gaussian noise features. Episodes end by truncation after ``horizon``.
    """

    def __init__(self, dims: int, horizon: int = 50, distractors: int = 0):
        if not 1 <= dims <= 38:
            raise ValueError("dims must lie in [1, 38]")
        self.dims, self.distractors = dims, distractors
        self.spec = EnvSpec(dims + distractors, ActionSpace.box(dims), horizon,
                            "-||a - target||^2 / d", "none (time limit only)")
        self.target = np.zeros(dims)
        self.t = 0
        self._rng = None

    def _obs(self):
        if not self.distractors:
            return self.target.copy()
        return np.concatenate([self.target, self._rng.standard_normal(self.distractors)])

    def reset(self, rng):
        self._rng = rng
        self.target = rng.uniform(-1.0, 1.0, self.dims)
        self.t = 0
        return self._obs()

    def value(self, target, a) -> np.ndarray:
        diff = np.asarray(a) - np.asarray(target)
        return -np.sum(diff * diff, axis=-1) / self.dims

    def step(self, action):
        r = float(self.value(self.target, action))
        self.t += 1
        return self._obs(), r, False, self.t >= self.spec.horizon, {}


# ------------------------------------------------------------ wrappers


class Wrapper(Env):
    def __init__(self, env: Env):
        self.env = env
        self.spec = env.spec

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, rng):
        return self.env.reset(rng)

    def step(self, action):
        return self.env.step(action)


class Discretize(Wrapper):
    """Restrict a box action space to its per-dimension bin centres."""

    def __init__(self, env: Env, bins: int = 3):
        super().__init__(env)
        space = env.spec.action_space
        if space.discrete:
            raise ValueError("environment is already discrete")
        self.spec = EnvSpec(env.spec.obs_dim, space.discretized(bins), env.spec.horizon,
                            env.spec.reward, env.spec.terminal)

    def step(self, action):
        return self.env.step(self.spec.action_space.snap(action))


class TimeLimit(Wrapper):
    """Truncate after ``limit`` steps; truncation is reported apart from termination."""

    def __init__(self, env: Env, limit: int = 1000, bootstrap: bool = True):
        super().__init__(env)
        self.limit, self.bootstrap = limit, bootstrap
        self.spec = EnvSpec(env.spec.obs_dim, env.spec.action_space, limit,
                            env.spec.reward, env.spec.terminal)
        self.t = 0

    def reset(self, rng):
        self.t = 0
        return self.env.reset(rng)

    def step(self, action):
        obs, r, term, trunc, info = self.env.step(action)
        self.t += 1
        if self.t >= self.limit and not term:
            trunc = True
        if trunc and not self.bootstrap:
            # without partial-episode bootstrapping a time-out is treated as terminal
            term, trunc = True, False
        return obs, r, term, trunc, info


def discretize(env: Env, bins: int = 3) -> Discretize:
    return Discretize(env, bins)


def time_limit(env: Env, limit: int = 1000, bootstrap: bool = True) -> TimeLimit:
    return TimeLimit(env, limit, bootstrap)


def k_armed_bandit(rewards) -> KArmedBandit:
    return KArmedBandit(rewards)


def bimodal_bandit(dims: int = 2, surface: BimodalSurface | None = None) -> BimodalBandit:
    return BimodalBandit(surface, dims)


def climbing_game_continuous(**kw) -> ClimbingGame:
    return ClimbingGame(**kw)


def synthetic_control(dims: int, **kw) -> SyntheticControl:
    return SyntheticControl(dims, **kw)


def make_env(env_id: str) -> Env:
    """Build an environment from a registry id.

    ``bimodal1d``, ``bimodal2d``, ``climb``, ``bandit:r=0.1,0.9,0.5`` and
    ``synth:d=12[:disc=3][:noise=4][:horizon=50]``.
    """
    if env_id == "bimodal1d":
        return bimodal_bandit(1)
    if env_id == "bimodal2d":
        return bimodal_bandit(2)
    if env_id == "climb":
        return climbing_game_continuous()
    head, *opts = env_id.split(":")
    kv = {}
    for o in opts:
        m = re.fullmatch(r"(\w+)=([\w.,+-]+)", o)
        if not m:
            raise ValueError(f"bad env option {o!r} in {env_id!r}")
        kv[m.group(1)] = m.group(2)
    if head == "bandit":
        return k_armed_bandit([float(x) for x in kv["r"].split(",")])
    if head == "synth":
        env = synthetic_control(int(kv["d"]), horizon=int(kv.get("horizon", 50)),
                                distractors=int(kv.get("noise", 0)))
        if "disc" in kv:
            env = discretize(env, int(kv["disc"]))
        return env
    raise ValueError(f"unknown environment id {env_id!r}")
