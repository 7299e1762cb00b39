"""Action-out DQN over an enumerated discrete grid, with an explicit size ceiling."""
from __future__ import annotations

import logging

import numpy as np

from ..agent import AgentConfig, OffPolicyAgent
from ..distributions import ActionSpace
from ..networks import ActionOutNetwork
from ..nn import adam_step

log = logging.getLogger(__name__)

DEFAULT_CEILING = 10**6


class InfeasibleActionSpaceError(RuntimeError):
    pass


def check_enumerable(space: ActionSpace, ceiling: int = DEFAULT_CEILING) -> int:
    """Number of grid actions; raises if it exceeds ``ceiling``. Depends only on bins and dims."""
    if not space.discrete:
        raise InfeasibleActionSpaceError("an action-out network needs a discretized action space")
    n = space.n_actions
    if n > ceiling:
        raise InfeasibleActionSpaceError(
            f"{space.bins}^{space.dims} = {n} actions exceeds the enumeration ceiling of {ceiling}")
    return n


class DQNAgent(OffPolicyAgent):
    def __init__(self, obs_dim: int, space: ActionSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None, ceiling: int = DEFAULT_CEILING):
        self.n_actions = check_enumerable(space, ceiling)
        config = config or AgentConfig()
        self._init_common(config, space)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = ActionOutNetwork(obs_dim, self.n_actions, config.obs_width)
        self.q_store = self.net.init_store(rng, np.dtype(config.dtype))
        self.q_target = self.q_store.copy()
        self.grid = space.from_flat_index(np.arange(self.n_actions))

    def q_values(self, obs, target: bool = False) -> np.ndarray:
        return self.net(self.q_target if target else self.q_store, obs)

    def greedy(self, obs, rng) -> tuple[np.ndarray, float]:
        q = self.q_values(obs)[0]
        k = int(np.argmax(q))
        return self.grid[k], float(q[k])

    def learn_step(self, rng: np.random.Generator, batch=None) -> tuple[float, dict]:
        cfg = self.config
        b = batch if batch is not None else self.buffer.sample(cfg.batch_size, rng)
        n = len(b)
        y = b.reward + b.discount * self.q_values(b.next_obs, target=True).max(axis=1)
        q_all, tape = self.net.forward(self.q_store, b.obs)
        idx = self.space.flat_index(b.action)
        td = y - q_all[np.arange(n), idx]
        td_loss = float(np.mean(b.weights * td * td))
        if not np.isfinite(td_loss):
            log.warning("non-finite loss at learn step %d; update skipped", self.learn_steps)
            return td_loss, {}
        dq = np.zeros_like(q_all)
        dq[np.arange(n), idx] = -2.0 * b.weights * td / n
        self.net.backward(tape, dq)
        if batch is None:
            self.buffer.update_priority(b.slots, td, b.generation)
        adam_step(self.q_store, cfg.lr_q)
        self.learn_steps += 1
        self.stats.add(td_loss, {})
        return td_loss, {}

    def sync_targets(self) -> None:
        self.q_target.load_from(self.q_store)

    def stores(self) -> dict:
        return {"q": self.q_store, "q_target": self.q_target}
