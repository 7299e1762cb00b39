"""Deterministic policy gradient: a delta actor that climbs the critic's action gradient."""
from __future__ import annotations

import logging

import numpy as np

from ..agent import AgentConfig, OffPolicyAgent, td_update
from ..distributions import ActionSpace, DeltaPredictor
from ..networks import QNetwork
from ..nn import ParamStore, adam_step

log = logging.getLogger(__name__)


def actor_ascent_step(actor: DeltaPredictor, store: ParamStore, feats: np.ndarray, action_grad,
                      lr: float) -> np.ndarray:
    """One Adam step of the actor along ``action_grad(a)`` (the critic's dQ/da, shape (B, A)).

    Returns the actions the gradient was evaluated at.
    """
    space = actor.space
    squashed, tape = actor.net(store, feats)
    a = space.center + space.half_width * squashed
    g = np.asarray(action_grad(a), dtype=np.float64)
    n = feats.shape[0]
    # ascend the mean of Q, so descend its negative
    actor.net.backprop(tape, -g * space.half_width / n)
    adam_step(store, lr)
    return a


class DPGAgent(OffPolicyAgent):
    """Critic = the action-in Q network; actor = a delta head on the critic's state features.

    The critic bootstraps from Q_target(s', mu_target(s')) instead of a max.
    """

    def __init__(self, obs_dim: int, space: ActionSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None):
        config = config or AgentConfig(predictors=("delta",), ratios=(0.0, 1.0))
        if space.discrete:
            raise ValueError("DPG needs a continuous action space")
        self._init_common(config, space)
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = np.dtype(config.dtype)
        self.q = QNetwork(obs_dim, space.dims, config.obs_width, config.act_width)
        self.q_store = self.q.init_store(rng, dtype)
        self.actor = DeltaPredictor("actor", self.q.feat_dim, space, config.predictor_hidden)
        self.actor_store = self.actor.init_store(rng, dtype)
        self.q_target = self.q_store.copy()
        self.actor_target = self.actor_store.copy()

    def policy(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        q_store = self.q_target if target else self.q_store
        a_store = self.actor_target if target else self.actor_store
        return self.actor.head(a_store, self.q.features(q_store, np.atleast_2d(obs)))

    def greedy(self, obs, rng) -> tuple[np.ndarray, float]:
        obs = np.atleast_2d(obs)
        a = self.policy(obs)
        return a[0], float(self.q(self.q_store, obs, a)[0])

    def place_actor(self, point) -> None:
        """Initialize the actor so it outputs ``point`` everywhere (targets follow)."""
        self.actor.place(self.actor_store, point)
        self.actor_target.load_from(self.actor_store)

    def learn_step(self, rng: np.random.Generator, batch=None) -> tuple[float, dict]:
        cfg = self.config
        b = batch if batch is not None else self.buffer.sample(cfg.batch_size, rng)
        a_next = self.policy(b.next_obs, target=True)
        y = b.reward + b.discount * self.q(self.q_target, b.next_obs, a_next)
        td_loss, td = td_update(self.q, self.q_store, b, y)
        if not np.isfinite(td_loss):
            log.warning("non-finite critic loss at learn step %d; update skipped", self.learn_steps)
            self.q_store.zero_grad()
            return td_loss, {}
        if batch is None:
            self.buffer.update_priority(b.slots, td, b.generation)
        adam_step(self.q_store, cfg.lr_q)

        feats = self.q.features(self.q_store, b.obs)

        def critic_grad(a):
            _, tape = self.q.forward(self.q_store, b.obs, a)
            _, da = self.q.backward(tape, np.ones(len(b)))
            self.q_store.zero_grad()  # the actor step must not move the critic
            return da

        actor_ascent_step(self.actor, self.actor_store, feats, critic_grad, cfg.lr_argmax)
        self.learn_steps += 1
        self.stats.add(td_loss, {})
        return td_loss, {}

    def sync_targets(self) -> None:
        self.q_target.load_from(self.q_store)
        self.actor_target.load_from(self.actor_store)

    def stores(self) -> dict:
        return {"q": self.q_store, "q_target": self.q_target,
                "actor": self.actor_store, "actor_target": self.actor_target}
