"""Two cooperative learners for multi-agent one-dimensional action games.

Agent ``i`` controls action coordinate ``i``. Both learners act in a
decentralized way at evaluation time: each agent picks its own coordinate
without looking at the other's choice.
"""
from __future__ import annotations

import logging

import numpy as np

from ..agent import AgentConfig, OffPolicyAgent
from ..argmax import approx_argmax
from ..distributions import ActionSpace, DeltaPredictor, sample_uniform
from ..networks import QNetwork
from ..nn import adam_step

log = logging.getLogger(__name__)


def _agent_spaces(space: ActionSpace) -> list[ActionSpace]:
    return [ActionSpace(space.low[i:i + 1], space.high[i:i + 1]) for i in range(space.dims)]


class VDNAgent(OffPolicyAgent):
    """Q(s, a) = sum_i U_i(s, a_i); each utility is maximized over a dense grid of its own action."""

    def __init__(self, obs_dim: int, space: ActionSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None, grid: int = 201):
        config = config or AgentConfig()
        self._init_common(config, space)
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = np.dtype(config.dtype)
        self.n_agents = space.dims
        self.utils = [QNetwork(obs_dim, 1, config.obs_width, config.act_width) for _ in range(self.n_agents)]
        self.util_stores = [u.init_store(rng, dtype) for u in self.utils]
        self.util_targets = [s.copy() for s in self.util_stores]
        self.grids = [np.linspace(sp.low[0], sp.high[0], grid) for sp in _agent_spaces(space)]

    def utility_max(self, i: int, obs: np.ndarray, target: bool = False) -> tuple[np.ndarray, np.ndarray]:
        obs = np.atleast_2d(obs)
        store = (self.util_targets if target else self.util_stores)[i]
        grid = np.broadcast_to(self.grids[i][None, :, None], (obs.shape[0], len(self.grids[i]), 1))
        u = self.utils[i](store, obs, grid)
        k = np.argmax(u, axis=1)
        return self.grids[i][k], u[np.arange(obs.shape[0]), k]

    def greedy(self, obs, rng) -> tuple[np.ndarray, float]:
        parts = [self.utility_max(i, obs) for i in range(self.n_agents)]
        return np.array([p[0][0] for p in parts]), float(sum(p[1][0] for p in parts))

    def learn_step(self, rng: np.random.Generator, batch=None) -> tuple[float, dict]:
        cfg = self.config
        b = batch if batch is not None else self.buffer.sample(cfg.batch_size, rng)
        n = len(b)
        y = b.reward.copy()
        if np.any(b.discount):  # skipped entirely for one-step games
            vmax = sum(self.utility_max(i, b.next_obs, target=True)[1] for i in range(self.n_agents))
            y += b.discount * vmax
        q = np.zeros(n)
        tapes = []
        for i, (u, s) in enumerate(zip(self.utils, self.util_stores)):
            ui, tape = u.forward(s, b.obs, b.action[:, i:i + 1])
            q += ui
            tapes.append(tape)
        td = y - q
        td_loss = float(np.mean(b.weights * td * td))
        if not np.isfinite(td_loss):
            log.warning("non-finite loss at learn step %d; update skipped", self.learn_steps)
            return td_loss, {}
        for u, tape in zip(self.utils, tapes):
            u.backward(tape, -2.0 * b.weights * td / n)
        if batch is None:
            self.buffer.update_priority(b.slots, td, b.generation)
        for s in self.util_stores:
            adam_step(s, cfg.lr_q)
        self.learn_steps += 1
        self.stats.add(td_loss, {})
        return td_loss, {}

    def sync_targets(self) -> None:
        for t, s in zip(self.util_targets, self.util_stores):
            t.load_from(s)

    def stores(self) -> dict:
        out = {}
        for i, (s, t) in enumerate(zip(self.util_stores, self.util_targets)):
            out[f"util{i}"] = s
            out[f"util{i}_target"] = t
        return out


class MultiAgentQMLE(OffPolicyAgent):
    """Joint action-in Q with one delta argmax predictor per agent on that agent's observation.

    Candidates for the joint max are uniform joint actions, joint samples built
    by stacking each agent's predictor samples, and the stored prior. The
    predictors are fitted to their own coordinate of the joint argmax, so
    greedy execution needs no communication.
    """

    def __init__(self, obs_dim: int, space: ActionSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None):
        config = config or AgentConfig(predictors=("delta",), ratios=(0.5, 0.5))
        if config.predictors != ("delta",):
            raise ValueError("the multi-agent learner uses exactly one delta predictor per agent")
        self._init_common(config, space)
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = np.dtype(config.dtype)
        self.n_agents = space.dims
        self.plan = config.plan
        self.q = QNetwork(obs_dim, space.dims, config.obs_width, config.act_width)
        self.q_store = self.q.init_store(rng, dtype)
        self.q_target = self.q_store.copy()
        sigma_abs = config.delta_sigma_absolute
        self.predictors = [DeltaPredictor(f"agent{i}", obs_dim, sp, config.predictor_hidden,
                                          config.delta_sigma, sigma_abs)
                           for i, sp in enumerate(_agent_spaces(space))]
        self.pred_stores = [p.init_store(rng, dtype) for p in self.predictors]
        self.pred_targets = [s.copy() for s in self.pred_stores]

    def candidates(self, obs: np.ndarray, kind: str, rng, prior=None, target: bool = False) -> np.ndarray:
        obs = np.atleast_2d(obs)
        n_uniform, n_pred = self.plan.counts(self.plan.budget(kind))
        stores = self.pred_targets if target else self.pred_stores
        parts = [sample_uniform(self.space, n_uniform, rng, batch=obs.shape[0])]
        if n_pred:
            parts.append(np.concatenate([p.sample(s, obs, n_pred, rng)
                                         for p, s in zip(self.predictors, stores)], axis=-1))
        if prior is not None:
            parts.append(np.asarray(prior, dtype=np.float64).reshape(obs.shape[0], 1, -1))
        return np.concatenate(parts, axis=1)

    def joint_head(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        return np.concatenate([p.head(s, obs) for p, s in zip(self.predictors, self.pred_stores)], axis=-1)

    def greedy(self, obs, rng) -> tuple[np.ndarray, float]:
        obs = np.atleast_2d(obs)
        a = self.joint_head(obs)
        return a[0], float(self.q(self.q_store, obs, a)[0])

    def learn_step(self, rng: np.random.Generator, batch=None) -> tuple[float, dict]:
        cfg = self.config
        b = batch if batch is not None else self.buffer.sample(cfg.batch_size, rng)
        prior = b.amax if cfg.use_prior else None
        cands = self.candidates(b.next_obs, "target", rng, prior=prior, target=True)
        amax, vmax, _ = approx_argmax(lambda acts: self.q(self.q_target, b.next_obs, acts), cands)
        if batch is None:
            self.buffer.update_amax(b.slots, amax, b.generation)
        y = b.reward + b.discount * vmax
        n = len(b)
        q_sa, tape = self.q.forward(self.q_store, b.obs, b.action)
        td = y - q_sa
        td_loss = float(np.mean(b.weights * td * td))
        self.q.backward(tape, -2.0 * b.weights * td / n)
        mle = [p.mle_loss(s, b.next_obs, amax[:, i:i + 1])
               for i, (p, s) in enumerate(zip(self.predictors, self.pred_stores))]
        if not np.isfinite(td_loss) or not np.all(np.isfinite(mle)):
            log.warning("non-finite loss at learn step %d; update skipped", self.learn_steps)
            self.q_store.zero_grad()
            for s in self.pred_stores:
                s.zero_grad()
            return td_loss, {}
        if batch is None:
            self.buffer.update_priority(b.slots, td, b.generation)
        adam_step(self.q_store, cfg.lr_q)
        for s in self.pred_stores:
            adam_step(s, cfg.lr_argmax)
        self.learn_steps += 1
        summary = {"delta": float(np.sum(mle))}
        self.stats.add(td_loss, summary)
        return td_loss, summary

    def sync_targets(self) -> None:
        self.q_target.load_from(self.q_store)
        for t, s in zip(self.pred_targets, self.pred_stores):
            t.load_from(s)

    def stores(self) -> dict:
        out = {"q": self.q_store, "q_target": self.q_target}
        for i, (s, t) in enumerate(zip(self.pred_stores, self.pred_targets)):
            out[f"agent{i}"] = s
            out[f"agent{i}_target"] = t
        return out
