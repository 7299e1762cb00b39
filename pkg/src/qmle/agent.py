"""Q-learning with sampled, MLE-amortized argmax and an action-in Q network."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .argmax import SamplingPlan, approx_argmax, build_candidates
from .checkpoint import load_checkpoint, save_checkpoint
from .distributions import ActionSpace, make_predictor, sample_uniform
from .networks import QNetwork
from .nn import adam_step
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    # sampling
    m_target: int = 100
    m_greedy: int = 1000
    ratios: tuple = (0.9, 0.01, 0.09)
    predictors: tuple = ("delta", "categorical")
    use_prior: bool = True
    delta_sigma: float = 0.01
    delta_sigma_absolute: bool = False
    bins: int = 3
    # optimisation
    lr_q: float = 0.0005
    lr_argmax: float = 0.0005
    replay_period: int = 10
    batch_size: int = 256
    start_size: int = 1000
    capacity: int = 1_000_000
    target_period: int = 2000
    prioritized: bool = True
    priority_alpha: float = 0.6
    is_beta: float = 0.2
    # behaviour
    epsilon: float = 0.1
    gamma: float = 0.99
    time_limit: int = 1000
    acting: str = "argmax"          # argmax | predictor
    exploration: str = "epsilon"    # epsilon | gaussian | uniform | none
    exploration_sigma: float = 0.2
    warmup_uniform: bool = True
    # network
    obs_width: int = 128
    act_width: int = 128
    predictor_hidden: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.predictors = tuple(self.predictors)
        self.validate()

    def validate(self):
        counts = ("m_target", "m_greedy", "replay_period", "batch_size", "start_size", "capacity",
                  "target_period", "time_limit", "obs_width", "act_width", "predictor_hidden", "bins")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if len(self.ratios) != len(self.predictors) + 1:
            raise ValueError("need one ratio for uniform sampling plus one per predictor")
        if self.acting not in ("argmax", "predictor"):
            raise ValueError(f"unknown acting mode {self.acting!r}")
        if self.exploration not in ("epsilon", "gaussian", "uniform", "none"):
            raise ValueError(f"unknown exploration {self.exploration!r}")
        SamplingPlan(self.m_target, self.m_greedy, self.ratios)

    @property
    def plan(self) -> SamplingPlan:
        return SamplingPlan(self.m_target, self.m_greedy, self.ratios)

    def replace(self, **overrides) -> "AgentConfig":
        return dataclasses.replace(self, **overrides)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def with_overrides(self, raw: dict[str, str]) -> "AgentConfig":
        """Apply string-valued overrides (from a CLI or config file), parsed per field type."""
        parsed = {}
        defaults = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for key, text in raw.items():
            if key not in defaults:
                raise KeyError(f"unknown agent field {key!r}")
            parsed[key] = parse_value(text, defaults[key])
        return self.replace(**parsed)


def parse_value(text, like):
    if not isinstance(text, str):
        return text
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(float(text))
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if like and isinstance(like[0], (int, float)):
            return tuple(float(t) for t in items)
        return tuple(items)
    return text


@dataclass
class StepStats:
    td_loss: list = field(default_factory=list)
    mle_loss: dict = field(default_factory=dict)

    def add(self, td, mle):
        self.td_loss.append(td)
        for fam, v in mle.items():
            self.mle_loss.setdefault(fam, []).append(v)

    def summary(self) -> dict:
        out = {"td_loss": float(np.mean(self.td_loss)) if self.td_loss else float("nan")}
        for fam, v in self.mle_loss.items():
            out[f"mle_loss_{fam}"] = float(np.mean(v))
        return out


class OffPolicyAgent:
    """Shared acting, storage and learn/sync schedule for the replay-based agents.

    Subclasses provide ``greedy``, ``learn_step``, ``sync_targets`` and ``stores``.
    """

    config: AgentConfig
    space: ActionSpace
    buffer: ReplayBuffer

    def _init_common(self, config: AgentConfig, space: ActionSpace):
        self.config = config
        self.space = space
        self.buffer = ReplayBuffer(config.capacity, space, config.prioritized, config.priority_alpha,
                                   config.is_beta, config.start_size)
        self.env_steps = 0
        self.learn_steps = 0
        self.stats = StepStats()
        self.last_q = float("nan")
        self._episode = None  # (obs, steps taken) of a training episode left open by train_steps

    def greedy(self, obs: np.ndarray, rng) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def learn_step(self, rng: np.random.Generator, batch=None):
        raise NotImplementedError

    def sync_targets(self) -> None:
        raise NotImplementedError

    def stores(self) -> dict:
        raise NotImplementedError

    def act(self, obs: np.ndarray, rng: np.random.Generator, explore: bool = True) -> np.ndarray:
        cfg = self.config
        self.last_q = float("nan")
        if explore and cfg.warmup_uniform and not self.buffer.can_sample():
            return self._finish(sample_uniform(self.space, 1, rng)[0])
        if explore and cfg.exploration == "uniform":
            return self._finish(sample_uniform(self.space, 1, rng)[0])
        if explore and cfg.exploration == "epsilon" and rng.random() < cfg.epsilon:
            return self._finish(sample_uniform(self.space, 1, rng)[0])
        a, self.last_q = self.greedy(obs, rng)
        if explore and cfg.exploration == "gaussian":
            a = a + rng.standard_normal(a.shape) * cfg.exploration_sigma * self.space.half_width
        return self._finish(a)

    def _finish(self, a):
        a = self.space.clip(np.asarray(a, dtype=np.float64))
        return self.space.snap(a) if self.space.discrete else a

    def observe(self, obs, action, reward, next_obs, terminated: bool, rng) -> None:
        """Store one transition and run the periodic learn/sync schedule."""
        cfg = self.config
        discount = 0.0 if terminated else cfg.gamma
        self.buffer.push(Transition(np.asarray(obs, dtype=np.float64), action, reward,
                                    np.asarray(next_obs, dtype=np.float64), discount, action))
        self.env_steps += 1
        if self.env_steps % cfg.replay_period == 0 and self.buffer.can_sample():
            self.learn_step(rng)
        if self.env_steps % cfg.target_period == 0:
            self.sync_targets()

    def run_episode(self, env, rng: np.random.Generator, learn: bool = True, max_steps: int | None = None):
        """One episode; returns (undiscounted return, number of steps)."""
        limit = self.config.time_limit if max_steps is None else min(max_steps, self.config.time_limit)
        obs = env.reset(rng)
        total, steps = 0.0, 0
        for _ in range(limit):
            a = self.act(obs, rng, explore=learn)
            next_obs, r, term, trunc, _ = env.step(a)
            total += r
            steps += 1
            if learn:
                self.observe(obs, a, r, next_obs, term, rng)
            obs = next_obs
            if term or trunc:
                break
        return total, steps

    def train_steps(self, env, rng: np.random.Generator, n: int) -> None:
        """Advance training by ``n`` environment steps, resuming any episode left open.

        Consumes ``rng`` in the same order as back-to-back ``run_episode`` calls, so
        splitting a run into chunks does not change it. ``env`` must not be used for
        anything else while an episode is open.
        """
        for _ in range(n):
            if self._episode is None:
                self._episode = (env.reset(rng), 0)
            obs, t = self._episode
            a = self.act(obs, rng, explore=True)
            next_obs, r, term, trunc, _ = env.step(a)
            self.observe(obs, a, r, next_obs, term, rng)
            t += 1
            self._episode = None if term or trunc or t >= self.config.time_limit else (next_obs, t)

    def evaluate(self, env, rng: np.random.Generator, episodes: int = 10) -> float:
        return float(np.mean([self.run_episode(env, rng, learn=False)[0] for _ in range(episodes)]))

    def save(self, path) -> None:
        save_checkpoint(path, self.stores(), {"env_steps": self.env_steps, "learn_steps": self.learn_steps})

    def load(self, path) -> None:
        counters = load_checkpoint(path, self.stores())
        self.env_steps = counters["env_steps"]
        self.learn_steps = counters["learn_steps"]


def td_update(net, store, batch, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Accumulate grads of the importance-weighted mean squared TD error."""
    n = len(batch)
    q_sa, tape = net.forward(store, batch.obs, batch.action)
    td = y - q_sa
    net.backward(tape, -2.0 * batch.weights * td / n)
    return float(np.mean(batch.weights * td * td)), td


class QMLEAgent(OffPolicyAgent):
    """Q network + target copy, an ensemble of argmax predictors + target copies, and replay."""

    def __init__(self, obs_dim: int, space: ActionSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None):
        config = config or AgentConfig()
        self._init_common(config, space)
        self.obs_dim = obs_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = np.dtype(config.dtype)
        self.q = QNetwork(obs_dim, space.dims, config.obs_width, config.act_width)
        self.q_store = self.q.init_store(rng, dtype)
        self.predictors = []
        for i, fam in enumerate(config.predictors):
            kw = {}
            if fam == "delta":
                kw = {"sigma": config.delta_sigma, "sigma_absolute": config.delta_sigma_absolute}
            elif fam == "categorical":
                kw = {"bins": config.bins}
            self.predictors.append(make_predictor(fam, f"pred{i}", self.q.feat_dim, space,
                                                  config.predictor_hidden, **kw))
        self.pred_stores = [p.init_store(rng, dtype) for p in self.predictors]
        self.q_target = self.q_store.copy()
        self.pred_targets = [s.copy() for s in self.pred_stores]
        self.plan = config.plan

    # ------------------------------------------------------------ querying

    def q_values(self, obs: np.ndarray, actions: np.ndarray, target: bool = False) -> np.ndarray:
        """Q for candidate actions (B, M, A) at states (B, O) -> (B, M)."""
        return self.q(self.q_target if target else self.q_store, obs, actions)

    def _pairs(self, target: bool):
        stores = self.pred_targets if target else self.pred_stores
        return list(zip(self.predictors, stores))

    def candidates(self, obs: np.ndarray, kind: str, rng, prior=None, target: bool = False):
        obs = np.atleast_2d(obs)
        feats = self.q.features(self.q_target if target else self.q_store, obs)
        return build_candidates(self.plan, kind, self._pairs(target), feats, self.space, rng,
                                prior=prior, batch=obs.shape[0])

    def greedy(self, obs: np.ndarray, rng, prior=None) -> tuple[np.ndarray, float]:
        """Approximate argmax action at a single state (online parameters)."""
        obs = np.atleast_2d(obs)
        if self.config.acting == "predictor":
            a = self.delta_head(obs)[0]
            return a, float(self.q_values(obs, a[None, None])[0, 0])
        p = None if prior is None else np.asarray(prior).reshape(1, -1)
        cands = self.candidates(obs, "greedy", rng, prior=p)
        a, v, _ = approx_argmax(lambda acts: self.q_values(obs, acts), cands)
        return a[0], float(v[0])

    def delta_head(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        for i, p in enumerate(self.predictors):
            if p.family == "delta":
                store = (self.pred_targets if target else self.pred_stores)[i]
                feats = self.q.features(self.q_target if target else self.q_store, np.atleast_2d(obs))
                return p.head(store, feats)
        raise ValueError("agent has no delta predictor")

    # ------------------------------------------------------------ learning

    def learn_step(self, rng: np.random.Generator, batch=None, write_back: bool | None = None) -> tuple[float, dict]:
        """One TD + MLE update. Sampled batches write argmax and priority back to replay;
        an explicit batch does so only with ``write_back=True``."""
        cfg = self.config
        b = batch if batch is not None else self.buffer.sample(cfg.batch_size, rng)
        if write_back is None:
            write_back = batch is None
        prior = b.amax if cfg.use_prior else None
        cands = self.candidates(b.next_obs, "target", rng, prior=prior, target=True)
        amax, vmax, _ = approx_argmax(lambda acts: self.q_values(b.next_obs, acts, target=True), cands)
        if write_back:
            self.buffer.update_amax(b.slots, amax, b.generation)
        y = b.reward + b.discount * vmax

        td_loss, td = td_update(self.q, self.q_store, b, y)

        feats = self.q.features(self.q_store, b.next_obs)  # no gradient path into the obs stream
        mle = {}
        for pred, store in zip(self.predictors, self.pred_stores):
            mle[pred.family] = pred.mle_loss(store, feats, amax)

        if not np.isfinite(td_loss) or not all(np.isfinite(v) for v in mle.values()):
            log.warning("non-finite loss at learn step %d; update skipped", self.learn_steps)
            self.q_store.zero_grad()
            for s in self.pred_stores:
                s.zero_grad()
            return td_loss, mle
        if write_back:
            self.buffer.update_priority(b.slots, td, b.generation)
        adam_step(self.q_store, cfg.lr_q)
        for s in self.pred_stores:
            adam_step(s, cfg.lr_argmax)
        self.learn_steps += 1
        self.stats.add(td_loss, mle)
        return td_loss, mle

    def sync_targets(self) -> None:
        self.q_target.load_from(self.q_store)
        for t, s in zip(self.pred_targets, self.pred_stores):
            t.load_from(s)

    def set_sampling(self, space: ActionSpace | None = None, ratios=None) -> None:
        """Swap the action support and/or candidate ratios mid-run; parameters are kept."""
        if space is not None:
            self.space = space
            self.buffer.space = space
        if ratios is not None:
            self.config = self.config.replace(ratios=tuple(ratios))
            self.plan = self.config.plan

    # ------------------------------------------------------------ persistence

    def stores(self) -> dict:
        out = {"q": self.q_store, "q_target": self.q_target}
        for i, (s, t) in enumerate(zip(self.pred_stores, self.pred_targets)):
            out[f"pred{i}"] = s
            out[f"pred{i}_target"] = t
        return out
