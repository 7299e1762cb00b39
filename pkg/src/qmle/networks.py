"""Action-in Q network (observation stream, action stream, joint head) and
the action-out network used by the DQN ablation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ELU, LayerNorm, Linear, ParamStore, Residual, Sequential, Tape


def observation_stream(obs_dim: int, width: int) -> Sequential:
    return Sequential([
        Linear("obs.embed", obs_dim, width),
        Residual("obs.res", width, "relu"),
        LayerNorm("obs.ln", width),
        ELU(width),
    ])


@dataclass
class QTape:
    obs: Tape
    act: Tape
    joint: Tape
    repeat: int
    squeeze: bool


class QNetwork:
    """Q(s, a) -> scalar, with observation features exposed for the predictors."""

    def __init__(self, obs_dim: int, act_dim: int, obs_width: int = 128, act_width: int = 128):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.obs_width = self.feat_dim = obs_width
        joint = obs_width + act_width
        self.obs_stream = observation_stream(obs_dim, obs_width)
        self.act_stream = Sequential([
            Linear("act.embed", act_dim, act_width),
            LayerNorm("act.ln", act_width),
            ELU(act_width),
        ])
        self.joint = Sequential([
            Residual("joint.res", joint, "relu"),
            LayerNorm("joint.ln", joint),
            ELU(joint),
            Linear("joint.out", joint, 1),
        ])

    def init_store(self, rng: np.random.Generator, dtype=np.float64) -> ParamStore:
        store = ParamStore(dtype)
        for part in (self.obs_stream, self.act_stream, self.joint):
            part.init(store, rng)
        return store

    def features(self, store: ParamStore, obs: np.ndarray) -> np.ndarray:
        return self.obs_stream.predict(store, np.atleast_2d(obs))

    def forward(self, store: ParamStore, obs: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, QTape]:
        """Values of M actions per state: obs (B, O), actions (B, M, A) -> (B, M).

        A 2-d ``actions`` array is treated as one action per state.
        """
        obs = np.atleast_2d(obs)
        squeeze = actions.ndim == 2
        if squeeze:
            actions = actions[:, None, :]
        b, m, _ = actions.shape
        feats, t_obs = self.obs_stream(store, obs)
        acts, t_act = self.act_stream(store, actions.reshape(b * m, -1))
        joint_in = np.concatenate([np.repeat(feats, m, axis=0), acts], axis=1)
        q, t_joint = self.joint(store, joint_in)
        q = q.reshape(b, m)
        return (q[:, 0] if squeeze else q), QTape(t_obs, t_act, t_joint, m, squeeze)

    def __call__(self, store: ParamStore, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.forward(store, obs, actions)[0]

    def backward(self, tape: QTape, dq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Accumulate grads for sum(dq * q); returns (d_obs, d_actions)."""
        m = tape.repeat
        dq = np.asarray(dq, dtype=np.float64).reshape(-1, 1)
        djoint = self.joint.backprop(tape.joint, dq)
        w = self.obs_width
        dfeats = djoint[:, :w].reshape(-1, m, w).sum(axis=1)
        dacts = self.act_stream.backprop(tape.act, djoint[:, w:])
        dobs = self.obs_stream.backprop(tape.obs, dfeats)
        dacts = dacts.reshape(-1, m, self.act_dim)
        return dobs, (dacts[:, 0] if tape.squeeze else dacts)


class ActionOutNetwork:
    """State -> one value per enumerated action (DQN head)."""

    def __init__(self, obs_dim: int, n_actions: int, width: int = 128):
        self.obs_stream = observation_stream(obs_dim, width)
        self.head = Sequential([Linear("out", width, n_actions)])
        self.net = Sequential(self.obs_stream.layers + self.head.layers)
        self.n_actions = n_actions

    def init_store(self, rng: np.random.Generator, dtype=np.float64) -> ParamStore:
        store = ParamStore(dtype)
        self.net.init(store, rng)
        return store

    def __call__(self, store: ParamStore, obs: np.ndarray) -> np.ndarray:
        return self.net.predict(store, np.atleast_2d(obs))

    def forward(self, store: ParamStore, obs: np.ndarray):
        return self.net(store, np.atleast_2d(obs))

    def backward(self, tape: Tape, dq: np.ndarray) -> np.ndarray:
        return self.net.backprop(tape, dq)
