import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmle.agent import AgentConfig, QMLEAgent, td_update
from qmle.nn import adam_step
from qmle.baselines import (DPGAgent, DQNAgent, InfeasibleActionSpaceError, MultiAgentQMLE, TabularSoftmaxPolicy,
                            VDNAgent, actor_ascent_step, check_enumerable, continuous_bandit_true_pg,
                            gaussian_objective, gaussian_policy_gradient, qmle_local_variant, true_pg_step,
                            uniform_only_variant)
from qmle.distributions import ActionSpace, DeltaPredictor
from qmle.envs import BimodalSurface, Env, EnvSpec, bimodal_bandit

from _oracles import softmax_true_gradient_fd, tabular_q_contextual

SMALL = AgentConfig(m_target=16, m_greedy=32, batch_size=32, start_size=200, replay_period=1, target_period=100,
                    capacity=5000, obs_width=16, act_width=16, predictor_hidden=16, lr_q=1e-3, lr_argmax=1e-3)


# ------------------------------------------------------------ tabular and continuous true gradients


def test_two_arm_probability_rises_every_step():
    policy = TabularSoftmaxPolicy.uniform(2)
    prev = policy.probs()[0]
    for _ in range(200):
        policy = true_pg_step(policy, [1.0, 0.0], 0.5)
        assert policy.probs()[0] > prev
        prev = policy.probs()[0]


def test_equal_rewards_leave_policy_unchanged():
    policy = TabularSoftmaxPolicy(np.array([0.3, -0.2, 0.1]))
    assert np.array_equal(true_pg_step(policy, [2.0, 2.0, 2.0], 1.0).prefs, policy.prefs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.integers(0, 2**31 - 1))
def test_softmax_gradient_matches_finite_differences(rewards, seed):
    rewards = np.array(rewards)
    prefs = np.random.default_rng(seed).normal(size=len(rewards))
    step = true_pg_step(TabularSoftmaxPolicy(prefs), rewards, 1.0).prefs - prefs
    np.testing.assert_allclose(step, softmax_true_gradient_fd(prefs, rewards), atol=1e-7)


def test_true_pg_rejects_mismatched_rewards():
    with pytest.raises(ValueError):
        true_pg_step(TabularSoftmaxPolicy.uniform(3), [1.0, 2.0], 0.1)


SURFACE_1D = BimodalSurface.default(1)


@pytest.mark.parametrize("family", ["delta", "gaussian"])
def test_local_basin_start_converges_to_local_mode(family):
    traj = continuous_bandit_true_pg(SURFACE_1D, family, init=-0.3, lr=0.01, steps=3000)
    assert abs(traj[-1] - SURFACE_1D.local_center[0]) < 0.05


@pytest.mark.parametrize("family", ["delta", "gaussian"])
def test_global_mode_is_stationary(family):
    traj = continuous_bandit_true_pg(SURFACE_1D, family, init=0.6, lr=0.01, steps=500, sigma=0.05)
    assert abs(traj[-1] - 0.6) < 0.01


@pytest.mark.parametrize("mu", [-0.7, -0.3, 0.0, 0.45, 0.6, 0.9])
def test_gaussian_gradient_matches_finite_difference(mu):
    h = 1e-5
    fd = (gaussian_objective(mu + h, 0.1, SURFACE_1D.value)
          - gaussian_objective(mu - h, 0.1, SURFACE_1D.value)) / (2 * h)
    assert gaussian_policy_gradient(mu, 0.1, SURFACE_1D.value) == pytest.approx(fd, abs=1e-4)


# ------------------------------------------------------------ DPG


def test_actor_converges_on_quadratic_critic():
    space = ActionSpace.box(2)
    actor = DeltaPredictor("actor", 3, space, hidden=16)
    rng = np.random.default_rng(0)
    store = actor.init_store(rng, np.float64)
    target = np.array([0.3, -0.4])
    actor.place(store, target + 0.05)
    feats = np.ones((1, 3))
    for _ in range(3000):
        actor_ascent_step(actor, store, feats, lambda a: -2.0 * (a - target), 1e-3)
    assert np.max(np.abs(actor.head(store, feats)[0] - target)) < 1e-3


def test_zero_critic_gradient_freezes_actor(rng):
    actor = DeltaPredictor("actor", 3, ActionSpace.box(2), hidden=8)
    store = actor.init_store(rng)
    before = {k: v.copy() for k, v in store.params.items()}
    for _ in range(20):
        actor_ascent_step(actor, store, rng.normal(size=(4, 3)), lambda a: np.zeros_like(a), 1e-2)
    for k, v in before.items():
        np.testing.assert_array_equal(store[k], v)


def test_dpg_actor_step_does_not_move_critic(rng):
    env = bimodal_bandit(2)
    agent = DPGAgent(1, env.action_space, SMALL, rng)
    while agent.env_steps < 250:
        agent.run_episode(env, rng)
    b = agent.buffer.sample(8, rng)
    # oracle: the critic after a TD-only update, computed on a detached copy
    expected = agent.q_store.copy()
    y = b.reward + b.discount * agent.q(agent.q_target, b.next_obs, agent.policy(b.next_obs, target=True))
    td_update(agent.q, expected, b, y)
    adam_step(expected, SMALL.lr_q)
    actor_before = agent.policy(np.ones((1, 1)))
    agent.learn_step(rng, batch=b)
    assert not np.array_equal(actor_before, agent.policy(np.ones((1, 1))))
    for k, v in expected.params.items():
        np.testing.assert_array_equal(agent.q_store[k], v)
    assert agent.q_store.grad_norm() == 0.0


def test_dpg_requires_continuous_space(rng):
    with pytest.raises(ValueError):
        DPGAgent(1, ActionSpace.box(2, bins=3), SMALL, rng)


# ------------------------------------------------------------ QMLE variants


def test_local_variant_with_zero_sigma_collapses_to_delta(rng):
    cfg = qmle_local_variant(SMALL).replace(delta_sigma=0.0)
    agent = QMLEAgent(1, ActionSpace.box(2), cfg, rng)
    cands = agent.candidates(np.ones((3, 1)), "target", rng, target=True)
    head = agent.delta_head(np.ones((3, 1)), target=True)
    assert np.all(cands.actions == head[:, None, :])
    batch = _bandit_batch(agent, rng)
    _, mle = agent.learn_step(rng, batch=batch)
    assert mle["delta"] == pytest.approx(0.0, abs=1e-10)


def _bandit_batch(agent, rng):
    env = bimodal_bandit(2)
    while not agent.buffer.can_sample():
        agent.run_episode(env, rng, learn=True)
    return agent.buffer.sample(16, rng)


def test_local_variant_settings():
    cfg = qmle_local_variant(SMALL)
    assert cfg.ratios == (0.0, 1.0) and cfg.predictors == ("delta",)
    assert cfg.delta_sigma == 0.001 and cfg.delta_sigma_absolute and cfg.acting == "predictor"


def test_uniform_only_variant_runs(rng):
    agent = QMLEAgent(1, ActionSpace.box(2), uniform_only_variant(SMALL), rng)
    assert agent.predictors == []
    _, mle = agent.learn_step(rng, batch=_bandit_batch(agent, rng))
    assert mle == {}


# ------------------------------------------------------------ DQN


def test_dqn_output_count(rng):
    agent = DQNAgent(1, ActionSpace.box(2, bins=3), SMALL, rng)
    assert agent.n_actions == 9
    assert agent.q_values(np.ones((1, 1))).shape == (1, 9)


def test_dqn_refuses_huge_grids(rng):
    with pytest.raises(InfeasibleActionSpaceError, match=str(3**38)):
        DQNAgent(1, ActionSpace.box(38, bins=3), SMALL, rng)


@settings(max_examples=40, deadline=None)
@given(dims=st.integers(1, 40), bins=st.integers(2, 6))
def test_feasibility_is_a_function_of_grid_size(dims, bins):
    space = ActionSpace.box(dims, bins=bins)
    if bins**dims > 10**6:
        with pytest.raises(InfeasibleActionSpaceError):
            check_enumerable(space)
    else:
        assert check_enumerable(space) == bins**dims


class ContextualBandit(Env):
    """Three one-hot contexts, a 3x3 action grid, a fixed reward table."""

    def __init__(self, table):
        self.table = table
        self.space = ActionSpace.box(2, bins=3)
        self.spec = EnvSpec(3, self.space, 1, "table[context, action]", "after one step")
        self.context = 0

    def reset(self, rng):
        self.context = int(rng.integers(3))
        return np.eye(3)[self.context]

    def step(self, action):
        k = int(self.space.flat_index(np.asarray(action)))
        return np.eye(3)[self.context], float(self.table[self.context, k]), True, False, {}


def test_dqn_agrees_with_tabular_q_on_contextual_bandit():
    rng = np.random.default_rng(4)
    table = rng.uniform(0, 1, (3, 9))
    table[np.arange(3), [2, 4, 7]] += 1.0  # clear winners
    env = ContextualBandit(table)
    oracle = tabular_q_contextual(np.arange(3), np.arange(9), lambda c, a: table[c, a])
    agent = DQNAgent(3, env.space, SMALL.replace(exploration="uniform"), np.random.default_rng(0))
    while agent.env_steps < 3000:
        agent.run_episode(env, rng)
    for c in range(3):
        a, _ = agent.greedy(np.eye(3)[c], rng)
        assert env.space.flat_index(a) == int(np.argmax(oracle[c]))


# ------------------------------------------------------------ multi-agent


class SeparableGame(Env):
    def __init__(self):
        self.spec = EnvSpec(1, ActionSpace.box(2), 1, "f(a1) + g(a2)", "after one step")

    def reset(self, rng):
        return np.ones(1)

    def step(self, a):
        return np.ones(1), float(-(a[0] - 0.5) ** 2 - (a[1] + 0.3) ** 2), True, False, {}


def test_vdn_solves_separable_game():
    env = SeparableGame()
    rng = np.random.default_rng(0)
    agent = VDNAgent(1, env.action_space, SMALL.replace(exploration="uniform"), rng)
    while agent.env_steps < 2000:
        agent.run_episode(env, rng)
    a, _ = agent.greedy(np.ones(1), rng)
    assert np.allclose(a, [0.5, -0.3], atol=0.1)


def test_multi_agent_qmle_candidates_and_decentralized_head(rng):
    cfg = SMALL.replace(predictors=("delta",), ratios=(0.5, 0.5))
    agent = MultiAgentQMLE(1, ActionSpace.box(2), cfg, rng)
    cands = agent.candidates(np.ones((4, 1)), "target", rng, prior=np.zeros((4, 2)))
    assert cands.shape == (4, 17, 2)
    head = agent.joint_head(np.ones((1, 1)))[0]
    np.testing.assert_array_equal(agent.greedy(np.ones(1), rng)[0], head)
    with pytest.raises(ValueError):
        MultiAgentQMLE(1, ActionSpace.box(2), SMALL, rng)


def test_baselines_share_checkpoint_format(tmp_path, rng):
    for agent in (DPGAgent(1, ActionSpace.box(2), SMALL, rng), DQNAgent(1, ActionSpace.box(2, bins=3), SMALL, rng),
                  VDNAgent(1, ActionSpace.box(2), SMALL, rng)):
        path = tmp_path / f"{type(agent).__name__}.npz"
        agent.save(path)
        agent.load(path)
