"""
Global versus local maximization on a bimodal bandit
====================================================

One-step bandit whose reward is the bimodal surface. Both learners start
with their delta predictor in the low, wide basin. The local learner only
samples next to its predictor and follows the gradient uphill, so it stays
there. The global learner also draws uniform candidates and finds the peak.
"""

import numpy as np

from qmle.agent import QMLEAgent
from qmle.baselines import qmle_global_variant, qmle_local_variant
from qmle.harness import DESK, LOCAL_START, bimodal_modes
from qmle.envs import bimodal_bandit

env = bimodal_bandit(2)
peak, shoulder = bimodal_modes()
base = DESK.replace(m_target=32, m_greedy=32, replay_period=1, target_period=10, capacity=20_000,
                    exploration="uniform")

for name, make in (("local", qmle_local_variant), ("global", qmle_global_variant)):
    rng = np.random.default_rng(0)
    agent = QMLEAgent(1, env.action_space, make(base), rng)
    agent.predictors[0].place(agent.pred_stores[0], np.array(LOCAL_START))
    agent.sync_targets()
    while agent.env_steps < 3000:
        agent.run_episode(env, rng)
    head = agent.delta_head(np.ones((1, 1)))[0]
    print(f"{name:6s} ends at {np.round(head, 3)}   "
          f"distance to peak {np.linalg.norm(head - peak):.3f}, to shoulder {np.linalg.norm(head - shoulder):.3f}")
