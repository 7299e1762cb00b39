"""Comparison agents: each one removes or replaces one ingredient of QMLE."""
from .dpg import DPGAgent, actor_ascent_step
from .dqn import DEFAULT_CEILING, DQNAgent, InfeasibleActionSpaceError, check_enumerable
from .marl import MultiAgentQMLE, VDNAgent
from .policy_gradient import (TabularSoftmaxPolicy, continuous_bandit_true_pg, delta_pg_step,
                              gaussian_objective, gaussian_pg_step, gaussian_policy_gradient,
                              run_true_pg, true_pg_step)
from .variants import qmle_global_variant, qmle_local_variant, uniform_only_variant

__all__ = [
    "DPGAgent", "actor_ascent_step", "DEFAULT_CEILING", "DQNAgent", "InfeasibleActionSpaceError",
    "check_enumerable", "MultiAgentQMLE", "VDNAgent", "TabularSoftmaxPolicy",
    "continuous_bandit_true_pg", "delta_pg_step", "gaussian_objective", "gaussian_pg_step",
    "gaussian_policy_gradient", "run_true_pg", "true_pg_step", "qmle_global_variant",
    "qmle_local_variant", "uniform_only_variant",
]
