"""QMLE configurations used as ablation arms."""
from __future__ import annotations

from ..agent import AgentConfig

LOCAL_SIGMA = 0.001


def qmle_local_variant(config: AgentConfig | None = None) -> AgentConfig:
    """Candidates come only from the delta head plus N(0, 0.001^2) noise; acting uses the head."""
    config = config or AgentConfig()
    return config.replace(predictors=("delta",), ratios=(0.0, 1.0), delta_sigma=LOCAL_SIGMA,
                          delta_sigma_absolute=True, use_prior=False, acting="predictor")


def qmle_global_variant(config: AgentConfig | None = None, uniform: float = 0.5) -> AgentConfig:
    """The local variant plus uniform candidates over the whole box and the stored prior."""
    return qmle_local_variant(config).replace(ratios=(uniform, 1.0 - uniform), use_prior=True)


def uniform_only_variant(config: AgentConfig | None = None) -> AgentConfig:
    """No predictors and no prior: plain Monte-Carlo maximization."""
    config = config or AgentConfig()
    return config.replace(predictors=(), ratios=(1.0,), use_prior=False)
