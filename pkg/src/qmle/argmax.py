"""Candidate-set construction and the sampled approximate argmax/max."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distributions import ActionSpace, sample_uniform

log = logging.getLogger(__name__)

UNIFORM = "uniform"
PRIOR = "prior"


class EmptyCandidateSetError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingPlan:
    m_target: int = 100
    m_greedy: int = 1000
    ratios: tuple[float, ...] = (0.9, 0.01, 0.09)

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if self.m_target < 1 or self.m_greedy < 1:
            raise ValueError("sampling budgets must be >= 1")
        if any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ValueError(f"ratios must be non-negative and sum to 1, got {r}")

    def budget(self, kind: str) -> int:
        if kind == "target":
            return self.m_target
        if kind == "greedy":
            return self.m_greedy
        raise ValueError(f"unknown budget kind {kind!r}")

    def counts(self, m: int) -> list[int]:
        """Per-source sample counts: floor for each predictor, remainder to uniform."""
        pred = [math.floor(r * m + 1e-9) for r in self.ratios[1:]]
        return [m - sum(pred)] + pred


@dataclass
class CandidateSet:
    """Candidate actions for a batch of states, (batch, M, dims), plus per-column source tags."""

    actions: np.ndarray
    sources: list[str]

    def __len__(self) -> int:
        return self.actions.shape[1]


def build_candidates(plan: SamplingPlan, kind: str, predictors: Sequence, feats: np.ndarray | None,
                     space: ActionSpace, rng: np.random.Generator, prior: np.ndarray | None = None,
                     batch: int | None = None) -> CandidateSet:
    """Union of uniform draws, draws from each ``(predictor, store)`` pair and the prior.

    ``feats`` are observation features of shape (batch, F); predictors whose
    ratio rounds to zero samples are skipped entirely.
    """
    if len(predictors) != len(plan.ratios) - 1:
        raise ValueError(f"{len(predictors)} predictors for {len(plan.ratios)} ratios")
    if batch is None:
        batch = feats.shape[0] if feats is not None else prior.shape[0]
    counts = plan.counts(plan.budget(kind))
    parts, sources = [], []
    if counts[0] > 0:
        parts.append(sample_uniform(space, counts[0], rng, batch=batch))
        sources += [UNIFORM] * counts[0]
    for i, ((pred, store), n) in enumerate(zip(predictors, counts[1:]), start=1):
        if n == 0:
            continue
        a = pred.sample(store, feats, n, rng)
        parts.append(space.snap(a) if space.discrete else a)
        sources += [f"predictor-{i}"] * n
    if prior is not None:
        parts.append(np.asarray(prior, dtype=np.float64).reshape(batch, 1, space.dims))
        sources.append(PRIOR)
    if not parts:
        raise EmptyCandidateSetError("no candidates: zero budget and no prior")
    return CandidateSet(np.concatenate(parts, axis=1), sources)


def approx_argmax(q: Callable[[np.ndarray], np.ndarray], candidates: CandidateSet | np.ndarray):
    """Best candidate per state under ``q``.

    ``q`` maps a (batch, M, dims) array to (batch, M) values. Returns
    ``(actions, values, indices)``; ties resolve to the lowest index and
    non-finite values are excluded.
    """
    acts = candidates.actions if isinstance(candidates, CandidateSet) else np.asarray(candidates)
    if acts.shape[1] == 0:
        raise EmptyCandidateSetError("approx_argmax needs at least one candidate")
    values = np.asarray(q(acts), dtype=np.float64)
    finite = np.isfinite(values)
    if not finite.all():
        if not finite.any(axis=1).all():
            raise FloatingPointError("every candidate Q value is non-finite")
        log.warning("excluding %d non-finite candidate Q values", int((~finite).sum()))
        values = np.where(finite, values, -np.inf)
    idx = np.argmax(values, axis=1)
    rows = np.arange(acts.shape[0])
    return acts[rows, idx], values[rows, idx], idx

