"""Action spaces, uniform sampling and the parametric argmax predictors.

Two predictor families are provided. :class:`DeltaPredictor` emits one point
per state (tanh-squashed into the box) and is fitted by squared error, the
fixed-variance Gaussian likelihood. :class:`CategoricalPredictor` emits an
independent softmax per action dimension over the bin centres of a coarse
grid and is fitted by cross-entropy against the nearest bin of the target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import GroupSoftmax, Linear, ParamStore, ReLU, Sequential, Tanh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActionSpace:
    low: np.ndarray
    high: np.ndarray
    bins: int | None = None

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.shape != high.shape or low.ndim != 1:
            raise ValueError("low/high must be 1-d arrays of equal length")
        if not np.all(low < high):
            raise ValueError("need low < high in every dimension")
        if self.bins is not None and self.bins < 2:
            raise ValueError("a discretization needs at least 2 bins")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def box(cls, dims: int, low: float = -1.0, high: float = 1.0, bins: int | None = None):
        return cls(np.full(dims, low), np.full(dims, high), bins)

    @property
    def dims(self) -> int:
        return self.low.shape[0]

    @property
    def discrete(self) -> bool:
        return self.bins is not None

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    @property
    def n_actions(self) -> int:
        """Size of the discrete grid as an exact Python int (never enumerated)."""
        if not self.discrete:
            raise ValueError("continuous space has no finite action count")
        return self.bins ** self.dims

    def continuous(self) -> "ActionSpace":
        return ActionSpace(self.low, self.high, None)

    def discretized(self, bins: int = 3) -> "ActionSpace":
        return ActionSpace(self.low, self.high, bins)

    def bin_centers(self, bins: int | None = None) -> np.ndarray:
        """(dims, bins) grid coordinates; 3 bins gives {low, mid, high}."""
        bins = bins or self.bins or 3
        frac = np.linspace(0.0, 1.0, bins)
        return self.low[:, None] + (self.high - self.low)[:, None] * frac[None, :]

    def contains(self, a: np.ndarray) -> bool:
        a = np.asarray(a)
        return bool(np.all(a >= self.low) and np.all(a <= self.high))

    def clip(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.low, self.high)

    def bin_index(self, a: np.ndarray, bins: int | None = None) -> np.ndarray:
        """Nearest bin per coordinate; exact ties go to the lower index."""
        centers = self.bin_centers(bins)
        a = np.asarray(a, dtype=np.float64)
        dist = np.abs(a[..., None] - centers)
        return np.argmin(dist, axis=-1)

    def from_index(self, idx: np.ndarray, bins: int | None = None) -> np.ndarray:
        centers = self.bin_centers(bins)
        idx = np.asarray(idx)
        return centers[np.arange(self.dims), idx]

    def snap(self, a: np.ndarray) -> np.ndarray:
        return self.from_index(self.bin_index(a))

    def flat_index(self, a: np.ndarray) -> np.ndarray:
        """Row-major index into the bins**dims grid (small grids only)."""
        idx = self.bin_index(a)
        weights = self.bins ** np.arange(self.dims - 1, -1, -1)
        return idx @ weights

    def from_flat_index(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        digits = []
        for _ in range(self.dims):
            digits.append(k % self.bins)
            k = k // self.bins
        return self.from_index(np.stack(digits[::-1], axis=-1))


def sample_uniform(space: ActionSpace, n: int, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """``n`` uniform actions, shape (n, dims), or (batch, n, dims) if ``batch``.

    On a discretized space the draws are uniform over the grid.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    shape = (n, space.dims) if batch is None else (batch, n, space.dims)
    if space.discrete:
        return space.from_index(rng.integers(0, space.bins, size=shape))
    return rng.uniform(space.low, space.high, size=shape)


class DeltaPredictor:
    """Point-mass argmax predictor: hidden ReLU layer, then tanh into the box."""

    family = "delta"

    def __init__(self, name: str, feat_dim: int, space: ActionSpace, hidden: int = 128,
                 sigma: float = 0.01, sigma_absolute: bool = False):
        self.name = name
        self.space = space
        self.net = Sequential([
            Linear(f"{name}.hidden", feat_dim, hidden),
            ReLU(hidden),
            Linear(f"{name}.out", hidden, space.dims),
            Tanh(space.dims),
        ])
        # perturbation scale is a fraction of the half width unless absolute
        self.sigma = sigma * (1.0 if sigma_absolute else space.half_width)

    def init_store(self, rng: np.random.Generator, dtype=np.float64) -> ParamStore:
        store = ParamStore(dtype)
        self.net.init(store, rng)
        return store

    def place(self, store: ParamStore, point: np.ndarray, scale: float = 0.01) -> None:
        """Start the head at ``point`` for every input by shrinking the output weights."""
        z = (np.asarray(point, dtype=np.float64) - self.space.center) / self.space.half_width
        store[f"{self.name}.out.W"][...] *= scale
        store[f"{self.name}.out.b"][...] = np.arctanh(np.clip(z, -0.999, 0.999))
        store.version += 1

    def head(self, store: ParamStore, feats: np.ndarray) -> np.ndarray:
        return self.space.center + self.space.half_width * self.net.predict(store, feats)

    def sample(self, store: ParamStore, feats: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """(batch, n, dims): the head itself first, then Gaussian perturbations."""
        mu = self.head(store, feats)
        return perturb(mu, n, self.sigma, self.space, rng)

    def mle_loss(self, store: ParamStore, feats: np.ndarray, target: np.ndarray) -> float:
        """Mean squared error to ``target``; accumulates grads into ``store``."""
        target = _clamp_target(self.space, target)
        tanh_out, tape = self.net(store, feats)
        a = self.space.center + self.space.half_width * tanh_out
        diff = a - target
        n = feats.shape[0]
        self.net.backprop(tape, 2.0 * diff * self.space.half_width / n)
        return float(np.sum(diff * diff) / n)


def perturb(mu: np.ndarray, n: int, sigma, space: ActionSpace, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        return np.empty(mu.shape[:1] + (0, space.dims))
    out = np.repeat(mu[:, None, :], n, axis=1)
    if n > 1:
        noise = rng.standard_normal((mu.shape[0], n - 1, space.dims)) * sigma
        out[:, 1:] = space.clip(out[:, 1:] + noise)
    return out


class CategoricalPredictor:
    """Factored categorical over the per-dimension bin grid (bang-off-bang by default)."""

    family = "categorical"

    def __init__(self, name: str, feat_dim: int, space: ActionSpace, hidden: int = 128, bins: int = 3):
        self.name = name
        self.space = space
        self.bins = bins
        self.logits_net = Sequential([
            Linear(f"{name}.hidden", feat_dim, hidden),
            ReLU(hidden),
            Linear(f"{name}.out", hidden, space.dims * bins),
        ])
        self.softmax = GroupSoftmax(space.dims * bins, bins)
        self.centers = space.bin_centers(bins)

    def init_store(self, rng: np.random.Generator, dtype=np.float64) -> ParamStore:
        store = ParamStore(dtype)
        self.logits_net.init(store, rng)
        return store

    def probs(self, store: ParamStore, feats: np.ndarray) -> np.ndarray:
        """(batch, dims, bins); each row sums to one."""
        logits = self.logits_net.predict(store, feats)
        p, _ = self.softmax.forward(store, logits)
        return p.reshape(feats.shape[0], self.space.dims, self.bins)

    def head(self, store: ParamStore, feats: np.ndarray) -> np.ndarray:
        """Mode of the distribution as a continuous action."""
        idx = self.probs(store, feats).argmax(axis=-1)
        return self.space.from_index(idx, self.bins)

    def sample(self, store: ParamStore, feats: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.probs(store, feats)
        cdf = np.cumsum(p, axis=-1)
        u = rng.random((feats.shape[0], n, self.space.dims, 1))
        idx = (u > cdf[:, None, :, :-1]).sum(axis=-1)
        return self.space.from_index(idx, self.bins)

    def mle_loss(self, store: ParamStore, feats: np.ndarray, target: np.ndarray) -> float:
        """Cross-entropy (summed over dimensions) to the nearest-bin one-hot."""
        target = _clamp_target(self.space, target)
        idx = self.space.bin_index(target, self.bins)
        logits, tape = self.logits_net(store, feats)
        n = feats.shape[0]
        z = logits.reshape(n, self.space.dims, self.bins)
        z = z - z.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        onehot = np.zeros_like(logp)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        loss = -np.sum(logp * onehot) / n
        dlogits = (np.exp(logp) - onehot) / n
        self.logits_net.backprop(tape, dlogits.reshape(n, -1))
        return float(loss)


def _clamp_target(space: ActionSpace, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    clipped = space.clip(target)
    if not np.array_equal(clipped, target):
        log.warning("MLE target outside the action box; clamped")
    return clipped


def make_predictor(family: str, name: str, feat_dim: int, space: ActionSpace, hidden: int = 128, **kw):
    if family == "delta":
        return DeltaPredictor(name, feat_dim, space, hidden, **kw)
    if family == "categorical":
        return CategoricalPredictor(name, feat_dim, space, hidden, **kw)
    raise ValueError(f"unknown predictor family {family!r}")
