"""Small dense layers with hand-written reverse-mode gradients, plus Adam.

Layers never own their parameters. They hold a name prefix and read/write
arrays in a :class:`ParamStore`, so the same layer graph can be evaluated
against an online store and a target copy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LAYERNORM_EPS = 1e-5


class ConfigurationError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


class ParamStore:
    """Named parameter arrays with gradient accumulators and Adam moments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0
        # bumped on every in-place parameter change; tapes compare against it
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        value = np.asarray(value, dtype=self.dtype).copy()
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grad_norm(self, prefix: str = "") -> float:
        sq = sum(float(np.sum(g * g)) for k, g in self.grads.items() if k.startswith(prefix))
        return float(np.sqrt(sq))

    def copy(self) -> "ParamStore":
        other = ParamStore(self.dtype)
        for k in self.params:
            other.params[k] = self.params[k].copy()
            other.grads[k] = np.zeros_like(self.params[k])
            other.adam_m[k] = self.adam_m[k].copy()
            other.adam_v[k] = self.adam_v[k].copy()
        other.step = self.step
        return other

    def load_from(self, other: "ParamStore") -> None:
        """Overwrite parameter values with those of ``other`` (same names)."""
        if set(other.params) != set(self.params):
            raise ConfigurationError("parameter name sets differ")
        for k, v in other.params.items():
            np.copyto(self.params[k], v)
        self.version += 1

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"param/{k}"] = self.params[k]
            out[f"adam_m/{k}"] = self.adam_m[k]
            out[f"adam_v/{k}"] = self.adam_v[k]
        out["adam_step"] = np.array(self.step, dtype=np.int64)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            np.copyto(self.params[k], state[f"param/{k}"])
            np.copyto(self.adam_m[k], state[f"adam_m/{k}"])
            np.copyto(self.adam_v[k], state[f"adam_v/{k}"])
        self.step = int(state["adam_step"])
        self.version += 1


def adam_step(store: ParamStore, lr: float) -> bool:
    """Apply one Adam update from the accumulated grads, then zero them.

    Returns False (and leaves parameters untouched) if any gradient entry
    is non-finite.
    """
    for k, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient in %r; update aborted", k)
            store.zero_grad()
            return False
    store.step += 1
    t = store.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for k, p in store.params.items():
        g = store.grads[k]
        m = store.adam_m[k]
        v = store.adam_v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        g.fill(0.0)
    store.version += 1
    return True


# ---------------------------------------------------------------- layers


class Layer:
    n_in: int
    n_out: int

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        pass

    def forward(self, store: ParamStore, x: np.ndarray):
        raise NotImplementedError

    def backward(self, store: ParamStore, cache, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def init(self, store, rng):
        bound = 1.0 / np.sqrt(self.n_in)
        store.add(f"{self.name}.W", rng.uniform(-bound, bound, (self.n_in, self.n_out)))
        store.add(f"{self.name}.b", rng.uniform(-bound, bound, self.n_out))

    def forward(self, store, x):
        return x @ store[f"{self.name}.W"] + store[f"{self.name}.b"], x

    def backward(self, store, x, dy):
        store.grads[f"{self.name}.W"] += x.T @ dy
        store.grads[f"{self.name}.b"] += dy.sum(axis=0)
        return dy @ store[f"{self.name}.W"].T


class _Activation(Layer):
    def __init__(self, width: int):
        self.n_in = self.n_out = width


class ReLU(_Activation):
    def forward(self, store, x):
        y = np.maximum(x, 0.0)
        return y, y > 0

    def backward(self, store, mask, dy):
        return dy * mask


class ELU(_Activation):
    def forward(self, store, x):
        # exp(min(x, 0)) is also the derivative on both branches
        e = np.exp(np.minimum(x, 0.0))
        return np.maximum(x, 0.0) + (e - 1.0), e

    def backward(self, store, e, dy):
        return dy * e


class Tanh(_Activation):
    def forward(self, store, x):
        y = np.tanh(x)
        return y, y

    def backward(self, store, y, dy):
        return dy * (1.0 - y * y)


class LayerNorm(Layer):
    def __init__(self, name: str, width: int, eps: float = LAYERNORM_EPS):
        self.name, self.n_in, self.n_out, self.eps = name, width, width, eps

    def init(self, store, rng):
        store.add(f"{self.name}.gain", np.ones(self.n_in))
        store.add(f"{self.name}.offset", np.zeros(self.n_in))

    def forward(self, store, x):
        n = x.shape[-1]
        xc = x - np.add.reduce(x, axis=-1, keepdims=True) / n
        inv = 1.0 / np.sqrt(np.add.reduce(xc * xc, axis=-1, keepdims=True) / n + self.eps)
        xhat = xc * inv
        return xhat * store[f"{self.name}.gain"] + store[f"{self.name}.offset"], (xhat, inv)

    def backward(self, store, cache, dy):
        xhat, inv = cache
        store.grads[f"{self.name}.gain"] += (dy * xhat).sum(axis=0)
        store.grads[f"{self.name}.offset"] += dy.sum(axis=0)
        g = dy * store[f"{self.name}.gain"]
        n = g.shape[-1]
        return inv * (g - np.add.reduce(g, axis=-1, keepdims=True) / n
                      - xhat * (np.add.reduce(g * xhat, axis=-1, keepdims=True) / n))


class Residual(Layer):
    """``x + Linear(act(Linear(x)))`` at constant width."""

    def __init__(self, name: str, width: int, activation: str = "relu"):
        self.name, self.n_in, self.n_out = name, width, width
        self.inner = Sequential([
            Linear(f"{name}.fc1", width, width),
            make_activation(activation, width),
            Linear(f"{name}.fc2", width, width),
        ])

    def init(self, store, rng):
        self.inner.init(store, rng)

    def forward(self, store, x):
        h, caches = self.inner._forward(store, x)
        return x + h, caches

    def backward(self, store, caches, dy):
        return dy + self.inner._backward(store, caches, dy)


class GroupSoftmax(Layer):
    """Softmax applied independently to consecutive groups of ``group`` logits."""

    def __init__(self, width: int, group: int = 3):
        if width % group:
            raise ConfigurationError(f"width {width} not divisible by group {group}")
        self.n_in = self.n_out = width
        self.group = group

    def forward(self, store, x):
        z = x.reshape(x.shape[0], -1, self.group)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p.reshape(x.shape), p

    def backward(self, store, p, dy):
        g = dy.reshape(p.shape)
        dx = p * (g - (g * p).sum(axis=-1, keepdims=True))
        return dx.reshape(dy.shape)


def make_activation(kind: str, width: int) -> Layer:
    try:
        return {"relu": ReLU, "elu": ELU, "tanh": Tanh}[kind](width)
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------- graphs


@dataclass
class Tape:
    caches: list
    store: ParamStore
    version: int
    used: bool = field(default=False)


class Sequential(Layer):
    """An ordered chain of layers; the unit that produces tapes."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ConfigurationError("empty layer graph")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ConfigurationError(
                    f"width mismatch: {type(a).__name__}({a.n_out}) -> {type(b).__name__}({b.n_in})")
        self.layers = layers
        self.n_in = layers[0].n_in
        self.n_out = layers[-1].n_out

    def init(self, store, rng):
        for layer in self.layers:
            layer.init(store, rng)

    def _forward(self, store, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(store, x)
            caches.append(c)
        return x, caches

    def _backward(self, store, caches, dy):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(store, c, dy)
        return dy

    # a nested Sequential behaves like any other layer
    forward = _forward
    backward = _backward

    def __call__(self, store: ParamStore, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=store.dtype)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ConfigurationError(f"expected input (batch, {self.n_in}), got {x.shape}")
        y, caches = self._forward(store, x)
        return y, Tape(caches, store, store.version)

    def predict(self, store: ParamStore, x: np.ndarray) -> np.ndarray:
        return self(store, x)[0]

    def backprop(self, tape: Tape, dy: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for ``sum(dy * y)``; return the input grad."""
        if tape.store.version != tape.version:
            raise StaleTapeError("parameters changed since this forward pass")
        if tape.used:
            raise StaleTapeError("tape already consumed")
        tape.used = True
        return self._backward(tape.store, tape.caches, np.asarray(dy, dtype=tape.store.dtype))


def mlp(name: str, sizes: list[int], activation: str = "relu", out_activation: str | None = None) -> Sequential:
    layers: list[Layer] = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(Linear(f"{name}.l{i}", a, b))
        if i < len(sizes) - 2:
            layers.append(make_activation(activation, b))
    if out_activation:
        layers.append(make_activation(out_activation, sizes[-1]))
    return Sequential(layers)
