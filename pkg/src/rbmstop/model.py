"""Binary RBM parameters, energies, conditionals and block Gibbs sampling.

States are handled in two forms. ``BinaryState`` is the hashable value type
used at API boundaries; hot paths take 2-D ``uint8`` arrays of shape
``(n_states, n_bits)``. Bit ``i`` of a state's integer key is element ``i``
of its bit vector, so element 0 is the least significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import expit

__all__ = [
    "BinaryState",
    "GradientEstimate",
    "RbmParams",
    "StateLike",
    "as_state_array",
    "energy",
    "free_energy_unnorm",
    "free_energies",
    "gibbs_chain",
    "hidden_activation_probs",
    "keys_to_states",
    "make_rng",
    "sigmoid",
    "softplus",
    "spawn_rngs",
    "states_to_keys",
    "visible_activation_probs",
]


def sigmoid(z):
    return expit(z)


def softplus(z):
    """log(1 + e^z), stable for large |z|."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed (PCG64 is platform independent)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Split ``n`` independent streams from a master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


@dataclass(frozen=True)
class BinaryState:
    """Fixed-width bit vector, hashable through its packed integer key."""

    key: int
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("state width must be positive")
        if not 0 <= self.key < (1 << self.n):
            raise ValueError(f"key {self.key} does not fit in {self.n} bits")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BinaryState":
        bits = list(bits)
        key = 0
        for i, b in enumerate(bits):
            if b not in (0, 1, True, False):
                raise ValueError(f"bit {i} is {b!r}, expected 0 or 1")
            key |= int(b) << i
        return cls(key, len(bits))

    @classmethod
    def from_string(cls, text: str) -> "BinaryState":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not a binary string: {text!r}")
        return cls.from_bits(int(ch) for ch in text)

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.key >> i) & 1 for i in range(self.n))

    def to_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return self.n


StateLike = Union[BinaryState, Sequence[BinaryState], np.ndarray, Sequence[Sequence[int]]]


def as_state_array(states: StateLike) -> np.ndarray:
    """Coerce one or many states into a 2-D uint8 array."""
    if isinstance(states, BinaryState):
        return states.to_array()[None, :]
    if isinstance(states, np.ndarray):
        arr = states
    elif hasattr(states, "__array__"):
        arr = np.asarray(states)
    else:
        states = list(states)
        if states and isinstance(states[0], BinaryState):
            arr = np.array([s.bits for s in states], dtype=np.uint8)
        else:
            arr = np.asarray(states)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr.astype(np.uint8, copy=False)


def states_to_keys(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.int64)
    weights = np.left_shift(np.int64(1), np.arange(arr.shape[-1], dtype=np.int64))
    return arr @ weights


def keys_to_states(keys, n: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return ((keys[..., None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.uint8)


@dataclass(frozen=True)
class RbmParams:
    """Weights ``W`` (n_hidden x n_visible), visible bias ``b``, hidden bias ``c``."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape != (c.size, b.size):
            raise ValueError(
                f"inconsistent shapes: W {W.shape}, b ({b.size},), c ({c.size},)"
            )
        for arr in (W, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_visible(self) -> int:
        return self.b.size

    @property
    def n_hidden(self) -> int:
        return self.c.size

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros((n_hidden, n_visible)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def random(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
               scale: float = 1.0) -> "RbmParams":
        return cls(
            rng.normal(0.0, scale, (n_hidden, n_visible)),
            rng.normal(0.0, scale, n_visible),
            rng.normal(0.0, scale, n_hidden),
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.W).all() and np.isfinite(self.b).all()
                    and np.isfinite(self.c).all())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b, self.c])

    def with_flat(self, theta: np.ndarray) -> "RbmParams":
        nW = self.W.size
        return RbmParams(
            theta[:nW].reshape(self.W.shape),
            theta[nW:nW + self.n_visible],
            theta[nW + self.n_visible:],
        )


def _check_width(arr: np.ndarray, expected: int, what: str):
    if arr.shape[-1] != expected:
        raise ValueError(f"{what} has {arr.shape[-1]} units, expected {expected}")


def _vector(x) -> np.ndarray:
    if isinstance(x, BinaryState):
        return x.to_array().astype(float)
    return np.asarray(x, dtype=float)


def energy(params: RbmParams, x, h) -> float:
    """-b.x - c.h - h.W.x for a single (x, h) pair."""
    x, h = _vector(x), _vector(h)
    _check_width(x, params.n_visible, "x")
    _check_width(h, params.n_hidden, "h")
    return float(-(params.b @ x) - (params.c @ h) - (h @ params.W @ x))


def free_energies(params: RbmParams, states) -> np.ndarray:
    """log sum_h exp(-Energy(x, h)) for each row of ``states``."""
    if isinstance(states, np.ndarray):
        x = np.atleast_2d(states).astype(float, copy=False)
    else:
        x = as_state_array(states).astype(float)
    _check_width(x, params.n_visible, "states")
    pre = x @ params.W.T + params.c
    return x @ params.b + softplus(pre).sum(axis=1)


def free_energy_unnorm(params: RbmParams, x) -> float:
    x = _vector(x)
    _check_width(x, params.n_visible, "x")
    return float(free_energies(params, x[None, :])[0])


def hidden_activation_probs(params: RbmParams, x) -> np.ndarray:
    """P(h_j = 1 | x). Accepts a single state or a batch, binary or real-valued."""
    x = _vector(x)
    _check_width(x, params.n_visible, "x")
    return sigmoid(x @ params.W.T + params.c)


def visible_activation_probs(params: RbmParams, h) -> np.ndarray:
    """P(x_i = 1 | h). ``h`` may be real-valued (mean-field input)."""
    h = _vector(h)
    _check_width(h, params.n_hidden, "h")
    return sigmoid(h @ params.W + params.b)


def _bernoulli(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # one uniform per unit, row-major: states in order, units in index order
    return (rng.random(probs.shape) < probs).astype(float)


def gibbs_chain(params: RbmParams, x0, n: int, rng: np.random.Generator):
    """Run ``n`` block Gibbs alternations h ~ P(h|x), x ~ P(x|h) from ``x0``.

    Works on a single state or a batch (rows advance in parallel).
    Returns ``(x_n, P(h|x0), P(h|x_n))`` with ``x_n`` as uint8.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    single = isinstance(x0, BinaryState) or np.ndim(x0) == 1
    x = as_state_array(x0) if isinstance(x0, BinaryState) else np.atleast_2d(x0)
    x = x.astype(float)
    _check_width(x, params.n_visible, "x0")
    W, Wt = params.W, params.W.T
    ph0 = sigmoid(x @ Wt + params.c)
    ph = ph0
    for _ in range(n):
        h = _bernoulli(ph, rng)
        x = _bernoulli(sigmoid(h @ W + params.b), rng)
        ph = sigmoid(x @ Wt + params.c)
    x = x.astype(np.uint8)
    if single:
        return x[0], ph0[0], ph[0]
    return x, ph0, ph


@dataclass(frozen=True)
class GradientEstimate:
    """Log-likelihood ascent direction, shaped like :class:`RbmParams`."""

    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    @classmethod
    def zeros_like(cls, params: RbmParams) -> "GradientEstimate":
        return cls(np.zeros_like(params.W), np.zeros_like(params.b), np.zeros_like(params.c))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.dW), self.db, self.dc])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat()).all())
