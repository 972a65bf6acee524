"""Hamming neighborhoods of a training set and the xi stopping statistic.

Shell ``d`` holds the states whose minimum Hamming distance to the training
set is exactly ``d``; the ball of radius ``d`` is the union of shells
``0..d``. Shells are stored as sorted int64 key arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .datasets import format_states, parse_state_line
from .errors import CapabilityError, ParseError
from .exact import DEFAULT_MAX_VISIBLE, log_partition
from .model import RbmParams, as_state_array, free_energies, keys_to_states, states_to_keys

DEFAULT_MAX_STATES = 1 << 24

_BITMAP_MAX_VISIBLE = 26


@dataclass
class NeighborhoodIndex:
    n_visible: int
    shells: list[np.ndarray]

    @property
    def d_max(self) -> int:
        return len(self.shells) - 1

    @property
    def dataset_keys(self) -> np.ndarray:
        return self.shells[0]

    def shell_keys(self, d: int) -> np.ndarray:
        return self.shells[d]

    def ball_keys(self, d: int) -> np.ndarray:
        return np.concatenate(self.shells[: d + 1])

    def shell_states(self, d: int) -> np.ndarray:
        return keys_to_states(self.shell_keys(d), self.n_visible)

    def ball_states(self, d: int) -> np.ndarray:
        return keys_to_states(self.ball_keys(d), self.n_visible)

    def sizes(self) -> list[int]:
        return [int(s.size) for s in self.shells]


def build_index(dataset, d_max: int, max_states: int = DEFAULT_MAX_STATES) -> NeighborhoodIndex:
    """Breadth-first shell expansion by single-bit flips.

    Shells past the far side of the space come out empty.
    """
    if d_max < 0:
        raise ValueError("d_max must be >= 0")
    x = as_state_array(dataset)
    n = x.shape[1]
    shell = np.unique(states_to_keys(x))
    if shell.size > max_states:
        raise CapabilityError(f"training set alone exceeds the budget of {max_states} states")
    shells = [shell]
    flips = np.left_shift(np.int64(1), np.arange(n, dtype=np.int64))
    use_bitmap = n <= _BITMAP_MAX_VISIBLE
    if use_bitmap:
        seen = np.zeros(1 << n, dtype=bool)
        seen[shell] = True
    total = shell.size
    for d in range(1, d_max + 1):
        cand = np.unique((shells[-1][:, None] ^ flips[None, :]).ravel())
        if use_bitmap:
            cand = cand[~seen[cand]]
            seen[cand] = True
        else:
            for prev in shells[-2:]:
                cand = cand[~np.isin(cand, prev, assume_unique=True)]
        total += cand.size
        if total > max_states:
            raise CapabilityError(
                f"neighborhood at distance d={d} brings the ball to {total} states, "
                f"over the budget of {max_states}"
            )
        shells.append(cand)
    return NeighborhoodIndex(n, shells)


@dataclass
class SampledNeighborhood:
    keys: np.ndarray
    n_visible: int
    d: int
    seed: int | None = None
    states: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.states = keys_to_states(self.keys, self.n_visible)

    def __len__(self) -> int:
        return int(self.keys.size)


def sample_neighborhood(index: NeighborhoodIndex, d: int, size: int, rng,
                        include_training: bool = True) -> SampledNeighborhood:
    """Uniform draw without replacement from the radius-``d`` ball.

    ``rng`` is a seed or a ``numpy.random.Generator``. With
    ``include_training=False`` the draw excludes shell 0.
    """
    if d > index.d_max:
        raise ValueError(f"d={d} exceeds the index radius {index.d_max}")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    pool = index.ball_keys(d) if include_training else np.concatenate(
        [index.shell_keys(k) for k in range(1, d + 1)] or [np.empty(0, dtype=np.int64)])
    if size >= pool.size:
        chosen = np.sort(pool)
    else:
        chosen = np.sort(pool[rng.choice(pool.size, size=size, replace=False)])
    return SampledNeighborhood(chosen, index.n_visible, d, seed)


def log_xi_from_free_energies(f_data: np.ndarray, f_denom: np.ndarray) -> float:
    """Mean of F over the data minus log of the mean of exp(F) over the denominator set."""
    f_denom = np.asarray(f_denom, dtype=float)
    if f_denom.size == 0:
        raise ValueError("denominator set is empty")
    # shifting by the denominator max keeps equal free energies exactly cancelling
    m = f_denom.max()
    if not np.isfinite(m):
        return float(np.mean(f_data) - logsumexp(f_denom) + np.log(f_denom.size))
    shifted = np.asarray(f_data, dtype=float) - m
    return float(np.mean(shifted) - np.log(np.mean(np.exp(f_denom - m))))


def log_xi(params: RbmParams, dataset, denom_states) -> float:
    """log of xi; the partition function cancels, so nothing is enumerated."""
    denom = as_state_array(denom_states) if not isinstance(denom_states, np.ndarray) else denom_states
    if denom.size == 0:
        raise ValueError("denominator set is empty")
    return log_xi_from_free_energies(free_energies(params, dataset), free_energies(params, denom))


def xi(params: RbmParams, dataset, denom_states) -> float:
    return float(np.exp(log_xi(params, dataset, denom_states)))


def sum_probs(params: RbmParams, states, log_Z: float | None = None,
              max_visible: int = DEFAULT_MAX_VISIBLE) -> float:
    """Total model probability of ``states``; needs log Z, so enumeration-bound."""
    if log_Z is None:
        log_Z = log_partition(params, max_visible)
    f = free_energies(params, states)
    return float(np.exp(logsumexp(f) - log_Z))


def save_index(index: NeighborhoodIndex, path) -> None:
    parts = [f"# n_visible={index.n_visible}\n# d_max={index.d_max}\n"]
    for d in range(index.d_max + 1):
        parts.append(f"# shell={d} size={index.shells[d].size}\n")
        parts.append(format_states(index.shell_states(d)))
    Path(path).write_text("".join(parts))


def load_index(path) -> NeighborhoodIndex:
    n_visible = None
    shells: list[list[np.ndarray]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = dict(part.partition("=")[::2] for part in line[1:].split())
                if "n_visible" in fields:
                    n_visible = int(fields["n_visible"])
                if "shell" in fields:
                    if int(fields["shell"]) != len(shells):
                        raise ParseError(f"shell {fields['shell']} out of order", lineno)
                    shells.append([])
                continue
            if not shells:
                raise ParseError("state before any shell header", lineno)
            shells[-1].append(parse_state_line(line, n_visible, lineno))
    if n_visible is None or not shells:
        raise ParseError(f"{path}: missing header or shells")
    arrays = []
    for rows in shells:
        keys = states_to_keys(np.array(rows)) if rows else np.empty(0, dtype=np.int64)
        arrays.append(np.sort(keys))
    return NeighborhoodIndex(n_visible, arrays)
