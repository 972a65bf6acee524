"""Exact partition function, marginals and log-likelihood gradient by enumeration.

Only visible configurations are enumerated; hidden units are summed out in
closed form. The free energy of every visible state is computed from two
lookup tables of pre-activations, one for the low bits and one for the high
bits of the state key, so each state costs O(n_hidden) operations instead of
a full matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError
from .model import (
    BinaryState,
    GradientEstimate,
    RbmParams,
    as_state_array,
    free_energies,
    keys_to_states,
    sigmoid,
)

DEFAULT_MAX_VISIBLE = 24

_LOW_BITS = 12
_CHUNK_ELEMENTS = 1 << 22
_EXP_SAFE = 300.0


def _check_bound(params: RbmParams, max_visible: int):
    if params.n_visible > max_visible:
        raise CapabilityError(
            f"exact enumeration over 2^{params.n_visible} visible states exceeds "
            f"the bound of 2^{max_visible}"
        )


def all_free_energies(params: RbmParams, max_visible: int = DEFAULT_MAX_VISIBLE) -> np.ndarray:
    """Unnormalized log marginal F(x) for every visible state, indexed by key."""
    _check_bound(params, max_visible)
    n = params.n_visible
    lo = min(n, _LOW_BITS)
    hi = n - lo
    W, b, c = params.W, params.b, params.c

    low_x = keys_to_states(np.arange(1 << lo), lo).astype(float)
    low_pre = low_x @ W[:, :lo].T
    low_lin = low_x @ b[:lo]
    high_x = keys_to_states(np.arange(1 << hi), hi).astype(float) if hi else np.zeros((1, 0))
    high_pre = high_x @ W[:, lo:].T + c
    high_lin = high_x @ b[lo:]

    # sum_j softplus(a_j + b_j) = log prod_j (1 + e^a_j e^b_j): one log per state.
    # Only safe while the exponentials stay well inside double range.
    use_product = max(np.abs(low_pre).max(initial=0.0), np.abs(high_pre).max(initial=0.0)) <= _EXP_SAFE
    if use_product:
        low_exp, high_exp = np.exp(low_pre), np.exp(high_pre)

    out = np.empty(1 << n)
    rows = max(1, _CHUNK_ELEMENTS // (1 << lo))
    for start in range(0, high_pre.shape[0], rows):
        stop = min(start + rows, high_pre.shape[0])
        f = None
        if use_product:
            acc = np.ones((stop - start, 1 << lo))
            for j in range(params.n_hidden):
                term = np.multiply.outer(high_exp[start:stop, j], low_exp[:, j])
                term += 1.0
                acc *= term
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.log(acc)
            if not np.isfinite(f).all():
                f = None
        if f is None:
            f = np.zeros((stop - start, 1 << lo))
            for j in range(params.n_hidden):
                f += np.logaddexp(0.0, np.add.outer(high_pre[start:stop, j], low_pre[:, j]))
        f += high_lin[start:stop, None]
        f += low_lin[None, :]
        out[start << lo:stop << lo] = f.ravel()
    return out


def log_partition(params: RbmParams, max_visible: int = DEFAULT_MAX_VISIBLE) -> float:
    return float(logsumexp(all_free_energies(params, max_visible)))


def log_marginals(params: RbmParams, max_visible: int = DEFAULT_MAX_VISIBLE) -> np.ndarray:
    """log P(x) for every visible state, indexed by key."""
    f = all_free_energies(params, max_visible)
    return f - logsumexp(f)


def log_likelihood(params: RbmParams, dataset, max_visible: int = DEFAULT_MAX_VISIBLE) -> float:
    """Sum over the training states of log P(x)."""
    _check_bound(params, max_visible)
    x = as_state_array(dataset)
    return float(free_energies(params, x).sum() - x.shape[0] * log_partition(params, max_visible))


@dataclass
class ExactEval:
    log_Z: float
    log_px: dict
    mean_ll: float

    @property
    def sum_ll(self) -> float:
        return float(sum(self.log_px.values()))


def exact_eval(params: RbmParams, dataset, max_visible: int = DEFAULT_MAX_VISIBLE) -> ExactEval:
    x = as_state_array(dataset)
    log_Z = log_partition(params, max_visible)
    lp = free_energies(params, x) - log_Z
    states = [BinaryState.from_bits(row) for row in x]
    return ExactEval(log_Z, dict(zip(states, lp.tolist())), float(lp.mean()))


def _positive_stats(params: RbmParams, x: np.ndarray, weights: np.ndarray):
    ph = sigmoid(x @ params.W.T + params.c)
    wph = ph * weights[:, None]
    return wph.T @ x, weights @ x, wph.sum(axis=0)


def exact_gradient(params: RbmParams, dataset, max_visible: int = DEFAULT_MAX_VISIBLE) -> GradientEstimate:
    """Gradient of the mean training log-likelihood (ascent direction)."""
    _check_bound(params, max_visible)
    x = as_state_array(dataset).astype(float)
    n = params.n_visible
    dW, db, dc = _positive_stats(params, x, np.full(x.shape[0], 1.0 / x.shape[0]))

    logp = log_marginals(params, max_visible)
    chunk = max(1, _CHUNK_ELEMENTS // max(n, params.n_hidden))
    for start in range(0, logp.size, chunk):
        keys = np.arange(start, min(start + chunk, logp.size))
        xs = keys_to_states(keys, n).astype(float)
        mW, mb, mc = _positive_stats(params, xs, np.exp(logp[keys]))
        dW -= mW
        db -= mb
        dc -= mc
    return GradientEstimate(dW, db, dc)
