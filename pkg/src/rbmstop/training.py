"""CD-n gradient estimation and momentum SGD training."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import TrainingDiverged
from .exact import DEFAULT_MAX_VISIBLE
from .metrics import Probe, TraceSeries, run_monitors
from .model import GradientEstimate, RbmParams, as_state_array, gibbs_chain, sigmoid, spawn_rngs

__all__ = [
    "GradientEstimate",
    "InitSpec",
    "TrainConfig",
    "cd_gradient",
    "init_params",
    "positive_phase",
    "sgd_step",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    n_gibbs: int = 1
    learning_rate: float = 0.1
    momentum: float = 0.8
    epochs: int = 50000
    measure_every: int = 50
    batch_size: int | None = None  # None: one full-batch update per epoch
    weight_decay: float = 0.0
    max_abs_weight: float = 1e6

    def __post_init__(self):
        if self.n_gibbs < 1:
            raise ValueError("n_gibbs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.measure_every < 1:
            raise ValueError("measure_every must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class InitSpec:
    """Initial model: W ~ N(0, weight_std^2), both biases zero."""

    n_hidden: int
    weight_std: float = 0.01


def init_params(n_visible: int, init: InitSpec, rng: np.random.Generator) -> RbmParams:
    return RbmParams(
        rng.normal(0.0, init.weight_std, (init.n_hidden, n_visible)),
        np.zeros(n_visible),
        np.zeros(init.n_hidden),
    )


def positive_phase(params: RbmParams, batch) -> GradientEstimate:
    """Batch mean of E[-dEnergy/dtheta | x], i.e. the gradient of the mean free energy."""
    x = as_state_array(batch).astype(float)
    ph = sigmoid(x @ params.W.T + params.c)
    n = x.shape[0]
    return GradientEstimate(ph.T @ x / n, x.mean(axis=0), ph.mean(axis=0))


def _cd_from_arrays(params: RbmParams, x: np.ndarray, n: int, rng) -> GradientEstimate:
    xn, ph0, phn = gibbs_chain(params, x, n, rng)
    xn = xn.astype(float)
    m = x.shape[0]
    return GradientEstimate(
        (ph0.T @ x - phn.T @ xn) / m,
        (x - xn).mean(axis=0),
        (ph0 - phn).mean(axis=0),
    )


def cd_gradient(params: RbmParams, batch, n: int, rng: np.random.Generator) -> GradientEstimate:
    """CD-n estimate of the mean log-likelihood gradient (ascent direction).

    Both phases use conditional expectations of the hidden units: E[h|x] at
    the data and E[h|x_n] at the chain endpoint.
    """
    x = as_state_array(batch)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != params.n_visible:
        raise ValueError(f"batch has {x.shape[1]} units, expected {params.n_visible}")
    return _cd_from_arrays(params, x.astype(float), n, rng)


def sgd_step(params: RbmParams, grad: GradientEstimate, velocity: GradientEstimate,
             cfg: TrainConfig, epoch: int = -1) -> tuple[RbmParams, GradientEstimate]:
    lr, m = cfg.learning_rate, cfg.momentum
    v = GradientEstimate(
        m * velocity.dW + lr * grad.dW,
        m * velocity.db + lr * grad.db,
        m * velocity.dc + lr * grad.dc,
    )
    W = params.W + v.dW
    if cfg.weight_decay:
        W = W - lr * cfg.weight_decay * params.W
    new = RbmParams(W, params.b + v.db, params.c + v.dc)
    if not new.is_finite():
        raise TrainingDiverged(epoch, "non-finite parameters")
    if np.abs(new.W).max(initial=0.0) > cfg.max_abs_weight:
        raise TrainingDiverged(epoch, f"|W| exceeded {cfg.max_abs_weight:g}")
    return new, v


def train(dataset, cfg: TrainConfig, init: InitSpec | RbmParams, seed: int,
          monitors: Sequence = (), keep_params: bool = False,
          max_visible: int = DEFAULT_MAX_VISIBLE) -> TraceSeries:
    """Train from ``init`` for ``cfg.epochs`` epochs, measuring every ``measure_every``.

    The seed is split into independent streams for initialization, the CD
    chains, and stochastic monitors, so enabling a monitor never changes the
    training trajectory.
    """
    x = as_state_array(dataset).astype(float)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    init_rng, cd_rng, monitor_rng, batch_rng = spawn_rngs(seed, 4)
    if isinstance(init, RbmParams):
        params = init
    else:
        params = init_params(x.shape[1], init, init_rng)

    columns = [c for mon in monitors for c in mon.columns]
    trace = TraceSeries(columns, metadata={
        "seed": str(seed),
        "init": repr(init) if isinstance(init, RbmParams) else repr(asdict(init)),
        "config": repr(asdict(cfg)),
    })

    def measure(epoch):
        probe = Probe(params, epoch, monitor_rng, max_visible)
        trace.append(epoch, run_monitors(monitors, probe))
        if keep_params:
            trace.params[epoch] = params

    velocity = GradientEstimate.zeros_like(params)
    measure(0)
    epoch = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            if cfg.batch_size is None or cfg.batch_size >= x.shape[0]:
                grad = _cd_from_arrays(params, x, cfg.n_gibbs, cd_rng)
                params, velocity = sgd_step(params, grad, velocity, cfg, epoch)
            else:
                order = batch_rng.permutation(x.shape[0])
                for start in range(0, x.shape[0], cfg.batch_size):
                    batch = x[order[start:start + cfg.batch_size]]
                    grad = _cd_from_arrays(params, batch, cfg.n_gibbs, cd_rng)
                    params, velocity = sgd_step(params, grad, velocity, cfg, epoch)
            if epoch % cfg.measure_every == 0:
                measure(epoch)
    except TrainingDiverged as exc:
        trace.metadata["diverged_at"] = str(exc.epoch)
        exc.trace = trace
        raise
    trace.metadata["final_epoch"] = str(epoch)
    trace.final_params = params
    return trace
