import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_params
from rbmstop.datasets import Dataset, gen_random
from rbmstop.errors import TrainingDiverged
from rbmstop.exact import exact_gradient
from rbmstop.metrics import ExactLikelihoodMonitor, ReconstructionMonitor
from rbmstop.model import GradientEstimate, RbmParams, free_energies, gibbs_chain, make_rng
from rbmstop.training import (
    InitSpec,
    TrainConfig,
    cd_gradient,
    init_params,
    positive_phase,
    sgd_step,
    train,
)


def fd_free_energy_grad(params: RbmParams, batch, step=1e-5) -> np.ndarray:
    theta = params.flat()
    out = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        out[k] = (free_energies(params.with_flat(up), batch).mean()
                  - free_energies(params.with_flat(down), batch).mean()) / (2 * step)
    return out


def grad(dW, db, dc):
    return GradientEstimate(np.asarray(dW, float), np.asarray(db, float), np.asarray(dc, float))


# config

@pytest.mark.parametrize("kwargs", [
    {"n_gibbs": 0}, {"learning_rate": 0.0}, {"momentum": 1.0}, {"momentum": -0.1},
    {"epochs": -1}, {"measure_every": 0}, {"batch_size": 0}, {"weight_decay": -1.0},
])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_init_params_small_gaussian_weights_zero_biases():
    p = init_params(50, InitSpec(40, 0.01), make_rng(0))
    assert p.W.shape == (40, 50)
    assert np.all(p.b == 0) and np.all(p.c == 0)
    assert abs(p.W.std() - 0.01) < 0.001


# positive phase

@pytest.mark.parametrize("seed", range(6))
def test_positive_phase_matches_free_energy_derivative(seed):
    rng = np.random.default_rng(seed)
    nv, nh = int(rng.integers(2, 8)), int(rng.integers(1, 6))
    p = RbmParams.random(nv, nh, rng, 1.0)
    batch = rng.integers(0, 2, (5, nv)).astype(np.uint8)
    analytic = positive_phase(p, batch).flat()
    assert np.max(np.abs(analytic - fd_free_energy_grad(p, batch))) <= 1e-6


def test_cd_positive_phase_uniform_model():
    p = RbmParams.zeros(4, 3)
    x = np.ones((1, 4), dtype=np.uint8)
    pos = positive_phase(p, x)
    assert np.array_equal(pos.dW, 0.5 * np.ones((3, 4)))


def test_cd_uniform_model_is_unbiased():
    # x_1 is an exact model sample here, so CD-1 is unbiased; the exact
    # gradient itself is not zero (dW = 0.25, db = 0.5, dc = 0)
    p = RbmParams.zeros(4, 3)
    x = np.ones((1, 4), dtype=np.uint8)
    exact = exact_gradient(p, x).flat()
    assert np.allclose(exact, np.r_[np.full(12, 0.25), np.full(4, 0.5), np.zeros(3)])
    samples = np.array([cd_gradient(p, x, 1, make_rng(s)).flat() for s in range(10_000)])
    mean, sem = samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    assert np.all(np.abs(mean - exact) <= 3 * sem)


def test_cd_long_chain_converges_to_exact_gradient():
    # a single training state, long chains: many replicates advanced as one batch
    p = random_params(7, 4, 2, 0.8)
    x = np.array([[1, 0, 1, 1]], dtype=np.uint8)
    reps = 10_000
    xs = np.repeat(x, reps, axis=0).astype(float)
    xn, ph0, phn = gibbs_chain(p, xs, 50, make_rng(1))
    xn = xn.astype(float)
    per_rep = np.concatenate([
        (ph0[:, :, None] * xs[:, None, :] - phn[:, :, None] * xn[:, None, :]).reshape(reps, -1),
        xs - xn,
        ph0 - phn,
    ], axis=1)
    exact = exact_gradient(p, x).flat()
    mean, sem = per_rep.mean(axis=0), per_rep.std(axis=0, ddof=1) / math.sqrt(reps)
    assert np.all(np.abs(mean - exact) <= 3 * sem + 1e-12)


def test_cd_gradient_batch_mean_of_single_estimates():
    p = random_params(3, 5, 3)
    batch = np.array([[1, 0, 1, 0, 1], [0, 0, 1, 1, 1]], dtype=np.uint8)
    whole = cd_gradient(p, batch, 2, make_rng(5))
    # the batch consumes one rng stream row by row, so rebuild by hand
    xn, ph0, phn = gibbs_chain(p, batch, 2, make_rng(5))
    dW = (ph0.T @ batch - phn.T @ xn) / 2
    assert np.allclose(whole.dW, dW)
    assert np.allclose(whole.db, (batch.astype(float) - xn).mean(axis=0))


def test_duplicate_states_weight_the_positive_phase():
    p = random_params(4, 5, 3)
    a, b = np.array([1, 1, 0, 0, 1]), np.array([0, 1, 0, 1, 0])
    dup = positive_phase(p, np.array([a, a, b], dtype=np.uint8)).flat()
    weighted = (2 * positive_phase(p, a[None]).flat() + positive_phase(p, b[None]).flat()) / 3
    assert np.allclose(dup, weighted, atol=1e-15)


def test_duplicate_states_match_weighted_estimate_in_expectation():
    p = random_params(4, 5, 3, 0.5)
    a, b = np.array([1, 1, 0, 0, 1]), np.array([0, 1, 0, 1, 0])
    reps = 20_000
    dup = np.array([cd_gradient(p, np.array([a, a, b]), 1, make_rng(s)).flat() for s in range(reps // 10)])
    ga = np.array([cd_gradient(p, a[None], 1, make_rng(10**6 + s)).flat() for s in range(reps // 10)])
    gb = np.array([cd_gradient(p, b[None], 1, make_rng(2 * 10**6 + s)).flat() for s in range(reps // 10)])
    weighted = (2 * ga.mean(axis=0) + gb.mean(axis=0)) / 3
    var = dup.var(axis=0, ddof=1) / len(dup) + (4 * ga.var(axis=0, ddof=1) + gb.var(axis=0, ddof=1)) / 9 / len(ga)
    assert np.all(np.abs(dup.mean(axis=0) - weighted) <= 4 * np.sqrt(var) + 1e-12)


def test_cd_gradient_errors():
    p = RbmParams.zeros(3, 2)
    with pytest.raises(ValueError):
        cd_gradient(p, np.zeros((1, 4), dtype=np.uint8), 1, make_rng(0))
    with pytest.raises(ValueError):
        cd_gradient(p, np.zeros((0, 3), dtype=np.uint8), 1, make_rng(0))


# sgd_step

def test_sgd_plain_step():
    p = random_params(0, 3, 2)
    g = grad(np.ones((2, 3)), np.full(3, 2.0), np.full(2, -1.0))
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0)
    new, _ = sgd_step(p, g, GradientEstimate.zeros_like(p), cfg)
    assert np.allclose(new.flat() - p.flat(), 0.1 * g.flat(), atol=1e-15)


def test_sgd_momentum_decays_velocity():
    p = RbmParams.zeros(3, 2)
    v = grad(np.ones((2, 3)), np.ones(3), np.ones(2))
    _, v2 = sgd_step(p, GradientEstimate.zeros_like(p), v, TrainConfig(momentum=0.8))
    assert np.allclose(v2.flat(), 0.8 * v.flat())


def test_sgd_two_steps_closed_form():
    p = RbmParams.zeros(2, 2)
    g = grad(np.full((2, 2), 0.3), np.full(2, -0.2), np.full(2, 1.0))
    cfg = TrainConfig(learning_rate=0.05, momentum=0.8)
    p1, v1 = sgd_step(p, g, GradientEstimate.zeros_like(p), cfg)
    p2, _ = sgd_step(p1, g, v1, cfg)
    assert np.allclose(p2.flat() - p.flat(), 0.05 * g.flat() * (2 + 0.8), atol=1e-15)


def test_sgd_weight_decay_on_weights_only():
    p = RbmParams(np.ones((1, 2)), np.ones(2), np.ones(1))
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
    new, _ = sgd_step(p, GradientEstimate.zeros_like(p), GradientEstimate.zeros_like(p), cfg)
    assert np.allclose(new.W, 0.95)
    assert np.array_equal(new.b, p.b) and np.array_equal(new.c, p.c)


@given(st.integers(0, 1000), st.floats(0.0, 0.95))
def test_sgd_is_pure(seed, momentum):
    p = random_params(seed, 3, 2)
    rng = np.random.default_rng(seed)
    g = grad(rng.normal(size=(2, 3)), rng.normal(size=3), rng.normal(size=2))
    v = grad(rng.normal(size=(2, 3)), rng.normal(size=3), rng.normal(size=2))
    before = (p.flat().copy(), g.flat().copy(), v.flat().copy())
    cfg = TrainConfig(momentum=momentum)
    a = sgd_step(p, g, v, cfg)
    b = sgd_step(p, g, v, cfg)
    assert np.array_equal(a[0].flat(), b[0].flat()) and np.array_equal(a[1].flat(), b[1].flat())
    assert all(np.array_equal(x, y) for x, y in zip(before, (p.flat(), g.flat(), v.flat())))


def test_sgd_non_finite_raises_with_epoch():
    p = RbmParams.zeros(2, 1)
    g = grad([[np.inf, 0.0]], [0.0, 0.0], [0.0])
    with pytest.raises(TrainingDiverged) as info:
        sgd_step(p, g, GradientEstimate.zeros_like(p), TrainConfig(), epoch=17)
    assert info.value.epoch == 17


def test_sgd_weight_guard():
    p = RbmParams.zeros(2, 1)
    g = grad([[1e8, 0.0]], [0.0, 0.0], [0.0])
    with pytest.raises(TrainingDiverged):
        sgd_step(p, g, GradientEstimate.zeros_like(p), TrainConfig(learning_rate=1.0))


# train

@pytest.fixture(scope="module")
def ran6():
    return gen_random(6, seed=3)


def test_train_zero_epochs_has_single_row(ran6):
    trace = train(ran6, TrainConfig(epochs=0), InitSpec(4), seed=1,
                  monitors=[ExactLikelihoodMonitor(ran6)])
    assert trace.epochs == [0]
    assert trace.column("log_likelihood_mean")[0] == pytest.approx(-6 * math.log(2), abs=1e-2)


def test_train_measures_at_multiples(ran6):
    cfg = TrainConfig(epochs=120, measure_every=50)
    trace = train(ran6, cfg, InitSpec(4), seed=1, monitors=[ReconstructionMonitor(ran6)])
    assert trace.epochs == [0, 50, 100]
    assert trace.metadata["seed"] == "1"
    assert "n_hidden" in trace.metadata["init"]


def test_train_is_deterministic(ran6):
    cfg = TrainConfig(epochs=200, measure_every=20, learning_rate=0.1)
    mons = [ExactLikelihoodMonitor(ran6), ReconstructionMonitor(ran6)]
    a = train(ran6, cfg, InitSpec(4), seed=9, monitors=mons)
    b = train(ran6, cfg, InitSpec(4), seed=9, monitors=mons)
    c = train(ran6, cfg, InitSpec(4), seed=10, monitors=mons)
    assert a == b
    assert np.array_equal(a.final_params.W, b.final_params.W)
    assert a != c


def test_monitors_do_not_change_trajectory(ran6):
    cfg = TrainConfig(epochs=100, measure_every=10)
    a = train(ran6, cfg, InitSpec(4), seed=2, monitors=[])
    b = train(ran6, cfg, InitSpec(4), seed=2, monitors=[ReconstructionMonitor(ran6)])
    assert np.array_equal(a.final_params.W, b.final_params.W)


def test_train_increases_likelihood(ran6):
    cfg = TrainConfig(epochs=500, measure_every=100, learning_rate=0.1)
    trace = train(ran6, cfg, InitSpec(6), seed=0, monitors=[ExactLikelihoodMonitor(ran6)])
    ll = trace.column("log_likelihood_sum")
    assert ll[-1] > ll[0] + 10


def test_train_minibatch_mode(ran6):
    cfg = TrainConfig(epochs=30, measure_every=10, batch_size=3)
    a = train(ran6, cfg, InitSpec(4), seed=4, monitors=[ExactLikelihoodMonitor(ran6)])
    b = train(ran6, cfg, InitSpec(4), seed=4, monitors=[ExactLikelihoodMonitor(ran6)])
    assert a == b and len(a) == 4


def test_train_keeps_snapshots(ran6):
    cfg = TrainConfig(epochs=40, measure_every=20)
    trace = train(ran6, cfg, InitSpec(3), seed=0, keep_params=True)
    assert sorted(trace.params) == [0, 20, 40]
    assert np.array_equal(trace.params[40].W, trace.final_params.W)


def test_train_divergence_carries_partial_trace(ran6):
    cfg = TrainConfig(epochs=1000, measure_every=5, learning_rate=50.0, momentum=0.9,
                      max_abs_weight=100.0)
    with pytest.raises(TrainingDiverged) as info:
        train(ran6, cfg, InitSpec(4, 1.0), seed=0, monitors=[ReconstructionMonitor(ran6)])
    exc = info.value
    assert exc.epoch >= 1
    assert exc.trace is not None and len(exc.trace) >= 1
    assert exc.trace.epochs[-1] < exc.epoch
    assert exc.trace.metadata["diverged_at"] == str(exc.epoch)


def test_train_from_given_params(ran6):
    start = random_params(0, 6, 4, 0.1)
    trace = train(ran6, TrainConfig(epochs=0), start, seed=0)
    assert trace.final_params is start


def test_train_rejects_empty_dataset():
    with pytest.raises(ValueError):
        train(np.zeros((0, 4), dtype=np.uint8), TrainConfig(epochs=1), InitSpec(2), seed=0)


def test_dataset_object_accepted(ran6):
    assert isinstance(ran6, Dataset)
    trace = train(ran6, TrainConfig(epochs=10, measure_every=10), InitSpec(2), seed=0)
    assert trace.epochs == [0, 10]
