import math
from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comfedl.core import derive_stream
from comfedl.oracles import reference_composition_gd
from comfedl.robust import softmax_weights
from comfedl.runtime import (
    ConfigError,
    ExperimentConfig,
    NonFiniteUpdate,
    RoundRecord,
    drift_check,
    fedavg_weights,
    local_round,
    run,
    run_comfedl,
    run_fedavg,
    sample_clients,
    server_average,
)
from comfedl.tasks import (
    ClientShard,
    CompositionTask,
    ExpOuter,
    LossInner,
    QuadraticLoss,
    Samples,
    make_logistic_dro,
    make_quadratic_dro,
)

from helpers import half_norm_task


def rng(k=0):
    return derive_stream(k, 0, 0, 0, "test")


def quad_dro(n=4, seed=0, **kw):
    return make_quadratic_dro(n=n, d=5, gamma=0.5, rng=rng(seed), **kw)


# -- config ---------------------------------------------------------------------

def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.tau, cfg.gamma, cfg.eta) == (5, 0.2, 0.01)
    assert cfg.m == cfg.n == 10


@pytest.mark.parametrize("kw,field", [(dict(m=11), "m"), (dict(m=0), "m"), (dict(gamma=-1.0), "gamma"),
                                      (dict(gamma=0.0), "gamma"), (dict(tau=0), "tau"), (dict(b=0), "b"),
                                      (dict(b1=0), "b1"), (dict(eta=-0.1), "eta"), (dict(S=-1), "S"),
                                      (dict(algorithm="sgd"), "algorithm"), (dict(seed=-3), "seed"),
                                      (dict(algorithm="comfedl-damaml"), "eta_in")])
def test_config_errors_name_the_field(kw, field):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig(**kw)
    assert err.value.field == field


def test_config_batch_larger_than_shard():
    task = quad_dro()
    with pytest.raises(ConfigError) as err:
        run(task, ExperimentConfig(n=4, b=51, S=1))
    assert err.value.field == "b"
    with pytest.raises(ConfigError) as err:
        run(task, ExperimentConfig(n=5, S=1))
    assert err.value.field == "n"


def test_damaml_needs_maml_task():
    with pytest.raises(ConfigError):
        run(quad_dro(), ExperimentConfig(n=4, S=1, algorithm="comfedl-damaml", eta_in=0.1))


# -- client sampling ----------------------------------------------------------------

def test_full_participation():
    assert sample_clients(3, 10, 10, seed=1) == list(range(10))


def test_singleton_replay():
    picks = [sample_clients(4, 10, 1, seed=9) for _ in range(3)]
    assert picks[0] == picks[1] == picks[2] and len(picks[0]) == 1


def test_sampling_m_exceeds_n():
    with pytest.raises(ConfigError):
        sample_clients(0, 3, 4, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 20), st.data())
def test_sample_is_sorted_subset(s, n, data):
    m = data.draw(st.integers(1, n))
    picked = sample_clients(s, n, m, seed=3)
    assert len(picked) == m == len(set(picked))
    assert picked == sorted(picked) and all(0 <= i < n for i in picked)


def test_selection_frequency_binomial_band():
    n, m, rounds = 10, 3, 10_000
    counts = np.zeros(n)
    for s in range(rounds):
        counts[sample_clients(s, n, m, seed=11)] += 1
    p = m / n
    sd = math.sqrt(rounds * p * (1 - p))
    assert np.all(np.abs(counts - rounds * p) <= 3 * sd)


# -- local round ----------------------------------------------------------------------

def full_cfg(**kw):
    base = dict(n=1, tau=1, S=1, eta=0.1, b=None, b1=None, gamma=1.0)
    base.update(kw)
    return ExperimentConfig(**base)


def test_local_round_one_contraction():
    res = local_round(half_norm_task(), 0, [1.0, 1.0], full_cfg())
    np.testing.assert_allclose(res.w, [0.9, 0.9], rtol=1e-15)


def test_local_round_null_step():
    res = local_round(half_norm_task(), 0, [1.0, -2.0], full_cfg(eta=0.0, tau=3))
    np.testing.assert_array_equal(res.w, [1.0, -2.0])
    assert res.drifts == [0.0, 0.0, 0.0]


def test_local_round_two_contractions():
    res = local_round(half_norm_task(), 0, [1.0, 1.0], full_cfg(tau=2))
    np.testing.assert_allclose(res.w, [0.81, 0.81], rtol=1e-15)
    assert len(res.directions) == len(res.drifts) == 2


def test_local_round_does_not_touch_input():
    w0 = np.array([1.0, 1.0])
    local_round(half_norm_task(), 0, w0, full_cfg(tau=3))
    np.testing.assert_array_equal(w0, [1.0, 1.0])


def test_local_round_nonfinite_start():
    with pytest.raises(NonFiniteUpdate):
        local_round(half_norm_task(), 0, [np.nan, 0.0], full_cfg())


def test_local_round_batches_are_keyed_streams():
    task = quad_dro()
    cfg = ExperimentConfig(n=4, tau=3, b=5, b1=5, seed=2)
    a = local_round(task, 1, np.zeros(5), cfg, s=7)
    b = local_round(task, 1, np.zeros(5), cfg, s=7)
    c = local_round(task, 1, np.zeros(5), cfg, s=8)
    np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(a.w, c.w)


# -- averaging --------------------------------------------------------------------------

def test_average_identical():
    w = np.array([0.1, 0.7, -3.0])
    np.testing.assert_array_equal(server_average([w, w, w]), w)


def test_average_midpoint():
    np.testing.assert_array_equal(server_average([[0, 0], [2, 4]]), [1, 2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=10),
       st.randoms(use_true_random=False))
def test_average_permutation_bitwise(models, random):
    shuffled = list(models)
    random.shuffle(shuffled)
    assert server_average(models).tobytes() == server_average(shuffled).tobytes()


def test_average_empty():
    with pytest.raises(ValueError):
        server_average([])


def test_fedavg_weights_equal_shards_uniform():
    task = quad_dro()
    np.testing.assert_allclose(fedavg_weights(task, [0, 1, 2, 3]), 0.25, rtol=1e-15)
    models = [rng(k).standard_normal(5) for k in range(4)]
    np.testing.assert_allclose(server_average(models, fedavg_weights(task, range(4))),
                               server_average(models), rtol=1e-14)


# -- full runs ------------------------------------------------------------------------------

def test_zero_rounds():
    w0 = np.array([0.5, -0.5, 1.0, 0.0, 2.0])
    res = run_comfedl(quad_dro(), ExperimentConfig(n=4, S=0), w0=w0)
    assert res.records == [] and not res.diverged
    np.testing.assert_array_equal(res.w, w0)


def test_reduction_to_gradient_descent_short():
    task = quad_dro()
    cfg = ExperimentConfig(n=4, tau=1, S=30, eta=0.05, b=None, b1=None, gamma=0.5)
    res = run_comfedl(task, cfg)
    ref = reference_composition_gd(task, np.zeros(5), 0.05, 30)
    np.testing.assert_allclose(res.w, ref.w[-1], rtol=0, atol=1e-12)
    np.testing.assert_allclose([r.grad_norm for r in res.records], ref.grad_norm[:30], rtol=1e-12)


def test_dro_quadratic_converges():
    task = quad_dro()
    cfg = ExperimentConfig(n=4, tau=1, S=2000, eta=0.05, b=None, b1=None, gamma=0.5)
    res = run_comfedl(task, cfg)
    assert not res.diverged
    assert np.linalg.norm(task.full_gradient(res.w)) <= 1e-2


def test_identical_shards_share_stationary_point():
    A = np.array([[1.5, 0.2], [0.2, 0.8]])
    xi = np.array([[0.4, -0.3], [0.6, 0.1]])
    loss = QuadraticLoss(A)
    shards = [ClientShard(i, Samples(xi), Samples(xi)) for i in range(3)]
    task = CompositionTask(shards, LossInner(loss), ExpOuter(0.5), d=2)
    w_star = np.linalg.solve(A, xi.mean(axis=0))
    for runner in (run_comfedl, run_fedavg):
        res = runner(task, ExperimentConfig(n=3, tau=3, S=5, eta=0.1, b=None, b1=None, gamma=0.5), w0=w_star)
        np.testing.assert_allclose(res.w, w_star, atol=1e-15)
        assert max(r.grad_norm for r in res.records) <= 1e-14


def test_runs_are_deterministic():
    task = quad_dro()
    cfg = ExperimentConfig(n=4, m=2, tau=3, S=20, eta=0.02, b=5, b1=5, gamma=0.5, seed=4)
    a, b = run(task, cfg), run(task, cfg)
    assert [asdict(r) for r in a.records] == [asdict(r) for r in b.records]
    assert a.w.tobytes() == b.w.tobytes()


@pytest.mark.parametrize("algorithm", ["comfedl", "fedavg"])
def test_parallel_clients_change_nothing(algorithm):
    task = make_logistic_dro(n=6, d=4, rng=rng(2), samples=30)
    cfg = ExperimentConfig(n=6, m=4, tau=3, S=15, eta=0.05, b=4, b1=4, gamma=1.0, seed=1, algorithm=algorithm)
    seq, par = run(task, cfg), run(task, cfg, parallel=True)
    assert [asdict(r) for r in seq.records] == [asdict(r) for r in par.records]
    assert seq.w.tobytes() == par.w.tobytes()


def test_record_contents():
    task = quad_dro()
    cfg = ExperimentConfig(n=4, m=3, tau=2, S=10, eta=0.02, b=5, b1=5, gamma=0.5, seed=3)
    res = run(task, cfg)
    assert len(res.records) == 10 and res.final is res.records[-1]
    for s, r in enumerate(res.records):
        assert r.round == s and len(r.participants) == 3
        assert r.worst_loss == max(r.client_losses)
        assert np.argmax(r.weights) == np.argmax(r.client_losses)
        np.testing.assert_allclose(r.weights, softmax_weights(r.client_losses, 0.5))
        assert r.max_drift >= 0 and r.drift_bound >= 0 and r.deviation >= 0
        assert math.isfinite(r.grad_norm) and r.wall_clock == 0.0
    assert RoundRecord.field_names()[0] == "round"


def test_records_stream_to_callback():
    seen = []
    res = run(quad_dro(), ExperimentConfig(n=4, S=4, b=5, b1=5, gamma=0.5), callback=seen.append)
    assert seen == res.records


def test_timing_fills_wall_clock():
    res = run(quad_dro(), ExperimentConfig(n=4, S=3, b=5, b1=5, gamma=0.5), timing=True)
    assert res.records[-1].wall_clock > 0


def test_divergence_stops_early():
    task = quad_dro()
    res = run(task, ExperimentConfig(n=4, tau=2, S=200, eta=50.0, b=None, b1=None, gamma=0.5))
    assert res.diverged and 0 < len(res.records) < 200
    assert res.message


def test_exp_clamp_events_are_counted():
    # far from the data f / gamma exceeds the clamp; a full run would stop on divergence first
    task = quad_dro(n=2)
    res = local_round(task, 0, np.full(5, 30.0), ExperimentConfig(n=2, tau=3, eta=1e-30, gamma=0.5))
    assert res.clamps == 3
    assert all(math.isfinite(g) for g in res.outer_norms)


def test_fedavg_uses_base_loss_and_size_weights():
    # two clients of different sizes, one local full-batch step from zero:
    # w = -eta * sum_i (n_i / N) grad f_i(0) = eta * weighted mean of xi means
    x0, x1 = np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]] * 3)
    shards = [ClientShard(0, Samples(x0), Samples(x0)), ClientShard(1, Samples(x1), Samples(x1))]
    task = CompositionTask(shards, LossInner(QuadraticLoss(np.eye(2))), ExpOuter(0.1), d=2)
    res = run_fedavg(task, ExperimentConfig(n=2, tau=1, S=1, eta=0.5, b=None, b1=None, gamma=0.1))
    np.testing.assert_allclose(res.w, 0.5 * (0.25 * x0[0] + 0.75 * x1[0]), rtol=1e-15)


# -- drift --------------------------------------------------------------------------------

def test_drift_zero_with_null_step():
    res = run(quad_dro(), ExperimentConfig(n=4, tau=4, S=5, eta=0.0, b=5, b1=5, gamma=0.5))
    assert all(r.max_drift == 0.0 and r.max_avg_drift == 0.0 for r in res.records)
    assert drift_check(res.records).passed


def test_drift_single_step_within_bound():
    # with tau = 1 the drift is eta^2 |J'g|^2 <= eta^2 |g|^2 |J|^2
    cfg = ExperimentConfig(n=4, m=2, tau=1, S=50, eta=0.05, b=3, b1=3, gamma=0.5)
    res = run(quad_dro(), cfg)
    report = drift_check(res.records, res.estimate, cfg, slack=0.0)
    assert report.passed and report.worst_ratio <= 1.0


def test_drift_quadratic_dro_tau_five():
    cfg = ExperimentConfig(n=4, tau=5, S=100, eta=0.02, b=5, b1=5, gamma=0.5)
    res = run(quad_dro(), cfg)
    assert drift_check(res.records, res.estimate, cfg).passed
    assert drift_check(res.records).passed


def test_drift_check_flags_violations():
    rec = RoundRecord(0, 1.0, [1.0], 1.0, [1.0], 0.0, max_drift=2.0, max_avg_drift=0.5, drift_bound=1.0,
                      deviation=0.0, clamp_events=0, participants=[0])
    report = drift_check([rec])
    assert not report.passed and report.violations[0]["quantity"] == "max_drift"
    assert report.worst_ratio == 2.0
