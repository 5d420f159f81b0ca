import logging

import numpy as np
import pandas as pd
import pytest
from joblib import parallel_backend

from dynamics import SystemModel
from exceptions import ConfigurationError
from harness import (SCENARIO_NAMES, Scenario, build_model_v, build_scenario_v, reward, run_episode,
                     run_episodes)
from policies import GreedyVoIPolicy, MAFPolicy
from queries import CountRange, Max, Mean, Variance
from query_process import make_periodic
from summary_manager import aggregate
from utils import spectral_radius


@pytest.fixture
def scenario(small_model):
    clients = (make_periodic(3, 0, Max(), alpha=1.0, client_id=0),
               make_periodic(3, 1, CountRange(-1.0, 1.0), alpha=2.0, client_id=1))
    return Scenario(name='small', model=small_model, clients=clients, episode_len=12, episodes=3, seed=11,
                    estimator_samples=200)


def test_model_v_matrices():
    model = build_model_v()
    assert model.state_dim == 20 and model.sensor_count == 20
    np.testing.assert_array_equal(np.diag(model.A), 0.75)
    assert spectral_radius(model.A) < 1.0
    assert np.linalg.eigvalsh(model.sigma_v).min() > 0.0
    np.testing.assert_allclose(model.epsilon, [0.02] * 10 + [0.04] * 10)
    # one-based (i, j) = (1, 4): 1 - 8 = -7, which is 0 mod 7
    assert model.A[0, 3] == 0.0
    # (i, j) = (1, 1): 1 - 2 = -1, which is 6 mod 7, but the diagonal wins
    assert model.A[0, 0] == 0.75
    # (1, 8): 1 - 16 = -15, which is 6 mod 7
    assert model.A[0, 7] == -0.125
    assert model.sigma_v[0, 6] == 1.0 and model.sigma_v[0, 1] == 0.0
    assert model.sigma_v[0, 0] == pytest.approx(2.2)


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_builtin_scenarios(name):
    built = build_scenario_v(name, episode_len=5, episodes=1)
    assert built.name == name
    assert len(built.clients) == (4 if name == 'periodic4' else 2)
    assert built.alphas == (1.0,) * len(built.clients)


def test_unknown_scenario():
    with pytest.raises(ConfigurationError):
        build_scenario_v('bursty')


def test_scenario_validation(small_model):
    with pytest.raises(ConfigurationError):
        Scenario(name='x', model=small_model, clients=())
    one_dim = SystemModel(A=[[0.5]], H=[[1.0]], sigma_v=[[1.0]], sigma_w=[[1.0]], epsilon=[0.0])
    with pytest.raises(ValueError):
        Scenario(name='x', model=one_dim, clients=(make_periodic(2, 0, Variance()),))


def test_with_alphas(scenario):
    weighted = scenario.with_alphas([3.0, 0.5])
    assert weighted.alphas == (3.0, 0.5)
    assert scenario.alphas == (1.0, 2.0)
    with pytest.raises(ConfigurationError):
        scenario.with_alphas([1.0])


def test_reward():
    assert reward([]) == 0.0
    assert reward([(1.0, 0.5), (2.0, 0.25)]) == pytest.approx(-1.0)


def test_episode_is_reproducible(scenario):
    a = run_episode(scenario, MAFPolicy(), seed=5)
    b = run_episode(scenario, MAFPolicy(), seed=5)
    pd.testing.assert_frame_equal(a.slot_frame(), b.slot_frame())
    pd.testing.assert_frame_equal(a.query_frame(), b.query_frame())
    c = run_episode(scenario, MAFPolicy(), seed=6)
    assert not a.query_frame()['true_value'].equals(c.query_frame()['true_value'])


def test_slot_records(scenario, caplog):
    caplog.set_level(logging.INFO)
    log = run_episode(scenario, MAFPolicy(), seed=5, episode=2)
    slots = log.slot_frame()
    assert len(slots) == 12
    assert (slots['episode'] == 2).all()
    assert {f"aoi_{n}" for n in (1, 2, 3)} <= set(slots.columns)
    aoi = slots[['aoi_1', 'aoi_2', 'aoi_3']].to_numpy()
    assert (aoi >= 1).all()
    delivered = slots.loc[~slots['erasure']]
    for _, row in delivered.iterrows():
        assert row[f"aoi_{row['action'] + 1}"] == 1
    assert (slots['reward'] <= 0.0).all()
    assert 'Episode metrics' in caplog.text


def test_periodic_queries_and_rewards(scenario):
    log = run_episode(scenario, MAFPolicy(), seed=5)
    queries = log.query_frame()
    assert sorted(queries.loc[queries['client'] == 0, 'slot']) == [0, 3, 6, 9]
    assert sorted(queries.loc[queries['client'] == 1, 'slot']) == [1, 4, 7, 10]
    assert set(queries['query_kind']) == {'max', 'cnt[-1,1]'}
    assert (queries['tau'] == 0).all()
    np.testing.assert_allclose(queries['sq_error'], (queries['estimate'] - queries['true_value']) ** 2)
    weighted = (queries['alpha'] * queries['expected_mse']).groupby(queries['slot']).sum()
    slots = log.slot_frame().set_index('slot')
    np.testing.assert_allclose(slots.loc[weighted.index, 'reward'], -weighted.to_numpy())
    assert (slots.drop(weighted.index)['reward'] == 0.0).all()


def test_truth_does_not_depend_on_policy(scenario):
    maf = run_episode(scenario, MAFPolicy(), seed=8).query_frame()
    greedy = GreedyVoIPolicy(Max(), scenario.model, sample_count=10, inner_samples=20)
    other = run_episode(scenario, greedy, seed=8).query_frame()
    pd.testing.assert_series_equal(maf['true_value'], other['true_value'])
    pd.testing.assert_series_equal(maf['slot'], other['slot'])


def test_lost_channel_never_updates(small_model):
    dead = SystemModel(A=small_model.A, H=small_model.H, sigma_v=small_model.sigma_v,
                       sigma_w=small_model.sigma_w, epsilon=[1.0, 1.0, 1.0])
    built = Scenario(name='dead', model=dead, clients=(make_periodic(2, 0, Max()),), episode_len=6,
                     estimator_samples=50)
    slots = run_episode(built, MAFPolicy(), seed=1).slot_frame()
    assert slots['erasure'].all()
    np.testing.assert_array_equal(slots['aoi_1'], np.arange(2, 8))
    np.testing.assert_allclose(slots['trace_psi'], np.trace(small_model.stationary_covariance()), rtol=1e-6)


def test_step_callback_sees_every_slot(scenario):
    seen = []
    run_episode(scenario, MAFPolicy(), seed=3, step_callback=lambda ctx, a, r: seen.append((ctx.t, a, r)))
    assert [t for t, _, _ in seen] == list(range(12))


def test_run_episodes_is_ordered_and_job_count_independent(scenario):
    serial = run_episodes(scenario, MAFPolicy())
    with parallel_backend('threading'):
        parallel = run_episodes(scenario, MAFPolicy(), n_jobs=2)
    assert [log.episode for log in serial] == [0, 1, 2]
    for a, b in zip(serial, parallel):
        assert a.seed == b.seed
        pd.testing.assert_frame_equal(a.slot_frame(), b.slot_frame())


@pytest.mark.slow
def test_greedy_count_beats_maf_on_count_queries():
    built = build_scenario_v('periodic', episode_len=100, episodes=10, seed=0)
    greedy = GreedyVoIPolicy(CountRange(), built.model)
    maf_err = pd.concat([log.query_frame() for log in run_episodes(built, MAFPolicy())])
    greedy_err = pd.concat([log.query_frame() for log in run_episodes(built, greedy)])
    kind = CountRange().label
    assert greedy_err.loc[greedy_err['query_kind'] == kind, 'sq_error'].mean() < \
        maf_err.loc[maf_err['query_kind'] == kind, 'sq_error'].mean()


def test_age_of_information_law(scenario):
    slots = run_episode(scenario, MAFPolicy(), seed=4).slot_frame()
    expected = np.ones(3, dtype=int)
    for row in slots.to_dict('records'):
        expected += 1
        if not bool(row['erasure']):
            expected[int(row['action'])] = 1
        assert [int(row[f"aoi_{n + 1}"]) for n in range(3)] == expected.tolist()


def test_mean_answers_are_calibrated(small_model):
    built = Scenario(name='calibration', model=small_model, clients=(make_periodic(1, 0, Mean()),),
                     episode_len=100, episodes=100, seed=5)
    frames = [log.query_frame() for log in run_episodes(built, MAFPolicy())]
    assert sum(len(f) for f in frames) >= 10_000
    # Slots within an episode are correlated; episodes are not.
    gaps = np.array([f['sq_error'].mean() - f['expected_mse'].mean() for f in frames])
    se = gaps.std(ddof=1) / np.sqrt(len(gaps))
    assert abs(gaps.mean()) < 3 * se


@pytest.mark.slow
def test_greedy_max_beats_maf_on_max_queries():
    built = build_scenario_v('periodic', episode_len=100, episodes=10, seed=0)
    greedy = GreedyVoIPolicy(Max(), built.model)
    maf_err = pd.concat([log.query_frame() for log in run_episodes(built, MAFPolicy())])
    greedy_err = pd.concat([log.query_frame() for log in run_episodes(built, greedy)])
    assert greedy_err.loc[greedy_err['query_kind'] == 'max', 'sq_error'].mean() < \
        maf_err.loc[maf_err['query_kind'] == 'max', 'sq_error'].mean()


def test_maf_steady_state_ages_on_the_periodic_scenario():
    built = build_scenario_v('periodic', episode_len=100, episodes=10, seed=7, estimator_samples=200)
    logs = run_episodes(built, MAFPolicy())
    for log in logs:
        actions = [s['action'] for s in log.slots]
        assert len(actions) == built.episode_len
        assert all(0 <= a < built.model.sensor_count for a in actions)
    row = aggregate(logs, 'maf', built.name, aoi_warmup=built.model.sensor_count).summary.iloc[-1]
    ages = [row[f"aoi_mean_{n + 1}"] for n in range(built.model.sensor_count)]
    assert min(ages) >= 10.0 and max(ages) <= 12.0
