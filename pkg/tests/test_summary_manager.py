import os

import numpy as np
import pandas as pd
import pytest

from exceptions import InvalidArgumentError
from harness import EpisodeLog
from summary_manager import SummaryManager, aggregate


def slot(t, action, reward, polled_value, active=1):
    return {'episode': 0, 'slot': t, 'action': action, 'erasure': False, 'active_queries': active,
            'reward': reward, 'trace_psi': 2.0, 'state_sq_error': 1.0, 'polled_value': polled_value,
            'aoi_1': 1 if action == 0 else 2, 'aoi_2': 1 if action == 1 else 2}


def query(t, client, kind, alpha, sq_error):
    return {'episode': 0, 'slot': t, 'client': client, 'query_kind': kind, 'alpha': alpha, 'estimate': 0.0,
            'true_value': 0.0, 'sq_error': sq_error, 'expected_mse': sq_error, 'tau': 0}


@pytest.fixture
def log():
    log = EpisodeLog(episode=0, seed=1)
    log.slots = [slot(0, 0, -1.0, 0.4), slot(1, 1, -3.0, -2.5), slot(2, 0, 0.0, 20.0, active=0)]
    log.queries = [query(0, 0, 'max', 1.0, 1.0), query(1, 0, 'max', 1.0, 1.0), query(1, 1, 'cnt[-5,0]', 2.0, 1.0)]
    return log


def test_aggregate_rows(log):
    summary = aggregate([log], 'maf', 'periodic', period=2).summary
    assert list(summary['query_kind']) == ['cnt[-5,0]', 'max', 'overall']
    rows = summary.set_index('query_kind')
    assert rows.loc['max', 'mse_mean'] == pytest.approx(1.0)
    # weighted per-slot errors: slot 0 -> 1, slot 1 -> 1 + 2
    assert rows.loc['overall', 'mse_mean'] == pytest.approx(2.0)
    assert rows.loc['overall', 'mse_p50'] == pytest.approx(2.0)
    assert rows.loc['overall', 'overall_cost_mean'] == pytest.approx(2.0)
    assert rows.loc['max', 'aoi_mean_1'] == pytest.approx(4.0 / 3.0)
    assert (summary['policy'] == 'maf').all() and (summary['scenario'] == 'periodic').all()


def test_profiles(log):
    report = aggregate([log], 'maf', 'periodic', period=2)
    polls = report.poll_profile.set_index(['phase', 'sensor'])['probability']
    assert polls.loc[(0, 1)] == pytest.approx(1.0)
    assert polls.loc[(1, 2)] == pytest.approx(1.0)
    values = report.value_profile
    assert set(values['value_bin']) == {0, -3, 14}
    assert values.groupby('phase')['probability'].sum().tolist() == pytest.approx([1.0, 1.0])


def test_aggregate_needs_logs():
    with pytest.raises(InvalidArgumentError):
        aggregate([], 'maf', 'periodic')


def test_episode_without_queries():
    empty = EpisodeLog(episode=0, seed=0, slots=[slot(0, 0, 0.0, 0.0, active=0)])
    summary = aggregate([empty], 'maf', 'periodic').summary
    assert list(summary['query_kind']) == ['overall']
    assert np.isnan(summary.loc[0, 'mse_mean'])
    assert summary.loc[0, 'overall_cost_mean'] == 0.0


def test_manager_writes_csv(log, tmp_path):
    manager = SummaryManager(out_dir=str(tmp_path / 'out'))
    manager.record(aggregate([log], 'maf', 'periodic', period=2))
    manager.record(aggregate([log], 'greedy-cnt', 'periodic', period=2))
    paths = manager.write()
    assert all(os.path.exists(p) for p in paths.values())
    written = pd.read_csv(paths['summary'])
    assert set(written['policy']) == {'maf', 'greedy-cnt'}
    assert len(written) == 6
    text = manager.get_summary()
    assert '- maf: 2.0000' in text
    assert 'max: mean MSE 1.0000' in text


def test_manager_defaults_to_output_dir(monkeypatch, tmp_path):
    monkeypatch.setenv('OUTPUT_DIR', str(tmp_path))
    assert SummaryManager().out_dir == str(tmp_path)
    with pytest.raises(InvalidArgumentError):
        SummaryManager().combined()


def test_aoi_means_skip_the_warmup(log):
    rows = aggregate([log], 'maf', 'periodic', period=2, aoi_warmup=1).summary.set_index('query_kind')
    assert rows.loc['overall', 'aoi_mean_1'] == pytest.approx(1.5)
    assert rows.loc['overall', 'aoi_mean_2'] == pytest.approx(1.5)
    # nothing past the warm-up: every slot counts
    rows = aggregate([log], 'maf', 'periodic', period=2, aoi_warmup=5).summary.set_index('query_kind')
    assert rows.loc['overall', 'aoi_mean_1'] == pytest.approx(4.0 / 3.0)
