import os
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from exceptions import InvalidArgumentError
from harness import EpisodeLog

PERCENTILES = (5, 25, 50, 75, 95)
VALUE_BIN_RANGE = (-15, 15)
CSV_FLOAT_FORMAT = '%.10g'


@dataclass
class AggregateReport:
    summary: pd.DataFrame
    poll_profile: pd.DataFrame
    value_profile: pd.DataFrame


def _distribution(values: np.ndarray) -> Dict[str, float]:
    if len(values) == 0:
        return {'mse_mean': np.nan, **{f"mse_p{q}": np.nan for q in PERCENTILES}}
    stats = {'mse_mean': float(np.mean(values))}
    for q, v in zip(PERCENTILES, np.percentile(values, PERCENTILES)):
        stats[f"mse_p{q}"] = float(v)
    return stats


def aggregate(logs: Sequence[EpisodeLog], policy: str, scenario: str, period: int = 6,
              aoi_warmup: int = 0) -> AggregateReport:
    """
    Summarise evaluation episodes of one policy.

    One row per query kind with the distribution of realised squared errors,
    plus an 'overall' row over the weighted per-slot errors. The overall cost
    is the mean of -reward over slots with at least one query.

    Per-sensor AoI means skip the first aoi_warmup slots of every episode
    (one polling cycle gives steady-state ages); when no slot lies past the
    warm-up every slot is used.
    """
    if not logs:
        raise InvalidArgumentError("Cannot aggregate an empty list of episode logs")
    slots = pd.concat([log.slot_frame() for log in logs], ignore_index=True)
    queries = pd.concat([log.query_frame() for log in logs], ignore_index=True)
    aoi_columns = [c for c in slots.columns if c.startswith('aoi_')]

    active = slots[slots['active_queries'] > 0]
    overall_cost = float(-active['reward'].mean()) if len(active) else 0.0
    common = {'overall_cost_mean': overall_cost}
    aoi_slots = slots[slots['slot'] >= int(aoi_warmup)]
    if aoi_slots.empty:
        aoi_slots = slots
    common.update({f"aoi_mean_{c.split('_', 1)[1]}": float(aoi_slots[c].mean()) for c in aoi_columns})
    common['trace_psi_mean'] = float(slots['trace_psi'].mean())
    common['state_mse_mean'] = float(slots['state_sq_error'].mean())

    rows = []
    for kind in sorted(queries['query_kind'].unique()) if len(queries) else []:
        errors = queries.loc[queries['query_kind'] == kind, 'sq_error'].to_numpy()
        rows.append({'policy': policy, 'scenario': scenario, 'query_kind': kind, **_distribution(errors), **common})
    if len(queries):
        weighted = (queries['alpha'] * queries['sq_error']).groupby([queries['episode'], queries['slot']]).sum()
        overall = weighted.to_numpy()
    else:
        overall = np.array([])
    rows.append({'policy': policy, 'scenario': scenario, 'query_kind': 'overall', **_distribution(overall), **common})
    summary = pd.DataFrame(rows)

    report = AggregateReport(
        summary=summary,
        poll_profile=poll_profile(slots, policy, period),
        value_profile=value_profile(slots, policy, period),
    )
    logging.info(f"Aggregated {len(logs)} episodes for {policy} on {scenario}: overall cost {overall_cost:.4f}")
    return report


def poll_profile(slots: pd.DataFrame, policy: str, period: int) -> pd.DataFrame:
    """Empirical probability of polling each sensor at each phase of the query period."""
    frame = slots.assign(phase=slots['slot'] % period)
    counts = frame.groupby(['phase', 'action']).size().rename('count').reset_index()
    totals = frame.groupby('phase').size()
    counts['probability'] = counts['count'] / counts['phase'].map(totals)
    counts['sensor'] = counts['action'] + 1
    counts.insert(0, 'policy', policy)
    return counts[['policy', 'phase', 'sensor', 'probability']]


def value_profile(slots: pd.DataFrame, policy: str, period: int) -> pd.DataFrame:
    """Empirical distribution of the true value behind each poll, per phase, in unit bins."""
    low, high = VALUE_BIN_RANGE
    bins = np.floor(np.clip(slots['polled_value'].to_numpy(), low, high - 1e-9)).astype(int)
    frame = pd.DataFrame({'phase': slots['slot'] % period, 'value_bin': bins})
    counts = frame.groupby(['phase', 'value_bin']).size().rename('count').reset_index()
    totals = frame.groupby('phase').size()
    counts['probability'] = counts['count'] / counts['phase'].map(totals)
    counts.insert(0, 'policy', policy)
    return counts[['policy', 'phase', 'value_bin', 'probability']]


class SummaryManager:
    """
    Collects aggregate reports of several policies and writes them as CSV.
    """
    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = out_dir or os.getenv('OUTPUT_DIR', 'results')
        self.reports: List[AggregateReport] = []

    def record(self, report: AggregateReport):
        self.reports.append(report)

    def combined(self) -> AggregateReport:
        if not self.reports:
            raise InvalidArgumentError("No reports recorded")
        return AggregateReport(
            summary=pd.concat([r.summary for r in self.reports], ignore_index=True),
            poll_profile=pd.concat([r.poll_profile for r in self.reports], ignore_index=True),
            value_profile=pd.concat([r.value_profile for r in self.reports], ignore_index=True),
        )

    def get_summary(self) -> str:
        lines = ["Policy comparison (overall cost, lower is better)"]
        for r in self.reports:
            overall = r.summary[r.summary['query_kind'] == 'overall'].iloc[0]
            lines.append(f"- {overall['policy']}: {overall['overall_cost_mean']:.4f}")
            for _, row in r.summary[r.summary['query_kind'] != 'overall'].iterrows():
                lines.append(f"    {row['query_kind']}: mean MSE {row['mse_mean']:.4f}")
        return "\n".join(lines)

    def write(self, summary_name: str = 'aggregate.csv') -> Dict[str, str]:
        combined = self.combined()
        os.makedirs(self.out_dir, exist_ok=True)
        paths = {
            'summary': os.path.join(self.out_dir, summary_name),
            'poll_profile': os.path.join(self.out_dir, 'poll_profile.csv'),
            'value_profile': os.path.join(self.out_dir, 'value_profile.csv'),
        }
        combined.summary.to_csv(paths['summary'], index=False, float_format=CSV_FLOAT_FORMAT)
        combined.poll_profile.to_csv(paths['poll_profile'], index=False, float_format=CSV_FLOAT_FORMAT)
        combined.value_profile.to_csv(paths['value_profile'], index=False, float_format=CSV_FLOAT_FORMAT)
        logging.info(f"Summary written to {paths['summary']}")
        return paths
