#!/usr/bin/env python3
"""
Query-aware sensor scheduling simulator: command-line entry point.

Subcommands:
    run    evaluate one policy on a scenario and write per-slot, per-query and aggregate CSVs
    train  train the DQN scheduler and save a checkpoint plus its training curve
    toy    solve the two-chain example exactly and write the policy table
    bench  evaluate every benchmark policy on one scenario and write a comparison CSV
"""
import os
import sys
import logging
import argparse
from dataclasses import replace
from typing import List, Optional

import pandas as pd
from pythonjsonlogger import jsonlogger

from config import ExperimentConfig, Settings, load_config, load_settings
from dqn import TrainConfig, layer_sizes_for, operation_report
from harness import SCENARIO_NAMES, Scenario, build_scenario_v, run_episodes
from model_manager import ModelManager
from policy_selector import PolicySelector, available_policies
from summary_manager import CSV_FLOAT_FORMAT, SummaryManager, aggregate
from toy import ToyModel, build_mdp, policy_frame, policy_iteration, simulate
from utils import make_stream

BENCH_POLICIES = ('maf', 'greedy-cnt', 'greedy-max')
BENCH_POLICIES_FOUR_CLIENTS = ('greedy-state', 'greedy-mean')
_HANDLER_FLAG = '_scheduler_json_handler'


def configure_logging(settings: Optional[Settings] = None):
    """
    Configure the root logger to emit JSON records to stderr and, if LOG_FILE is set, to a file.
    """
    settings = settings or Settings()
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, _HANDLER_FLAG, False)]:
        root.removeHandler(handler)
        handler.close()
    json_fmt = jsonlogger.JsonFormatter('%(asctime)s %(levelname)s %(name)s %(message)s')

    sh = logging.StreamHandler()
    sh.setFormatter(json_fmt)
    setattr(sh, _HANDLER_FLAG, True)
    root.addHandler(sh)

    if settings.log_file:
        fh = logging.FileHandler(settings.log_file)
        fh.setFormatter(json_fmt)
        setattr(fh, _HANDLER_FLAG, True)
        root.addHandler(fh)

    root.setLevel(getattr(logging, settings.log_level, logging.INFO))


def write_csv(frame: pd.DataFrame, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logging.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def _experiment(args, settings: Settings) -> ExperimentConfig:
    if args.config:
        experiment = load_config(args.config, settings)
    else:
        experiment = ExperimentConfig(scenario=build_scenario_v(args.scenario,
                                                                estimator_samples=settings.estimator_samples))
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if getattr(args, 'episodes', None) is not None and args.command != 'train':
        overrides['episodes'] = args.episodes
    if getattr(args, 'episode_len', None) is not None:
        overrides['episode_len'] = args.episode_len
    if overrides:
        experiment.scenario = replace(experiment.scenario, **overrides)
    return experiment


def _selector(scenario: Scenario, settings: Settings, checkpoint: Optional[str]) -> PolicySelector:
    options = {
        'voi_outer_samples': settings.voi_outer_samples,
        'voi_inner_samples': settings.voi_inner_samples,
    }
    if checkpoint:
        manager = ModelManager(checkpoint)
        options['network'] = manager.load()
        options['scaler'] = manager.policy(scenario).scaler
    return PolicySelector(scenario.model, **options)


def _period(scenario: Scenario) -> int:
    scales = [int(round(c.tau_scale)) for c in scenario.clients]
    return max(scales) if scales else 1


def cmd_run(args, settings: Settings) -> int:
    experiment = _experiment(args, settings)
    scenario = experiment.scenario
    policy_name = (args.policy or experiment.policy or 'maf').strip().lower()
    checkpoint = args.checkpoint or experiment.checkpoint
    if policy_name == 'dqn' and not checkpoint:
        checkpoint = settings.checkpoint_path
    policy = _selector(scenario, settings, checkpoint if policy_name == 'dqn' else None).select(policy_name)
    logs = run_episodes(scenario, policy, n_jobs=settings.n_jobs)

    out_dir = args.out_dir or settings.out_dir
    write_csv(pd.concat([log.slot_frame() for log in logs], ignore_index=True), out_dir, 'episodes.csv')
    write_csv(pd.concat([log.query_frame() for log in logs], ignore_index=True), out_dir, 'queries.csv')
    summary = SummaryManager(out_dir)
    summary.record(aggregate(logs, policy.label, scenario.name, period=_period(scenario),
                             aoi_warmup=scenario.model.sensor_count))
    summary.write('aggregate.csv')
    print(summary.get_summary())
    return 0


def cmd_train(args, settings: Settings) -> int:
    experiment = _experiment(args, settings)
    scenario = experiment.scenario
    values = experiment.train.to_dict()
    if args.seed is not None:
        values['seed'] = args.seed
    if args.episodes is not None:
        values['episodes'] = args.episodes
    if args.alpha:
        values['alpha_override'] = [float(a) for a in args.alpha.split(',')]
    config = TrainConfig.from_dict(values)

    manager = ModelManager(args.checkpoint or experiment.checkpoint or settings.checkpoint_path)
    curve = manager.train_model(scenario, config)
    manager.save()
    out_dir = args.out_dir or settings.out_dir
    write_csv(curve, out_dir, 'training_curve.csv')
    report = operation_report(layer_sizes_for(scenario.model.state_dim, len(scenario.clients),
                                              scenario.model.sensor_count), batch_size=config.batch_size)
    print(f"Checkpoint saved to {manager.checkpoint_path}")
    print(f"Forward operations: {report['forward_operations']}, training step: {report['train_operations']}")
    print(f"Note: {report['note']}")
    return 0


def cmd_toy(args, settings: Settings) -> int:
    model = ToyModel(flip_probs=(args.p1, args.p2), delta_max=args.delta_max, gamma=args.gamma)
    mdp = build_mdp(model, args.query)
    policy, values, history = policy_iteration(mdp)
    out_dir = args.out_dir or settings.out_dir
    write_csv(policy_frame(mdp, policy, values), out_dir, 'toy_policy.csv')
    seed = args.seed if args.seed is not None else 0
    optimal = simulate(mdp, policy, args.steps, make_stream(seed, 'init'))
    baseline = simulate(mdp, None, args.steps, make_stream(seed, 'init'))
    print(f"Policy iteration: {len(history)} rounds, sum of values {history[-1]:.6f}")
    print(f"Simulated MSE: optimal {optimal['realized_mse']:.4f}, round-robin {baseline['realized_mse']:.4f}")
    return 0


def cmd_bench(args, settings: Settings) -> int:
    experiment = _experiment(args, settings)
    scenario = experiment.scenario
    names = list(BENCH_POLICIES)
    if len(scenario.clients) > 2:
        names += list(BENCH_POLICIES_FOUR_CLIENTS)
    checkpoint = args.checkpoint or experiment.checkpoint
    if checkpoint:
        names.append('dqn')
    selector = _selector(scenario, settings, checkpoint)
    out_dir = args.out_dir or settings.out_dir
    summary = SummaryManager(out_dir)
    for name in names:
        policy = selector.select(name)
        logs = run_episodes(scenario, policy, n_jobs=settings.n_jobs)
        summary.record(aggregate(logs, policy.label, scenario.name, period=_period(scenario),
                                 aoi_warmup=scenario.model.sensor_count))
    summary.write('bench.csv')
    report = operation_report(layer_sizes_for(scenario.model.state_dim, len(scenario.clients),
                                              scenario.model.sensor_count))
    print(summary.get_summary())
    print(f"DQN forward operations: {report['forward_operations']} ({report['note']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Query-aware sensor scheduling simulator')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, episodes_help):
        p.add_argument('--scenario', default='periodic', choices=SCENARIO_NAMES, help='Built-in scenario')
        p.add_argument('--config', help='YAML experiment file (overrides --scenario)')
        p.add_argument('--seed', type=int, help='Master seed')
        p.add_argument('--episodes', type=int, help=episodes_help)
        p.add_argument('--episode-len', type=int, help='Slots per episode')
        p.add_argument('--out-dir', help='Output directory (default OUTPUT_DIR)')
        p.add_argument('--checkpoint', help='DQN checkpoint path')

    p_run = sub.add_parser('run', help='Evaluate one policy')
    common(p_run, 'Evaluation episodes')
    p_run.add_argument('--policy', help=f"One of: {', '.join(available_policies())}")

    p_train = sub.add_parser('train', help='Train the DQN scheduler')
    common(p_train, 'Training episodes')
    p_train.add_argument('--alpha', help='Comma-separated client weights used for training, e.g. 1,0')

    p_toy = sub.add_parser('toy', help='Solve the two-chain example')
    p_toy.add_argument('--p1', type=float, default=0.1, help='Flip probability of chain 1')
    p_toy.add_argument('--p2', type=float, default=0.2, help='Flip probability of chain 2')
    p_toy.add_argument('--query', choices=('max', 'cnt'), default='max')
    p_toy.add_argument('--delta-max', type=int, default=20)
    p_toy.add_argument('--gamma', type=float, default=0.9)
    p_toy.add_argument('--steps', type=int, default=10000, help='Slots for the simulation check')
    p_toy.add_argument('--seed', type=int)
    p_toy.add_argument('--out-dir')

    p_bench = sub.add_parser('bench', help='Compare all benchmark policies')
    common(p_bench, 'Evaluation episodes')
    return parser


COMMANDS = {'run': cmd_run, 'train': cmd_train, 'toy': cmd_toy, 'bench': cmd_bench}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand and return the exit status."""
    settings = load_settings()
    configure_logging(settings)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, settings)
    except (ValueError, ArithmeticError, OSError) as e:
        logging.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == '__main__':
    main()
