import os
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from dqn import TrainConfig
from dynamics import SystemModel
from exceptions import ConfigurationError
from harness import Scenario, build_scenario_v
from queries import (DEFAULT_ESTIMATOR_SAMPLES, DEFAULT_VOI_INNER_SAMPLES, DEFAULT_VOI_OUTER_SAMPLES,
                     parse_query)
from query_process import ClientProcess, make_chain, make_memoryless, make_periodic
from utils import env_int

SECTIONS = {'model', 'clients', 'policy', 'run'}
MODEL_KEYS = {'scenario', 'A', 'H', 'sigma_v', 'sigma_w', 'epsilon'}
CLIENT_KEYS = {'query', 'alpha', 'process', 'period', 'phase', 'p', 'transition', 'query_states',
               'initial_state', 'tau_scale'}
POLICY_KEYS = {'name', 'checkpoint', 'train'}
RUN_KEYS = {'episodes', 'episode_len', 'seed', 'estimator_samples'}


@dataclass
class Settings:
    """
    Process-wide defaults read from the environment (.env supported).
    """
    out_dir: str = 'results'
    log_level: str = 'INFO'
    log_file: Optional[str] = None
    estimator_samples: int = DEFAULT_ESTIMATOR_SAMPLES
    voi_outer_samples: int = DEFAULT_VOI_OUTER_SAMPLES
    voi_inner_samples: int = DEFAULT_VOI_INNER_SAMPLES
    n_jobs: int = 1
    checkpoint_path: str = 'dqn_checkpoint.joblib'


def load_settings(dotenv_path: Optional[str] = None) -> Settings:
    load_dotenv(dotenv_path)
    return Settings(
        out_dir=os.getenv('OUTPUT_DIR', 'results'),
        log_level=os.getenv('LOG_LEVEL', 'INFO').upper(),
        log_file=os.getenv('LOG_FILE') or None,
        estimator_samples=env_int('ESTIMATOR_SAMPLES', DEFAULT_ESTIMATOR_SAMPLES),
        voi_outer_samples=env_int('VOI_OUTER_SAMPLES', DEFAULT_VOI_OUTER_SAMPLES),
        voi_inner_samples=env_int('VOI_INNER_SAMPLES', DEFAULT_VOI_INNER_SAMPLES),
        n_jobs=env_int('N_JOBS', 1),
        checkpoint_path=os.getenv('DQN_CHECKPOINT_PATH', 'dqn_checkpoint.joblib'),
    )


@dataclass
class ExperimentConfig:
    scenario: Scenario
    policy: Optional[str] = None
    checkpoint: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)


def _check_keys(section: str, values: Dict[str, Any], allowed: set):
    if not isinstance(values, dict):
        raise ConfigurationError(f"Section {section!r} must be a mapping")
    unknown = set(values) - allowed
    if unknown:
        raise ConfigurationError(f"Unknown keys in {section!r}: {sorted(unknown)}")


def build_client(spec: Dict[str, Any], client_id: int) -> ClientProcess:
    _check_keys(f"clients[{client_id}]", spec, CLIENT_KEYS)
    if 'query' not in spec:
        raise ConfigurationError(f"clients[{client_id}] needs a query")
    kind = parse_query(spec['query'])
    alpha = float(spec.get('alpha', 1.0))
    process = spec.get('process', 'periodic')
    if process == 'periodic':
        return make_periodic(int(spec.get('period', 6)), int(spec.get('phase', 0)), kind, alpha, client_id)
    if process == 'memoryless':
        if 'p' not in spec:
            raise ConfigurationError(f"clients[{client_id}]: memoryless process needs p")
        return make_memoryless(float(spec['p']), kind, alpha, client_id)
    if process == 'chain':
        if 'transition' not in spec or 'query_states' not in spec:
            raise ConfigurationError(f"clients[{client_id}]: chain process needs transition and query_states")
        return make_chain(spec['transition'], spec['query_states'], kind, alpha,
                          initial_state=int(spec.get('initial_state', 0)),
                          tau_scale=spec.get('tau_scale'), client_id=client_id)
    raise ConfigurationError(f"clients[{client_id}]: unknown process {process!r}")


def load_config(path: str, settings: Optional[Settings] = None) -> ExperimentConfig:
    """
    Read an experiment from YAML (sections: model, clients, policy, run).
    """
    settings = settings or Settings()
    with open(path, 'r') as fh:
        raw = yaml.safe_load(fh) or {}
    _check_keys('top level', raw, SECTIONS)
    model_spec = raw.get('model', {})
    run_spec = raw.get('run', {})
    policy_spec = raw.get('policy', {})
    _check_keys('model', model_spec, MODEL_KEYS)
    _check_keys('run', run_spec, RUN_KEYS)
    _check_keys('policy', policy_spec, POLICY_KEYS)

    run = {
        'episodes': int(run_spec.get('episodes', 10)),
        'episode_len': int(run_spec.get('episode_len', 100)),
        'seed': int(run_spec.get('seed', 0)),
        'estimator_samples': int(run_spec.get('estimator_samples', settings.estimator_samples)),
    }
    if 'scenario' in model_spec:
        if set(model_spec) != {'scenario'}:
            raise ConfigurationError("model: give either a built-in scenario or explicit matrices, not both")
        base = build_scenario_v(model_spec['scenario'], **run)
        model, name, clients = base.model, base.name, list(base.clients)
    else:
        missing = {'A', 'H', 'sigma_v', 'sigma_w', 'epsilon'} - set(model_spec)
        if missing:
            raise ConfigurationError(f"model: missing {sorted(missing)}")
        model = SystemModel(**{k: model_spec[k] for k in ('A', 'H', 'sigma_v', 'sigma_w', 'epsilon')})
        name, clients = os.path.splitext(os.path.basename(path))[0], []

    client_specs: List[Dict] = raw.get('clients') or []
    if client_specs:
        clients = [build_client(spec, i) for i, spec in enumerate(client_specs)]
    if not clients:
        raise ConfigurationError("No clients configured")

    scenario = Scenario(name=name, model=model, clients=tuple(clients), **run)
    train = TrainConfig.from_dict(policy_spec.get('train', {}) or {})
    logging.info(f"Loaded config {path}: scenario={name}, clients={len(clients)}, policy={policy_spec.get('name')}")
    return ExperimentConfig(scenario=scenario, policy=policy_spec.get('name'),
                            checkpoint=policy_spec.get('checkpoint'), train=train)
