import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from dynamics import SystemModel, attempt_transmission, initial_state, observe, step
from exceptions import ConfigurationError
from kalman import initial_belief, predict, update
from policies import Policy, SchedulerContext
from queries import DEFAULT_ESTIMATOR_SAMPLES, CountRange, Max, Mean, State, estimate, evaluate
from query_process import ClientProcess, advance, make_memoryless, make_periodic
from utils import derive_seed, make_stream

SCENARIO_NAMES = ('periodic', 'memoryless', 'mixed', 'periodic4')
STATE_DIM = 20
QUERY_PERIOD = 6
QUERY_PROBABILITY = 1.0 / 6.0

StepCallback = Callable[[SchedulerContext, int, float], None]


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: SystemModel
    clients: Tuple[ClientProcess, ...]
    episode_len: int = 100
    episodes: int = 10
    seed: int = 0
    estimator_samples: int = DEFAULT_ESTIMATOR_SAMPLES

    def __post_init__(self):
        if self.episode_len < 1 or self.episodes < 1:
            raise ConfigurationError(f"Episode length and count must be positive, got {self.episode_len}, {self.episodes}")
        if not self.clients:
            raise ConfigurationError("A scenario needs at least one client")
        object.__setattr__(self, 'clients', tuple(self.clients))
        for client in self.clients:
            client.kind.validate(self.model.state_dim)

    @property
    def alphas(self) -> Tuple[float, ...]:
        return tuple(c.alpha for c in self.clients)

    def with_alphas(self, alphas: Sequence[float]) -> 'Scenario':
        """Copy of the scenario with the client weights replaced."""
        if len(alphas) != len(self.clients):
            raise ConfigurationError(f"Got {len(alphas)} weights for {len(self.clients)} clients")
        clients = tuple(replace(c, alpha=float(a)) for c, a in zip(self.clients, alphas))
        return replace(self, clients=clients)


@dataclass
class EpisodeLog:
    episode: int
    seed: int
    slots: List[Dict] = field(default_factory=list)
    queries: List[Dict] = field(default_factory=list)

    def slot_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.slots)

    def query_frame(self) -> pd.DataFrame:
        columns = ['episode', 'slot', 'client', 'query_kind', 'alpha', 'estimate', 'true_value',
                   'sq_error', 'expected_mse', 'tau']
        return pd.DataFrame(self.queries, columns=columns)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s['reward'] for s in self.slots], dtype=float)


def _scenario_matrices(M: int = STATE_DIM):
    """
    Evaluation system: a stable mixing matrix and a banded process noise,
    using one-based indices i, j in the index formulas.
    """
    i = np.arange(1, M + 1)[:, None]
    j = np.arange(1, M + 1)[None, :]
    A = np.where(np.mod(i - 2 * j, 7) == 6, -0.125, 0.0)
    np.fill_diagonal(A, 0.75)
    sigma_v = np.where(np.mod(i - j, 6) == 0, 1.0, 0.0)
    np.fill_diagonal(sigma_v, (11 + np.mod(np.arange(M), 10)) / 5.0)
    epsilon = 0.02 * np.ceil(np.arange(1, M + 1) / 10.0)
    return A, np.eye(M), sigma_v, np.eye(M), epsilon


def build_model_v() -> SystemModel:
    A, H, sigma_v, sigma_w, epsilon = _scenario_matrices()
    return SystemModel(A=A, H=H, sigma_v=sigma_v, sigma_w=sigma_w, epsilon=epsilon)


def build_scenario_v(name: str, episode_len: int = 100, episodes: int = 10, seed: int = 0,
                     estimator_samples: int = DEFAULT_ESTIMATOR_SAMPLES) -> Scenario:
    """
    Built-in 20-sensor scenarios with a count-range client and a max client.

    periodic: both period 6, max at phase 0, count at phase 2.
    memoryless: both issue a query with probability 1/6 per slot.
    mixed: memoryless max client, periodic count client.
    periodic4: period 12 with state and mean clients added.
    """
    key = str(name).strip().lower()
    if key not in SCENARIO_NAMES:
        raise ConfigurationError(f"Unknown scenario {name!r}; valid options: {', '.join(SCENARIO_NAMES)}")
    model = build_model_v()
    cnt, mx = CountRange(-5.0, 0.0), Max()
    if key == 'periodic':
        clients = [make_periodic(QUERY_PERIOD, 2, cnt, 1.0, client_id=0),
                   make_periodic(QUERY_PERIOD, 0, mx, 1.0, client_id=1)]
    elif key == 'memoryless':
        clients = [make_memoryless(QUERY_PROBABILITY, cnt, 1.0, client_id=0),
                   make_memoryless(QUERY_PROBABILITY, mx, 1.0, client_id=1)]
    elif key == 'mixed':
        clients = [make_periodic(QUERY_PERIOD, 2, cnt, 1.0, client_id=0),
                   make_memoryless(QUERY_PROBABILITY, mx, 1.0, client_id=1)]
    else:
        period = 2 * QUERY_PERIOD
        clients = [make_periodic(period, 3, cnt, 1.0, client_id=0),
                   make_periodic(period, 0, mx, 1.0, client_id=1),
                   make_periodic(period, 6, State(), 1.0, client_id=2),
                   make_periodic(period, 9, Mean(), 1.0, client_id=3)]
    logging.info(f"Built scenario {key}: M={model.state_dim}, N={model.sensor_count}, clients={len(clients)}")
    return Scenario(name=key, model=model, clients=tuple(clients), episode_len=episode_len,
                    episodes=episodes, seed=seed, estimator_samples=estimator_samples)


def reward(answers: Sequence[Tuple[float, float]]) -> float:
    """
    -sum(alpha * expected MSE) over the (alpha, mse) pairs of the queries answered in a slot.
    """
    return -float(sum(alpha * mse for alpha, mse in answers))


def run_episode(scenario: Scenario, policy: Policy, seed: int, episode: int = 0,
                step_callback: Optional[StepCallback] = None) -> EpisodeLog:
    """
    Simulate one episode slot by slot.

    Slot order: the process steps, the belief is predicted, clients advance,
    the policy polls one sensor, a delivered reading updates the belief, and
    active queries are answered from the updated belief.
    """
    model = scenario.model
    N = model.sensor_count
    init_rng = make_stream(seed, 'init')
    process_rng = make_stream(seed, 'process')
    measurement_rng = make_stream(seed, 'measurement')
    channel_rng = make_stream(seed, 'channel')
    query_rngs = [make_stream(seed, 'queries', c) for c in range(len(scenario.clients))]
    policy_rng = make_stream(seed, 'policy')
    estimator_rng = make_stream(seed, 'estimator')

    start = time.perf_counter()
    truth = initial_state(model, init_rng)
    belief = initial_belief(model)
    clients = list(scenario.clients)
    aoi = np.ones(N, dtype=int)
    log = EpisodeLog(episode=episode, seed=seed)
    failed = 0

    for t in range(scenario.episode_len):
        truth = step(model, truth, process_rng)
        prior = predict(model, belief)
        active = []
        for c, client in enumerate(clients):
            clients[c], is_active = advance(client, query_rngs[c])
            if is_active:
                active.append(c)

        context = SchedulerContext(belief_prior=prior, aoi=aoi.copy(),
                                   clients=tuple(cl.view() for cl in clients), t=t)
        action = model.check_sensor(policy.decide(context, policy_rng))
        delivered = attempt_transmission(model, action, channel_rng)
        reading = observe(model, truth, action, measurement_rng) if delivered else None
        belief = update(model, prior, action, reading)
        failed += 0 if delivered else 1

        answers = []
        for c in active:
            client = clients[c]
            answer = estimate(client.kind, belief, scenario.estimator_samples, estimator_rng)
            true_value = evaluate(client.kind, truth.x)
            sq_error = float(np.sum((np.asarray(answer.value) - np.asarray(true_value)) ** 2))
            scalar = not isinstance(client.kind, State)
            log.queries.append({
                'episode': episode,
                'slot': t,
                'client': c,
                'query_kind': client.kind.label,
                'alpha': client.alpha,
                'estimate': float(answer.value) if scalar else np.nan,
                'true_value': float(true_value) if scalar else np.nan,
                'sq_error': sq_error,
                'expected_mse': answer.expected_mse,
                'tau': client.tau,
            })
            answers.append((client.alpha, answer.expected_mse))
        r = reward(answers)
        if step_callback is not None:
            step_callback(context, action, r)

        aoi += 1
        if delivered:
            aoi[action] = 1
        record = {
            'episode': episode,
            'slot': t,
            'action': action,
            'erasure': not delivered,
            'active_queries': len(active),
            'reward': r,
            'trace_psi': float(np.trace(belief.psi)),
            'state_sq_error': float(np.sum((truth.x - belief.x_hat) ** 2)),
            'polled_value': float(model.H[action] @ truth.x),
        }
        record.update({f"aoi_{n + 1}": int(aoi[n]) for n in range(N)})
        log.slots.append(record)

    latency = time.perf_counter() - start
    query_slots = [s for s in log.slots if s['active_queries']]
    overall_cost = -float(np.mean([s['reward'] for s in query_slots])) if query_slots else 0.0
    logging.info("Episode metrics", extra={
        'episode': episode,
        'policy': policy.label,
        'slots': scenario.episode_len,
        'polls': scenario.episode_len,
        'failed_polls': failed,
        'queries_answered': len(log.queries),
        'overall_cost': overall_cost,
        'mean_state_mse': float(np.mean([s['state_sq_error'] for s in log.slots])),
        'latency': latency,
    })
    return log


def run_episodes(scenario: Scenario, policy: Policy, n_jobs: int = 1,
                 episodes: Optional[int] = None) -> List[EpisodeLog]:
    """
    Independent evaluation episodes with seeds derived from the scenario seed.
    Output order is by episode index whatever n_jobs is.
    """
    count = scenario.episodes if episodes is None else int(episodes)
    seeds = [derive_seed(scenario.seed, e) for e in range(count)]
    logs = Parallel(n_jobs=n_jobs)(
        delayed(run_episode)(scenario, policy, seeds[e], episode=e) for e in range(count)
    )
    return sorted(logs, key=lambda log: log.episode)
