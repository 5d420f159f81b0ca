"""
Two binary Markov chains, one sensor each, polled one at a time.

The expanded state is the pair of ages since each chain was last observed and
the last observed values. Queries (max or count of ones) arrive every slot, so
the scheduling problem is a small finite MDP solved exactly.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from exceptions import ConfigurationError, NumericError

TOY_QUERIES = ('max', 'cnt')
TIE_TOLERANCE = 1e-12
MAX_ROUNDS = 10 ** 6


@dataclass(frozen=True)
class ToyModel:
    flip_probs: Tuple[float, float] = (0.1, 0.2)
    delta_max: int = 20
    gamma: float = 0.9

    def __post_init__(self):
        probs = tuple(float(p) for p in self.flip_probs)
        if len(probs) != 2 or not all(0.0 < p < 1.0 for p in probs):
            raise ConfigurationError(f"Flip probabilities must be two values in (0, 1), got {self.flip_probs}")
        if int(self.delta_max) < 2:
            raise ConfigurationError(f"Age cap must be at least 2, got {self.delta_max}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, 'flip_probs', probs)
        object.__setattr__(self, 'delta_max', int(self.delta_max))


@dataclass(frozen=True)
class ToyState:
    deltas: Tuple[int, int]
    obs: Tuple[int, int]


@dataclass(frozen=True, eq=False)
class ToyMDP:
    model: ToyModel
    query: str
    states: List[ToyState]
    transitions: np.ndarray  # (S, 2, S)
    costs: np.ndarray        # (S, 2)
    index: Dict[ToyState, int] = field(repr=False)


def transition_matrix(p: float) -> np.ndarray:
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


def posterior(p: float, delta: int, o: int) -> Tuple[float, float]:
    """
    (P[value 0], P[value 1]) of a chain observed as o, delta transitions ago.
    """
    if delta < 0:
        raise ConfigurationError(f"Age must be non-negative, got {delta}")
    decay = (1.0 - 2.0 * p) ** delta
    same, other = 0.5 * (1.0 + decay), 0.5 * (1.0 - decay)
    return (same, other) if o == 0 else (other, same)


def posterior_matrix_power(p: float, delta: int, o: int) -> Tuple[float, float]:
    vec = np.linalg.matrix_power(transition_matrix(p), delta) @ np.array([1.0 - o, float(o)])
    return float(vec[0]), float(vec[1])


def mmse_responses(model: ToyModel, state: ToyState) -> Tuple[float, float, float, float]:
    """
    (z_max, z_cnt, MSE_max, MSE_cnt) of the best answers under the state's posteriors.
    """
    p1_0 = posterior(model.flip_probs[0], state.deltas[0], state.obs[0])[0]
    p2_0 = posterior(model.flip_probs[1], state.deltas[1], state.obs[1])[0]
    both_zero = p1_0 * p2_0
    z_max = 1.0 - both_zero
    z_cnt = (1.0 - p1_0) + (1.0 - p2_0)
    mse_max = both_zero * (1.0 - both_zero)
    mse_cnt = p1_0 + p2_0 - p1_0 ** 2 - p2_0 ** 2
    return z_max, z_cnt, mse_max, mse_cnt


def query_mse(model: ToyModel, state: ToyState, query: str) -> float:
    _, _, mse_max, mse_cnt = mmse_responses(model, state)
    return mse_max if query == 'max' else mse_cnt


def enumerate_states(model: ToyModel) -> List[ToyState]:
    ages = range(1, model.delta_max + 1)
    return [ToyState((d1, d2), (o1, o2))
            for d1, d2, o1, o2 in itertools.product(ages, ages, (0, 1), (0, 1))]


def poll_outcomes(model: ToyModel, state: ToyState, action: int) -> List[Tuple[float, ToyState]]:
    """
    Successor states of polling chain action (0 or 1) with their probabilities.

    The poll reads the chain at its stored age; the polled age resets to 1 for
    the next slot and the other grows up to the cap.
    """
    other = 1 - action
    probs = posterior(model.flip_probs[action], state.deltas[action], state.obs[action])
    outcomes = []
    for value, prob in enumerate(probs):
        deltas = [0, 0]
        obs = [0, 0]
        deltas[action], obs[action] = 1, value
        deltas[other] = min(state.deltas[other] + 1, model.delta_max)
        obs[other] = state.obs[other]
        outcomes.append((prob, ToyState(tuple(deltas), tuple(obs))))
    return outcomes


def build_mdp(model: ToyModel, query: str) -> ToyMDP:
    if query not in TOY_QUERIES:
        raise ConfigurationError(f"Toy query must be one of {TOY_QUERIES}, got {query!r}")
    states = enumerate_states(model)
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    transitions = np.zeros((S, 2, S))
    costs = np.zeros((S, 2))
    for i, state in enumerate(states):
        for action in (0, 1):
            for prob, succ in poll_outcomes(model, state, action):
                transitions[i, action, index[succ]] += prob
                costs[i, action] += prob * query_mse(model, succ, query)
    logging.info(f"Toy MDP built: query={query}, states={S}")
    return ToyMDP(model=model, query=query, states=states, transitions=transitions, costs=costs, index=index)


def _greedy(q: np.ndarray) -> np.ndarray:
    # Ties go to the first chain.
    return np.where(q[:, 0] >= q[:, 1] - TIE_TOLERANCE, 0, 1)


def _action_values(mdp: ToyMDP, values: np.ndarray, gamma: float) -> np.ndarray:
    return -mdp.costs + gamma * mdp.transitions @ values


def evaluate_policy(mdp: ToyMDP, policy: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted reward (negative cost) of a deterministic policy, by linear solve."""
    rows = np.arange(len(mdp.states))
    P = mdp.transitions[rows, policy]
    r = -mdp.costs[rows, policy]
    return np.linalg.solve(np.eye(len(rows)) - gamma * P, r)


def policy_iteration(mdp: ToyMDP, gamma: Optional[float] = None,
                     max_rounds: int = MAX_ROUNDS) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """
    Alternate exact evaluation and greedy improvement until the policy is stable.

    Returns (policy, values, history of the summed value per round).
    """
    gamma = mdp.model.gamma if gamma is None else float(gamma)
    if not 0.0 <= gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1), got {gamma}")
    policy = np.zeros(len(mdp.states), dtype=int)
    history = []
    for round_ in range(max_rounds):
        values = evaluate_policy(mdp, policy, gamma)
        history.append(float(np.sum(values)))
        improved = _greedy(_action_values(mdp, values, gamma))
        if np.array_equal(improved, policy):
            logging.info(f"Policy iteration converged after {round_ + 1} rounds")
            return policy, values, history
        policy = improved
    raise NumericError(f"Policy iteration did not converge in {max_rounds} rounds")


def value_iteration(mdp: ToyMDP, gamma: Optional[float] = None, tol: float = 1e-12,
                    max_iter: int = MAX_ROUNDS) -> Tuple[np.ndarray, np.ndarray]:
    gamma = mdp.model.gamma if gamma is None else float(gamma)
    values = np.zeros(len(mdp.states))
    for _ in range(max_iter):
        updated = _action_values(mdp, values, gamma).max(axis=1)
        if np.max(np.abs(updated - values)) < tol:
            values = updated
            break
        values = updated
    else:
        raise NumericError(f"Value iteration did not converge in {max_iter} iterations")
    return _greedy(_action_values(mdp, values, gamma)), values


def policy_frame(mdp: ToyMDP, policy: np.ndarray, values: np.ndarray) -> pd.DataFrame:
    """Policy table with one-based actions, for heatmaps."""
    return pd.DataFrame([{
        'delta1': s.deltas[0],
        'delta2': s.deltas[1],
        'o1': s.obs[0],
        'o2': s.obs[1],
        'action': int(policy[i]) + 1,
        'value': float(values[i]),
    } for i, s in enumerate(mdp.states)])


def simulate(mdp: ToyMDP, policy: Optional[np.ndarray], steps: int,
             rng: np.random.Generator) -> Dict[str, float]:
    """
    Run the two chains under a policy (None means round-robin) and compare the
    realised squared error of the query answers with the expected MSE.

    The poll reads the chains as they are in the current slot; each answer is
    scored one transition later, which is where the successor state's
    posteriors apply.
    """
    model = mdp.model
    flip_probs = np.array(model.flip_probs)
    truth = rng.integers(0, 2, size=2)
    state = ToyState((1, 1), (int(truth[0]), int(truth[1])))
    truth = np.where(rng.random(2) < flip_probs, 1 - truth, truth)
    errors, expected = [], []
    pending = None
    for t in range(int(steps)):
        if pending is not None:
            answer, mse = pending
            value = truth.max() if mdp.query == 'max' else truth.sum()
            errors.append((answer - value) ** 2)
            expected.append(mse)
        action = t % 2 if policy is None else int(policy[mdp.index[state]])
        other = 1 - action
        deltas, obs = [0, 0], [0, 0]
        deltas[action], obs[action] = 1, int(truth[action])
        deltas[other] = min(state.deltas[other] + 1, model.delta_max)
        obs[other] = state.obs[other]
        state = ToyState(tuple(deltas), tuple(obs))
        truth = np.where(rng.random(2) < flip_probs, 1 - truth, truth)
        z_max, z_cnt, mse_max, mse_cnt = mmse_responses(model, state)
        pending = (z_max, mse_max) if mdp.query == 'max' else (z_cnt, mse_cnt)
    result = {
        'realized_mse': float(np.mean(errors)) if errors else 0.0,
        'expected_mse': float(np.mean(expected)) if expected else 0.0,
        'standard_error': float(np.std(errors) / np.sqrt(len(errors))) if errors else 0.0,
        'steps': int(steps),
    }
    logging.info(f"Toy simulation ({'round-robin' if policy is None else 'policy'}): {result}")
    return result
