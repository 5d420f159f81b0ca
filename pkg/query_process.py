import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import FrozenSet, Iterable, Optional, Tuple

import numpy as np

from exceptions import ConfigurationError
from queries import Query

ROW_SUM_TOLERANCE = 1e-12
OBSERVABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ClientView:
    """
    What a scheduler may see of a client: its query, weight and query age.
    """
    kind: Query
    alpha: float
    tau: int
    tau_scale: float = 1.0


@dataclass(frozen=True, eq=False)
class ClientProcess:
    """
    Client whose queries are driven by a finite Markov chain.

    A query is issued in every slot in which the chain sits in one of
    query_states; tau counts the slots since the last query.
    """
    kind: Query
    alpha: float
    transition: np.ndarray
    query_states: FrozenSet[int]
    state: int
    tau: int = 0
    tau_scale: float = 1.0
    client_id: int = 0
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        transition = np.atleast_2d(np.array(self.transition, dtype=float))
        size = transition.shape[0]
        if transition.shape != (size, size) or size < 1:
            raise ConfigurationError(f"Transition matrix must be square, got shape {transition.shape}")
        if np.any(transition < 0.0) or not np.all(np.isfinite(transition)):
            raise ConfigurationError("Transition probabilities must be finite and non-negative")
        row_sums = transition.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE):
            raise ConfigurationError(f"Transition rows must sum to 1, got {row_sums.tolist()}")
        query_states = frozenset(int(q) for q in self.query_states)
        if not query_states or not all(0 <= q < size for q in query_states):
            raise ConfigurationError(f"Query states {sorted(query_states)} must be a non-empty subset of 0..{size - 1}")
        if not 0 <= int(self.state) < size:
            raise ConfigurationError(f"Chain state {self.state} out of range for {size} states")
        if self.alpha < 0.0:
            raise ConfigurationError(f"Client weight alpha must be non-negative, got {self.alpha}")
        if self.tau < 0 or self.tau_scale <= 0.0:
            raise ConfigurationError(f"Invalid query age {self.tau} or scale {self.tau_scale}")
        transition.setflags(write=False)
        object.__setattr__(self, 'transition', transition)
        object.__setattr__(self, 'query_states', query_states)
        object.__setattr__(self, 'state', int(self.state))
        object.__setattr__(self, '_cumulative', np.cumsum(transition, axis=1))

    @property
    def size(self) -> int:
        return self.transition.shape[0]

    @property
    def query_probabilities(self) -> np.ndarray:
        """P(next state is a query state) for every current state."""
        return self.transition[:, sorted(self.query_states)].sum(axis=1)

    def view(self) -> ClientView:
        return ClientView(kind=self.kind, alpha=self.alpha, tau=self.tau, tau_scale=self.tau_scale)


def advance(client: ClientProcess, rng: np.random.Generator) -> Tuple[ClientProcess, bool]:
    """
    Move the chain one slot. Returns the new client and whether it issued a query.
    """
    cumulative = client._cumulative[client.state]
    nxt = int(np.searchsorted(cumulative, rng.random(), side='right'))
    nxt = min(nxt, client.size - 1)
    active = nxt in client.query_states
    tau = 0 if active else client.tau + 1
    return replace(client, state=nxt, tau=tau), active


def make_periodic(period: int, phase: int, kind: Query, alpha: float = 1.0,
                  client_id: int = 0) -> ClientProcess:
    """
    Deterministic cycle of length period with one query state.

    The first query fires at slot phase; the query age seen in slot 0 is
    period - phase (0 when phase is 0).
    """
    period, phase = int(period), int(phase)
    if period < 1:
        raise ConfigurationError(f"Query period must be at least 1, got {period}")
    if not 0 <= phase < period:
        raise ConfigurationError(f"Query phase must lie in [0, {period}), got {phase}")
    transition = np.roll(np.eye(period), 1, axis=1)
    return ClientProcess(
        kind=kind,
        alpha=float(alpha),
        transition=transition,
        query_states=frozenset({0}),
        state=(-phase - 1) % period,
        tau=(period - phase - 1) % period,
        tau_scale=float(period),
        client_id=client_id,
    )


def make_memoryless(p: float, kind: Query, alpha: float = 1.0, client_id: int = 0) -> ClientProcess:
    """
    Two-state chain (0 = query, 1 = idle) issuing a query with probability p every slot.
    """
    p = float(p)
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"Query probability must lie in (0, 1], got {p}")
    transition = np.array([[p, 1.0 - p], [p, 1.0 - p]])
    return ClientProcess(
        kind=kind,
        alpha=float(alpha),
        transition=transition,
        query_states=frozenset({0}),
        state=1,
        tau=0,
        tau_scale=1.0 / p,
        client_id=client_id,
    )


def make_chain(transition: np.ndarray, query_states: Iterable[int], kind: Query, alpha: float = 1.0,
               initial_state: int = 0, tau_scale: Optional[float] = None, client_id: int = 0) -> ClientProcess:
    client = ClientProcess(
        kind=kind,
        alpha=float(alpha),
        transition=transition,
        query_states=frozenset(query_states),
        state=initial_state,
        tau=0,
        tau_scale=1.0 if tau_scale is None else float(tau_scale),
        client_id=client_id,
    )
    if not is_fully_observable(client):
        logging.warning(f"Client {client_id}: query chain is not observable from the query age alone")
    return client


def is_fully_observable(client: ClientProcess) -> bool:
    """
    True if the query age alone pins down the probability of a query in the next slot.

    Walks the sets of chain states compatible with each query-age history: the
    query states right after a query, and the initial state before the first
    one. Within every such set the next-slot query probability must agree.
    """
    probs = client.query_probabilities
    query_states = client.query_states
    starts = [frozenset(query_states), frozenset({client.state})]
    seen = set(starts)
    pending = deque(starts)
    while pending:
        support = pending.popleft()
        values = probs[sorted(support)]
        if np.max(values) - np.min(values) > OBSERVABILITY_TOLERANCE:
            return False
        successors = np.flatnonzero(client.transition[sorted(support)].sum(axis=0) > 0.0)
        nxt = frozenset(int(q) for q in successors if int(q) not in query_states)
        if nxt and nxt not in seen:
            seen.add(nxt)
            pending.append(nxt)
    return True
