import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dqn import ObservationScaler, QNetwork, q_values, softmax_select
from dynamics import SystemModel
from exceptions import ConfigurationError
from kalman import BeliefState
from queries import (DEFAULT_VOI_INNER_SAMPLES, DEFAULT_VOI_OUTER_SAMPLES, Query, parse_query, sensor_vois)
from query_process import ClientView

VOI_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class SchedulerContext:
    """
    Everything a scheduler sees before choosing which sensor to poll in slot t.
    """
    belief_prior: BeliefState
    aoi: np.ndarray
    clients: Sequence[ClientView]
    t: int = 0


class Policy:
    """
    Base class for polling policies.

    names lists the registry names a subclass answers to; an empty tuple
    keeps a class out of the registry.
    """
    names: tuple = ()

    def decide(self, context: SchedulerContext, rng: np.random.Generator) -> int:
        raise NotImplementedError

    @classmethod
    def build(cls, name: str, model: SystemModel, **options) -> 'Policy':
        return cls()

    @property
    def label(self) -> str:
        return self.names[0] if self.names else type(self).__name__


def maf_decide(context: SchedulerContext) -> int:
    """Largest age of information first; the lowest index wins ties."""
    return int(np.argmax(np.asarray(context.aoi)))


def greedy_voi_decide(context: SchedulerContext, target: Query, model: SystemModel,
                      sample_count: int, rng: np.random.Generator,
                      inner_samples: int = DEFAULT_VOI_INNER_SAMPLES) -> int:
    """
    Sensor with the largest value of information for one query kind.

    Every sensor is scored with the same random draws so the comparison is
    not dominated by Monte Carlo noise.
    """
    thetas = sensor_vois(target, context.belief_prior, model, sample_count, rng, inner_samples=inner_samples)
    best, best_theta = 0, -np.inf
    for n, theta in enumerate(thetas):
        if theta > best_theta + VOI_TIE_TOLERANCE:
            best, best_theta = n, theta
    logging.debug(f"Greedy {target.label} at slot {context.t}: sensor {best} theta={best_theta:.4f}")
    return best


class MAFPolicy(Policy):
    names = ('maf',)

    def decide(self, context, rng):
        return maf_decide(context)


class GreedyVoIPolicy(Policy):
    """
    One-step optimal polling for a fixed query kind, ignoring when queries arrive.
    """
    names = ('greedy-state', 'greedy-mean', 'greedy-variance', 'greedy-max', 'greedy-cnt')

    def __init__(self, target: Query, model: SystemModel,
                 sample_count: int = DEFAULT_VOI_OUTER_SAMPLES,
                 inner_samples: int = DEFAULT_VOI_INNER_SAMPLES):
        target.validate(model.state_dim)
        self.target = target
        self.model = model
        self.sample_count = int(sample_count)
        self.inner_samples = int(inner_samples)

    @classmethod
    def build(cls, name, model, **options):
        target = parse_query(name.split('-', 1)[1])
        return cls(target, model,
                   sample_count=options.get('voi_outer_samples', DEFAULT_VOI_OUTER_SAMPLES),
                   inner_samples=options.get('voi_inner_samples', DEFAULT_VOI_INNER_SAMPLES))

    @property
    def label(self):
        return f"greedy-{self.target.name}"

    def decide(self, context, rng):
        return greedy_voi_decide(context, self.target, self.model, self.sample_count, rng,
                                 inner_samples=self.inner_samples)


class DQNPolicy(Policy):
    """
    Greedy action of a trained Q-network.
    """
    names = ('dqn',)

    def __init__(self, network: QNetwork, scaler: ObservationScaler):
        self.network = network
        self.scaler = scaler

    @classmethod
    def build(cls, name, model, **options):
        network = options.get('network')
        if network is None:
            raise ConfigurationError("Policy 'dqn' needs a trained network (pass --checkpoint or train first)")
        scaler = options.get('scaler') or ObservationScaler.from_model(model)
        return cls(network, scaler)

    def q_values(self, context: SchedulerContext) -> np.ndarray:
        return q_values(self.network, self.scaler.transform(context.belief_prior, context.clients))

    def decide(self, context, rng):
        return int(np.argmax(self.q_values(context)))


class SoftmaxPolicy(DQNPolicy):
    """
    Boltzmann exploration over the Q-network's values, used while training.
    """
    names = ()

    def __init__(self, network: QNetwork, scaler: ObservationScaler, temperature: float = 1.0):
        super().__init__(network, scaler)
        self.temperature = float(temperature)

    def decide(self, context, rng):
        return softmax_select(self.q_values(context), self.temperature, rng)
