import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from dynamics import SystemModel
from exceptions import ConfigurationError, DegenerateUpdateError
from utils import symmetrize

DEGENERATE_VARIANCE = 1e-12


class Phase(Enum):
    PRIOR = 'prior'
    POSTERIOR = 'posterior'


@dataclass(frozen=True, eq=False)
class BeliefState:
    """
    Edge-node belief: estimate x_hat and its error covariance psi at slot t.

    phase tells whether the belief already includes the slot's observation.
    """
    x_hat: np.ndarray
    psi: np.ndarray
    phase: Phase = Phase.POSTERIOR
    t: int = 0

    @property
    def dim(self) -> int:
        return len(self.x_hat)


def initial_belief(model: SystemModel) -> BeliefState:
    """
    x_hat(0) = 0, psi(0) = stationary covariance of the process.
    """
    psi = model.stationary_covariance()
    logging.debug(f"Initial belief with trace(psi)={np.trace(psi):.4f}")
    return BeliefState(x_hat=np.zeros(model.state_dim), psi=psi, phase=Phase.POSTERIOR, t=0)


def _check_dims(model: SystemModel, belief: BeliefState):
    M = model.state_dim
    if np.shape(belief.x_hat) != (M,) or np.shape(belief.psi) != (M, M):
        raise ConfigurationError(
            f"Belief shapes {np.shape(belief.x_hat)}, {np.shape(belief.psi)} do not match state dimension {M}"
        )


def predict(model: SystemModel, belief: BeliefState) -> BeliefState:
    """
    Time update: x_pri = A x_hat, psi_pri = A psi A^T + sigma_v.
    """
    _check_dims(model, belief)
    A = model.A
    x_pri = A @ belief.x_hat
    psi_pri = symmetrize(A @ belief.psi @ A.T + model.sigma_v)
    return BeliefState(x_hat=x_pri, psi=psi_pri, phase=Phase.PRIOR, t=belief.t + 1)


def gain(model: SystemModel, belief: BeliefState, sensor: int) -> Tuple[np.ndarray, float]:
    """
    Kalman gain column and innovation variance for a poll of one sensor.

    Returns (k, s) with s = h psi h^T + sigma_w[n, n] and k = psi h^T / s.
    """
    n = model.check_sensor(sensor)
    _check_dims(model, belief)
    h = model.H[n]
    psi_h = belief.psi @ h
    s = float(h @ psi_h + model.sigma_w[n, n])
    if s <= DEGENERATE_VARIANCE:
        raise DegenerateUpdateError(f"Innovation variance {s:.3g} for sensor {n} is too small to invert")
    return psi_h / s, s


def update(model: SystemModel, belief: BeliefState, sensor: int,
           observation: Optional[float]) -> BeliefState:
    """
    Measurement update with the reading of one sensor.

    observation is None when the packet was erased; the estimate and its
    covariance are then carried over unchanged.
    """
    if observation is None:
        _check_dims(model, belief)
        return replace(belief, phase=Phase.POSTERIOR)

    n = model.check_sensor(sensor)
    k, _ = gain(model, belief, n)
    h = model.H[n]
    innovation = float(observation) - float(h @ belief.x_hat)
    x_post = belief.x_hat + k * innovation
    psi_post = symmetrize((np.eye(model.state_dim) - np.outer(k, h)) @ belief.psi)
    return BeliefState(x_hat=x_post, psi=psi_post, phase=Phase.POSTERIOR, t=belief.t)


def posterior_covariance(model: SystemModel, belief: BeliefState, sensor: int) -> np.ndarray:
    """
    Covariance a successful poll of sensor would leave; it does not depend on the reading.
    """
    k, _ = gain(model, belief, sensor)
    h = model.H[model.check_sensor(sensor)]
    return symmetrize((np.eye(model.state_dim) - np.outer(k, h)) @ belief.psi)
