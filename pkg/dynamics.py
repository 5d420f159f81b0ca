import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from exceptions import ConfigurationError
from utils import PSD_TOLERANCE, is_psd, lyapunov_fixed_point, min_eigenvalue, psd_sqrt, sample_gaussian


@dataclass(frozen=True, eq=False)
class SystemModel:
    """
    Linear-Gaussian process observed by N sensors over erasure channels.

    x(t) = A x(t-1) + v(t),  v ~ N(0, sigma_v)
    y(t) = H x(t) + w(t),    w ~ N(0, sigma_w)
    Sensor n's packet is lost with probability epsilon[n].

    Sensor indices are zero-based throughout the code base.
    """
    A: np.ndarray
    H: np.ndarray
    sigma_v: np.ndarray
    sigma_w: np.ndarray
    epsilon: np.ndarray
    _sqrt_v: np.ndarray = field(init=False, repr=False, compare=False)
    _sqrt_w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        H = np.atleast_2d(np.array(self.H, dtype=float))
        sigma_v = np.atleast_2d(np.array(self.sigma_v, dtype=float))
        sigma_w = np.atleast_2d(np.array(self.sigma_w, dtype=float))
        epsilon = np.atleast_1d(np.array(self.epsilon, dtype=float))

        M = A.shape[0]
        if A.shape != (M, M) or M < 1:
            raise ConfigurationError(f"A must be square, got shape {A.shape}")
        N = H.shape[0]
        if H.shape != (N, M) or N < 1:
            raise ConfigurationError(f"H must be N x {M}, got shape {H.shape}")
        if sigma_v.shape != (M, M):
            raise ConfigurationError(f"sigma_v must be {M} x {M}, got shape {sigma_v.shape}")
        if sigma_w.shape != (N, N):
            raise ConfigurationError(f"sigma_w must be {N} x {N}, got shape {sigma_w.shape}")
        if epsilon.shape != (N,):
            raise ConfigurationError(f"epsilon must have {N} entries, got {epsilon.shape[0]}")
        for name, cov in (('sigma_v', sigma_v), ('sigma_w', sigma_w)):
            if not is_psd(cov, PSD_TOLERANCE):
                raise ConfigurationError(
                    f"{name} must be symmetric positive semidefinite (min eigenvalue {min_eigenvalue(cov):.3g})"
                )
        if np.any(epsilon < 0.0) or np.any(epsilon > 1.0) or not np.all(np.isfinite(epsilon)):
            raise ConfigurationError(f"Erasure probabilities must lie in [0, 1], got {epsilon.tolist()}")

        for name, value in (('A', A), ('H', H), ('sigma_v', sigma_v), ('sigma_w', sigma_w), ('epsilon', epsilon)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, '_sqrt_v', psd_sqrt(sigma_v))
        object.__setattr__(self, '_sqrt_w', psd_sqrt(sigma_w))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def sensor_count(self) -> int:
        return self.H.shape[0]

    def check_sensor(self, sensor: int) -> int:
        if not 0 <= int(sensor) < self.sensor_count:
            raise ConfigurationError(f"Sensor index {sensor} out of range [0, {self.sensor_count})")
        return int(sensor)

    def stationary_covariance(self, tol: float = 1e-10) -> np.ndarray:
        """
        Fixed point of S = A S A^T + sigma_v (requires a stable A).
        """
        return lyapunov_fixed_point(self.A, self.sigma_v, tol=tol)


@dataclass(frozen=True, eq=False)
class TrueState:
    x: np.ndarray
    t: int = 0


def step(model: SystemModel, state: TrueState, rng: np.random.Generator) -> TrueState:
    """
    Advance the hidden process one slot: x' = A x + v, v ~ N(0, sigma_v).
    """
    x = np.asarray(state.x, dtype=float)
    if x.shape != (model.state_dim,):
        raise ConfigurationError(f"State has shape {x.shape}, model expects ({model.state_dim},)")
    v = sample_gaussian(np.zeros(model.state_dim), model._sqrt_v, rng)
    return TrueState(x=model.A @ x + v, t=state.t + 1)


def observe(model: SystemModel, state: TrueState, sensor: int, rng: np.random.Generator) -> float:
    """
    Reading of one sensor: (row n of H) x + w_n.

    The full noise vector w ~ N(0, sigma_w) is drawn and its n-th component is
    kept, so the returned noise has variance sigma_w[n, n].
    """
    n = model.check_sensor(sensor)
    x = np.asarray(state.x, dtype=float)
    if x.shape != (model.state_dim,):
        raise ConfigurationError(f"State has shape {x.shape}, model expects ({model.state_dim},)")
    w = sample_gaussian(np.zeros(model.sensor_count), model._sqrt_w, rng)
    return float(model.H[n] @ x + w[n])


def attempt_transmission(model: SystemModel, sensor: int, rng: np.random.Generator) -> bool:
    """
    Bernoulli packet-erasure channel: True (delivered) with probability 1 - epsilon[n].
    """
    n = model.check_sensor(sensor)
    return bool(rng.random() >= model.epsilon[n])


def initial_state(model: SystemModel, rng: np.random.Generator,
                  covariance: Optional[np.ndarray] = None) -> TrueState:
    """
    Draw x(0) from N(0, covariance), by default the stationary covariance, so the
    truth matches the filter's stationary prior.
    """
    cov = model.stationary_covariance() if covariance is None else np.asarray(covariance, dtype=float)
    x0 = sample_gaussian(np.zeros(model.state_dim), psd_sqrt(cov), rng)
    logging.debug(f"Initial state drawn with trace(cov)={np.trace(cov):.3f}")
    return TrueState(x=x0, t=0)
