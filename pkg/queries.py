import logging
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from dynamics import SystemModel
from exceptions import BeliefError, InvalidArgumentError, InvalidQueryError
from kalman import DEGENERATE_VARIANCE, BeliefState, posterior_covariance
from utils import PSD_TOLERANCE, is_psd, psd_sqrt

DEFAULT_ESTIMATOR_SAMPLES = 1000
DEFAULT_VOI_OUTER_SAMPLES = 100
DEFAULT_VOI_INNER_SAMPLES = 200


@dataclass(frozen=True)
class QueryEstimate:
    value: Union[float, np.ndarray]
    expected_mse: float
    samples_used: int = 0


class Query:
    """
    Base class for functions of the process state that clients ask for.

    Subclasses implement evaluate (vectorised over the last axis) and, when a
    closed form exists, the conditional mean and MSE under N(x_hat, psi).
    """
    name = 'query'
    closed_form = False

    @property
    def label(self) -> str:
        return self.name

    def validate(self, dim: int):
        """Raise InvalidQueryError if the query is undefined for state dimension dim."""

    def evaluate(self, x: np.ndarray):
        raise NotImplementedError

    def closed_estimate(self, x_hat: np.ndarray, psi: np.ndarray) -> QueryEstimate:
        raise NotImplementedError

    def monte_carlo_estimate(self, x_hat: np.ndarray, psi: np.ndarray, sample_count: int,
                             rng: np.random.Generator) -> QueryEstimate:
        draws = x_hat + rng.standard_normal((sample_count, len(x_hat))) @ psd_sqrt(psi).T
        z = self.evaluate(draws)
        z_hat = float(np.mean(z))
        mse = float(np.mean((z - z_hat) ** 2))
        return QueryEstimate(value=z_hat, expected_mse=mse, samples_used=sample_count)

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class State(Query):
    name = 'state'
    closed_form = True

    def evaluate(self, x):
        return np.array(x, dtype=float)

    def closed_estimate(self, x_hat, psi):
        return QueryEstimate(value=np.array(x_hat, dtype=float), expected_mse=float(np.trace(psi)))


@dataclass(frozen=True)
class Mean(Query):
    name = 'mean'
    closed_form = True

    def evaluate(self, x):
        return np.mean(x, axis=-1)

    def closed_estimate(self, x_hat, psi):
        M = len(x_hat)
        return QueryEstimate(value=float(np.mean(x_hat)), expected_mse=float(np.sum(psi)) / M ** 2)


@dataclass(frozen=True)
class Variance(Query):
    """
    Unbiased sample variance of the state components.

    The conditional mean follows from the Gaussian moment identity; the MSE
    has no cheap closed form and is sampled.
    """
    name = 'variance'

    def validate(self, dim):
        if dim < 2:
            raise InvalidQueryError(f"Variance query needs at least 2 state components, got {dim}")

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        self.validate(x.shape[-1])
        return np.var(x, axis=-1, ddof=1)

    def conditional_mean(self, x_hat, psi) -> float:
        M = len(x_hat)
        second = float(np.trace(psi) + x_hat @ x_hat)
        mean_term = float(np.sum(psi)) / M ** 2 + float(np.mean(x_hat)) ** 2
        return (second - M * mean_term) / (M - 1)

    def monte_carlo_estimate(self, x_hat, psi, sample_count, rng):
        z_hat = self.conditional_mean(x_hat, psi)
        draws = x_hat + rng.standard_normal((sample_count, len(x_hat))) @ psd_sqrt(psi).T
        mse = float(np.mean((self.evaluate(draws) - z_hat) ** 2))
        return QueryEstimate(value=z_hat, expected_mse=mse, samples_used=sample_count)


@dataclass(frozen=True)
class Max(Query):
    name = 'max'

    def evaluate(self, x):
        return np.max(x, axis=-1)


@dataclass(frozen=True)
class CountRange(Query):
    """
    Number of state components inside the closed interval [a, b].
    """
    a: float = -5.0
    b: float = 0.0
    name = 'cnt'

    def __post_init__(self):
        if not self.a <= self.b:
            raise InvalidQueryError(f"Count range needs a <= b, got [{self.a}, {self.b}]")

    @property
    def label(self) -> str:
        return f"cnt[{self.a:g},{self.b:g}]"

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum((x >= self.a) & (x <= self.b), axis=-1).astype(float)


QueryKind = Query

_RANGE_PATTERN = re.compile(r'^(cnt|count)\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]$')
_SIMPLE_KINDS = {
    'state': State,
    'mean': Mean,
    'avg': Mean,
    'variance': Variance,
    'var': Variance,
    'max': Max,
    'cnt': CountRange,
    'count': CountRange,
}


def parse_query(text: str) -> Query:
    """
    Build a query from its label: 'state', 'mean', 'variance', 'max', 'cnt' or 'cnt[a,b]'.
    """
    cleaned = str(text).strip().lower()
    match = _RANGE_PATTERN.match(cleaned)
    if match:
        try:
            a, b = float(match.group(2)), float(match.group(3))
        except ValueError:
            raise InvalidQueryError(f"Invalid count range bounds in {text!r}")
        return CountRange(a=a, b=b)
    if cleaned in _SIMPLE_KINDS:
        return _SIMPLE_KINDS[cleaned]()
    raise InvalidQueryError(f"Unknown query {text!r}; expected one of state, mean, variance, max, cnt[a,b]")


def evaluate(kind: Query, x: np.ndarray):
    """
    Exact query value on a ground-truth state vector.
    """
    value = kind.evaluate(np.asarray(x, dtype=float))
    return value if isinstance(kind, State) else float(value)


def _check_belief(belief: BeliefState):
    psi = np.asarray(belief.psi, dtype=float)
    if not np.all(np.isfinite(belief.x_hat)) or not is_psd(psi, PSD_TOLERANCE):
        raise BeliefError("Belief covariance must be finite, symmetric and positive semidefinite")
    return np.asarray(belief.x_hat, dtype=float), psi


def estimate(kind: Query, belief: BeliefState, sample_count: int = DEFAULT_ESTIMATOR_SAMPLES,
             rng: Optional[np.random.Generator] = None) -> QueryEstimate:
    """
    MMSE answer to a query under the belief N(x_hat, psi) and its expected squared error.
    """
    x_hat, psi = _check_belief(belief)
    kind.validate(len(x_hat))
    if not np.any(psi):
        return QueryEstimate(value=evaluate(kind, x_hat), expected_mse=0.0, samples_used=0)
    if kind.closed_form:
        return kind.closed_estimate(x_hat, psi)
    if sample_count < 1:
        raise InvalidArgumentError(f"{kind.label} estimate needs at least one sample, got {sample_count}")
    rng = rng if rng is not None else np.random.default_rng()
    return kind.monte_carlo_estimate(x_hat, psi, int(sample_count), rng)


def _check_samples(outer_samples: int, inner_samples: int):
    if outer_samples < 1 or inner_samples < 1:
        raise InvalidArgumentError(
            f"VoI needs positive sample counts, got outer={outer_samples}, inner={inner_samples}"
        )


def _posterior_mse(kind: Query, belief_prior: BeliefState, model: SystemModel, n: int,
                   innovation_normals: Optional[np.ndarray], inner_normals: Optional[np.ndarray]) -> float:
    psi_post = posterior_covariance(model, belief_prior, n)
    if isinstance(kind, State):
        return float(np.trace(psi_post))
    if isinstance(kind, Mean):
        return float(np.sum(psi_post)) / model.state_dim ** 2
    h = model.H[n]
    s = float(h @ belief_prior.psi @ h + model.sigma_w[n, n])
    k = belief_prior.psi @ h / s
    means = belief_prior.x_hat + np.sqrt(s) * innovation_normals[:, None] * k
    spread = inner_normals @ psd_sqrt(psi_post).T
    z = kind.evaluate(means[:, None, :] + spread[None, :, :])
    if isinstance(kind, Variance):
        centres = np.array([kind.conditional_mean(mu, psi_post) for mu in means])
        per_outer = np.mean((z - centres[:, None]) ** 2, axis=1)
    else:
        per_outer = np.var(z, axis=1, ddof=1) if z.shape[1] > 1 else np.zeros(len(z))
    return float(np.mean(per_outer))


def expected_posterior_mse(kind: Query, belief_prior: BeliefState, model: SystemModel, sensor: int,
                           outer_samples: int, inner_samples: int, rng: np.random.Generator) -> float:
    """
    Average MSE of the query answer after a successful poll of sensor.

    The posterior covariance does not depend on the reading, so every
    hypothetical observation shares one covariance root and one set of inner
    normals; only the posterior mean moves with the innovation.
    """
    n = model.check_sensor(sensor)
    if kind.closed_form:
        return _posterior_mse(kind, belief_prior, model, n, None, None)
    _check_samples(outer_samples, inner_samples)
    innovation_normals = rng.standard_normal(outer_samples)
    inner_normals = rng.standard_normal((inner_samples, model.state_dim))
    return _posterior_mse(kind, belief_prior, model, n, innovation_normals, inner_normals)


def _success_rate(model: SystemModel, psi: np.ndarray, n: int) -> float:
    """1 - eps_n, or 0 when a poll of n cannot change the belief."""
    h = model.H[n]
    if float(h @ psi @ h + model.sigma_w[n, n]) <= DEGENERATE_VARIANCE:
        return 0.0
    return 1.0 - float(model.epsilon[n])


def sensor_vois(kind: Query, belief_prior: BeliefState, model: SystemModel,
                sample_count: int = DEFAULT_VOI_OUTER_SAMPLES, rng: Optional[np.random.Generator] = None,
                inner_samples: int = DEFAULT_VOI_INNER_SAMPLES) -> np.ndarray:
    """
    Value of information of every sensor in one pass.

    The prior MSE is estimated once and all sensors are scored with the same
    standard normal draws, so differences between sensors are not Monte Carlo
    noise.
    """
    x_hat, psi = _check_belief(belief_prior)
    kind.validate(len(x_hat))
    thetas = np.zeros(model.sensor_count)
    if not np.any(psi):
        return thetas
    rng = rng if rng is not None else np.random.default_rng()
    prior_mse = estimate(kind, belief_prior, inner_samples, rng).expected_mse
    innovation_normals = inner_normals = None
    if not kind.closed_form:
        _check_samples(sample_count, inner_samples)
        innovation_normals = rng.standard_normal(sample_count)
        inner_normals = rng.standard_normal((inner_samples, model.state_dim))
    for n in range(model.sensor_count):
        success = _success_rate(model, psi, n)
        if success <= 0.0:
            continue
        posterior_mse = _posterior_mse(kind, belief_prior, model, n, innovation_normals, inner_normals)
        thetas[n] = success * (prior_mse - posterior_mse)
    logging.debug(f"VoI {kind.label}: prior={prior_mse:.4f} thetas={np.round(thetas, 4).tolist()}")
    return thetas


def voi(kind: Query, belief_prior: BeliefState, model: SystemModel, sensor: int,
        sample_count: int = DEFAULT_VOI_OUTER_SAMPLES, rng: Optional[np.random.Generator] = None,
        inner_samples: int = DEFAULT_VOI_INNER_SAMPLES) -> float:
    """
    Expected reduction of the query MSE from polling sensor, discounted by its erasure rate:

        theta = (1 - eps_n) * (MSE_prior - E_y[MSE_posterior])
    """
    n = model.check_sensor(sensor)
    x_hat, psi = _check_belief(belief_prior)
    kind.validate(len(x_hat))
    success = _success_rate(model, psi, n)
    if success <= 0.0 or not np.any(psi):
        return 0.0
    rng = rng if rng is not None else np.random.default_rng()
    prior_mse = estimate(kind, belief_prior, inner_samples, rng).expected_mse
    posterior_mse = expected_posterior_mse(kind, belief_prior, model, n, sample_count, inner_samples, rng)
    theta = success * (prior_mse - posterior_mse)
    logging.debug(f"VoI {kind.label} sensor {n}: prior={prior_mse:.4f} posterior={posterior_mse:.4f} theta={theta:.4f}")
    return theta
