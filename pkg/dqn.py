"""
Deep Q-learning scheduler written directly on numpy.

The network is a ReLU multilayer perceptron whose output layer also carries a
ReLU. Rewards are non-positive, so the network models -Q and q_values()
negates its output.
"""
import hashlib
import json
import logging
from collections import deque, namedtuple
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigurationError, InvalidArgumentError, NumericError

Experience = namedtuple('Experience', ['s', 'a', 'r', 's_next'])

# Reference forward-pass operation count for M=20, C=2 reported alongside the formula.
STATED_FORWARD_OPERATIONS = 96570
INIT_BIAS = 0.1


@dataclass
class TrainConfig:
    gamma: float = 0.9
    episodes: int = 100
    episode_len: int = 100
    batch_size: int = 128
    target_update: int = 10
    learning_rate: float = 1e-4
    dropout: float = 0.1
    memory_capacity: int = 10000
    temperature_start: float = 1.0
    temperature_decay: float = 0.96
    temperature_floor: float = 0.05
    tau_clip: float = 100.0
    seed: int = 0
    alpha_override: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ('episodes', 'episode_len', 'batch_size', 'target_update', 'memory_capacity'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.learning_rate <= 0.0 or self.temperature_floor <= 0.0 or self.temperature_start <= 0.0:
            raise ConfigurationError("learning rate and temperatures must be positive")
        if self.alpha_override is not None:
            self.alpha_override = tuple(float(a) for a in self.alpha_override)
            if any(a < 0.0 for a in self.alpha_override):
                raise ConfigurationError(f"Client weights must be non-negative, got {self.alpha_override}")

    @classmethod
    def from_dict(cls, values: Dict) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"Unknown training options: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> Dict:
        values = asdict(self)
        if values['alpha_override'] is not None:
            values['alpha_override'] = list(values['alpha_override'])
        return values

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def hidden_width(state_dim: int) -> int:
    """round(2.5 M), halves rounded to even."""
    return int(np.round(2.5 * state_dim))


def layer_sizes_for(state_dim: int, clients: int, sensors: int) -> Tuple[int, ...]:
    return (state_dim * state_dim + state_dim + clients, hidden_width(state_dim), state_dim, sensors)


class QNetwork:
    """
    Fully connected ReLU network. weights[i] has shape (sizes[i+1], sizes[i]).
    """
    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray], dropout: float = 0.1):
        if len(weights) != len(biases) or not weights:
            raise ConfigurationError("Network needs one bias vector per weight matrix")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"Layer {i}: weight {w.shape} and bias {b.shape} do not fit")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigurationError(f"Layer {i} input {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")
        self.dropout = float(dropout)
        self.optimizer: Optional['AdamOptimizer'] = None

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng: np.random.Generator, dropout: float = 0.1) -> 'QNetwork':
        """
        He-normal weights, biases of 0.1. Output weights start non-negative so
        every output unit is active on the first updates.
        """
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigurationError(f"Invalid layer sizes {sizes}")
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            if i == len(sizes) - 2:
                w = np.abs(w)
            weights.append(w)
            biases.append(np.full(fan_out, INIT_BIAS))
        return cls(weights, biases, dropout=dropout)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def parameters(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> 'QNetwork':
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases], dropout=self.dropout)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


class AdamOptimizer:
    def __init__(self, parameters: List[np.ndarray], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in parameters]
        self.v = [np.zeros_like(p) for p in parameters]
        self.t = 0

    def step(self, parameters: List[np.ndarray], gradients: List[np.ndarray]):
        """Update parameters in place."""
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(parameters, gradients, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


class ReplayMemory:
    """
    FIFO experience buffer; the oldest experience is evicted when full.
    """
    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.buffer = deque(maxlen=self.capacity)

    def push(self, experience: Experience):
        self.buffer.append(experience)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Experience]:
        if batch_size > len(self.buffer):
            raise InvalidArgumentError(f"Cannot sample {batch_size} experiences from {len(self.buffer)}")
        indices = rng.choice(len(self.buffer), size=batch_size, replace=False)
        return [self.buffer[int(i)] for i in indices]

    def __len__(self):
        return len(self.buffer)


class ObservationScaler:
    """
    Maps (psi_pri, x_pri, tau_1..tau_C) to the network input vector.

    psi is divided by trace(sigma_inf), x by the per-component stationary
    standard deviation sqrt(trace(sigma_inf) / M) and each tau by its client's
    scale (period, or mean gap) before clipping at tau_clip.
    """
    def __init__(self, stationary_trace: float, state_dim: int, tau_clip: float = 100.0):
        if stationary_trace <= 0.0:
            raise ConfigurationError(f"Stationary covariance trace must be positive, got {stationary_trace}")
        self.stationary_trace = float(stationary_trace)
        self.state_dim = int(state_dim)
        self.tau_clip = float(tau_clip)

    @classmethod
    def from_model(cls, model, tau_clip: float = 100.0) -> 'ObservationScaler':
        return cls(float(np.trace(model.stationary_covariance())), model.state_dim, tau_clip)

    def transform(self, belief, clients) -> np.ndarray:
        psi = np.asarray(belief.psi, dtype=float).ravel() / self.stationary_trace
        x = np.asarray(belief.x_hat, dtype=float) / np.sqrt(self.stationary_trace / self.state_dim)
        taus = np.array([min(c.tau / c.tau_scale, self.tau_clip) for c in clients], dtype=float)
        return np.concatenate([psi, x, taus])


def forward(net: QNetwork, s: np.ndarray, mode: str = 'eval', rng: Optional[np.random.Generator] = None,
            return_cache: bool = False):
    """
    Raw network output for one input vector or a batch (rows).

    In train mode every hidden layer output is masked with keep probability
    1 - dropout and rescaled by its inverse.
    """
    x = np.asarray(s, dtype=float)
    if x.shape[-1] != net.layer_sizes[0]:
        raise ConfigurationError(f"Input length {x.shape[-1]} != network input {net.layer_sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("Network input contains NaN or Inf")
    if mode not in ('train', 'eval'):
        raise InvalidArgumentError(f"Unknown forward mode {mode!r}")
    keep = 1.0 - net.dropout
    use_dropout = mode == 'train' and net.dropout > 0.0
    if use_dropout and rng is None:
        raise InvalidArgumentError("Train-mode forward with dropout needs a random stream")

    activation = x
    cache = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = activation @ w.T + b
        out = np.maximum(pre, 0.0)
        mask = None
        if use_dropout and i < last:
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        cache.append((activation, pre, mask))
        activation = out
    return (activation, cache) if return_cache else activation


def backward(net: QNetwork, cache, grad_output: np.ndarray) -> List[np.ndarray]:
    """
    Gradients of a scalar loss w.r.t. all parameters (weights then biases),
    given its gradient w.r.t. the batch output.
    """
    grad = np.atleast_2d(grad_output)
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        activation, pre, mask = cache[i]
        if mask is not None:
            grad = grad * mask
        grad = grad * (pre > 0.0)
        grad_w[i] = grad.T @ np.atleast_2d(activation)
        grad_b[i] = grad.sum(axis=0)
        grad = grad @ net.weights[i]
    return grad_w + grad_b


def q_values(net: QNetwork, s: np.ndarray, mode: str = 'eval', rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return -forward(net, s, mode, rng)


def td_target(experience: Experience, target_net: QNetwork, gamma: float) -> float:
    """r + gamma * max_a Q_target(s', a)."""
    return float(experience.r + gamma * np.max(q_values(target_net, experience.s_next)))


def td_loss(net: QNetwork, states: np.ndarray, actions: np.ndarray, targets: np.ndarray,
            mode: str = 'train', rng: Optional[np.random.Generator] = None) -> Tuple[float, List[np.ndarray]]:
    """
    Mean squared TD error on the taken actions, and its parameter gradients.
    """
    output, cache = forward(net, np.atleast_2d(states), mode, rng, return_cache=True)
    rows = np.arange(len(actions))
    predicted = -output[rows, actions]
    error = predicted - targets
    loss = float(np.mean(error ** 2))
    grad_output = np.zeros_like(output)
    grad_output[rows, actions] = -2.0 * error / len(actions)
    return loss, backward(net, cache, grad_output)


def softmax_probabilities(q: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0.0:
        raise InvalidArgumentError(f"Softmax temperature must be positive, got {temperature}")
    logits = np.asarray(q, dtype=float) / temperature
    exps = np.exp(logits - np.max(logits))
    return exps / np.sum(exps)


def softmax_select(q: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    probs = softmax_probabilities(q, temperature)
    return int(rng.choice(len(probs), p=probs))


def temperature(episode: int, config: Optional[TrainConfig] = None) -> float:
    config = config or TrainConfig()
    return max(config.temperature_floor, config.temperature_start * config.temperature_decay ** episode)


def train_step(update_net: QNetwork, target_net: QNetwork, memory: ReplayMemory, config: TrainConfig,
               rng: np.random.Generator, optimizer: Optional[AdamOptimizer] = None) -> Optional[float]:
    """
    One Adam step on a uniformly sampled minibatch. Returns the loss, or None
    while the memory holds fewer than batch_size experiences.
    """
    if len(memory) < config.batch_size:
        return None
    if optimizer is None:
        if update_net.optimizer is None:
            update_net.optimizer = AdamOptimizer(update_net.parameters(), learning_rate=config.learning_rate)
        optimizer = update_net.optimizer
    batch = memory.sample(config.batch_size, rng)
    states = np.stack([e.s for e in batch])
    actions = np.array([e.a for e in batch], dtype=int)
    next_q = q_values(target_net, np.stack([e.s_next for e in batch]))
    targets = np.array([e.r for e in batch], dtype=float) + config.gamma * next_q.max(axis=1)
    loss, grads = td_loss(update_net, states, actions, targets, 'train', rng)
    optimizer.step(update_net.parameters(), grads)
    if not update_net.is_finite():
        raise NumericError("Network parameters diverged (NaN or Inf after update)")
    return loss


def sync_target(update_net: QNetwork, target_net: QNetwork):
    """Copy the update network's parameters into the target network."""
    if update_net.layer_sizes != target_net.layer_sizes:
        raise ConfigurationError(f"Layer sizes differ: {update_net.layer_sizes} vs {target_net.layer_sizes}")
    for src, dst in zip(update_net.parameters(), target_net.parameters()):
        dst[...] = src


def count_operations(layer_sizes: Sequence[int], k: int = 1) -> int:
    """Basic operations of one forward pass: sum of l_{i+1} (2 l_i + k)."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise InvalidArgumentError(f"Need at least two layer sizes, got {sizes}")
    return sum(nxt * (2 * cur + k) for cur, nxt in zip(sizes[:-1], sizes[1:]))


def count_train(layer_sizes: Sequence[int], k: int = 1, batch_size: int = 128) -> int:
    return int(batch_size) * count_operations(layer_sizes, k)


def operation_report(layer_sizes: Sequence[int], k: int = 1, batch_size: int = 128) -> Dict:
    forward_ops = count_operations(layer_sizes, k)
    report = {
        'layer_sizes': 'x'.join(str(int(s)) for s in layer_sizes),
        'forward_operations': forward_ops,
        'train_operations': count_train(layer_sizes, k, batch_size),
        'stated_forward_operations': STATED_FORWARD_OPERATIONS,
        'note': (f"formula gives {forward_ops}; the published figure for M=20, C=2 is "
                 f"{STATED_FORWARD_OPERATIONS} and does not follow from the layer sizes"),
    }
    logging.info(f"Operation count: {report}")
    return report
