import os
import logging
from dataclasses import replace
from typing import Optional

import numpy as np
import pandas as pd
from joblib import dump, load

from dqn import (Experience, ObservationScaler, QNetwork, ReplayMemory, TrainConfig, layer_sizes_for,
                 sync_target, temperature, train_step)
from exceptions import ConfigurationError
from harness import Scenario, run_episode
from policies import DQNPolicy, SchedulerContext, SoftmaxPolicy
from utils import derive_seed, make_stream

CHECKPOINT_FORMAT_VERSION = 1
TRAINING_SEED_KEY = 1


class ModelManager:
    """
    Trains the DQN scheduler on a scenario and persists it with joblib.

    The default checkpoint path comes from DQN_CHECKPOINT_PATH.
    """
    def __init__(self, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path or os.getenv('DQN_CHECKPOINT_PATH', 'dqn_checkpoint.joblib')
        self.network: Optional[QNetwork] = None
        self.config: Optional[TrainConfig] = None

    def train_model(self, scenario: Scenario, config: Optional[TrainConfig] = None) -> pd.DataFrame:
        """
        Train update and target networks with softmax exploration, one
        minibatch step per slot once the replay memory is warm.

        Returns the per-episode training curve.
        """
        config = config or TrainConfig()
        model = scenario.model
        train_scenario = scenario if config.alpha_override is None else scenario.with_alphas(config.alpha_override)
        sizes = layer_sizes_for(model.state_dim, len(scenario.clients), model.sensor_count)
        update_net = QNetwork.initialize(sizes, make_stream(config.seed, 'network'), dropout=config.dropout)
        target_net = update_net.copy()
        memory = ReplayMemory(config.memory_capacity)
        replay_rng = make_stream(config.seed, 'replay')
        scaler = ObservationScaler.from_model(model, tau_clip=config.tau_clip)
        train_scenario = replace(train_scenario, episode_len=config.episode_len)
        logging.info(f"Training DQN {sizes} on {scenario.name} for {config.episodes} episodes (seed {config.seed})")

        steps = 0
        curve = []
        for episode in range(config.episodes):
            temp = temperature(episode, config)
            explorer = SoftmaxPolicy(update_net, scaler, temp)
            losses = []
            previous = {}

            def on_step(context: SchedulerContext, action: int, r: float):
                nonlocal steps
                obs = scaler.transform(context.belief_prior, context.clients)
                if previous:
                    memory.push(Experience(previous['s'], previous['a'], previous['r'], obs))
                    loss = train_step(update_net, target_net, memory, config, replay_rng)
                    if loss is not None:
                        losses.append(loss)
                        steps += 1
                        if steps % config.target_update == 0:
                            sync_target(update_net, target_net)
                previous.update(s=obs, a=action, r=r)

            seed = derive_seed(config.seed, TRAINING_SEED_KEY, episode)
            log = run_episode(train_scenario, explorer, seed, episode=episode, step_callback=on_step)
            rewards = log.rewards
            active = np.array([s['active_queries'] > 0 for s in log.slots])
            cost = -float(np.mean(rewards[active])) if active.any() else 0.0
            row = {
                'episode': episode,
                'temperature': temp,
                'mean_loss': float(np.mean(losses)) if losses else float('nan'),
                'cost': cost,
                'memory_size': len(memory),
            }
            curve.append(row)
            logging.info("Training metrics", extra=row)

        self.network = update_net
        self.config = config
        return pd.DataFrame(curve)

    def save(self, path: Optional[str] = None) -> str:
        if self.network is None or self.config is None:
            raise ConfigurationError("No trained network to save")
        out = path or self.checkpoint_path
        payload = {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            'config_hash': self.config.config_hash(),
            'config': self.config.to_dict(),
            'seed': self.config.seed,
            'layer_sizes': list(self.network.layer_sizes),
            'weights': [w.copy() for w in self.network.weights],
            'biases': [b.copy() for b in self.network.biases],
        }
        dump(payload, out)
        logging.info(f"Saved DQN checkpoint to {out}")
        return out

    def load(self, path: Optional[str] = None) -> QNetwork:
        """
        Load and check a checkpoint written by save.
        """
        src = path or self.checkpoint_path
        if not os.path.exists(src):
            raise FileNotFoundError(f"Checkpoint not found: {src}")
        payload = load(src)
        if not isinstance(payload, dict) or payload.get('format_version') != CHECKPOINT_FORMAT_VERSION:
            raise ConfigurationError(f"Unsupported checkpoint format in {src}")
        sizes = tuple(int(s) for s in payload['layer_sizes'])
        weights, biases = payload['weights'], payload['biases']
        expected = [(nxt, cur) for cur, nxt in zip(sizes[:-1], sizes[1:])]
        if [np.shape(w) for w in weights] != expected or [np.shape(b) for b in biases] != [(n,) for n, _ in expected]:
            raise ConfigurationError(f"Checkpoint arrays do not match layer sizes {sizes}")
        self.config = TrainConfig.from_dict(payload['config'])
        if self.config.config_hash() != payload['config_hash']:
            raise ConfigurationError(f"Checkpoint config hash mismatch in {src}")
        self.network = QNetwork(weights, biases, dropout=self.config.dropout)
        logging.info(f"Loaded DQN checkpoint from {src} (layers {sizes}, seed {payload['seed']})")
        return self.network

    def policy(self, scenario: Scenario) -> DQNPolicy:
        if self.network is None:
            self.load()
        sizes = layer_sizes_for(scenario.model.state_dim, len(scenario.clients), scenario.model.sensor_count)
        if self.network.layer_sizes != sizes:
            raise ConfigurationError(f"Network layers {self.network.layer_sizes} do not fit scenario {scenario.name} {sizes}")
        tau_clip = self.config.tau_clip if self.config else TrainConfig().tau_clip
        return DQNPolicy(self.network, ObservationScaler.from_model(scenario.model, tau_clip=tau_clip))

