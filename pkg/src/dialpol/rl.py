"""Tabular Q-learning with (epsilon-)Boltzmann exploration and expert imitation.

Two ways of injecting a handcrafted expert are supported:

* ``demonstrations``: for a fraction ``1 - beta`` of episodes the expert
  plays a whole dialogue and the learner updates on it as if it had played;
* ``feedbacks``: for a fraction ``1 - beta`` of individual turns the expert's
  action replaces the learner's before the environment steps.

Each training run draws from independent random streams (environment,
exploration, imitation coin, demonstrations), so with ``beta = 1`` a run is
bit-identical to one without imitation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .sim_env import evaluate

MODES = ("none", "demonstrations", "feedbacks")


def boltzmann_probs(q_row, tau):
    """Softmax of ``q_row / tau`` (max-subtracted)."""
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    z = np.asarray(q_row, dtype=np.float64) / tau
    z = np.exp(z - z.max())
    return z / z.sum()


def eps_boltzmann_sample(probs, epsilon, rng):
    """Draw from ``(1 - epsilon) * probs + epsilon * uniform``."""
    n = len(probs)
    if rng.random() < epsilon:
        return int(rng.integers(n))
    a = int(np.searchsorted(np.cumsum(probs), rng.random() * np.sum(probs), side="right"))
    return min(a, n - 1)


class QTable:
    def __init__(self, n_states, n_actions, learning_rate=0.2, gamma=0.95):
        if not 0 < learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if not 0 <= gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        self.q = np.zeros((n_states, n_actions))
        self.learning_rate = learning_rate
        self.gamma = gamma

    def update(self, s, a, r, s2, done):
        target = r if done else r + self.gamma * self.q[s2].max()
        self.q[s, a] += self.learning_rate * (target - self.q[s, a])

    def greedy(self):
        # argmax already returns the lowest index on ties
        return self.q.argmax(axis=1)

    def to_dict(self):
        return {"learning_rate": self.learning_rate, "gamma": self.gamma,
                "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, d):
        q = np.asarray(d["q"], dtype=np.float64)
        t = cls(q.shape[0], q.shape[1], d["learning_rate"], d["gamma"])
        t.q = q
        return t


def q_update(table: QTable, s, a, r, s2, done):
    table.update(s, a, r, s2, done)


@dataclass
class SamplerConfig:
    tau: float = 1.0
    epsilon_start: float = 0.3
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.01

    def validate(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        for name in ("epsilon_start", "epsilon_decay", "epsilon_floor"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        return self

    def epsilon(self, episode):
        return max(self.epsilon_floor, self.epsilon_start * self.epsilon_decay ** episode)


@dataclass
class ImitationConfig:
    mode: str = "none"
    beta: float = 1.0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        return self


def _streams(seed):
    env, agent, coin, demo = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(env), np.random.default_rng(agent),
            np.random.default_rng(coin), np.random.default_rng(demo))


def train(env, expert, imitation: ImitationConfig, sampler: SamplerConfig, episodes, seed,
          learning_rate=0.2, gamma=0.95, eval_every=10, eval_n=20, eval_seed=None):
    """Train a Q-table; returns ``(table, curve)``.

    ``curve`` has one row per checkpoint (every ``eval_every`` episodes, and
    after the last one) with the greedy policy's success rate, average turns
    and average return over ``eval_n`` dialogues.
    """
    imitation.validate()
    sampler.validate()
    if episodes < 0 or eval_every < 1 or eval_n < 1:
        raise ConfigError("episodes >= 0, eval_every >= 1 and eval_n >= 1 required")
    env_rng, agent_rng, coin_rng, demo_rng = _streams(seed)
    eval_seed = seed if eval_seed is None else eval_seed
    table = QTable(env.n_states, env.n_actions, learning_rate, gamma)
    p_expert = 1.0 - imitation.beta
    curve = []

    for ep in range(episodes):
        eps = sampler.epsilon(ep)
        if imitation.mode == "demonstrations" and coin_rng.random() < p_expert:
            for s, a, r, s2, done in expert.rollout(env, demo_rng):
                table.update(s, a, r, s2, done)
        else:
            s = env.reset(env_rng)
            done = False
            while not done:
                a = eps_boltzmann_sample(boltzmann_probs(table.q[s], sampler.tau), eps, agent_rng)
                if imitation.mode == "feedbacks" and coin_rng.random() < p_expert:
                    a = expert.act(s)
                s2, r, done = env.step(a, env_rng)
                table.update(s, a, r, s2, done)
                s = s2
        if (ep + 1) % eval_every == 0 or ep + 1 == episodes:
            stats = evaluate(env, table.greedy(), eval_n, eval_seed)
            curve.append({"episode": ep + 1, **stats})
    return table, curve


def episodes_to_reach(curve, success=0.9):
    """First checkpoint episode whose greedy success rate reaches ``success`` (None if never)."""
    for row in curve:
        if row["success_rate"] >= success:
            return row["episode"]
    return None
