"""Slot-filling dialogue simulator with semantic-error noise.

The simulated user holds a goal (one value per slot) and answers the
system deterministically: a request is answered with the goal value, a
confirmation is affirmed iff the filled value is right.  With probability
``ser`` the semantic act is corrupted: an informed value is replaced by a
uniformly drawn wrong value, an affirm/negate answer is flipped.

The dialogue succeeds when the system says bye with every slot confirmed
at its goal value.  Reaching ``max_turns`` without bye is a failure.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .rewards import (TURN_PENALTY, EpisodeFeatures, EpisodeOutcome,
                      IqEstimator, reward_iq, reward_ts)

UNKNOWN, FILLED, CONFIRMED = 0, 1, 2
SER_LEVELS = (0.0, 0.15, 0.30)


@dataclass(frozen=True)
class Slot:
    name: str
    cardinality: int


@dataclass(frozen=True)
class SlotDomain:
    slots: tuple
    max_turns: int = 20

    def __post_init__(self):
        if not self.slots:
            raise ValidationError("domain needs at least one slot")
        for sl in self.slots:
            if sl.cardinality < 2:
                raise ValidationError(f"slot {sl.name!r} needs cardinality >= 2")
        if self.max_turns < 1:
            raise ValidationError("max_turns must be positive")

    @property
    def n_slots(self):
        return len(self.slots)

    @classmethod
    def uniform(cls, n_slots=3, cardinality=4, max_turns=20):
        return cls(tuple(Slot(f"slot{i}", cardinality) for i in range(n_slots)), max_turns)

    @classmethod
    def from_dict(cls, d):
        try:
            slots = tuple(Slot(str(s["name"]), int(s["cardinality"])) for s in d["slots"])
            return cls(slots, int(d.get("max_turns", 20)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad domain config: {exc!r}") from None

    def to_dict(self):
        return {"slots": [{"name": s.name, "cardinality": s.cardinality} for s in self.slots],
                "max_turns": self.max_turns}


def load_domain(path):
    with open(path) as fh:
        return SlotDomain.from_dict(json.load(fh))


class SystemAction(NamedTuple):
    kind: str  # request | confirm | inform_results | bye
    slot: int | None = None

    def __str__(self):
        return self.kind if self.slot is None else f"{self.kind}({self.slot})"


@dataclass
class EnvState:
    domain: SlotDomain
    goal: tuple
    status: list = field(default_factory=list)
    values: list = field(default_factory=list)
    turns: int = 0
    done: bool = False
    success: bool = False

    def progress(self):
        """Fraction of slots confirmed at their goal value."""
        ok = sum(1 for st, v, g in zip(self.status, self.values, self.goal)
                 if st == CONFIRMED and v == g)
        return ok / len(self.goal)

    def outcome(self, iq=None):
        return EpisodeOutcome(self.turns, self.success, iq)

    def features(self):
        return EpisodeFeatures(self.turns, self.progress(), self.success)


def reset(domain: SlotDomain, rng) -> EnvState:
    """New dialogue with a goal drawn uniformly from the domain."""
    rng = np.random.default_rng(rng)
    goal = tuple(int(rng.integers(sl.cardinality)) for sl in domain.slots)
    n = domain.n_slots
    return EnvState(domain, goal, [UNKNOWN] * n, [None] * n)


def _corrupt(value, cardinality, rng):
    wrong = int(rng.integers(cardinality - 1))
    return wrong if wrong < value else wrong + 1


def step(state: EnvState, action: SystemAction, ser: float, rng):
    """Apply one system action in place; returns ``(user_act, state, done)``.

    At ``ser=0`` the outcome does not depend on ``rng``: the dialogue is a
    deterministic function of goal and actions.
    """
    if state.done:
        raise ContractError("dialogue already finished")
    if not 0.0 <= ser <= 1.0:
        raise ValidationError("ser must lie in [0, 1]")
    dom = state.domain
    if action.kind in ("request", "confirm") and not (
            action.slot is not None and 0 <= action.slot < dom.n_slots):
        raise ValidationError(f"invalid slot in {action}")

    state.turns += 1
    if action.kind == "request":
        i = action.slot
        value = state.goal[i]
        if rng.random() < ser:
            value = _corrupt(value, dom.slots[i].cardinality, rng)
        state.status[i] = FILLED
        state.values[i] = value
        user = ("inform", i, value)
    elif action.kind == "confirm":
        i = action.slot
        affirm = state.status[i] != UNKNOWN and state.values[i] == state.goal[i]
        if rng.random() < ser:
            affirm = not affirm
        if affirm and state.status[i] != UNKNOWN:
            state.status[i] = CONFIRMED
            user = ("affirm", i)
        else:
            state.status[i] = UNKNOWN
            state.values[i] = None
            user = ("negate", i)
    elif action.kind == "inform_results":
        user = ("null",)
    elif action.kind == "bye":
        state.done = True
        state.success = state.progress() == 1.0
        user = ("bye",)
    else:
        raise ValidationError(f"unknown system action {action.kind!r}")

    if not state.done and state.turns >= dom.max_turns:
        state.done = True
        state.success = False
    return user, state, state.done


def handcrafted_policy(state) -> SystemAction:
    """Request unknown slots, then confirm filled ones, then say bye.

    Accepts an :class:`EnvState` or a bare status sequence.
    """
    status = state.status if isinstance(state, EnvState) else state
    for i, st in enumerate(status):
        if st == UNKNOWN:
            return SystemAction("request", i)
    for i, st in enumerate(status):
        if st == FILLED:
            return SystemAction("confirm", i)
    return SystemAction("bye")


class DialogueEnv:
    """Discrete-state view of the simulator for tabular learners.

    The learner observes only slot statuses (``3 ** n_slots`` states) and
    receives ``-1`` per turn plus the final TS or IQ bonus, so an episode's
    return equals ``reward_ts``/``reward_iq`` of its outcome.
    """

    def __init__(self, domain: SlotDomain, ser=0.0, reward="ts",
                 iq_estimator: IqEstimator | None = None):
        if reward not in ("ts", "iq"):
            raise ValidationError("reward must be 'ts' or 'iq'")
        if reward == "iq" and iq_estimator is None:
            raise ValidationError("reward 'iq' needs an IQ estimator")
        if not 0.0 <= ser <= 1.0:
            raise ValidationError("ser must lie in [0, 1]")
        self.domain = domain
        self.ser = float(ser)
        self.reward = reward
        self.iq_estimator = iq_estimator
        d = domain.n_slots
        self.actions = tuple([SystemAction("request", i) for i in range(d)]
                             + [SystemAction("confirm", i) for i in range(d)]
                             + [SystemAction("inform_results"), SystemAction("bye")])
        self._action_id = {a: k for k, a in enumerate(self.actions)}
        self.n_actions = len(self.actions)
        self.n_states = 3 ** d
        self.state = None

    def state_id(self, status):
        sid = 0
        for st in reversed(status):
            sid = sid * 3 + st
        return sid

    def status_of(self, sid):
        out = []
        for _ in range(self.domain.n_slots):
            out.append(sid % 3)
            sid //= 3
        return out

    def action_id(self, action: SystemAction):
        return self._action_id[action]

    def reset(self, rng):
        self.state = reset(self.domain, rng)
        return self.state_id(self.state.status)

    def final_bonus(self):
        st = self.state
        if self.reward == "ts":
            return reward_ts(st.outcome()) - st.turns * TURN_PENALTY
        iq = self.iq_estimator.estimate(st.features())
        return reward_iq(st.outcome(iq)) - st.turns * TURN_PENALTY

    def step(self, action_id, rng):
        _, st, done = step(self.state, self.actions[action_id], self.ser, rng)
        r = float(TURN_PENALTY)
        if done:
            r += self.final_bonus()
        return self.state_id(st.status), r, done


class HandcraftedExpert:
    """Rule-based expert over :class:`DialogueEnv` state ids."""

    def __init__(self, env: DialogueEnv):
        self.env = env
        self.table = np.array([env.action_id(handcrafted_policy(env.status_of(s)))
                               for s in range(env.n_states)], dtype=np.int64)

    def act(self, sid):
        return int(self.table[sid])

    def rollout(self, env: DialogueEnv, rng):
        """Play one dialogue; returns ``[(s, a, r, s', done), ...]``."""
        traj = []
        s = env.reset(rng)
        done = False
        while not done:
            a = self.act(s)
            s2, r, done = env.step(a, rng)
            traj.append((s, a, r, s2, done))
            s = s2
        return traj


def evaluate(env: DialogueEnv, policy, n_dialogues, seed):
    """Greedy execution of ``policy`` (array or callable on state ids)."""
    if n_dialogues < 1:
        raise ValidationError("n_dialogues must be at least 1")
    act = policy if callable(policy) else (lambda s, table=np.asarray(policy): int(table[s]))
    rng = np.random.default_rng(seed)
    wins = turns = total = 0.0
    for _ in range(n_dialogues):
        s = env.reset(rng)
        done = False
        ret = 0.0
        while not done:
            s, r, done = env.step(act(s), rng)
            ret += r
        wins += env.state.success
        turns += env.state.turns
        total += ret
    return {"success_rate": wins / n_dialogues, "avg_turns": turns / n_dialogues,
            "avg_reward": total / n_dialogues}


def run_benchmark(policy, domain: SlotDomain, ser_levels=SER_LEVELS, n=100, seed=0,
                  reward="ts", iq_estimator=None):
    """Evaluate ``policy`` at each semantic error rate; one row per level."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    rows = []
    for ser in ser_levels:
        env = DialogueEnv(domain, ser, reward, iq_estimator)
        rows.append({"ser": float(ser), **evaluate(env, policy, n, seed)})
    return rows
