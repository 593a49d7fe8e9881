"""Dialogue logs, the five-variable dialogue state and expert observations.

A dialogue with ``G`` goals is encoded by the tuple

    (terminal, sys_goal, user_goal, gen_act, user_help)

with ranges ``2 x (G+1) x (G+1) x K x 2`` where ``K`` is 3 when the
dialogue can ask for the task and 2 otherwise.  States are numbered in
mixed radix with ``terminal`` varying fastest.

System actions are numbered per dialogue by :meth:`StateSpace.action_list`:
``quit, inform_help, [ask_task,] wait, ack, other, inform_do(1..G)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .mdp import Mdp

SYSTEM_ACTS = ("quit", "inform_do", "inform_help", "ask_task", "wait", "ack", "other")
PLAYER_ACTS = ("user_goal", "user_help", "user_other")
GOAL_ACTS = ("inform_do", "user_goal")
DEFAULT_SMOOTHING = 0.1


class StateVars(NamedTuple):
    terminal: int = 0
    sys_goal: int = 0
    user_goal: int = 0
    gen_act: int = 0
    user_help: int = 0


class SystemAct(NamedTuple):
    name: str
    goal: int | None = None

    def __str__(self):
        return self.name if self.goal is None else f"{self.name}({self.goal})"


@dataclass(frozen=True)
class DialogueTurn:
    speaker: str
    act: str
    goal: int | None = None


@dataclass
class DialogueLog:
    id: str
    n_goals: int
    has_ask_task: bool
    turns: list = field(default_factory=list)


@dataclass
class ExpertObservations:
    """Expert ``(state, action)`` pairs plus the observed ``(s, a, s')`` steps.

    ``steps`` holds one triple per system turn whose successor state is
    known (the state at the next system turn, or after the last player
    turn of the log).
    """

    pairs: list
    steps: list = field(default_factory=list)
    n_states: int | None = None

    @property
    def n_pairs(self):
        return len(self.pairs)

    def states(self):
        return np.array([s for s, _ in self.pairs], dtype=np.int64)

    def actions(self):
        return np.array([a for _, a in self.pairs], dtype=np.int64)

    def __add__(self, other):
        n = self.n_states if self.n_states is not None else other.n_states
        return ExpertObservations(self.pairs + other.pairs, self.steps + other.steps, n)


class StateSpace:
    """Encoding, action numbering and deterministic dynamics for one dialogue type."""

    def __init__(self, n_goals, has_ask_task):
        if n_goals < 1:
            raise ValidationError("n_goals must be at least 1")
        self.n_goals = int(n_goals)
        self.has_ask_task = bool(has_ask_task)
        self.n_gen = 3 if has_ask_task else 2
        self.radix = (2, self.n_goals + 1, self.n_goals + 1, self.n_gen, 2)
        self.size = int(np.prod(self.radix))

        acts = [SystemAct("quit"), SystemAct("inform_help")]
        if self.has_ask_task:
            acts.append(SystemAct("ask_task"))
        acts += [SystemAct("wait"), SystemAct("ack"), SystemAct("other")]
        acts += [SystemAct("inform_do", g) for g in range(1, self.n_goals + 1)]
        self.action_list = tuple(acts)
        self._action_id = {a: i for i, a in enumerate(acts)}
        self.wait_id = self._action_id[SystemAct("wait")]

    def encode(self, vars) -> int:
        vars = StateVars(*vars)
        for name, x, r in zip(StateVars._fields, vars, self.radix):
            if not 0 <= x < r:
                raise ValidationError(f"{name}={x} outside 0..{r - 1}")
        t, sg, ug, ga, uh = vars
        G1, K = self.n_goals + 1, self.n_gen
        return int(t + 2 * (sg + G1 * (ug + G1 * (ga + K * uh))))

    def decode(self, state_id) -> StateVars:
        if not 0 <= state_id < self.size:
            raise ValidationError(f"state id {state_id} outside 0..{self.size - 1}")
        out = []
        rest = int(state_id)
        for r in self.radix:
            out.append(rest % r)
            rest //= r
        return StateVars(*out)

    def all_states(self):
        return [self.decode(i) for i in range(self.size)]

    def features(self):
        """Decoded variable tuples as an ``(n_states, 5)`` integer array."""
        return np.array(self.all_states(), dtype=np.int64)

    def action_id(self, name, goal=None) -> int:
        try:
            return self._action_id[SystemAct(name, goal)]
        except KeyError:
            raise ValidationError(f"system action {name}({goal}) not available here") from None

    def next_s(self, state_id, action_id) -> int:
        """Deterministic successor of a system action other than ``wait``."""
        act = self.action_list[action_id]
        if act.name == "wait":
            raise ContractError("wait has a stochastic successor; use estimated transitions")
        v = self.decode(state_id)
        if v.terminal:
            return int(state_id)
        if act.name == "quit":
            v = v._replace(terminal=1)
        elif act.name == "inform_do":
            v = v._replace(sys_goal=act.goal, gen_act=0, user_help=0)
        elif act.name == "inform_help":
            v = v._replace(gen_act=1, user_help=0)
        elif act.name == "ask_task":
            v = v._replace(gen_act=2)
        else:  # ack, other
            v = v._replace(gen_act=0)
        return self.encode(v)

    def apply_player(self, vars: StateVars, turn: DialogueTurn) -> StateVars:
        if turn.act == "user_goal":
            return vars._replace(user_goal=turn.goal)
        if turn.act == "user_help":
            return vars._replace(user_help=1)
        return vars

    def skeleton(self, wait_rows, gamma=0.9):
        """Reward-free MDP: deterministic system actions plus estimated ``wait`` rows.

        ``wait_rows`` is an ``(n_states, n_states)`` row-stochastic matrix.
        Terminal states are absorbing and stop the return after their reward.
        """
        n_act = len(self.action_list)
        entries = []
        for s in range(self.size):
            for a in range(n_act):
                if a == self.wait_id:
                    if self.decode(s).terminal:
                        entries.append((s, a, s, 1.0))
                        continue
                    row = wait_rows[s]
                    entries.extend((s, a, int(s2), float(row[s2])) for s2 in np.flatnonzero(row))
                else:
                    entries.append((s, a, self.next_s(s, a), 1.0))
        terminal = np.array([v.terminal == 1 for v in self.all_states()])
        return Mdp(self.size, [range(n_act)] * self.size, entries, None, gamma,
                   terminal=terminal)


def state_space_size(n_goals, has_ask_task):
    return StateSpace(n_goals, has_ask_task).size


def _parse_turn(raw, n_goals, line):
    try:
        speaker, act = raw["speaker"], raw["act"]
    except (KeyError, TypeError):
        raise ParseError(f"turn {raw!r} lacks speaker/act", line) from None
    goal = raw.get("goal")
    if speaker == "system":
        allowed = SYSTEM_ACTS
    elif speaker == "player":
        allowed = PLAYER_ACTS
    else:
        raise ParseError(f"unknown speaker {speaker!r}", line)
    if act not in allowed:
        raise ParseError(f"unknown {speaker} act {act!r}", line)
    if act in GOAL_ACTS:
        if not isinstance(goal, int) or isinstance(goal, bool) or not 1 <= goal <= n_goals:
            raise ParseError(f"{act} needs a goal id in 1..{n_goals}, got {goal!r}", line)
    elif goal is not None:
        raise ParseError(f"{act} takes no goal argument", line)
    return DialogueTurn(speaker, act, goal)


def parse_log(doc, line=None) -> DialogueLog:
    try:
        log_id = str(doc["id"])
        n_goals = doc["n_goals"]
        has_ask = doc["has_ask_task"]
        raw_turns = doc["turns"]
    except (KeyError, TypeError):
        raise ParseError("dialogue needs id, n_goals, has_ask_task and turns", line) from None
    if not isinstance(n_goals, int) or n_goals < 1:
        raise ParseError(f"n_goals must be a positive integer, got {n_goals!r}", line)
    if not isinstance(has_ask, bool):
        raise ParseError("has_ask_task must be a boolean", line)
    if not raw_turns:
        raise ParseError("dialogue has no turns", line)
    turns = [_parse_turn(t, n_goals, line) for t in raw_turns]
    quits = [i for i, t in enumerate(turns) if t.act == "quit"]
    if len(quits) > 1:
        raise ParseError("more than one quit", line)
    if quits and quits[0] != len(turns) - 1:
        raise ParseError(f"turn {quits[0]} quits but the dialogue continues", line)
    if not has_ask and any(t.act == "ask_task" for t in turns):
        raise ParseError("ask_task used in a dialogue without ask_task", line)
    return DialogueLog(log_id, n_goals, has_ask, turns)


def read_logs(path):
    """Parse a dialogue JSONL file (strict: unknown acts are errors)."""
    logs = []
    with open(path) as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            logs.append(parse_log(doc, lineno))
    return logs


def log_to_dict(log: DialogueLog):
    return {
        "id": log.id,
        "n_goals": log.n_goals,
        "has_ask_task": log.has_ask_task,
        "turns": [{"speaker": t.speaker, "act": t.act, "goal": t.goal} for t in log.turns],
    }


def write_logs(path, logs):
    with open(path, "w") as fh:
        for log in logs:
            fh.write(json.dumps(log_to_dict(log)) + "\n")


def extract_observations(log: DialogueLog, space: StateSpace | None = None) -> ExpertObservations:
    """One ``(state, action)`` pair per system turn, state taken before the turn."""
    if space is None:
        space = StateSpace(log.n_goals, log.has_ask_task)
    vars = StateVars()
    pairs, steps = [], []
    pending = None  # (state, action) whose successor is not known yet
    for turn in log.turns:
        if turn.speaker == "player":
            vars = space.apply_player(vars, turn)
            continue
        s = space.encode(vars)
        if pending is not None:
            steps.append((*pending, s))
        a = space.action_id(turn.act, turn.goal)
        pairs.append((s, a))
        if a != space.wait_id:
            vars = space.decode(space.next_s(s, a))
        pending = (s, a)
    if pending is not None:
        steps.append((*pending, space.encode(vars)))
    return ExpertObservations(pairs, steps, space.size)


def observations_for(logs, space: StateSpace) -> ExpertObservations:
    obs = ExpertObservations([], [], space.size)
    for log in logs:
        obs = obs + extract_observations(log, space)
    return obs


def observations_text(obs: ExpertObservations):
    """JSONL, one ``{"state": s, "action": a}`` record per expert pair."""
    return "".join(json.dumps({"state": int(s), "action": int(a)}) + "\n" for s, a in obs.pairs)


def read_observations(path, n_states=None) -> ExpertObservations:
    pairs = []
    with open(path) as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                doc = json.loads(text)
                s, a = int(doc["state"]), int(doc["action"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError("expected {\"state\": int, \"action\": int}", lineno) from None
            if s < 0 or (n_states is not None and s >= n_states):
                raise ParseError(f"state {s} outside the state space", lineno)
            pairs.append((s, a))
    return ExpertObservations(pairs, [], n_states)


def estimate_transitions(obs: ExpertObservations, action, n_states=None, alpha=DEFAULT_SMOOTHING):
    """Smoothed successor distribution after ``action`` for every state.

    ``P(s'|s,a) = (N(s,a,s') + alpha) / (N(s,a) + Z * alpha)`` with ``Z`` the
    number of states, so every row is a probability distribution.
    """
    if alpha <= 0:
        raise ValidationError("smoothing constant must be positive")
    n = n_states if n_states is not None else obs.n_states
    if n is None:
        raise ValidationError("number of states unknown")
    counts = np.zeros((n, n))
    for s, a, s2 in obs.steps:
        if a == action:
            counts[s, s2] += 1.0
    totals = counts.sum(axis=1, keepdims=True)
    return (counts + alpha) / (totals + n * alpha)


def build_skeleton(logs, gamma=0.9, alpha=DEFAULT_SMOOTHING):
    """State space, observations and reward-free MDP for logs of one dialogue type."""
    first = logs[0]
    if any((l.n_goals, l.has_ask_task) != (first.n_goals, first.has_ask_task) for l in logs):
        raise ValidationError("all logs of a dialogue must share n_goals and has_ask_task")
    space = StateSpace(first.n_goals, first.has_ask_task)
    obs = observations_for(logs, space)
    rows = estimate_transitions(obs, space.wait_id, space.size, alpha)
    return space, obs, space.skeleton(rows, gamma)


def synthetic_logs(n_goals, has_ask_task, n_logs, rng, dialogue_id="synthetic",
                   help_prob=0.2, chatter_prob=0.15):
    """Scripted game dialogues in the log schema.

    The character optionally asks for the task, waits for the player, and
    answers each requested goal (or a help request) before saying goodbye.
    """
    logs = []
    for k in range(n_logs):
        turns = []
        if has_ask_task and rng.random() < 0.8:
            turns.append(DialogueTurn("system", "ask_task"))
        n_req = int(rng.integers(1, n_goals + 1))
        for _ in range(n_req):
            turns.append(DialogueTurn("system", "wait"))
            if rng.random() < chatter_prob:
                turns.append(DialogueTurn("player", "user_other"))
                turns.append(DialogueTurn("system", "other"))
                turns.append(DialogueTurn("system", "wait"))
            if rng.random() < help_prob:
                turns.append(DialogueTurn("player", "user_help"))
                turns.append(DialogueTurn("system", "inform_help"))
                turns.append(DialogueTurn("system", "wait"))
            g = int(rng.integers(1, n_goals + 1))
            turns.append(DialogueTurn("player", "user_goal", g))
            turns.append(DialogueTurn("system", "ack"))
            turns.append(DialogueTurn("system", "inform_do", g))
        turns.append(DialogueTurn("system", "quit"))
        logs.append(DialogueLog(f"{dialogue_id}", n_goals, has_ask_task, turns))
    return logs
