"""Finite MDPs with state rewards and exact solvers.

An :class:`Mdp` keeps the valid actions of each state as a ragged list; the
solvers work on flat (state, action) *pair* arrays so that the hot loops in
:mod:`dialpol.kernels` stay allocation free.  Policies are integer arrays of
action ids, value functions are float arrays indexed by state, and Q
functions are :class:`QFn` objects defined only on valid pairs.

Bellman backup used throughout::

    Q(s, a) = R(s) + gamma * cont(s) * sum_s' T(s, a, s') V(s')

where ``cont(s)`` is 0 for terminal states (reward collected once) and 1
otherwise.
"""
from __future__ import annotations

import json
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import ConvergenceError, ParseError, ValidationError

ROW_SUM_TOL = 1e-9
DEFAULT_TOL = 1e-9
DEFAULT_MAX_SWEEPS = 100_000
DEFAULT_MAX_IMPROVEMENTS = 10_000


class Mdp:
    """Finite MDP ``(S, A, T, gamma, R)`` with per-state action sets.

    ``transitions`` is either a dense array ``T[s, a, s']`` (entries for
    invalid pairs are ignored) or an iterable of ``(s, a, s', p)`` entries;
    unlisted entries are zero.  ``rewards`` may be ``None`` for a reward-free
    skeleton, in which case solvers need explicit rewards via
    :meth:`with_rewards`.
    """

    def __init__(self, n_states, actions, transitions, rewards=None, gamma=0.9,
                 r_max=None, terminal=None):
        n_states = int(n_states)
        if n_states < 1:
            raise ValidationError("n_states must be positive")
        if len(actions) != n_states:
            raise ValidationError(f"expected {n_states} action lists, got {len(actions)}")
        if not 0.0 <= gamma < 1.0:
            raise ValidationError(f"gamma must lie in [0, 1), got {gamma}")

        acts = []
        for s, row in enumerate(actions):
            row = sorted(int(a) for a in row)
            if not row:
                raise ValidationError(f"state {s} has no valid action")
            if len(set(row)) != len(row) or row[0] < 0:
                raise ValidationError(f"state {s} has duplicate or negative action ids")
            acts.append(row)

        self.n_states = n_states
        self.gamma = float(gamma)
        self.actions = tuple(tuple(r) for r in acts)
        counts = np.array([len(r) for r in acts], dtype=np.int64)
        self.state_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.pair_state = np.repeat(np.arange(n_states, dtype=np.int64), counts)
        self.pair_action = np.array([a for r in acts for a in r], dtype=np.int64)
        self.n_actions = int(self.pair_action.max()) + 1
        self._pair_lookup = {(int(s), int(a)): p for p, (s, a)
                             in enumerate(zip(self.pair_state, self.pair_action))}

        self._build_transitions(transitions)

        if terminal is None:
            terminal = np.zeros(n_states, dtype=bool)
        terminal = np.asarray(terminal, dtype=bool)
        if terminal.shape != (n_states,):
            raise ValidationError("terminal mask must have one entry per state")
        self.terminal = terminal
        self.cont = np.where(terminal, 0.0, 1.0)

        self.rewards = None
        self.r_max = None if r_max is None else float(r_max)
        if rewards is not None:
            self.rewards = self._check_rewards(rewards, self.r_max)
            if self.r_max is None:
                self.r_max = float(np.max(np.abs(self.rewards)))

    def _build_transitions(self, transitions):
        S = self.n_states
        rows = [dict() for _ in range(len(self.pair_state))]
        if isinstance(transitions, np.ndarray) and transitions.ndim == 3:
            if transitions.shape[0] != S or transitions.shape[2] != S:
                raise ValidationError(f"dense transitions must have shape ({S}, A, {S})")
            for p, (s, a) in enumerate(zip(self.pair_state, self.pair_action)):
                if a >= transitions.shape[1]:
                    raise ValidationError(f"action {a} missing from dense transitions")
                for s2 in np.flatnonzero(transitions[s, a]):
                    rows[p][int(s2)] = float(transitions[s, a, s2])
                neg = transitions[s, a] < 0
                if neg.any():
                    raise ValidationError(f"negative probability at ({s}, {a})")
        else:
            for s, a, s2, prob in transitions:
                s, a, s2, prob = int(s), int(a), int(s2), float(prob)
                p = self._pair_lookup.get((s, a))
                if p is None:
                    raise ValidationError(f"transition given for invalid pair ({s}, {a})")
                if not 0 <= s2 < S:
                    raise ValidationError(f"successor {s2} out of range")
                rows[p][s2] = rows[p].get(s2, 0.0) + prob

        ptr = [0]
        nxt, prb = [], []
        for p, row in enumerate(rows):
            total = 0.0
            for s2 in sorted(row):
                prob = row[s2]
                if not 0.0 <= prob <= 1.0:
                    raise ValidationError(
                        f"probability {prob} outside [0, 1] at pair "
                        f"({self.pair_state[p]}, {self.pair_action[p]})")
                if prob > 0.0:
                    nxt.append(s2)
                    prb.append(prob)
                    total += prob
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ValidationError(
                    f"row ({self.pair_state[p]}, {self.pair_action[p]}) sums to {total}, not 1")
            ptr.append(len(nxt))
        self.trans_ptr = np.array(ptr, dtype=np.int64)
        self.trans_next = np.array(nxt, dtype=np.int64)
        self.trans_prob = np.array(prb, dtype=np.float64)

    def _check_rewards(self, rewards, r_max):
        r = np.array(rewards, dtype=np.float64)
        if r.shape != (self.n_states,):
            raise ValidationError(f"rewards must have length {self.n_states}")
        if not np.all(np.isfinite(r)):
            raise ValidationError("rewards must be finite")
        if r_max is not None and np.any(np.abs(r) > r_max + 1e-12):
            raise ValidationError(f"|R| exceeds r_max={r_max}")
        return r

    @classmethod
    def from_dense(cls, transitions, rewards=None, gamma=0.9, actions=None, **kw):
        """Build from ``T[s, a, s']``; every action is valid unless ``actions`` says otherwise."""
        T = np.asarray(transitions, dtype=np.float64)
        if actions is None:
            actions = [list(range(T.shape[1]))] * T.shape[0]
        return cls(T.shape[0], actions, T, rewards, gamma, **kw)

    @property
    def n_pairs(self):
        return len(self.pair_state)

    def with_rewards(self, rewards, r_max=None):
        """Copy sharing the transition arrays, with new state rewards."""
        out = object.__new__(Mdp)
        out.__dict__.update(self.__dict__)
        bound = r_max if r_max is not None else self.r_max
        out.rewards = self._check_rewards(rewards, bound)
        out.r_max = bound if bound is not None else float(np.max(np.abs(out.rewards)))
        return out

    def pair_index(self, s, a):
        try:
            return self._pair_lookup[(int(s), int(a))]
        except KeyError:
            raise ValidationError(f"action {a} is not valid in state {s}") from None

    def policy_pairs(self, policy):
        policy = np.asarray(policy)
        if policy.shape != (self.n_states,):
            raise ValidationError(f"policy must assign an action to each of {self.n_states} states")
        return np.array([self.pair_index(s, a) for s, a in enumerate(policy)], dtype=np.int64)

    def transition_matrix(self):
        """Dense ``T[s, a, s']`` (zeros on invalid pairs)."""
        T = np.zeros((self.n_states, self.n_actions, self.n_states))
        for p in range(self.n_pairs):
            lo, hi = self.trans_ptr[p], self.trans_ptr[p + 1]
            T[self.pair_state[p], self.pair_action[p], self.trans_next[lo:hi]] = self.trans_prob[lo:hi]
        return T

    def entries(self):
        """Yield ``(s, a, s', p)`` for every non-zero transition."""
        for p in range(self.n_pairs):
            for k in range(self.trans_ptr[p], self.trans_ptr[p + 1]):
                yield (int(self.pair_state[p]), int(self.pair_action[p]),
                       int(self.trans_next[k]), float(self.trans_prob[k]))

    def _require_rewards(self):
        if self.rewards is None:
            raise ValidationError("MDP skeleton has no rewards; call with_rewards() first")
        return self.rewards

    def to_dict(self, include_rewards=True):
        d = {
            "n_states": self.n_states,
            "gamma": self.gamma,
            "actions": [list(r) for r in self.actions],
            "transitions": [list(e) for e in self.entries()],
        }
        if include_rewards and self.rewards is not None:
            d["rewards"] = self.rewards.tolist()
        if self.terminal.any():
            d["terminal"] = np.flatnonzero(self.terminal).tolist()
        return d


class QFn:
    """Action values on valid (state, action) pairs, stored flat."""

    def __init__(self, state_ptr, pair_action, values):
        self.state_ptr = np.asarray(state_ptr, dtype=np.int64)
        self.pair_action = np.asarray(pair_action, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != self.pair_action.shape:
            raise ValidationError("one Q value per valid pair expected")

    @classmethod
    def from_rows(cls, rows, actions=None):
        """``rows[s]`` lists the values of ``actions[s]`` (default ``0..len-1``)."""
        if actions is None:
            actions = [range(len(r)) for r in rows]
        counts = [len(r) for r in rows]
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(ptr, [a for r in actions for a in r], [x for r in rows for x in r])

    @property
    def n_states(self):
        return len(self.state_ptr) - 1

    def row(self, s):
        lo, hi = self.state_ptr[s], self.state_ptr[s + 1]
        return self.pair_action[lo:hi], self.values[lo:hi]

    def __getitem__(self, key):
        s, a = key
        acts, vals = self.row(s)
        hit = np.flatnonzero(acts == a)
        if hit.size == 0:
            raise KeyError(f"action {a} not valid in state {s}")
        return float(vals[hit[0]])

    def dense(self, fill=np.nan):
        n_act = int(self.pair_action.max()) + 1
        out = np.full((self.n_states, n_act), fill, dtype=np.float64)
        states = np.repeat(np.arange(self.n_states), np.diff(self.state_ptr))
        out[states, self.pair_action] = self.values
        return out


class Solution(NamedTuple):
    policy: np.ndarray
    value: np.ndarray
    q: QFn


def _qfn(mdp, values):
    return QFn(mdp.state_ptr, mdp.pair_action, values)


def _evaluate_pairs(mdp, rewards, pol_pair, tol, v0=None, max_sweeps=DEFAULT_MAX_SWEEPS):
    if v0 is None:
        v0 = np.zeros(mdp.n_states)
    v, sweeps, ok = kernels.eval_policy(
        mdp.trans_ptr, mdp.trans_next, mdp.trans_prob, rewards, mdp.cont,
        mdp.gamma, pol_pair, v0, tol, max_sweeps)
    if not ok:
        raise ConvergenceError(f"policy evaluation did not reach tol={tol}", sweeps)
    return v


def _q_values(mdp, rewards, v):
    return kernels.q_values(mdp.pair_state, mdp.trans_ptr, mdp.trans_next,
                            mdp.trans_prob, rewards, mdp.cont, mdp.gamma, v)


def policy_evaluation(mdp, pi, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS):
    """Value of the deterministic policy ``pi`` by iterative Bellman sweeps.

    The returned vector is within ``tol`` of the exact fixed point in the
    sup norm, hence its Bellman residual is also below ``tol``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    return _evaluate_pairs(mdp, mdp._require_rewards(), mdp.policy_pairs(pi), tol,
                           max_sweeps=max_sweeps)


def q_from_v(mdp, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (mdp.n_states,) or not np.all(np.isfinite(v)):
        raise ValidationError("v must be a finite vector over states")
    return _qfn(mdp, _q_values(mdp, mdp._require_rewards(), v))


def greedy_policy(q: QFn, tie_tol=0.0):
    """Per-state argmax; ties (within ``tie_tol``) go to the lowest action id."""
    pairs = kernels.greedy(q.state_ptr, q.values, float(tie_tol))
    return q.pair_action[pairs]


def solve_pairs(mdp, rewards, tol=DEFAULT_TOL, init_pairs=None, init_value=None,
                history=None, max_sweeps=DEFAULT_MAX_SWEEPS,
                max_improvements=DEFAULT_MAX_IMPROVEMENTS):
    """Policy iteration on raw arrays; returns ``(pol_pair, v, q_values)``.

    Used directly by the samplers, which re-solve the same skeleton with
    many reward vectors and warm-start from the previous solution.
    """
    pol = (mdp.state_ptr[:-1].copy() if init_pairs is None
           else np.asarray(init_pairs, dtype=np.int64))
    v = init_value
    for _ in range(max_improvements):
        v = _evaluate_pairs(mdp, rewards, pol, tol, v, max_sweeps)
        if history is not None:
            history.append(v.copy())
        qv = _q_values(mdp, rewards, v)
        new = kernels.improve(mdp.state_ptr, qv, pol, tol)
        if np.array_equal(new, pol):
            break
        pol = new
    else:
        raise ConvergenceError("policy iteration kept changing the policy", max_improvements)

    # canonical tie-breaking: lowest action id among near-maximal actions
    final = kernels.greedy(mdp.state_ptr, qv, tol)
    if not np.array_equal(final, pol):
        pol = final
        v = _evaluate_pairs(mdp, rewards, pol, tol, v, max_sweeps)
        qv = _q_values(mdp, rewards, v)
    return pol, v, qv


def policy_iteration(mdp, tol=DEFAULT_TOL, history=None, **kw):
    """Optimal policy, its value and Q function by Howard's policy iteration.

    ``history``, if a list, receives the value vector of every evaluated
    policy (useful to check monotone improvement).
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    pol, v, qv = solve_pairs(mdp, mdp._require_rewards(), tol, history=history, **kw)
    return Solution(mdp.pair_action[pol], v, _qfn(mdp, qv))


def value_iteration(mdp, tol=DEFAULT_TOL, gaps=None, max_sweeps=DEFAULT_MAX_SWEEPS):
    """Optimal policy by value iteration, then exact evaluation of that policy.

    ``gaps``, if a list, receives the sup-norm change of every sweep.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    rewards = mdp._require_rewards()
    v, sweeps, ok, trace = kernels.value_sweeps(
        mdp.state_ptr, mdp.trans_ptr, mdp.trans_next, mdp.trans_prob, rewards,
        mdp.cont, mdp.gamma, np.zeros(mdp.n_states), tol, max_sweeps)
    if gaps is not None:
        gaps.extend(float(g) for g in trace[:sweeps])
    if not ok:
        raise ConvergenceError(f"value iteration did not reach tol={tol}", sweeps)
    qv = _q_values(mdp, rewards, v)
    pol = kernels.greedy(mdp.state_ptr, qv, tol)
    v = _evaluate_pairs(mdp, rewards, pol, tol, v, max_sweeps)
    return Solution(mdp.pair_action[pol], v, _qfn(mdp, _q_values(mdp, rewards, v)))


def bellman_residual(mdp, pi, v):
    R = mdp._require_rewards()
    pairs = mdp.policy_pairs(pi)
    qv = _q_values(mdp, R, np.asarray(v, dtype=np.float64))
    return float(np.max(np.abs(np.asarray(v) - qv[pairs])))


def mdp_from_dict(d, require_rewards=True):
    try:
        n = int(d["n_states"])
        gamma = float(d["gamma"])
        actions = d["actions"]
        entries = d["transitions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad MDP document: {exc!r}") from None
    rewards = d.get("rewards")
    if require_rewards and rewards is None:
        raise ParseError("MDP document lacks 'rewards'")
    for e in entries:
        if len(e) != 4:
            raise ParseError(f"transition entry {e!r} is not [s, a, s', p]")
    terminal = None
    if d.get("terminal"):
        terminal = np.zeros(n, dtype=bool)
        terminal[list(d["terminal"])] = True
    return Mdp(n, actions, entries, rewards, gamma, r_max=d.get("r_max"), terminal=terminal)


def load_mdp(path, require_rewards=True):
    """Read an MDP (or skeleton, with ``require_rewards=False``) from JSON."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return mdp_from_dict(doc, require_rewards)


def random_mdp(rng, n_states, n_actions, gamma, ragged=True, r_scale=1.0):
    """Random dense-support MDP for tests and benchmarks."""
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-r_scale, r_scale, size=n_states)
    if ragged:
        actions = [sorted(rng.choice(n_actions, size=rng.integers(1, n_actions + 1),
                                     replace=False).tolist())
                   for _ in range(n_states)]
    else:
        actions = [list(range(n_actions))] * n_states
    return Mdp.from_dense(T, R, gamma, actions=actions)


def enumerate_policies(mdp: Mdp) -> Sequence[np.ndarray]:
    """All deterministic policies (exponential; tiny MDPs only)."""
    grids = np.meshgrid(*[np.array(r) for r in mdp.actions], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)
