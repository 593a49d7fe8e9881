"""Pure-numpy versions of the solver kernels (same signatures as ``_loops``)."""
import numpy as np


def _successor_means(trans_ptr, trans_next, trans_prob, v):
    # every pair owns at least one successor, so reduceat never sees an empty slice
    return np.add.reduceat(trans_prob * v[trans_next], trans_ptr[:-1])


def eval_policy(trans_ptr, trans_next, trans_prob, rewards, cont, gamma,
                pol_pair, v0, tol, max_iter):
    v = v0.copy()
    disc = gamma * cont
    for it in range(1, max_iter + 1):
        new = rewards + disc * _successor_means(trans_ptr, trans_next, trans_prob, v)[pol_pair]
        gap = np.max(np.abs(new - v)) if new.size else 0.0
        v = new
        if gamma * gap <= tol * (1.0 - gamma):
            return v, it, True
    return v, max_iter, False


def q_values(pair_state, trans_ptr, trans_next, trans_prob, rewards, cont,
             gamma, v):
    means = _successor_means(trans_ptr, trans_next, trans_prob, v)
    return rewards[pair_state] + gamma * cont[pair_state] * means


def _segment_max(state_ptr, q):
    return np.maximum.reduceat(q, state_ptr[:-1])


def greedy(state_ptr, q, tie_tol):
    counts = np.diff(state_ptr)
    best = np.repeat(_segment_max(state_ptr, q), counts)
    idx = np.arange(q.shape[0])
    cand = np.where(q >= best - tie_tol, idx, q.shape[0])
    return np.minimum.reduceat(cand, state_ptr[:-1]).astype(np.int64)


def improve(state_ptr, q, pol_pair, eps):
    best_p = greedy(state_ptr, q, 0.0)
    switch = q[best_p] > q[pol_pair] + eps
    return np.where(switch, best_p, pol_pair).astype(np.int64)


def value_sweeps(state_ptr, trans_ptr, trans_next, trans_prob, rewards, cont,
                 gamma, v0, tol, max_iter):
    v = v0.copy()
    disc = gamma * cont
    gaps = []
    for it in range(1, max_iter + 1):
        means = _successor_means(trans_ptr, trans_next, trans_prob, v)
        new = rewards + disc * _segment_max(state_ptr, means)
        gap = float(np.max(np.abs(new - v))) if new.size else 0.0
        gaps.append(gap)
        v = new
        if gamma * gap <= tol * (1.0 - gamma):
            return v, it, True, np.array(gaps)
    return v, max_iter, False, np.array(gaps)
