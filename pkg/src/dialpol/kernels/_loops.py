"""Loop kernels for the MDP solvers, written for numba.

Every function here is plain Python over numpy arrays; ``kernels/__init__``
compiles them with ``numba.njit``.  Run uncompiled they are correct but slow,
which is only useful when debugging.

Storage layout shared with ``_vectorized``:

* ``state_ptr[s]:state_ptr[s+1]`` are the (state, action) pair indices of ``s``,
  sorted by action id;
* ``pair_state[p]`` is the state of pair ``p``;
* ``trans_ptr[p]:trans_ptr[p+1]`` index ``trans_next``/``trans_prob``, the
  sparse successor distribution of pair ``p``;
* ``cont[s]`` is 0.0 for states where the episode stops after the reward.
"""
import numpy as np


def eval_policy(trans_ptr, trans_next, trans_prob, rewards, cont, gamma,
                pol_pair, v0, tol, max_iter):
    n = rewards.shape[0]
    v = v0.copy()
    new = np.empty(n)
    for it in range(1, max_iter + 1):
        gap = 0.0
        for s in range(n):
            p = pol_pair[s]
            acc = 0.0
            for k in range(trans_ptr[p], trans_ptr[p + 1]):
                acc += trans_prob[k] * v[trans_next[k]]
            x = rewards[s] + gamma * cont[s] * acc
            d = abs(x - v[s])
            if d > gap:
                gap = d
            new[s] = x
        v, new = new, v
        # sup-norm distance to the fixed point is at most gamma/(1-gamma)*gap
        if gamma * gap <= tol * (1.0 - gamma):
            return v, it, True
    return v, max_iter, False


def q_values(pair_state, trans_ptr, trans_next, trans_prob, rewards, cont,
             gamma, v):
    n_pairs = pair_state.shape[0]
    q = np.empty(n_pairs)
    for p in range(n_pairs):
        s = pair_state[p]
        acc = 0.0
        for k in range(trans_ptr[p], trans_ptr[p + 1]):
            acc += trans_prob[k] * v[trans_next[k]]
        q[p] = rewards[s] + gamma * cont[s] * acc
    return q


def greedy(state_ptr, q, tie_tol):
    n = state_ptr.shape[0] - 1
    out = np.empty(n, dtype=np.int64)
    for s in range(n):
        lo = state_ptr[s]
        hi = state_ptr[s + 1]
        best = q[lo]
        for p in range(lo + 1, hi):
            if q[p] > best:
                best = q[p]
        for p in range(lo, hi):
            if q[p] >= best - tie_tol:
                out[s] = p
                break
    return out


def improve(state_ptr, q, pol_pair, eps):
    n = state_ptr.shape[0] - 1
    out = pol_pair.copy()
    for s in range(n):
        lo = state_ptr[s]
        hi = state_ptr[s + 1]
        best_p = lo
        for p in range(lo + 1, hi):
            if q[p] > q[best_p]:
                best_p = p
        if q[best_p] > q[pol_pair[s]] + eps:
            out[s] = best_p
    return out


def value_sweeps(state_ptr, trans_ptr, trans_next, trans_prob, rewards, cont,
                 gamma, v0, tol, max_iter):
    n = rewards.shape[0]
    v = v0.copy()
    new = np.empty(n)
    gaps = np.empty(max_iter)
    for it in range(1, max_iter + 1):
        gap = 0.0
        for s in range(n):
            best = -np.inf
            for p in range(state_ptr[s], state_ptr[s + 1]):
                acc = 0.0
                for k in range(trans_ptr[p], trans_ptr[p + 1]):
                    acc += trans_prob[k] * v[trans_next[k]]
                if acc > best:
                    best = acc
            x = rewards[s] + gamma * cont[s] * best
            d = abs(x - v[s])
            if d > gap:
                gap = d
            new[s] = x
        v, new = new, v
        gaps[it - 1] = gap
        if gamma * gap <= tol * (1.0 - gamma):
            return v, it, True, gaps[:it].copy()
    return v, max_iter, False, gaps
