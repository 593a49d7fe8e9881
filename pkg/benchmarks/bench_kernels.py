"""Time the numba kernels against the numpy fallback on random MDPs.

    python benchmarks/bench_kernels.py [--sizes 50 200 800] [--repeat 5]

Both backends are called on identical arrays and their outputs are checked
for agreement before timing. Requires numba; the compile cost is paid in a
warm-up call and is not included.
"""
import argparse
import timeit

import numpy as np

from dialpol import kernels
from dialpol.mdp import random_mdp


def kernel_calls(mdp, impl):
    r = mdp.rewards
    v0 = np.zeros(mdp.n_states)
    pol = np.asarray(mdp.state_ptr[:-1], dtype=np.int64)  # first action of every state
    q = impl["q_values"](mdp.pair_state, mdp.trans_ptr, mdp.trans_next, mdp.trans_prob,
                         r, mdp.cont, mdp.gamma, v0 + 1.0)
    return {
        "eval_policy": lambda: impl["eval_policy"](mdp.trans_ptr, mdp.trans_next, mdp.trans_prob,
                                                   r, mdp.cont, mdp.gamma, pol, v0, 1e-9, 100_000),
        "value_sweeps": lambda: impl["value_sweeps"](mdp.state_ptr, mdp.trans_ptr, mdp.trans_next,
                                                     mdp.trans_prob, r, mdp.cont, mdp.gamma, v0,
                                                     1e-9, 100_000),
        "q_values": lambda: impl["q_values"](mdp.pair_state, mdp.trans_ptr, mdp.trans_next,
                                             mdp.trans_prob, r, mdp.cont, mdp.gamma, v0 + 1.0),
        "greedy": lambda: impl["greedy"](mdp.state_ptr, q, 1e-9),
    }


def first_array(out):
    return np.asarray(out[0] if isinstance(out, tuple) else out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--actions", type=int, default=5)
    ap.add_argument("--gamma", type=float, default=0.95)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if kernels.jit is None:
        raise SystemExit("numba backend unavailable (DIALPOL_DISABLE_NUMBA set or numba missing)")

    print(f"{'states':>7} {'kernel':>13} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n in args.sizes:
        mdp = random_mdp(rng, n, args.actions, args.gamma)
        fast, slow = kernel_calls(mdp, kernels.jit), kernel_calls(mdp, kernels.numpy_impl)
        for name in fast:
            a, b = first_array(fast[name]()), first_array(slow[name]())
            if not np.allclose(a, b, atol=1e-8):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_fast = min(timeit.repeat(fast[name], number=1, repeat=args.repeat)) * 1e3
            t_slow = min(timeit.repeat(slow[name], number=1, repeat=args.repeat)) * 1e3
            print(f"{n:>7} {name:>13} {t_fast:>10.3f} {t_slow:>10.3f} {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
