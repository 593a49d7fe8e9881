import os
import subprocess
import sys

import numpy as np
import pytest

from dialpol import kernels
from dialpol.mdp import random_mdp

needs_numba = pytest.mark.skipif(kernels.jit is None, reason="numba unavailable")


def _args(mdp, rng):
    pol = np.array([mdp.state_ptr[s] + rng.integers(mdp.state_ptr[s + 1] - mdp.state_ptr[s])
                    for s in range(mdp.n_states)], dtype=np.int64)
    return pol, rng.normal(size=mdp.n_states)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 12, 4, 0.9)
    pol, v0 = _args(mdp, rng)
    R = mdp.rewards
    outs = {}
    for name, impl in (("jit", kernels.jit), ("np", kernels.numpy_impl)):
        ev = impl["eval_policy"](mdp.trans_ptr, mdp.trans_next, mdp.trans_prob, R, mdp.cont,
                                 mdp.gamma, pol, v0, 1e-10, 10_000)
        q = impl["q_values"](mdp.pair_state, mdp.trans_ptr, mdp.trans_next, mdp.trans_prob, R,
                             mdp.cont, mdp.gamma, v0)
        g = impl["greedy"](mdp.state_ptr, q, 0.0)
        imp = impl["improve"](mdp.state_ptr, q, pol, 1e-9)
        vs = impl["value_sweeps"](mdp.state_ptr, mdp.trans_ptr, mdp.trans_next, mdp.trans_prob,
                                  R, mdp.cont, mdp.gamma, v0, 1e-10, 10_000)
        outs[name] = (ev, q, g, imp, vs)
    (ev1, q1, g1, i1, vs1), (ev2, q2, g2, i2, vs2) = outs["jit"], outs["np"]
    np.testing.assert_allclose(ev1[0], ev2[0], atol=1e-12)
    assert ev1[1:] == ev2[1:]
    np.testing.assert_allclose(q1, q2, atol=1e-12)
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_allclose(vs1[0], vs2[0], atol=1e-12)
    assert vs1[1:3] == vs2[1:3]


def test_env_flag_selects_numpy():
    code = "from dialpol import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, DIALPOL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "numpy"
