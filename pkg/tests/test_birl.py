import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dialpol import birl, corpus
from dialpol.birl import BirlConfig, Cooling
from dialpol.corpus import ExpertObservations
from dialpol.errors import ConfigError, ValidationError
from dialpol.mdp import Mdp

DATA = Path(__file__).parent / "data"


def chain_skeleton(n=3, gamma=0.9):
    """Line world: action 0 stays, 1 moves right, 2 moves left (clamped)."""
    T = np.zeros((n, 3, n))
    for s in range(n):
        T[s, 0, s] = 1.0
        T[s, 1, min(s + 1, n - 1)] = 1.0
        T[s, 2, max(s - 1, 0)] = 1.0
    return Mdp.from_dense(T, None, gamma)


def obs_of(pairs, n):
    return ExpertObservations(list(pairs), [], n)


def dense_pi_q(T, R, gamma):
    """Independent solver: policy iteration with dense linear solves."""
    S, A, _ = T.shape
    pi = np.zeros(S, dtype=int)
    while True:
        P = T[np.arange(S), pi]
        v = np.linalg.solve(np.eye(S) - gamma * P, R)
        q = R[:, None] + gamma * T @ v
        new = q.argmax(axis=1)
        better = q[np.arange(S), new] > q[np.arange(S), pi] + 1e-12
        if not better.any():
            return q
        pi = np.where(better, new, pi)


@pytest.mark.parametrize("likelihood", ["unnormalized", "softmax"])
def test_log_posterior_matches_duplicate_oracle(likelihood):
    skel = chain_skeleton()
    obs = obs_of([(0, 1), (1, 1), (2, 0), (2, 0)], 3)
    cfg = BirlConfig(alpha_conf=2.0, likelihood=likelihood)
    rng = np.random.default_rng(0)
    T = skel.transition_matrix()
    for _ in range(10):
        r = rng.uniform(-1, 1, 3)
        q = dense_pi_q(T, r, 0.9)
        expect = 2.0 * sum(q[s, a] for s, a in obs.pairs)
        if likelihood == "softmax":
            expect -= sum(np.log(np.sum(np.exp(2.0 * q[s]))) for s, _ in obs.pairs)
        assert birl.log_posterior(r, obs, skel, cfg) == pytest.approx(expect, abs=1e-7)


def test_flat_posterior_when_alpha_zero():
    skel = chain_skeleton()
    obs = obs_of([(0, 1)], 3)
    cfg = BirlConfig(alpha_conf=0.0)
    vals = {birl.log_posterior(r, obs, skel, cfg) for r in np.random.default_rng(1).uniform(-1, 1, (5, 3))}
    assert vals == {0.0}
    assert birl.log_posterior([2.0, 0, 0], obs, skel, cfg) == -math.inf


def test_acceptance_formulas():
    # log-posterior gap of 2 at alpha = 1: moving downhill is accepted with e^-2
    assert birl.annealed_acceptance(math.exp(1 - 3), 1.0) == pytest.approx(0.1353352832, abs=1e-10)
    assert birl.annealed_acceptance(0.5, 2.0) == pytest.approx(0.70711, abs=1e-5)
    assert birl.annealed_acceptance(3.0, 0.5) == 1.0
    assert Cooling().temperature(0) == 5.0
    assert Cooling().temperature(100) == 2.5


def test_log_posterior_gap_gives_ratio():
    # gamma = 0 so Q*(s, a) = R(s); sum over one observation at state 0
    skel = chain_skeleton(gamma=0.0)
    obs = obs_of([(0, 0)], 3)
    cfg = BirlConfig(alpha_conf=1.0, likelihood="unnormalized", r_max=3.0)
    hi = birl.log_posterior([3.0, 0, 0], obs, skel, cfg)
    lo = birl.log_posterior([1.0, 0, 0], obs, skel, cfg)
    assert hi - lo == pytest.approx(2.0, abs=1e-12)
    assert min(1.0, math.exp(lo - hi)) == pytest.approx(math.exp(-2), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-0.4, 0.4))
def test_translation_leaves_ratios_unchanged(seed, shift):
    skel = chain_skeleton(gamma=0.0)
    obs = obs_of([(0, 1), (1, 0), (2, 2)], 3)
    cfg = BirlConfig(alpha_conf=3.0, likelihood="unnormalized")
    r1, r2 = np.random.default_rng(seed).uniform(-0.5, 0.5, (2, 3))
    lp = lambda r: birl.log_posterior(r, obs, skel, cfg)
    assert lp(r1 + shift) - lp(r2 + shift) == pytest.approx(lp(r1) - lp(r2), abs=1e-9)


def _flat(iterations, burn_in, delta=0.5, n=2):
    skel = chain_skeleton(n)
    return skel, obs_of([(0, 0)], n), BirlConfig(alpha_conf=0.0, delta=delta,
                                                 iterations=iterations, burn_in=burn_in)


def test_flat_chain_accepts_everything_and_stays_on_grid():
    skel, obs, cfg = _flat(3000, 100, delta=0.3, n=3)
    est = birl.policy_walk(skel, obs, cfg, seed=4, record_chain=True)
    assert est.acceptance_rate == 1.0
    assert est.n_out_of_bounds > 0
    assert est.n_samples == 2900
    k = est.mean_reward * est.n_samples / cfg.delta
    np.testing.assert_allclose(k, np.round(k), atol=1e-6)
    assert sum(ok for _, _, ok, _ in est.chain) == cfg.iterations - est.n_out_of_bounds
    assert np.all(np.abs(est.mean_reward) <= cfg.r_max)


def _replay_flat(cfg, n, seed):
    """Oracle: reconstruct the flat-posterior path from the documented draw order."""
    rng = np.random.default_rng(seed)
    k = np.zeros(n, dtype=int)
    path = []
    for _ in range(cfg.iterations):
        j = rng.integers(n)
        step = 1 if rng.integers(2) else -1
        rng.random()
        if abs((k[j] + step) * cfg.delta) <= cfg.r_max + 1e-12:
            k[j] += step
        path.append(k * cfg.delta)
    return np.array(path)[cfg.burn_in:]


def test_flat_chain_mean_within_three_standard_errors():
    skel, obs, cfg = _flat(40_000, 1000, delta=0.25)
    est = birl.policy_walk(skel, obs, cfg, seed=11)
    path = _replay_flat(cfg, 2, 11)
    np.testing.assert_allclose(path.mean(axis=0), est.mean_reward, atol=1e-12)
    # batch-means standard error handles the autocorrelation
    batches = path[: len(path) // 50 * 50].reshape(50, -1, 2).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / np.sqrt(50)
    assert np.all(np.abs(est.mean_reward) <= 3 * se)


def test_flat_chain_is_uniform_over_grid():
    # independent short chains; the last state of each is one draw
    skel, obs, cfg = _flat(120, 119)
    finals = [tuple(np.round(birl.policy_walk(skel, obs, cfg, seed).mean_reward / 0.5).astype(int))
              for seed in range(2000)]
    cells = {(a, b): 0 for a in range(-2, 3) for b in range(-2, 3)}
    for f in finals:
        cells[f] += 1
    p = stats.chisquare(list(cells.values())).pvalue
    assert p > 0.01


def test_mbirl_at_unit_temperature_equals_policy_walk():
    prob = birl.synthetic_problem(3, n_states=8, n_obs=40)
    cfg = BirlConfig(iterations=400, burn_in=100, cooling=Cooling(1.0, 0.0))
    a = birl.policy_walk(prob.skeleton, prob.obs, cfg, 9, record_chain=True)
    b = birl.mbirl(prob.skeleton, prob.obs, cfg, 9, relevant=range(8), record_chain=True)
    assert a.chain == b.chain
    np.testing.assert_array_equal(a.mean_reward, b.mean_reward)
    assert a.acceptance_rate == b.acceptance_rate


def test_mbirl_leaves_irrelevant_states_untouched():
    prob = birl.synthetic_problem(2, n_states=8, n_obs=40)
    cfg = BirlConfig(iterations=300, burn_in=50)
    est = birl.mbirl(prob.skeleton, prob.obs, cfg, 0, relevant=[1, 4])
    mask = np.ones(8, dtype=bool)
    mask[[1, 4]] = False
    assert np.all(est.mean_reward[mask] == 0.0)
    with pytest.raises(ConfigError):
        birl.mbirl(prob.skeleton, prob.obs, cfg, 0, relevant=[])


def brute_relevance(features, observed, bandwidth, threshold):
    out = set()
    for s, f in enumerate(features):
        best = 0.0
        for o in observed:
            d = sum(int(x != y) for x, y in zip(f, features[o]))
            best = max(best, math.exp(-d * d / (2 * bandwidth ** 2)))
        if best >= threshold:
            out.add(s)
    return out


def test_relevance_set_matches_exhaustive_scan():
    (log,) = corpus.read_logs(DATA / "annotated_log.jsonl")
    space = corpus.StateSpace(log.n_goals, log.has_ask_task)
    obs = corpus.extract_observations(log, space)
    feats = space.features()
    observed = sorted(set(obs.states().tolist()))
    for bw, th in [(1.0, 0.5), (0.5, 0.1), (2.0, 0.9)]:
        assert birl.relevance_set(obs, bw, th, feats) == brute_relevance(feats, observed, bw, th)
    assert birl.relevance_set(obs, 1.0, 1e-300, feats) == set(range(space.size))
    assert birl.relevance_set(obs, 1e-3, 1.0, feats) == set(observed)


def test_baselines():
    obs = obs_of([(1, 0)] * 3 + [(2, 0)], 5)
    np.testing.assert_allclose(birl.locally_optimal_reward(obs, 5), [0, 0.75, 0.25, 0, 0])
    np.testing.assert_allclose(birl.locally_optimal_reward(obs_of([(3, 1)], 5), 5), np.eye(5)[3])
    r = birl.random_reward(10_000, 1.0, 5)
    np.testing.assert_array_equal(r, birl.random_reward(10_000, 1.0, 5))
    assert np.all(np.abs(r) <= 1.0)
    assert abs(r.mean()) <= 3 * r.std() / 100
    with pytest.raises(ValidationError):
        birl.locally_optimal_reward(obs_of([], 5), 5)


def test_locally_optimal_matches_count_on_fixture():
    logs = [l for l in corpus.read_logs(DATA / "dialogues.jsonl") if l.id == "guard"]
    space, obs, _ = corpus.build_skeleton(logs)
    counts = np.zeros(space.size)
    for s, _ in obs.pairs:
        counts[s] += 1
    np.testing.assert_allclose(birl.locally_optimal_reward(obs, space.size), counts / counts.sum())


def test_policy_loss():
    obs = obs_of([(s % 5, 0) for s in range(10)], 5)
    assert birl.policy_loss(np.zeros(5, dtype=int), obs) == 0.0
    assert birl.policy_loss(np.ones(5, dtype=int), obs) == 1.0
    assert birl.policy_loss(np.array([1, 0, 0, 0, 0]), obs) == pytest.approx(0.2)
    with pytest.raises(ValidationError):
        birl.policy_loss(np.zeros(5), obs_of([], 5))


def test_config_validation():
    with pytest.raises(ConfigError):
        BirlConfig(iterations=10, burn_in=10).validate()
    with pytest.raises(ConfigError):
        BirlConfig.from_dict({"relevance": {"bandwidth": 0}})
    with pytest.raises(ConfigError):
        BirlConfig.from_dict({"typo": 1})
    cfg = BirlConfig.from_dict({"cooling": {"t0": 2.0}, "iterations": 50, "burn_in": 5})
    assert BirlConfig.from_dict(cfg.to_dict()) == cfg


def test_posterior_json_and_determinism():
    prob = birl.synthetic_problem(0, n_states=6, n_obs=30)
    cfg = BirlConfig(iterations=200, burn_in=20)
    a = birl.mbirl(prob.skeleton, prob.obs, cfg, 7)
    b = birl.mbirl(prob.skeleton, prob.obs, cfg, 7)
    np.testing.assert_array_equal(a.mean_reward, b.mean_reward)
    d = a.to_dict()
    assert set(d) == {"mean_reward", "acceptance_rate", "n_samples", "elapsed_ms"}
    assert 0.0 <= d["acceptance_rate"] <= 1.0 and d["n_samples"] == 180
