"""Bayesian inverse reinforcement learning over grid-quantised reward vectors.

``policy_walk`` is the plain Metropolis chain: each step moves one reward
coordinate by ``+-delta`` and accepts with the posterior ratio.  ``mbirl``
restricts the moves to states that resemble the observed ones and sharpens
the acceptance ratio with a decreasing temperature.  Both share one chain
implementation and consume random numbers identically, so ``mbirl`` at
temperature 1 over all states reproduces ``policy_walk`` draw for draw.

Every posterior evaluation solves the MDP skeleton for the proposed reward
with policy iteration, warm-started from the previous solution.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .mdp import Mdp, solve_pairs

PRIORS = ("uniform_box", "gaussian")
LIKELIHOODS = ("unnormalized", "softmax")


@dataclass
class Cooling:
    t0: float = 5.0
    rate: float = 0.01

    def temperature(self, i):
        return self.t0 / (1.0 + i * self.rate)


@dataclass
class Relevance:
    bandwidth: float = 1.0
    threshold: float = 0.5


@dataclass
class BirlConfig:
    alpha_conf: float = 5.0
    delta: float = 0.05
    iterations: int = 5000
    burn_in: int = 1000
    prior: str = "uniform_box"
    prior_mean: float = 0.0
    prior_sd: float = 0.5
    r_max: float = 1.0
    likelihood: str = "softmax"
    solver_tol: float = 1e-8
    cooling: Cooling | None = None
    relevance: Relevance | None = None

    def validate(self):
        if self.alpha_conf < 0:
            raise ConfigError("alpha_conf must be non-negative")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ConfigError(f"iterations ({self.iterations}) must exceed burn_in ({self.burn_in})")
        if self.prior not in PRIORS:
            raise ConfigError(f"prior must be one of {PRIORS}")
        if self.prior == "gaussian" and self.prior_sd <= 0:
            raise ConfigError("prior_sd must be positive")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"likelihood must be one of {LIKELIHOODS}")
        if self.r_max <= 0:
            raise ConfigError("r_max must be positive")
        if self.cooling is not None and (self.cooling.t0 <= 0 or self.cooling.rate < 0):
            raise ConfigError("cooling needs t0 > 0 and rate >= 0")
        if self.relevance is not None:
            if self.relevance.bandwidth <= 0:
                raise ConfigError("relevance bandwidth must be positive")
            if not 0 < self.relevance.threshold <= 1:
                raise ConfigError("relevance threshold must lie in (0, 1]")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cooling = d.pop("cooling", None)
        relevance = d.pop("relevance", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown BIRL config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if cooling is not None:
            cfg.cooling = Cooling(**cooling)
        if relevance is not None:
            cfg.relevance = Relevance(**relevance)
        return cfg.validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class PosteriorEstimate:
    mean_reward: np.ndarray
    acceptance_rate: float
    n_samples: int
    elapsed_ms: int
    n_out_of_bounds: int = 0
    chain: list | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "mean_reward": [float(x) for x in self.mean_reward],
            "acceptance_rate": float(self.acceptance_rate),
            "n_samples": int(self.n_samples),
            "elapsed_ms": int(self.elapsed_ms),
        }


class _Posterior:
    """Unnormalised log posterior with cached observation indices."""

    def __init__(self, skeleton: Mdp, obs, cfg: BirlConfig):
        if obs.n_pairs == 0:
            raise ValidationError("no expert observations")
        self.mdp = skeleton
        self.cfg = cfg
        self.obs_pairs = np.array([skeleton.pair_index(s, a) for s, a in obs.pairs], dtype=np.int64)
        self.obs_states = obs.states()

    def log_prior(self, r):
        cfg = self.cfg
        if cfg.prior == "uniform_box":
            return 0.0 if np.all(np.abs(r) <= cfg.r_max + 1e-12) else -np.inf
        z = (r - cfg.prior_mean) / cfg.prior_sd
        return float(-0.5 * np.dot(z, z))

    def log_likelihood(self, qv):
        cfg = self.cfg
        total = cfg.alpha_conf * float(np.sum(qv[self.obs_pairs]))
        if cfg.likelihood == "softmax":
            scaled = cfg.alpha_conf * qv
            ptr = self.mdp.state_ptr
            top = np.maximum.reduceat(scaled, ptr[:-1])
            counts = np.diff(ptr)
            lse = top + np.log(np.add.reduceat(np.exp(scaled - np.repeat(top, counts)), ptr[:-1]))
            total -= float(np.sum(lse[self.obs_states]))
        return total

    def __call__(self, r, warm=None):
        """Return ``(log posterior, solver state)``; solver state is reused as a warm start."""
        lp = self.log_prior(r)
        if self.cfg.alpha_conf == 0.0 or not np.isfinite(lp):
            return lp, warm
        init_pairs, init_v = (None, None) if warm is None else warm
        pol, v, qv = solve_pairs(self.mdp, r, self.cfg.solver_tol, init_pairs, init_v)
        return lp + self.log_likelihood(qv), (pol, v)


def log_posterior(r, obs, skeleton, cfg: BirlConfig):
    """``log Pr(R) + alpha * sum_i Q*(s_i, a_i; R)``, up to the evidence constant.

    With ``cfg.likelihood == "softmax"`` each observed action is additionally
    normalised over the actions of its state.
    """
    return _Posterior(skeleton, obs, cfg.validate())(np.asarray(r, dtype=np.float64))[0]


def _run_chain(skeleton, obs, cfg, rng, coords, temperature, record_chain=False, r0=None):
    cfg.validate()
    start = time.perf_counter()
    post = _Posterior(skeleton, obs, cfg)
    n = skeleton.n_states
    r0 = np.zeros(n) if r0 is None else np.asarray(r0, dtype=np.float64).copy()
    grid = np.zeros(n, dtype=np.int64)
    r = r0.copy()
    lp, warm = post(r)

    coords = np.asarray(coords, dtype=np.int64)
    total = np.zeros(n)
    n_samples = accepted = oob = 0
    chain = [] if record_chain else None
    for i in range(cfg.iterations):
        j = coords[rng.integers(len(coords))]
        step = 1 if rng.integers(2) else -1
        u = rng.random()
        cand = r0[j] + (grid[j] + step) * cfg.delta
        ok = False
        if abs(cand) > cfg.r_max + 1e-12:
            oob += 1
        else:
            r_new = r.copy()
            r_new[j] = cand
            lp_new, warm_new = post(r_new, warm)
            log_ratio = (lp_new - lp) / temperature(i)
            if log_ratio >= 0.0 or u < np.exp(log_ratio):
                ok = True
                grid[j] += step
                r, lp, warm = r_new, lp_new, warm_new
                accepted += 1
        if chain is not None:
            chain.append((i, int(j), ok, float(lp)))
        if i >= cfg.burn_in:
            total += r
            n_samples += 1

    proposed = cfg.iterations - oob
    return PosteriorEstimate(
        mean_reward=total / n_samples,
        acceptance_rate=accepted / proposed if proposed else 0.0,
        n_samples=n_samples,
        elapsed_ms=int(round((time.perf_counter() - start) * 1000)),
        n_out_of_bounds=oob,
        chain=chain,
    )


def policy_walk(skeleton, obs, cfg: BirlConfig, seed, record_chain=False):
    """PolicyWalk MCMC; returns the post-burn-in mean reward.

    Proposals leaving ``[-r_max, r_max]`` are rejected and excluded from the
    acceptance rate, so a flat posterior accepts every counted proposal.
    """
    rng = np.random.default_rng(seed)
    return _run_chain(skeleton, obs, cfg, rng, np.arange(skeleton.n_states),
                      lambda i: 1.0, record_chain)


def mbirl(skeleton, obs, cfg: BirlConfig, seed, features=None, relevant=None,
          record_chain=False):
    """Annealed PolicyWalk restricted to the relevance set.

    ``relevant`` overrides the kernel-based set; otherwise it is computed from
    ``features`` (one row of discrete variables per state, default the state
    id) with ``cfg.relevance``.  Missing cooling/relevance settings take the
    defaults of :class:`Cooling` and :class:`Relevance`.
    """
    cooling = cfg.cooling or Cooling()
    if relevant is None:
        rel = cfg.relevance or Relevance()
        relevant = relevance_set(obs, rel.bandwidth, rel.threshold,
                                 features if features is not None else skeleton.n_states)
    relevant = sorted(int(s) for s in relevant)
    if not relevant:
        raise ConfigError("relevance set is empty")
    rng = np.random.default_rng(seed)
    return _run_chain(skeleton, obs, cfg, rng, relevant, cooling.temperature, record_chain)


def annealed_acceptance(ratio, temperature):
    """``min(1, ratio ** (1 / T))``."""
    return min(1.0, float(ratio) ** (1.0 / temperature))


def relevance_set(obs, bandwidth, threshold, features):
    """States whose Gaussian kernel on Hamming distance to some observed state reaches ``threshold``.

    ``features`` is an ``(n_states, n_vars)`` array of discrete variables, or
    an integer ``n`` meaning one opaque variable per state (distance 0 or 1).
    """
    if bandwidth <= 0 or not 0 < threshold <= 1:
        raise ConfigError("need bandwidth > 0 and threshold in (0, 1]")
    if np.isscalar(features):
        features = np.arange(int(features))[:, None]
    features = np.asarray(features)
    observed = np.unique(obs.states())
    if observed.size == 0:
        return set()
    # Hamming distance from every state to every observed state
    dist = (features[:, None, :] != features[None, observed, :]).sum(axis=2)
    nearest = dist.min(axis=1).astype(np.float64)
    with np.errstate(over="ignore", under="ignore"):
        k = np.exp(-nearest ** 2 / (2.0 * bandwidth ** 2))
    return set(np.flatnonzero(k >= threshold).tolist())


def locally_optimal_reward(obs, n_states):
    """Empirical state-visit frequencies ``n_k / N``."""
    if obs.n_pairs == 0:
        raise ValidationError("no expert observations")
    counts = np.bincount(obs.states(), minlength=n_states).astype(np.float64)
    return counts / obs.n_pairs


def random_reward(n_states, r_max, seed):
    return np.random.default_rng(seed).uniform(-r_max, r_max, size=n_states)


def policy_loss(pi, obs):
    """Fraction of expert pairs whose action differs from ``pi``."""
    if obs.n_pairs == 0:
        raise ValidationError("no expert observations")
    pi = np.asarray(pi)
    return float(np.mean(pi[obs.states()] != obs.actions()))


def induced_policy(skeleton: Mdp, reward, tol=1e-9):
    pol, _, _ = solve_pairs(skeleton, np.asarray(reward, dtype=np.float64), tol)
    return skeleton.pair_action[pol]


@dataclass
class SyntheticProblem:
    skeleton: Mdp
    true_reward: np.ndarray
    expert_policy: np.ndarray
    obs: object


def synthetic_problem(seed, n_states=20, n_actions=4, n_obs=200, gamma=0.9,
                      episode_len=10, branching=2, r_max=1.0):
    """Random sparse skeleton, a known reward and demonstrations of its optimal policy."""
    from .corpus import ExpertObservations

    rng = np.random.default_rng(seed)
    entries = []
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            probs = rng.dirichlet(np.ones(branching))
            entries.extend((s, a, int(s2), float(p)) for s2, p in zip(succ, probs))
    skeleton = Mdp(n_states, [range(n_actions)] * n_states, entries, None, gamma)
    true_reward = rng.uniform(-r_max, r_max, size=n_states)
    expert = induced_policy(skeleton, true_reward)

    pairs, steps = [], []
    T = skeleton.transition_matrix()
    while len(pairs) < n_obs:
        s = int(rng.integers(n_states))
        for _ in range(episode_len):
            if len(pairs) >= n_obs:
                break
            a = int(expert[s])
            s2 = int(rng.choice(n_states, p=T[s, a]))
            pairs.append((s, a))
            steps.append((s, a, s2))
            s = s2
    obs = ExpertObservations(pairs, steps, n_states)
    return SyntheticProblem(skeleton, true_reward, expert, obs)
