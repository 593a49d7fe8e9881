"""Unsupervised risk minimisation for binary linear classifiers.

The classifier scores an input ``h`` with ``f_0 = W_0 . h`` and
``f_1 = W_1 . h``; everything below works on the margin ``m = f_1 - f_0``,
for which the hinge loss is ``(1 - m)_+`` when the true class is 1 and
``(1 + m)_+`` when it is 0.  Margins on unlabeled data are modelled as a
two-component Gaussian mixture with known class priors, fitted by EM, and
the expected hinge loss under that mixture has a closed form:

    E[(c - X)_+] = (c - mu) Phi((c - mu)/sigma) + sigma phi((c - mu)/sigma)

for ``X ~ N(mu, sigma^2)``.  ``tune_weights`` lowers this estimated risk by
coordinate descent with finite-difference gradients, refitting the mixture
after every perturbation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, ConvergenceError, DialpolError, ValidationError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
DEFAULT_PRIORS = (0.01, 0.99)


def _phi(z):
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI)


@dataclass
class LinearScorer:
    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        self.w0 = np.array(self.w0, dtype=np.float64)
        self.w1 = np.array(self.w1, dtype=np.float64)
        if self.w0.shape != self.w1.shape or self.w0.ndim != 1:
            raise ValidationError("class weight vectors must be 1-D with equal length")
        if not (np.all(np.isfinite(self.w0)) and np.all(np.isfinite(self.w1))):
            raise ValidationError("weights must be finite")

    @property
    def dim(self):
        return self.w0.shape[0]

    def flat(self):
        return np.concatenate([self.w0, self.w1])

    @classmethod
    def from_flat(cls, w):
        n = len(w) // 2
        return cls(w[:n], w[n:])

    def to_dict(self):
        return {"w0": self.w0.tolist(), "w1": self.w1.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["w0"], d["w1"])
        except (KeyError, TypeError):
            raise ValidationError("scorer JSON needs 'w0' and 'w1'") from None


def margin(scorer: LinearScorer, h):
    """``W_1 . h - W_0 . h`` for one input or a batch (rows)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != scorer.dim:
        raise ValidationError(f"feature dimension {h.shape[-1]} != weight dimension {scorer.dim}")
    return h @ scorer.w1 - h @ scorer.w0


def hinge_loss(y, alpha0, alpha1):
    if y not in (0, 1):
        raise ValidationError("y must be 0 or 1")
    right, wrong = (alpha1, alpha0) if y == 1 else (alpha0, alpha1)
    return max(0.0, 1.0 + wrong - right)


@dataclass
class EmConfig:
    max_iter: int = 500
    tol: float = 1e-9
    sigma_floor: float = 1e-3


@dataclass
class ScoreGmm:
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    p0: float
    p1: float
    log_likelihood: list = field(default_factory=list, repr=False)
    degenerate: bool = False

    def params(self):
        return self.mu0, self.sigma0, self.mu1, self.sigma1


def _check_priors(priors):
    p0, p1 = (float(p) for p in priors)
    if p0 <= 0 or p1 <= 0 or abs(p0 + p1 - 1.0) > 1e-9:
        raise ConfigError(f"priors must be positive and sum to 1, got {priors}")
    return p0, p1


def _mixture_loglik(x, p, mu, sd):
    z = (x[:, None] - mu) / sd
    logs = np.log(p) - np.log(sd) - _LOG_SQRT_2PI - 0.5 * z * z
    top = logs.max(axis=1, keepdims=True)
    ll_i = top[:, 0] + np.log(np.exp(logs - top).sum(axis=1))
    return logs - ll_i[:, None], float(ll_i.sum())


def _em(x, p, mu, sd, cfg):
    hist = []
    log_resp, ll = _mixture_loglik(x, p, mu, sd)
    hist.append(ll)
    for _ in range(cfg.max_iter):
        resp = np.exp(log_resp)
        mass = resp.sum(axis=0)
        new_mu, new_sd = mu.copy(), sd.copy()
        for k in range(2):
            if mass[k] > 1e-12:
                new_mu[k] = resp[:, k] @ x / mass[k]
                var = resp[:, k] @ (x - new_mu[k]) ** 2 / mass[k]
                new_sd[k] = max(np.sqrt(var), cfg.sigma_floor)
        mu, sd = new_mu, new_sd
        log_resp, ll = _mixture_loglik(x, p, mu, sd)
        gain = ll - hist[-1]
        hist.append(ll)
        if gain < cfg.tol * max(1.0, abs(ll)):
            break
    return mu, sd, hist


def _split_init(x, p0, floor):
    xs = np.sort(x)
    k = min(max(1, int(round(p0 * len(xs)))), len(xs) - 1)
    lo, hi = xs[:k], xs[k:]
    mu = np.array([lo.mean(), hi.mean()])
    spread = max(x.std(), floor)
    sd = np.array([max(lo.std(), 0.1 * spread, floor), max(hi.std(), 0.1 * spread, floor)])
    return mu, sd


def fit_score_gmm(margins, priors=DEFAULT_PRIORS, em: EmConfig | None = None) -> ScoreGmm:
    """Fit means and deviations of a two-Gaussian mixture with fixed class priors.

    Component 0 (class 0) is the lower-mean one; ``log_likelihood`` traces
    the EM run that produced the returned parameters.  Identical inputs yield
    both deviations at ``sigma_floor`` and ``degenerate=True``.
    """
    cfg = em or EmConfig()
    x = np.asarray(margins, dtype=np.float64).ravel()
    if x.size < 2 or not np.all(np.isfinite(x)):
        raise ValidationError("need at least two finite margins")
    p = np.array(_check_priors(priors))
    if np.ptp(x) == 0.0:
        warnings.warn("all margins identical; mixture collapsed to sigma_floor", RuntimeWarning)
        m = float(x[0])
        return ScoreGmm(m, cfg.sigma_floor, m, cfg.sigma_floor, p[0], p[1], [], True)

    mu, sd = _split_init(x, p[0], cfg.sigma_floor)
    mu, sd, hist = _em(x, p, mu, sd, cfg)
    if mu[0] > mu[1]:
        # labels came out reversed; restart from the mirrored solution
        mu, sd, hist = _em(x, p, mu[::-1].copy(), sd[::-1].copy(), cfg)
        if mu[0] > mu[1]:
            mu, sd = mu[::-1].copy(), sd[::-1].copy()
    if not np.all(np.isfinite(mu)):
        raise ConvergenceError("EM produced non-finite parameters", len(hist))
    return ScoreGmm(float(mu[0]), float(sd[0]), float(mu[1]), float(sd[1]),
                    float(p[0]), float(p[1]), hist, False)


def expected_positive_part(c, mu, sigma):
    """``E[(c - X)_+]`` for ``X ~ N(mu, sigma^2)``."""
    z = (c - mu) / sigma
    return (c - mu) * ndtr(z) + sigma * _phi(z)


def risk_from_params(mu0, sigma0, mu1, sigma1, p0, p1):
    if sigma0 <= 0 or sigma1 <= 0:
        raise ValidationError("standard deviations must be positive")
    # class 1 pays (1 - m)_+, class 0 pays (1 + m)_+ = (1 - (-m))_+
    return (p1 * expected_positive_part(1.0, mu1, sigma1)
            + p0 * expected_positive_part(1.0, -mu0, sigma0))


def estimate_risk(gmm: ScoreGmm) -> float:
    return float(risk_from_params(gmm.mu0, gmm.sigma0, gmm.mu1, gmm.sigma1, gmm.p0, gmm.p1))


def risk_param_gradient(mu0, sigma0, mu1, sigma1, p0, p1):
    """Partial derivatives of the closed-form risk w.r.t. ``(mu0, sigma0, mu1, sigma1)``."""
    z1 = (1.0 - mu1) / sigma1
    z0 = (1.0 + mu0) / sigma0
    return np.array([p0 * ndtr(z0), p0 * _phi(z0), -p1 * ndtr(z1), p1 * _phi(z1)])


def monte_carlo_risk(gmm: ScoreGmm, n, rng):
    """Sampling estimate of the risk and its standard error."""
    y = rng.random(n) < gmm.p1
    m = np.where(y, rng.normal(gmm.mu1, gmm.sigma1, n), rng.normal(gmm.mu0, gmm.sigma0, n))
    loss = np.where(y, np.maximum(0.0, 1.0 - m), np.maximum(0.0, 1.0 + m))
    return float(loss.mean()), float(loss.std(ddof=1) / np.sqrt(n))


def fixed_resp_risk(flat_w, H, resp, priors):
    """Risk when mixture parameters are the responsibility-weighted moments of the margins.

    With responsibilities held fixed this is a smooth function of the weights;
    :func:`fixed_resp_gradient` is its analytic gradient.
    """
    sc = LinearScorer.from_flat(flat_w)
    m = margin(sc, H)
    mass = resp.sum(axis=0)
    mu = resp.T @ m / mass
    sd = np.sqrt(np.einsum("ik,ik->k", resp, (m[:, None] - mu) ** 2) / mass)
    return float(risk_from_params(mu[0], sd[0], mu[1], sd[1], *priors))


def fixed_resp_gradient(flat_w, H, resp, priors):
    sc = LinearScorer.from_flat(flat_w)
    m = margin(sc, H)
    mass = resp.sum(axis=0)
    mu = resp.T @ m / mass
    dev = m[:, None] - mu
    sd = np.sqrt(np.einsum("ik,ik->k", resp, dev ** 2) / mass)
    d_mu0, d_sd0, d_mu1, d_sd1 = risk_param_gradient(mu[0], sd[0], mu[1], sd[1], *priors)
    # d m_i / d w1 = h_i, d m_i / d w0 = -h_i
    dmu = (resp / mass).T @ H                    # (2, n): d mu_k / d w1
    dsd = ((resp * dev) / (mass * sd)).T @ H     # (2, n): d sd_k / d w1
    g1 = d_mu0 * dmu[0] + d_sd0 * dsd[0] + d_mu1 * dmu[1] + d_sd1 * dsd[1]
    return np.concatenate([-g1, g1])


@dataclass
class RiskConfig:
    priors: tuple = DEFAULT_PRIORS
    delta: float = 0.2
    step_size: float | None = None  # default 0.1 * delta
    iterations: int = 100
    tol: float = 1e-7
    shuffle: bool = False
    em: EmConfig = field(default_factory=EmConfig)
    mc_samples: int = 1_000_000

    def validate(self):
        _check_priors(self.priors)
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        return self

    @property
    def step(self):
        return 0.1 * self.delta if self.step_size is None else self.step_size

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        em = d.pop("em", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown riskmin config keys: {sorted(unknown)}")
        if "priors" in d:
            d["priors"] = tuple(d["priors"])
        cfg = cls(**d)
        if em is not None:
            cfg.em = EmConfig(**em)
        return cfg.validate()


@dataclass
class TuningResult:
    scorer: LinearScorer
    initial_risk: float
    risk: float
    trace: list  # (iteration, coordinate, risk); coordinate -1 marks the start


def _risk_at(flat_w, H, cfg, coord):
    try:
        m = margin(LinearScorer.from_flat(flat_w), H)
        return estimate_risk(fit_score_gmm(m, cfg.priors, cfg.em))
    except DialpolError as exc:
        raise ConvergenceError(f"mixture fit failed at coordinate {coord}: {exc}",
                               getattr(exc, "iterations", 0)) from exc


def tune_weights(scorer: LinearScorer, features, cfg: RiskConfig | None = None, seed=0) -> TuningResult:
    """Coordinate descent on the estimated risk using finite differences.

    Each coordinate is perturbed by ``delta``, the mixture is refitted, the
    forward-difference slope is formed and a step of ``step * slope`` is
    taken downhill.  Steps that would raise the risk by more than ``tol``
    are rejected.  Sweeps stop when a full pass gains less than ``tol``.
    ``seed`` only matters with ``shuffle=True`` (random coordinate order).
    """
    cfg = (cfg or RiskConfig()).validate()
    H = np.asarray(features, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValidationError("need a non-empty 2-D feature matrix")
    rng = np.random.default_rng(seed)
    w = scorer.flat()
    risk = initial = _risk_at(w, H, cfg, -1)
    trace = [(0, -1, risk)]
    coords = np.arange(w.size)
    for it in range(1, cfg.iterations + 1):
        before = risk
        order = rng.permutation(coords) if cfg.shuffle else coords
        for j in order:
            probe = w.copy()
            probe[j] += cfg.delta
            slope = (_risk_at(probe, H, cfg, j) - risk) / cfg.delta
            cand = w.copy()
            cand[j] -= cfg.step * slope
            new = _risk_at(cand, H, cfg, j) if cand[j] != w[j] else risk
            if new <= risk + cfg.tol:
                w, risk = cand, new
            trace.append((it, int(j), risk))
        if before - risk < cfg.tol:
            break
    return TuningResult(LinearScorer.from_flat(w), initial, risk, trace)


def macro_f1(y_true, y_pred):
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    scores = []
    for cls in (False, True):
        tp = np.sum((y_pred == cls) & (y_true == cls))
        fp = np.sum((y_pred == cls) & (y_true != cls))
        fn = np.sum((y_pred != cls) & (y_true == cls))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def skewness(x):
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    s = d.std()
    return float(np.mean(d ** 3) / s ** 3) if s > 0 else 0.0
