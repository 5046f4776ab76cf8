"""Log-normal mixture distribution over positive reals.

The density of tau given weights w, log-scale means mu and stdevs sigma is

    p(tau) = sum_k w_k / (tau * sigma_k * sqrt(2 pi)) * exp(-(ln tau - mu_k)^2 / (2 sigma_k^2))

and the parameters are affine maps of a context vector c:

    w = softmax(V_w c + b_w),  sigma = exp(V_s c + b_s),  mu = V_mu c + b_mu.

Everything here works in log space. The batch functions (``*_rows``) are the
training path; the single-event functions wrap them for clarity and testing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, ndtr

from .errors import DimensionMismatch, EmptyBatch, NonPositiveTau

LOG_SIGMA_MIN = math.log(1e-6)
LOG_SIGMA_MAX = math.log(1e6)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "stdevs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.weights.shape == self.means.shape == self.stdevs.shape):
            raise DimensionMismatch("weights, means and stdevs must have the same length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(self.stdevs < 0):
            raise ValueError("mixture stdevs must be non-negative")

    @property
    def K(self):
        return len(self.weights)


@dataclass
class MixtureHead:
    """Affine maps from a C-dimensional context to K mixture parameters."""

    V_w: np.ndarray
    b_w: np.ndarray
    V_s: np.ndarray
    b_s: np.ndarray
    V_mu: np.ndarray
    b_mu: np.ndarray

    @property
    def K(self):
        return self.V_w.shape[0]

    @property
    def C(self):
        return self.V_w.shape[1]

    @classmethod
    def zeros(cls, K, C):
        return cls(np.zeros((K, C)), np.zeros(K), np.zeros((K, C)), np.zeros(K),
                   np.zeros((K, C)), np.zeros(K))

    @classmethod
    def random(cls, K, C, rng, scale=0.5):
        return cls(*(rng.normal(0, scale, shape) for shape in
                     ((K, C), K, (K, C), K, (K, C), K)))

    def as_dict(self):
        return {"V_w": self.V_w, "b_w": self.b_w, "V_s": self.V_s, "b_s": self.b_s,
                "V_mu": self.V_mu, "b_mu": self.b_mu}


# -- batch path ---------------------------------------------------------------

def params_rows(C, V_w, b_w, V_s, b_s, V_mu, b_mu):
    """Mixture parameters for each row of the context matrix ``C`` (N x C).

    Returns (log_w, log_s, mu, clipped) where ``clipped`` flags entries whose
    log-stdev hit the clamp (their gradient is zero).
    """
    log_w = log_softmax(C @ V_w.T + b_w, axis=1)
    raw_s = C @ V_s.T + b_s
    log_s = np.clip(raw_s, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    mu = C @ V_mu.T + b_mu
    return log_w, log_s, mu, raw_s != log_s


def log_density_rows(log_tau, log_w, log_s, mu):
    """Per-row log density and component responsibilities.

    ``log_tau`` has shape (N,), the parameter arrays (N, K).
    """
    z = (log_tau[:, None] - mu) * np.exp(-log_s)
    comp = log_w - log_s - HALF_LOG_2PI - 0.5 * z * z
    lse = logsumexp(comp, axis=1)
    resp = np.exp(comp - lse[:, None])
    return lse - log_tau, resp, z


def backward_rows(g, resp, z, log_w, log_s, clipped):
    """Gradients of ``sum_i g_i * (-log p_i)`` w.r.t. the affine outputs.

    Returns (d_aw, d_as, d_mu), each (N, K).
    """
    w = np.exp(log_w)
    g = g[:, None]
    d_aw = g * (w - resp)
    d_as = g * resp * (1.0 - z * z)
    d_as[clipped] = 0.0
    d_mu = -g * resp * z * np.exp(-log_s)
    return d_aw, d_as, d_mu


def sample_rows(log_w, log_s, mu, rng):
    """Draw one log-value per row: component, then a scaled normal deviate."""
    n, K = log_w.shape
    cdf = np.cumsum(np.exp(log_w), axis=1)
    u = rng.random(n) * cdf[:, -1]
    k = np.minimum((cdf < u[:, None]).sum(axis=1), K - 1)
    eps = rng.standard_normal(n)
    rows = np.arange(n)
    return np.exp(log_s[rows, k]) * eps + mu[rows, k], k


# -- single-event API -------------------------------------------------------

def mixture_params(head: MixtureHead, c) -> MixtureParams:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] != head.C:
        raise DimensionMismatch(f"context has length {c.shape}, head expects {head.C}")
    log_w, log_s, mu, _ = params_rows(c[None, :], head.V_w, head.b_w, head.V_s, head.b_s,
                                      head.V_mu, head.b_mu)
    w = np.exp(log_w[0])
    return MixtureParams(w / w.sum(), mu[0], np.exp(log_s[0]))


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise NonPositiveTau(f"tau must be positive, got {tau}")
    return tau


def log_density(tau, p: MixtureParams) -> float:
    """ln p(tau) under the mixture, via log-sum-exp over components."""
    tau = float(_check_tau(tau))
    with np.errstate(divide="ignore"):
        log_w = np.log(p.weights)
        log_s = np.log(p.stdevs)
    lp, _, _ = log_density_rows(np.array([math.log(tau)]), log_w[None, :], log_s[None, :],
                                p.means[None, :])
    return float(lp[0])


def nll(taus, params) -> float:
    """Mean negative log density over a batch of (tau, params) pairs."""
    taus = list(np.atleast_1d(np.asarray(taus, dtype=float)))
    params = list(params)
    if not taus:
        raise EmptyBatch("nll of an empty batch")
    if len(taus) != len(params):
        raise ValueError(f"{len(taus)} taus but {len(params)} parameter sets")
    _check_tau(taus)
    log_tau = np.log(taus)
    log_w = np.log(np.stack([p.weights for p in params]))
    log_s = np.log(np.stack([p.stdevs for p in params]))
    mu = np.stack([p.means for p in params])
    lp, _, _ = log_density_rows(log_tau, log_w, log_s, mu)
    return float(-lp.mean())


def sample(p: MixtureParams, rng) -> float:
    """One draw: z ~ Categorical(w), eps ~ N(0, 1), tau = exp(sigma_z eps + mu_z)."""
    k = int(np.searchsorted(np.cumsum(p.weights), rng.random() * p.weights.sum(), side="right"))
    k = min(k, p.K - 1)
    eps = rng.standard_normal()
    return math.exp(p.stdevs[k] * eps + p.means[k])


def grad_nll(head: MixtureHead, c, tau) -> dict:
    """Analytic gradient of -ln p(tau | mixture_params(head, c)).

    Keys are the head parameter names plus ``"c"``.
    """
    tau = float(_check_tau(tau))
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] != head.C:
        raise DimensionMismatch(f"context has length {c.shape}, head expects {head.C}")
    C = c[None, :]
    log_w, log_s, mu, clipped = params_rows(C, head.V_w, head.b_w, head.V_s, head.b_s,
                                            head.V_mu, head.b_mu)
    _, resp, z = log_density_rows(np.array([math.log(tau)]), log_w, log_s, mu)
    d_aw, d_as, d_mu = backward_rows(np.ones(1), resp, z, log_w, log_s, clipped)
    return {
        "V_w": d_aw.T @ C, "b_w": d_aw[0],
        "V_s": d_as.T @ C, "b_s": d_as[0],
        "V_mu": d_mu.T @ C, "b_mu": d_mu[0],
        "c": (d_aw @ head.V_w + d_as @ head.V_s + d_mu @ head.V_mu)[0],
    }


def log_cdf_space(x, p: MixtureParams):
    """CDF of ln tau evaluated at ``x`` (vectorised)."""
    x = np.asarray(x, dtype=float)[..., None]
    return (p.weights * ndtr((x - p.means) / p.stdevs)).sum(axis=-1)


def log_quantiles(p: MixtureParams, probs, iters=200):
    """Quantiles of ln tau by bisection on the mixture CDF."""
    probs = np.asarray(probs, dtype=float)
    lo = np.full(probs.shape, float(np.min(p.means - 40 * p.stdevs)))
    hi = np.full(probs.shape, float(np.max(p.means + 40 * p.stdevs)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = log_cdf_space(mid, p) < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < 1e-13 * (1 + np.abs(mid))):
            break
    return 0.5 * (lo + hi)
