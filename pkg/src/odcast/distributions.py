"""Probability heads for count forecasting.

The headline head is the zero-inflated negative binomial: a point mass
at zero mixed with an NB component,

    P(y=0) = pi + (1 - pi) * p^n
    P(y=k) = (1 - pi) * C(k+n-1, n-1) * (1-p)^k * p^n   for k > 0,

so pi is directly interpretable as the probability that a pair sees no
demand at all. NB, Gaussian and zero-truncated Gaussian heads share the
same interface and serve as ablation baselines.

Each head provides two faces:

* tape-side: ``link`` maps raw network channels to constrained
  parameters, ``nll`` builds the scalar training loss (mean negative
  log likelihood, impossible events floored at ``LOG_FLOOR``);
* array-side: ``log_prob``, ``mean``, ``median``, ``quantile`` and
  ``sample`` operate on plain float64 ndarrays for evaluation.

Discrete quantiles are found by scanning the cumulative pmf; the scan
stops early once the CDF passes 1 - 1e-12.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr as _ndtr
from scipy.special import ndtri as _ndtri

from . import autodiff as ad
from .errors import DomainError, NumericError, ShapeError
from .special import lgamma as _lgamma

__all__ = [
    "SOFTPLUS_EPS",
    "P_CLIP",
    "CDF_CAP",
    "nb_log_pmf",
    "zinb_log_pmf",
    "ZINBHead",
    "NBHead",
    "GaussianHead",
    "TruncNormalHead",
    "HEADS",
    "get_head",
]

# Offset keeping softplus-linked parameters strictly positive.
SOFTPLUS_EPS = 1e-6
# Success probabilities are clamped to [P_CLIP, 1 - P_CLIP].
P_CLIP = 1e-6
# Quantile scans stop once this much mass is accounted for.
CDF_CAP = 1.0 - 1e-12

_LOG_2PI = 1.8378770664093453


def _validate_counts(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise DomainError("counts must be non-negative integers")
    return y


def _validate_nb_params(n, p):
    n = np.asarray(n, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if n.size and not np.all(n > 0):
        raise DomainError("NB size parameter must be positive")
    if p.size and not (np.all(p > 0) and np.all(p < 1)):
        raise DomainError("NB success probability must lie in (0, 1)")
    return n, p


def nb_log_pmf(y, n, p) -> np.ndarray:
    """Negative binomial log pmf, elementwise.

    Parameterized so the pmf is C(y+n-1, n-1) (1-p)^y p^n with mean
    n (1-p) / p.
    """
    y = _validate_counts(y)
    n, p = _validate_nb_params(n, p)
    return (_lgamma(y + n) - _lgamma(y + 1.0) - _lgamma(n)
            + n * np.log(p) + y * np.log1p(-p))


def zinb_log_pmf(y, pi, n, p) -> np.ndarray:
    """Zero-inflated negative binomial log pmf, elementwise.

    pi may touch the endpoints [0, 1]; impossible events yield -inf
    (the tape-side loss floors them instead).
    """
    y = _validate_counts(y)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.size and not (np.all(pi >= 0) and np.all(pi <= 1)):
        raise DomainError("zero-inflation probability must lie in [0, 1]")
    n, p = _validate_nb_params(n, p)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_1mpi = np.log1p(-pi)
    nb = nb_log_pmf(y, n, p)
    zero_branch = np.logaddexp(log_pi, log_1mpi + n * np.log(p))
    pos_branch = log_1mpi + nb
    y, zero_branch, pos_branch = np.broadcast_arrays(y, zero_branch, pos_branch)
    return np.where(y == 0, zero_branch, pos_branch)


def _discrete_quantile(q: float, pi, n, p) -> np.ndarray:
    """Smallest y with CDF(y) >= q for the (zero-inflated) NB.

    pi = 0 recovers the plain NB. The NB pmf is advanced with the
    log-space recurrence log f(k) = log f(k-1) + log((n+k-1)/k) +
    log(1-p), which survives parameter regimes where f(0) underflows.
    """
    if not 0.0 < q < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    pi, n, p = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64)
                                     for v in (pi, n, p)))
    pi, n, p = pi.copy(), n.copy(), p.copy()
    log_nb = n * np.log(p)
    cdf = pi + (1.0 - pi) * np.exp(log_nb)
    result = np.zeros(cdf.shape, dtype=np.int64)
    done = (cdf >= q) | (cdf > CDF_CAP)
    log1mp = np.log1p(-p)
    k = 0
    while not np.all(done):
        k += 1
        if k > 1_000_000:
            raise NumericError("quantile scan exceeded 1e6 steps; "
                               "parameters imply an extreme tail")
        log_nb = log_nb + np.log(n + k - 1.0) - np.log(float(k)) + log1mp
        step = (1.0 - pi) * np.exp(log_nb)
        cdf = np.where(done, cdf, cdf + step)
        result = np.where(done, result, k)
        done |= (cdf >= q) | (cdf > CDF_CAP)
    return result


def _tape_logsumexp(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Elementwise log(e^a + e^b) on the tape.

    The max shift is treated as a constant; the identity holds for any
    shift, so values and gradients are exact.
    """
    m = ad.constant(np.maximum(a.data, b.data))
    return ad.add(m, ad.log(ad.add(ad.exp(ad.sub(a, m)), ad.exp(ad.sub(b, m)))))


def _check_blocks(blocks, expected: int, name: str):
    if len(blocks) != expected:
        raise ShapeError(f"{name} head expects {expected} channel blocks, "
                         f"got {len(blocks)}")


class ZINBHead:
    """Zero-inflated negative binomial head (parameters pi, n, p)."""

    name = "zinb"
    num_params = 3
    param_names = ("pi", "n", "p")
    discrete = True

    def link(self, blocks):
        """Map raw channels to (pi, n, p): sigmoid, softplus+eps,
        clamped sigmoid."""
        _check_blocks(blocks, 3, self.name)
        pi = ad.sigmoid(blocks[0])
        n = ad.add(ad.softplus(blocks[1]), SOFTPLUS_EPS)
        p = ad.clip(ad.sigmoid(blocks[2]), P_CLIP, 1.0 - P_CLIP)
        return pi, n, p

    def nll(self, y: np.ndarray, params, paper_approx: bool = False) -> ad.Tensor:
        """Mean negative log likelihood as a tape scalar.

        The default zero branch is the exact mixture mass
        log(pi + (1-pi) p^n) evaluated with a log-sum-exp shift. With
        ``paper_approx`` both branches follow the published closed
        form instead: the zero branch adds log pi and log((1-pi)p^n),
        and the positive branch weights y by log(1-pi) rather than
        log(1-p).
        """
        y = _validate_counts(y)
        pi, n, p = params
        zero_mask = ad.constant((y == 0).astype(np.float64))
        pos_mask = ad.constant((y != 0).astype(np.float64))
        yc = ad.constant(y)

        log_pi = ad.log_floored(pi)
        log_1mpi = ad.log_floored(ad.sub(1.0, pi))
        log_p = ad.log(p)
        log_1mp = ad.log(ad.sub(1.0, p))
        n_log_p = ad.mul(n, log_p)

        gamma_terms = ad.sub(ad.lgamma(ad.add(yc, n)), ad.lgamma(n))
        gamma_const = ad.constant(_lgamma(y + 1.0))
        nb_core = ad.add(ad.sub(gamma_terms, gamma_const), n_log_p)

        if paper_approx:
            ll_zero = ad.add(log_pi, ad.add(log_1mpi, n_log_p))
            ll_pos = ad.add(ad.add(log_1mpi, nb_core), ad.mul(yc, log_1mpi))
        else:
            ll_zero = _tape_logsumexp(log_pi, ad.add(log_1mpi, n_log_p))
            ll_pos = ad.add(ad.add(log_1mpi, nb_core), ad.mul(yc, log_1mp))

        ll = ad.add(ad.mul(zero_mask, ll_zero), ad.mul(pos_mask, ll_pos))
        return ad.mul(ad.mean_all(ll), -1.0)

    def log_prob(self, y, params):
        pi, n, p = params
        return zinb_log_pmf(y, pi, n, p)

    def mean(self, params):
        pi, n, p = params
        return (1.0 - np.asarray(pi)) * np.asarray(n) * (1.0 - np.asarray(p)) / np.asarray(p)

    def median(self, params):
        return self.quantile(0.5, params)

    def quantile(self, q, params):
        pi, n, p = params
        return _discrete_quantile(q, pi, n, p)

    def sample(self, params, rng: np.random.Generator):
        """Two-stage draw: Bernoulli(pi) gate, then a Gamma-Poisson
        mixture for the NB component."""
        pi, n, p = (np.asarray(v, dtype=np.float64) for v in params)
        pi, n, p = np.broadcast_arrays(pi, n, p)
        gate = rng.random(pi.shape) < pi
        lam = rng.gamma(shape=n, scale=(1.0 - p) / p)
        counts = rng.poisson(lam)
        return np.where(gate, 0, counts).astype(np.int64)


class NBHead:
    """Plain negative binomial head (parameters n, p)."""

    name = "nb"
    num_params = 2
    param_names = ("n", "p")
    discrete = True

    def link(self, blocks):
        _check_blocks(blocks, 2, self.name)
        n = ad.add(ad.softplus(blocks[0]), SOFTPLUS_EPS)
        p = ad.clip(ad.sigmoid(blocks[1]), P_CLIP, 1.0 - P_CLIP)
        return n, p

    def nll(self, y, params, paper_approx: bool = False) -> ad.Tensor:
        y = _validate_counts(y)
        n, p = params
        yc = ad.constant(y)
        gamma_terms = ad.sub(ad.lgamma(ad.add(yc, n)), ad.lgamma(n))
        gamma_const = ad.constant(_lgamma(y + 1.0))
        ll = ad.add(ad.sub(gamma_terms, gamma_const),
                    ad.add(ad.mul(n, ad.log(p)),
                           ad.mul(yc, ad.log(ad.sub(1.0, p)))))
        return ad.mul(ad.mean_all(ll), -1.0)

    def log_prob(self, y, params):
        n, p = params
        return nb_log_pmf(y, n, p)

    def mean(self, params):
        n, p = params
        return np.asarray(n) * (1.0 - np.asarray(p)) / np.asarray(p)

    def median(self, params):
        return self.quantile(0.5, params)

    def quantile(self, q, params):
        n, p = params
        return _discrete_quantile(q, 0.0 * np.asarray(n), n, p)

    def sample(self, params, rng: np.random.Generator):
        n, p = (np.asarray(v, dtype=np.float64) for v in params)
        n, p = np.broadcast_arrays(n, p)
        lam = rng.gamma(shape=n, scale=(1.0 - p) / p)
        return rng.poisson(lam).astype(np.int64)


def _validate_gaussian(mu, sigma):
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size and not np.all(sigma > 0):
        raise DomainError("sigma must be positive")
    return mu, sigma


class GaussianHead:
    """Untruncated Gaussian baseline (parameters mu, sigma)."""

    name = "gaussian"
    num_params = 2
    param_names = ("mu", "sigma")
    discrete = False

    def link(self, blocks):
        _check_blocks(blocks, 2, self.name)
        mu = blocks[0]
        sigma = ad.add(ad.softplus(blocks[1]), SOFTPLUS_EPS)
        return mu, sigma

    def nll(self, y, params, paper_approx: bool = False) -> ad.Tensor:
        mu, sigma = params
        yc = ad.constant(np.asarray(y, dtype=np.float64))
        log_sigma = ad.log(sigma)
        resid = ad.sub(yc, mu)
        inv_var = ad.exp(ad.mul(log_sigma, -2.0))
        ll = ad.sub(ad.mul(ad.constant(-0.5 * _LOG_2PI), 1.0),
                    ad.add(log_sigma,
                           ad.mul(ad.mul(ad.mul(resid, resid), inv_var), 0.5)))
        return ad.mul(ad.mean_all(ll), -1.0)

    def log_prob(self, y, params):
        mu, sigma = _validate_gaussian(*params)
        y = np.asarray(y, dtype=np.float64)
        z = (y - mu) / sigma
        return -0.5 * _LOG_2PI - np.log(sigma) - 0.5 * z * z

    def mean(self, params):
        return np.asarray(params[0], dtype=np.float64).copy()

    def median(self, params):
        return self.mean(params)

    def quantile(self, q, params):
        if not 0.0 < q < 1.0:
            raise DomainError("quantile level must lie in (0, 1)")
        mu, sigma = _validate_gaussian(*params)
        return mu + sigma * _ndtri(q)

    def sample(self, params, rng: np.random.Generator):
        mu, sigma = _validate_gaussian(*params)
        return rng.normal(mu, sigma)


class TruncNormalHead:
    """Gaussian truncated to [0, inf), renormalized by Phi(mu/sigma)."""

    name = "truncnormal"
    num_params = 2
    param_names = ("mu", "sigma")
    discrete = False

    def link(self, blocks):
        _check_blocks(blocks, 2, self.name)
        mu = blocks[0]
        sigma = ad.add(ad.softplus(blocks[1]), SOFTPLUS_EPS)
        return mu, sigma

    def nll(self, y, params, paper_approx: bool = False) -> ad.Tensor:
        y = np.asarray(y, dtype=np.float64)
        if y.size and np.any(y < 0):
            raise DomainError("truncated-normal data must be non-negative")
        mu, sigma = params
        yc = ad.constant(y)
        log_sigma = ad.log(sigma)
        inv_sigma = ad.exp(ad.mul(log_sigma, -1.0))
        z = ad.mul(ad.sub(yc, mu), inv_sigma)
        # log Phi(mu/sigma) is the truncation mass on [0, inf).
        log_mass = ad.log_ndtr(ad.mul(mu, inv_sigma))
        ll = ad.sub(ad.mul(ad.constant(-0.5 * _LOG_2PI), 1.0),
                    ad.add(ad.add(log_sigma, ad.mul(ad.mul(z, z), 0.5)),
                           log_mass))
        return ad.mul(ad.mean_all(ll), -1.0)

    def log_prob(self, y, params):
        mu, sigma = _validate_gaussian(*params)
        y = np.asarray(y, dtype=np.float64)
        z = (y - mu) / sigma
        base = -0.5 * _LOG_2PI - np.log(sigma) - 0.5 * z * z
        with np.errstate(divide="ignore"):
            out = base - np.log(_ndtr(mu / sigma))
        return np.where(y < 0, -np.inf, out)

    def mean(self, params):
        mu, sigma = _validate_gaussian(*params)
        a = mu / sigma
        phi = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
        return mu + sigma * phi / _ndtr(a)

    def median(self, params):
        return self.quantile(0.5, params)

    def quantile(self, q, params):
        if not 0.0 < q < 1.0:
            raise DomainError("quantile level must lie in (0, 1)")
        mu, sigma = _validate_gaussian(*params)
        lower_mass = _ndtr(-mu / sigma)
        t = lower_mass + q * (1.0 - lower_mass)
        return np.maximum(mu + sigma * _ndtri(t), 0.0)

    def sample(self, params, rng: np.random.Generator):
        mu, sigma = _validate_gaussian(*params)
        mu, sigma = np.broadcast_arrays(mu, sigma)
        u = rng.random(mu.shape)
        lower_mass = _ndtr(-mu / sigma)
        return np.maximum(mu + sigma * _ndtri(lower_mass + u * (1.0 - lower_mass)), 0.0)


HEADS = {h.name: h for h in (ZINBHead(), NBHead(), GaussianHead(), TruncNormalHead())}


def get_head(name: str):
    """Look up a head by name; unknown names raise ShapeError."""
    try:
        return HEADS[name]
    except KeyError:
        raise ShapeError(f"unknown head '{name}'; choose from "
                         f"{sorted(HEADS)}") from None
