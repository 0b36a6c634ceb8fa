"""Random variates, log densities and the adaptive random-walk Metropolis kernel.

All samplers take an explicit ``numpy.random.Generator``; identical seeds give
bit-identical draws. Independent streams for concurrent chains come from
:func:`spawn_streams`.

Inverse-Wishart convention: ``W ~ InvWishart(R0, kappa0)`` means
``inv(W) ~ Wishart(R0, kappa0)``, so ``E[W] = inv(R0) / (kappa0 - J - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import NotPositiveDefiniteError, ParameterDomainError

_TINY = np.finfo(float).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)
LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def spawn_streams(seed, n):
    """Independent generators for ``n`` concurrent chains sharing one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _check_positive(**params):
    for name, v in params.items():
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ParameterDomainError(f"{name} must be positive and finite, got {v!r}")


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) draw clamped to the open unit interval."""
    _check_positive(a=a, b=b)
    x = rng.beta(a, b, size=size)
    bad = np.isnan(x)
    if np.any(bad):
        # both gamma variates underflowed; the limit law is Bernoulli(a/(a+b))
        p = np.broadcast_to(np.asarray(a, float) / (np.asarray(a, float) + b), np.shape(x))
        fallback = (rng.random(np.shape(x)) < p).astype(float)
        x = np.where(bad, fallback, x)
    x = np.clip(x, _TINY, _ONE_MINUS)
    return float(x) if np.ndim(x) == 0 else x


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw with the shape/rate parameterisation, strictly positive."""
    _check_positive(shape=shape, rate=rate)
    x = rng.gamma(shape, 1.0 / np.asarray(rate, float), size=size)
    x = np.maximum(x, _TINY)
    return float(x) if np.ndim(x) == 0 else x


def sample_dirichlet(a, rng):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ParameterDomainError("Dirichlet needs at least two concentration parameters")
    _check_positive(a=a)
    return sample_dirichlet_rows(a[None, :], rng)[0]


def sample_dirichlet_rows(a, rng, mask=None):
    """One Dirichlet draw per row of ``a``.

    ``mask`` marks valid entries when rows are padded to a common width; the
    padded entries come back as exact zeros.
    """
    a = np.asarray(a, dtype=float)
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    shape = np.where(mask, a, 1.0)
    g = rng.standard_gamma(shape)
    g = np.where(mask, g, 0.0)
    tot = g.sum(axis=-1, keepdims=True)
    degenerate = ~(tot > 0) | ~np.isfinite(tot)
    if np.any(degenerate):
        # every gamma underflowed: pick a single category with prob a_k / sum(a)
        rows = np.nonzero(degenerate[..., 0])
        for idx in zip(*rows):
            p = np.where(mask[idx], a[idx], 0.0)
            k = rng.choice(p.size, p=p / p.sum())
            g[idx] = 0.0
            g[idx][k] = 1.0
        tot = g.sum(axis=-1, keepdims=True)
    out = g / tot
    # clamp away from exact zero so log-probabilities stay finite
    out = np.where(mask, np.maximum(out, 1e-300), 0.0)
    return out / out.sum(axis=-1, keepdims=True)


def cholesky(mat, name="matrix"):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(name, str(exc)) from None


def sample_mvnormal(mean, cov, rng, name="cov"):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky(np.atleast_2d(cov), name)
    return mean + L @ rng.standard_normal(mean.size)


def sample_mvnormal_precision(mean, prec, rng, name="precision"):
    """Normal draw parameterised by its precision matrix."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky(np.atleast_2d(prec), name)
    z = rng.standard_normal(mean.size)
    # x = mean + L^{-T} z has covariance (L L^T)^{-1}
    return mean + np.linalg.solve(L.T, z)


def sample_wishart(scale, dof, rng, name="scale"):
    """Bartlett-decomposition Wishart draw, ``E[W] = dof * scale``."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    J = scale.shape[0]
    if not dof > J - 1:
        raise ParameterDomainError(f"Wishart degrees of freedom {dof} must exceed J-1={J - 1}")
    L = cholesky(scale, name)
    A = np.zeros((J, J))
    A[np.diag_indices(J)] = np.sqrt(2.0 * rng.standard_gamma((dof - np.arange(J)) / 2.0))
    il = np.tril_indices(J, -1)
    A[il] = rng.standard_normal(len(il[0]))
    LA = L @ A
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_invwishart(scale, dof, rng, name="R0"):
    """Draw ``W`` with ``inv(W) ~ Wishart(scale, dof)``."""
    prec = sample_wishart(scale, dof, rng, name)
    Lp = cholesky(prec, name + " (sampled precision)")
    Linv = np.linalg.inv(Lp)
    W = Linv.T @ Linv
    return 0.5 * (W + W.T)


def log_t_locscale(x, mu, sigma, nu):
    """Log density of the location-scale Student t."""
    if not (sigma > 0 and nu > 0):
        raise ParameterDomainError("t location-scale needs sigma > 0 and nu > 0")
    z = (np.asarray(x, dtype=float) - mu) / sigma
    c = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi) - math.log(sigma)
    return c - (nu + 1) / 2 * np.log1p(z * z / nu)


def sample_t_locscale(mu, sigma, nu, rng, size=None):
    return mu + sigma * rng.standard_t(nu, size=size)


def log_normal(x, mean, var):
    d = np.asarray(x, dtype=float) - mean
    return -0.5 * (LOG_2PI + np.log(var) + d * d / var)


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis

ADAPT_BATCH = 50
ADAPT_EXPONENT = 0.75


def robbins_monro(log_step, n_proposed, accepted, target):
    """One Robbins-Monro update of the log proposal scale.

    ``n_proposed`` counts proposals including the current one.
    """
    gain = 1.0 / np.ceil(np.asarray(n_proposed, float) / ADAPT_BATCH) ** ADAPT_EXPONENT
    return log_step + gain * (np.asarray(accepted, float) - target)


@dataclass
class AdaptiveKernelState:
    log_step: float = 0.0
    n_accept: int = 0
    n_propose: int = 0
    target_rate: float = 0.44
    adapting: bool = True

    @property
    def acceptance_rate(self):
        return self.n_accept / self.n_propose if self.n_propose else float("nan")


def _safe(v):
    v = float(v)
    return -math.inf if math.isnan(v) else v


def adaptive_rwm_step(log_target, current, kernel, rng, current_log_target=None):
    """Single Gaussian random-walk Metropolis step with Robbins-Monro scaling.

    Returns ``(new_value, accepted, kernel)``; the kernel is updated in place.
    A NaN target value at the proposal counts as an automatic rejection.
    """
    lp_cur = _safe(log_target(current)) if current_log_target is None else current_log_target
    if not math.isfinite(lp_cur):
        raise ParameterDomainError(f"log target is not finite at the current value {current!r}")
    prop = current + math.exp(kernel.log_step) * rng.standard_normal()
    lp_prop = _safe(log_target(prop))
    accepted = math.log(rng.random()) < lp_prop - lp_cur
    kernel.n_propose += 1
    if accepted:
        kernel.n_accept += 1
    if kernel.adapting:
        kernel.log_step = float(robbins_monro(kernel.log_step, kernel.n_propose, accepted, kernel.target_rate))
    return (prop if accepted else current), accepted, kernel


class KernelBank:
    """A vector of independent adaptive kernels updated in lock-step.

    Used where many scalar parameters (one per cluster label or per
    individual) are proposed simultaneously.
    """

    def __init__(self, shape, target_rate=0.44, log_step=0.0):
        self.target_rate = target_rate
        self.initial_log_step = log_step
        self.log_step = np.full(shape, float(log_step))
        self.n_accept = np.zeros(shape, dtype=np.int64)
        self.n_propose = np.zeros(shape, dtype=np.int64)
        self.adapting = True

    def __len__(self):
        return self.log_step.shape[0]

    def grow(self, size):
        """Extend along the first axis with fresh kernels."""
        extra = size - len(self)
        if extra <= 0:
            return
        tail = (extra,) + self.log_step.shape[1:]
        self.log_step = np.concatenate([self.log_step, np.full(tail, self.initial_log_step)])
        self.n_accept = np.concatenate([self.n_accept, np.zeros(tail, np.int64)])
        self.n_propose = np.concatenate([self.n_propose, np.zeros(tail, np.int64)])

    def reset(self, idx):
        self.log_step[idx] = self.initial_log_step
        self.n_accept[idx] = 0
        self.n_propose[idx] = 0

    def step_sizes(self, idx):
        return np.exp(self.log_step[idx])

    def record(self, idx, accepted):
        self.n_propose[idx] += 1
        self.n_accept[idx] += accepted
        if self.adapting:
            self.log_step[idx] = robbins_monro(
                self.log_step[idx], self.n_propose[idx], accepted, self.target_rate)

    def acceptance_rate(self):
        tot = self.n_propose.sum()
        return float(self.n_accept.sum() / tot) if tot else float("nan")


def mh_accept(log_ratio, rng):
    """Vectorised Metropolis accept decisions; NaN ratios reject."""
    log_ratio = np.nan_to_num(np.asarray(log_ratio, float), nan=-np.inf)
    return np.log(rng.random(log_ratio.shape)) < log_ratio
