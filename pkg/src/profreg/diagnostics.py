"""Joint-distribution (successive-conditional) test of the whole sampler.

Alternating one sweep with a fresh draw of the data given the current
parameters leaves the prior invariant, so the parameter marginals of the
resulting chain must match their priors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import Dataset, HyperParams
from .sampler import Sampler, SamplerConfig


@dataclass
class GewekeResult:
    alpha: np.ndarray
    theta1: np.ndarray
    v1: np.ndarray
    pvalues: dict


def stick_prior_cdf(v, shape, rate):
    """Marginal CDF of V_1 ~ Beta(1, alpha) with alpha ~ Gamma(shape, rate)."""
    v = np.asarray(v, float)
    with np.errstate(divide="ignore"):
        return 1.0 - (rate / (rate - np.log1p(-v))) ** shape


def toy_dataset(n=10, J=2, y_model="Bernoulli", rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    X = rng.integers(0, 2, size=(n, J)).astype(float)
    X[0] = [0, 1][:J] if J <= 2 else X[0]
    X[1] = [1, 0][:J] if J <= 2 else X[1]
    y = rng.integers(0, 2, size=n).astype(float)
    return Dataset(X=X, kinds=["discrete"] * J, y=y, y_model=y_model)


def geweke_successive(data, hp=None, cfg=None, n_iter=50_000, thin=25, burn=1000, rng=None):
    """Run the alternating chain; returns thinned traces and KS p-values against the priors."""
    hp = HyperParams() if hp is None else hp
    cfg = SamplerConfig(n_sweeps=0, n_burn=0, compute_marg_post=False, store_params=False,
                        check_invariants=False) if cfg is None else cfg
    s = Sampler(data, hp, cfg, rng)
    state = s.initialize()
    keep_alpha, keep_theta, keep_v = [], [], []
    for t in range(burn + n_iter):
        if t == burn:
            s.freeze_adaptation()
        s.sweep()
        s.cov.set_data(s.cov.sample_data(state, s.rng))
        if s.resp is not None:
            s.resp.set_response(s.resp.sample_data(state, s.rng))
        if t >= burn and (t - burn) % thin == 0:
            keep_alpha.append(state.alpha)
            keep_v.append(state.v[0])
            if s.resp is not None:
                keep_theta.append(float(np.ravel(state.clusters.theta[0])[0]))
    hp_r = s.hp
    alpha = np.array(keep_alpha)
    v1 = np.array(keep_v)
    theta1 = np.array(keep_theta)
    p = {"alpha": stats.kstest(alpha, stats.gamma(hp_r.shape_alpha, scale=1 / hp_r.rate_alpha).cdf).pvalue,
         "V1": stats.kstest(v1, lambda v: stick_prior_cdf(v, hp_r.shape_alpha, hp_r.rate_alpha)).pvalue}
    if theta1.size:
        p["theta1"] = stats.kstest(theta1, stats.t(hp_r.t_dof, hp_r.mu_theta, hp_r.sigma_theta).cdf).pvalue
    return GewekeResult(alpha=alpha, theta1=theta1, v1=v1, pvalues=p)
