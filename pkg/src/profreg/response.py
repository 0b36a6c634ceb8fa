"""Response likelihoods with fixed effects, the extra-variation layer and their updates.

The linear predictor is ``theta_{Z_i} + beta^T W_i`` (plus ``eps_i`` under extra
variation, in which case the sampled latent ``lam_i`` replaces it in the
response likelihood).  Categorical responses use a softmax with category 0 as
the reference, so ``theta_c`` and ``beta`` carry one row per non-reference
category.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .model import Dataset, HyperParams
from .rand import (LOG_2PI, KernelBank, log_t_locscale, mh_accept, sample_gamma,
                   sample_t_locscale)


def categorical_probs(eta):
    """Category probabilities from non-reference predictors ``eta[..., R-1]``."""
    eta = np.asarray(eta, float)
    full = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)
    return np.exp(full - logsumexp(full, axis=-1, keepdims=True))


def response_loglik(kind, y, eta, trials=None, offset=None, tau=None):
    """Pointwise log-likelihood; ``eta`` broadcasts against ``y`` (last axis R-1 if categorical)."""
    y = np.asarray(y, float)
    eta = np.asarray(eta, float)
    if kind == "Bernoulli":
        return y * eta - np.logaddexp(0.0, eta)
    if kind == "Binomial":
        T = np.asarray(trials, float)
        return (gammaln(T + 1) - gammaln(y + 1) - gammaln(T - y + 1)
                + y * eta - T * np.logaddexp(0.0, eta))
    if kind == "Poisson":
        E = 1.0 if offset is None else np.asarray(offset, float)
        return y * (np.log(E) + eta) - E * np.exp(eta) - gammaln(y + 1)
    if kind == "Normal":
        return -0.5 * (LOG_2PI - np.log(tau) + tau * (y - eta) ** 2)
    if kind == "Categorical":
        shape = np.broadcast_shapes(y.shape, eta.shape[:-1])
        eta = np.broadcast_to(eta, shape + eta.shape[-1:])
        full = np.concatenate([np.zeros(shape + (1,)), eta], axis=-1)
        lse = logsumexp(full, axis=-1)
        yi = np.broadcast_to(y.astype(np.int64), shape)
        return np.take_along_axis(full, yi[..., None], axis=-1)[..., 0] - lse
    raise ValueError(f"unknown response kind {kind!r}")


def expected_response(kind, eta, offset=None):
    """Probability (per trial), Poisson rate, Gaussian mean or category probabilities."""
    if kind in ("Bernoulli", "Binomial"):
        return expit(eta)
    if kind == "Poisson":
        return (1.0 if offset is None else offset) * np.exp(eta)
    if kind == "Categorical":
        return categorical_probs(eta)
    return np.asarray(eta, float)


def _score_hessian(kind, y, eta, trials=None, offset=None, tau=None):
    """First and second derivative of the pointwise log-likelihood in a scalar eta."""
    if kind == "Bernoulli":
        p = expit(eta)
        return y - p, -p * (1 - p)
    if kind == "Binomial":
        p = expit(eta)
        return y - trials * p, -trials * p * (1 - p)
    if kind == "Poisson":
        m = offset * np.exp(eta)
        return y - m, -m
    return tau * (y - eta), -tau * np.ones_like(eta)


_GH = np.polynomial.hermite.hermgauss(20)


def _t_derivs(x, mu, sigma, nu):
    d = x - mu
    q = nu * sigma ** 2 + d * d
    return -(nu + 1) * d / q, -(nu + 1) * (nu * sigma ** 2 - d * d) / (q * q)


class ResponseModel:
    """Response part of the mixture for one of the five outcome kinds."""

    def __init__(self, data: Dataset, hp: HyperParams):
        self.data = data
        self.hp = hp
        self.kind = data.y_model
        self.y = data.y
        self.W = data.W
        self.n = data.n
        self.L = data.L
        self.trials = data.trials
        self.offset = data.offset if data.offset is not None else np.ones(self.n)
        self.extra = bool(hp.extra_variation)
        self.R = data.n_outcome_categories if self.kind == "Categorical" else 2
        self.dim = self.R - 1
        self.theta_kernels = KernelBank((0, self.dim))
        self.beta_kernels = KernelBank((self.dim, self.L))
        self.lam_kernels = KernelBank(self.n if self.extra else 0)

    @property
    def categorical(self):
        return self.kind == "Categorical"

    # -- setup ---------------------------------------------------------------

    def allocate(self, clusters, capacity):
        if clusters.theta is None:
            shape = (capacity, self.dim) if self.categorical else (capacity,)
            clusters.theta = np.zeros(shape)

    def init_globals(self, gl, state, rng):
        hp = self.hp
        shape = (self.dim, self.L) if self.categorical else (self.L,)
        gl.beta = sample_t_locscale(hp.mu_beta, hp.sigma_beta, hp.t_dof, rng, size=shape)
        if self.kind == "Normal":
            gl.tau_y = sample_gamma(hp.s_tau_y, hp.r_tau_y, rng)
        if self.extra:
            gl.tau_eps = sample_gamma(hp.s_tau_eps, hp.r_tau_eps, rng)
            gl.lam = self.linear_predictor(state.clusters.theta, state.z, gl.beta)

    def grow(self, capacity):
        self.theta_kernels.grow(capacity)

    def reset_kernels(self, labels):
        if len(labels):
            self.theta_kernels.reset(np.asarray(labels))

    def freeze(self):
        for k in (self.theta_kernels, self.beta_kernels, self.lam_kernels):
            k.adapting = False

    # -- linear predictor and likelihoods -------------------------------------

    def fixed_part(self, beta):
        if self.L == 0:
            return np.zeros((self.n, self.dim)) if self.categorical else np.zeros(self.n)
        return self.W @ beta.T if self.categorical else self.W @ beta

    def linear_predictor(self, theta, z, beta):
        return theta[z] + self.fixed_part(beta)

    def pointwise(self, eta, tau_y=1.0, idx=None):
        """Response log-likelihood of each individual at predictor ``eta``."""
        sl = slice(None) if idx is None else idx
        T = None if self.trials is None else self.trials[sl]
        return response_loglik(self.kind, self.y[sl], eta, trials=T, offset=self.offset[sl], tau=tau_y)

    def _member_pointwise(self, eta, gl):
        """Log-likelihood of cluster-level predictors: the response, or lam under extra variation."""
        if self.extra:
            return -0.5 * (LOG_2PI - np.log(gl.tau_eps) + gl.tau_eps * (gl.lam - eta) ** 2)
        return self.pointwise(eta, gl.tau_y)

    def loglik_matrix(self, state, C):
        """(C, n) log f(Y_i | theta_c, Lambda) used by allocation."""
        gl = state.globals
        fixed = self.fixed_part(gl.beta)
        if self.categorical:
            eta = state.clusters.theta[:C][:, None, :] + fixed[None]
        else:
            eta = state.clusters.theta[:C][:, None] + fixed[None]
        return self._member_pointwise(eta, gl)

    def log_prior_theta(self, theta):
        return log_t_locscale(theta, self.hp.mu_theta, self.hp.sigma_theta, self.hp.t_dof)

    # -- updates --------------------------------------------------------------

    def sample_prior(self, state, labels, rng):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return
        hp = self.hp
        shape = (labels.size, self.dim) if self.categorical else (labels.size,)
        state.clusters.theta[labels] = sample_t_locscale(hp.mu_theta, hp.sigma_theta, hp.t_dof, rng, size=shape)

    def update_theta(self, state, rng):
        """Vectorised adaptive RWM for every theta_c in A; empty labels draw from the prior."""
        A = state.z_star
        z = state.z
        gl = state.globals
        fixed = self.fixed_part(gl.beta)
        counts = np.bincount(z, minlength=A)[:A]
        theta = state.clusters.theta
        for r in range(self.dim):
            cur = theta[:A].copy()
            step = self.theta_kernels.step_sizes((slice(0, A), r))
            prop = cur.copy()
            if self.categorical:
                prop[:, r] = cur[:, r] + step * rng.standard_normal(A)
                eta_c, eta_p = cur[z] + fixed, prop[z] + fixed
                lp_c, lp_p = self.log_prior_theta(cur[:, r]), self.log_prior_theta(prop[:, r])
            else:
                prop = cur + step * rng.standard_normal(A)
                eta_c, eta_p = cur[z] + fixed, prop[z] + fixed
                lp_c, lp_p = self.log_prior_theta(cur), self.log_prior_theta(prop)
            ll_c = np.bincount(z, weights=self._member_pointwise(eta_c, gl), minlength=A)[:A]
            ll_p = np.bincount(z, weights=self._member_pointwise(eta_p, gl), minlength=A)[:A]
            acc = mh_accept(ll_p + lp_p - ll_c - lp_c, rng) & (counts > 0)
            if self.categorical:
                theta[:A, r] = np.where(acc, prop[:, r], cur[:, r])
            else:
                theta[:A] = np.where(acc, prop, cur)
            occupied = np.nonzero(counts > 0)[0]
            self.theta_kernels.record((occupied, r), acc[occupied])
        self.sample_prior(state, np.nonzero(counts == 0)[0], rng)

    def update_beta(self, state, rng):
        """Scalar adaptive RWM for each fixed-effect coefficient against the full data."""
        if self.L == 0:
            return
        gl = state.globals
        hp = self.hp
        theta_z = state.clusters.theta[state.z]
        beta = gl.beta
        for r in range(self.dim):
            for l in range(self.L):
                idx = (r, l) if self.categorical else (l,)
                cur = beta[idx]
                prop_val = cur + np.exp(self.beta_kernels.log_step[r, l]) * rng.standard_normal()
                eta_c = theta_z + self.fixed_part(beta)
                ll_c = self._member_pointwise(eta_c, gl).sum()
                beta[idx] = prop_val
                ll_p = self._member_pointwise(theta_z + self.fixed_part(beta), gl).sum()
                lr = (ll_p - ll_c + log_t_locscale(prop_val, hp.mu_beta, hp.sigma_beta, hp.t_dof)
                      - log_t_locscale(cur, hp.mu_beta, hp.sigma_beta, hp.t_dof))
                acc = bool(mh_accept(lr, rng))
                if not acc:
                    beta[idx] = cur
                self.beta_kernels.record((r, l), acc)

    def update_tau_y(self, state, rng):
        if self.kind != "Normal":
            return
        gl = state.globals
        resid = self.y - self.linear_predictor(state.clusters.theta, state.z, gl.beta)
        gl.tau_y = sample_gamma(self.hp.s_tau_y + 0.5 * self.n, self.hp.r_tau_y + 0.5 * float(resid @ resid), rng)

    def update_extra_variation(self, state, rng):
        """lam_i by vectorised adaptive RWM, then tau_eps by its Gamma conditional."""
        if not self.extra:
            return
        gl = state.globals
        mean = self.linear_predictor(state.clusters.theta, state.z, gl.beta)
        lam = gl.lam
        prop = lam + self.lam_kernels.step_sizes(slice(None)) * rng.standard_normal(self.n)

        def target(x):
            return self.pointwise(x) - 0.5 * gl.tau_eps * (x - mean) ** 2

        acc = mh_accept(target(prop) - target(lam), rng)
        gl.lam = np.where(acc, prop, lam)
        self.lam_kernels.record(slice(None), acc)
        eps = gl.lam - mean
        gl.tau_eps = sample_gamma(self.hp.s_tau_eps + 0.5 * self.n, self.hp.r_tau_eps + 0.5 * float(eps @ eps), rng)

    def update_globals(self, state, rng):
        self.update_beta(state, rng)
        self.update_tau_y(state, rng)
        self.update_extra_variation(state, rng)

    # -- summaries ------------------------------------------------------------

    def mean_response(self, eta, offset=None):
        return expected_response(self.kind, eta, offset)

    def log_marginal(self, state, K):
        """sum_c log m_Y over labels 0..K-1 with beta and the precisions held at their current values.

        Scalar theta is integrated by adaptive Gauss-Hermite quadrature; the
        categorical case uses a Laplace approximation.
        """
        gl = state.globals
        z = state.z
        fixed = self.fixed_part(gl.beta)
        hp = self.hp
        if self.categorical:
            return sum(self._laplace_categorical(z == c, fixed, state.clusters.theta[c]) for c in range(K))
        if self.extra:
            kind, y, tau = "Normal", gl.lam, gl.tau_eps
        else:
            kind, y, tau = self.kind, self.y, gl.tau_y
        counts = np.bincount(z, minlength=K)[:K]
        th = state.clusters.theta[:K].astype(float).copy()
        T = self.trials
        for _ in range(100):
            eta = th[z] + fixed
            s, h = _score_hessian(kind, y, eta, trials=T, offset=self.offset, tau=tau)
            g = np.bincount(z, weights=s, minlength=K)[:K]
            H = np.bincount(z, weights=h, minlength=K)[:K]
            gp, hp_ = _t_derivs(th, hp.mu_theta, hp.sigma_theta, hp.t_dof)
            curv = np.minimum(H + np.minimum(hp_, 0.0), -1e-12)
            delta = np.clip(-(g + gp) / curv, -5.0, 5.0)
            th = th + delta
            if np.max(np.abs(delta)) < 1e-10:
                break
        eta = th[z] + fixed
        _, h = _score_hessian(kind, y, eta, trials=T, offset=self.offset, tau=tau)
        H = np.bincount(z, weights=h, minlength=K)[:K] + _t_derivs(th, hp.mu_theta, hp.sigma_theta, hp.t_dof)[1]
        sd = 1.0 / np.sqrt(-np.minimum(H, -1e-12))
        # adaptive Gauss-Hermite quadrature centred at the mode with the Laplace scale
        terms = []
        for x, w in zip(*_GH):
            t = th + np.sqrt(2.0) * sd * x
            ll = np.bincount(z, weights=response_loglik(kind, y, t[z] + fixed, trials=T, offset=self.offset, tau=tau),
                             minlength=K)[:K]
            terms.append(np.log(w) + x * x + ll + self.log_prior_theta(t))
        lm = logsumexp(np.array(terms), axis=0) + np.log(np.sqrt(2.0) * sd)
        return float(np.where(counts > 0, lm, 0.0).sum())

    def _laplace_categorical(self, rows, fixed, start):
        if not rows.any():
            return 0.0
        hp = self.hp
        y = self.y[rows].astype(np.int64)
        f = fixed[rows]
        onehot = np.eye(self.R)[y][:, 1:]
        th = np.asarray(start, float).copy()
        for _ in range(100):
            p = categorical_probs(th[None] + f)[:, 1:]
            g = (onehot - p).sum(0)
            H = -(np.diag(p.sum(0)) - p.T @ p)
            gp, hpp = _t_derivs(th, hp.mu_theta, hp.sigma_theta, hp.t_dof)
            Hn = H + np.diag(np.minimum(hpp, 0.0))
            delta = np.clip(-np.linalg.solve(Hn, g + gp), -5.0, 5.0)
            th = th + delta
            if np.max(np.abs(delta)) < 1e-10:
                break
        p = categorical_probs(th[None] + f)[:, 1:]
        H = -(np.diag(p.sum(0)) - p.T @ p) + np.diag(_t_derivs(th, hp.mu_theta, hp.sigma_theta, hp.t_dof)[1])
        sign, logdet = np.linalg.slogdet(-H)
        if sign <= 0:
            logdet = np.log(1e-12) * self.dim
        ll = response_loglik("Categorical", y, th[None] + f).sum()
        return float(ll + self.log_prior_theta(th).sum() + 0.5 * self.dim * LOG_2PI - 0.5 * logdet)

    # -- simulation -----------------------------------------------------------

    def sample_data(self, state, rng):
        gl = state.globals
        eta = gl.lam if self.extra else self.linear_predictor(state.clusters.theta, state.z, gl.beta)
        if self.kind == "Bernoulli":
            return (rng.random(self.n) < expit(eta)).astype(float)
        if self.kind == "Binomial":
            return rng.binomial(self.trials.astype(np.int64), expit(eta)).astype(float)
        if self.kind == "Poisson":
            return rng.poisson(self.offset * np.exp(eta)).astype(float)
        if self.kind == "Normal":
            return eta + rng.standard_normal(self.n) / np.sqrt(gl.tau_y)
        p = categorical_probs(eta)
        u = rng.random((self.n, 1))
        return np.minimum((u > np.cumsum(p, axis=1)).sum(1), self.R - 1).astype(float)

    def set_response(self, y):
        self.y = np.asarray(y, float)
        self.data.y = self.y
