"""Covariate likelihoods, conjugate updates and variable selection.

Discrete columns are stored padded to a common width ``Kmax``; padded
categories carry zero probability and zero prior mass.  Gaussian columns form
one multivariate block.  Missing discrete entries are skipped; missing
Gaussian entries are marginalised in the allocation likelihood and imputed
from their conditional normal for the parameter updates.

Selection weights ``s[c, j]`` unify the three schemes: 1 without selection,
``gamma[c, j]`` for BinaryCluster and ``zeta_j = rho_j`` for Continuous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln, expit, gammaln, multigammaln

from .errors import NotPositiveDefiniteError
from .model import NORMAL, Dataset, HyperParams
from .rand import (LOG_2PI, KernelBank, cholesky, mh_accept, sample_beta,
                   sample_dirichlet, sample_dirichlet_rows, sample_invwishart,
                   sample_mvnormal)

_PHI_FLOOR = 1e-12


def composite_phi(phi, phi0, selector):
    """phi* = s * phi + (1 - s) * phi0."""
    return selector * np.asarray(phi, float) + (1.0 - selector) * np.asarray(phi0, float)


def composite_mu(mu, xbar, selector):
    return selector * np.asarray(mu, float) + (1.0 - selector) * np.asarray(xbar, float)


def gaussian_loglik(x, mu, Sigma):
    """Normal log density over the non-missing (non-NaN) coordinates of ``x``."""
    x = np.atleast_1d(np.asarray(x, float))
    mu = np.atleast_1d(np.asarray(mu, float))
    obs = ~np.isnan(x)
    if not obs.any():
        return 0.0
    S = np.atleast_2d(Sigma)[np.ix_(obs, obs)]
    L = cholesky(S, "Sigma")
    d = solve_triangular(L, x[obs] - mu[obs], lower=True)
    return float(-0.5 * (obs.sum() * LOG_2PI + d @ d) - np.log(np.diag(L)).sum())


def discrete_loglik(x, phi):
    """Sum of log phi_{j, x_j} over non-missing columns; ``phi`` is a list of rows."""
    total = 0.0
    for xj, p in zip(np.atleast_1d(np.asarray(x, float)), phi):
        if not np.isnan(xj):
            total += np.log(p[int(xj)])
    return float(total)


def discrete_conjugate_update(counts, a, rng):
    """Phi_j ~ Dirichlet(a_j + counts_j) independently per column."""
    if np.ndim(a) == 0:
        a = [np.full(len(c), float(a)) for c in counts]
    return [sample_dirichlet(np.asarray(aj, float) + np.asarray(cj, float), rng)
            for aj, cj in zip(a, counts)]


def mu_posterior_moments(n, xbar_c, selector, Sigma, mu0, Sigma0, xbar):
    """Mean and covariance of mu_c | Sigma_c under mean selection.

    The likelihood mean is ``G mu + (I - G) xbar`` with ``G = diag(selector)``.
    """
    J = len(mu0)
    G = np.diag(np.broadcast_to(np.asarray(selector, float), (J,)))
    P0 = np.linalg.inv(Sigma0)
    Pc = np.linalg.inv(Sigma)
    prec = P0 + n * G @ Pc @ G
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    resid = np.asarray(xbar_c, float) - (np.eye(J) - G) @ np.asarray(xbar, float)
    mean = cov @ (P0 @ mu0 + n * G @ Pc @ resid)
    return mean, cov


def mu_posterior_vs(n, xbar_c, selector, Sigma, hp, rng, xbar):
    mean, cov = mu_posterior_moments(n, xbar_c, selector, Sigma, hp.mu0, hp.Sigma0, xbar)
    return sample_mvnormal(mean, cov, rng, name="posterior mu covariance")


def scatter_about(n, sum_x, sum_outer, m):
    """sum_i (x_i - m)(x_i - m)^T from sufficient statistics."""
    S = sum_outer - np.outer(m, sum_x) - np.outer(sum_x, m) + n * np.outer(m, m)
    return 0.5 * (S + S.T)


def gaussian_conjugate_update(n, sum_x, sum_outer, mu, hp, rng, selector=1.0, xbar=None):
    """Sigma_c | mu*, data then mu_c | Sigma_c, data.

    ``mu`` is the current cluster mean; the residuals are taken about the
    composite mean ``s * mu + (1 - s) * xbar``.
    """
    J = len(hp.mu0)
    xbar = np.zeros(J) if xbar is None else xbar
    mu_star = composite_mu(mu, xbar, selector)
    S = scatter_about(n, sum_x, sum_outer, mu_star)
    scale = np.linalg.inv(np.linalg.inv(hp.R0) + S)
    Sigma = sample_invwishart(0.5 * (scale + scale.T), hp.kappa0 + n, rng)
    xbar_c = sum_x / n if n > 0 else np.zeros(J)
    mu_new = mu_posterior_vs(n, xbar_c, selector, Sigma, hp, rng, xbar)
    return mu_new, Sigma


def niw_log_marginal(n, sum_x, sum_outer, mu0, lam0, Psi0, nu0):
    """Log marginal likelihood of a Normal-inverse-Wishart model."""
    J = len(mu0)
    if n == 0:
        return 0.0
    xb = sum_x / n
    S = scatter_about(n, sum_x, sum_outer, xb)
    lam_n = lam0 + n
    nu_n = nu0 + n
    d = xb - mu0
    Psi_n = Psi0 + S + (lam0 * n / lam_n) * np.outer(d, d)
    _, ld0 = np.linalg.slogdet(Psi0)
    _, ldn = np.linalg.slogdet(Psi_n)
    return float(-0.5 * n * J * np.log(np.pi) + multigammaln(nu_n / 2, J) - multigammaln(nu0 / 2, J)
                 + 0.5 * nu0 * ld0 - 0.5 * nu_n * ldn + 0.5 * J * (np.log(lam0) - np.log(lam_n)))


def dirichlet_multinomial_log_marginal(counts, a):
    """Sum over the last axis of the Dirichlet-multinomial log marginal (sequence form)."""
    counts = np.asarray(counts, float)
    a = np.asarray(a, float)
    valid = a > 0
    term = np.where(valid, gammaln(np.where(valid, a + counts, 1.0)) - gammaln(np.where(valid, a, 1.0)), 0.0)
    return gammaln(a.sum(-1)) - gammaln(a.sum(-1) + counts.sum(-1)) + term.sum(-1)


@dataclass
class CovariateStats:
    """Sufficient statistics per cluster label."""

    n: np.ndarray            # (C,)
    sum_x: np.ndarray        # (C, Jg)
    sum_outer: np.ndarray    # (C, Jg, Jg)
    cat_counts: np.ndarray   # (C, Jd, Kmax), observed entries only


class CovariateModel:
    """Covariate part of the mixture: likelihoods, updates and selection."""

    def __init__(self, data: Dataset, hp: HyperParams):
        self.data = data
        self.hp = hp
        self.n = data.n
        self.J = data.J
        self.didx = data.discrete_idx
        self.gidx = data.normal_idx
        self.Jd = self.didx.size
        self.Jg = self.gidx.size
        self.select = hp.var_select_type

        # discrete block
        self.K = data.n_categories[self.didx] if self.Jd else np.zeros(0, int)
        self.Kmax = int(self.K.max()) if self.Jd else 0
        Xd = data.X[:, self.didx]
        self.obs_d = ~np.isnan(Xd)
        self.Xd = np.where(self.obs_d, Xd, 0).astype(np.int64)
        self.kmask = np.arange(self.Kmax)[None, :] < self.K[:, None]
        a = np.broadcast_to(np.asarray(hp.a_dir, float), (self.Jd,)) if self.Jd else np.zeros(0)
        self.a = np.where(self.kmask, a[:, None], 0.0)
        self.phi0 = self._null_phi()

        # Gaussian block
        Xg = data.X[:, self.gidx]
        self.Xg = Xg
        self.obs_g = ~np.isnan(Xg)
        self.xbar = np.nanmean(Xg, axis=0) if self.Jg else np.zeros(0)
        self.has_missing_g = bool(self.Jg and (~self.obs_g).any())
        self.patterns = self._missing_patterns()

        self.phi_kernels = KernelBank((0, self.Jd))
        self.rho_kernels = KernelBank(self.J)

    # -- setup ---------------------------------------------------------------

    def _null_phi(self):
        phi0 = np.zeros((self.Jd, self.Kmax))
        for j in range(self.Jd):
            cnt = np.bincount(self.Xd[self.obs_d[:, j], j], minlength=self.Kmax)[:self.Kmax].astype(float)
            cnt = np.where(self.kmask[j], np.maximum(cnt, _PHI_FLOOR), 0.0)
            phi0[j] = cnt / cnt.sum()
        return phi0

    def _missing_patterns(self):
        if not self.Jg:
            return []
        pats, inv = np.unique(self.obs_g, axis=0, return_inverse=True)
        inv = np.asarray(inv).reshape(-1)
        return [(pats[p], np.nonzero(inv == p)[0]) for p in range(len(pats)) if pats[p].any()]

    def initial_x_normal(self):
        if not self.Jg:
            return None
        return np.where(self.obs_g, self.Xg, self.xbar[None, :])

    def grow(self, capacity):
        self.phi_kernels.grow(capacity)

    def reset_kernels(self, labels):
        if len(labels) and self.Jd:
            self.phi_kernels.reset(np.asarray(labels))

    def freeze(self):
        self.phi_kernels.adapting = False
        self.rho_kernels.adapting = False

    def init_globals(self, gl, rng):
        if self.select == "None":
            return
        gl.omega = np.ones(self.J, dtype=np.int64)
        gl.rho = sample_beta(self.hp.a_rho, self.hp.b_rho, rng, size=self.J)
        if self.select == "Continuous":
            gl.zeta = gl.rho

    def allocate(self, clusters, capacity):
        if self.Jd and clusters.phi is None:
            clusters.phi = np.zeros((capacity, self.Jd, self.Kmax))
        if self.Jg and clusters.mu is None:
            clusters.mu = np.zeros((capacity, self.Jg))
            clusters.Sigma = np.tile(np.eye(self.Jg), (capacity, 1, 1))
        if self.select == "BinaryCluster" and clusters.gamma is None:
            clusters.gamma = np.ones((capacity, self.J))

    # -- selection weights and composites ------------------------------------

    def selectors(self, state, C):
        if self.select == "None":
            return np.ones((C, self.J))
        if self.select == "BinaryCluster":
            return state.clusters.gamma[:C].astype(float)
        return np.broadcast_to(state.globals.zeta, (C, self.J)).astype(float)

    def phi_star(self, state, C, s=None):
        s = self.selectors(state, C) if s is None else s
        sd = s[:, self.didx][:, :, None]
        return composite_phi(state.clusters.phi[:C], self.phi0[None], sd)

    def mu_star(self, state, C, s=None):
        s = self.selectors(state, C) if s is None else s
        return composite_mu(state.clusters.mu[:C], self.xbar[None], s[:, self.gidx])

    # -- likelihoods ----------------------------------------------------------

    def discrete_loglik_matrix(self, phi_star):
        """(C, n) covariate log-likelihood of the discrete block."""
        if not self.Jd:
            return np.zeros((phi_star.shape[0], self.n))
        with np.errstate(divide="ignore"):
            lp = np.log(phi_star)
        g = lp[:, np.arange(self.Jd)[None, :], self.Xd]        # (C, n, Jd)
        return np.where(self.obs_d[None], g, 0.0).sum(axis=2)

    def gaussian_loglik_matrix(self, mu_star, Sigma):
        """(C, n) marginal log density over each individual's observed coordinates."""
        C = mu_star.shape[0]
        out = np.zeros((C, self.n))
        for obs, rows in self.patterns:
            S = Sigma[:, obs][:, :, obs]
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise NotPositiveDefiniteError("Sigma_c", "covariance sub-block") from None
            diff = self.Xg[rows][:, obs].T[None] - mu_star[:, obs][:, :, None]   # (C, m, r)
            d = np.linalg.solve(L, diff)
            logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
            out[:, rows] = -0.5 * (obs.sum() * LOG_2PI + (d * d).sum(axis=1)) - logdet[:, None]
        return out

    def loglik_parts(self, state, C):
        s = self.selectors(state, C)
        ld = self.discrete_loglik_matrix(self.phi_star(state, C, s)) if self.Jd else 0.0
        lg = (self.gaussian_loglik_matrix(self.mu_star(state, C, s), state.clusters.Sigma[:C])
              if self.Jg else 0.0)
        return ld, lg

    def loglik_matrix(self, state, C):
        ld, lg = self.loglik_parts(state, C)
        return np.zeros((C, self.n)) + ld + lg

    # -- sufficient statistics ------------------------------------------------

    def stats(self, z, C, x_normal=None):
        n = np.bincount(z, minlength=C)[:C]
        counts = np.zeros((C, self.Jd, self.Kmax))
        if self.Jd:
            idx = (z[:, None] * self.Jd + np.arange(self.Jd)[None, :]) * self.Kmax + self.Xd
            flat = np.bincount(idx[self.obs_d], minlength=C * self.Jd * self.Kmax)
            counts = flat[:C * self.Jd * self.Kmax].reshape(C, self.Jd, self.Kmax).astype(float)
        if self.Jg:
            H = np.zeros((C, self.n))
            H[z, np.arange(self.n)] = 1.0
            sum_x = H @ x_normal
            sum_outer = np.einsum("cn,ni,nj->cij", H, x_normal, x_normal)
        else:
            sum_x = np.zeros((C, 0))
            sum_outer = np.zeros((C, 0, 0))
        return CovariateStats(n=n, sum_x=sum_x, sum_outer=sum_outer, cat_counts=counts)

    # -- prior draws ----------------------------------------------------------

    def sample_prior(self, state, labels, rng):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return
        cl = state.clusters
        if self.Jd:
            cl.phi[labels] = sample_dirichlet_rows(np.broadcast_to(self.a, (labels.size,) + self.a.shape),
                                                   rng, np.broadcast_to(self.kmask, (labels.size,) + self.kmask.shape))
        if self.Jg:
            for c in labels:
                cl.Sigma[c] = sample_invwishart(self.hp.R0, self.hp.kappa0, rng)
                cl.mu[c] = sample_mvnormal(self.hp.mu0, self.hp.Sigma0, rng, name="Sigma0")
        if self.select == "BinaryCluster":
            cl.gamma[labels] = (rng.random((labels.size, self.J)) < state.globals.rho[None, :]).astype(float)

    # -- active updates -------------------------------------------------------

    def update_active(self, state, rng):
        """Gibbs / Metropolis updates of the covariate parameters of labels in A."""
        A = state.z_star
        st = self.stats(state.z, A, state.x_normal)
        if self.Jd:
            if self.select == "BinaryCluster":
                self._update_gamma_discrete(state, st, rng)
            if self.select == "Continuous":
                self._update_phi_mwg(state, st, rng)
            else:
                self._update_phi_gibbs(state, st, rng)
        if self.Jg:
            if self.select == "BinaryCluster":
                self._update_gamma_gaussian(state, rng)
            self._update_gaussian(state, st, rng)

    def _update_phi_gibbs(self, state, st, rng):
        A = state.z_star
        post = self.a[None] + st.cat_counts
        if self.select == "BinaryCluster":
            # deselected columns carry no information about phi
            g = state.clusters.gamma[:A, self.didx][:, :, None]
            post = self.a[None] + g * st.cat_counts
        mask = np.broadcast_to(self.kmask, post.shape)
        state.clusters.phi[:A] = sample_dirichlet_rows(post, rng, mask)

    def _update_gamma_discrete(self, state, st, rng):
        """gamma_{c,j} | phi_{c,j}, rho_j: exact two-point Gibbs."""
        A = state.z_star
        rho = state.globals.rho[self.didx]
        cnt = st.cat_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = np.where(cnt > 0, cnt * np.log(state.clusters.phi[:A]), 0.0).sum(-1)
            l0 = np.where(cnt > 0, cnt * np.log(self.phi0[None]), 0.0).sum(-1)
            lr = np.log(rho)[None] + l1 - np.log1p(-rho)[None] - l0
        p1 = np.where(rho[None] <= 0, 0.0, np.where(rho[None] >= 1, 1.0, expit(lr)))
        state.clusters.gamma[:A, self.didx] = (rng.random(p1.shape) < p1).astype(float)

    def _update_gamma_gaussian(self, state, rng):
        A = state.z_star
        cl = state.clusters
        rho = state.globals.rho[self.gidx]
        x = state.x_normal
        for c in range(A):
            rows = state.z == c
            if not rows.any():
                cl.gamma[c, self.gidx] = (rng.random(self.Jg) < rho).astype(float)
                continue
            L = cholesky(cl.Sigma[c], f"Sigma_{c + 1}")
            for jj, j in enumerate(self.gidx):
                ll = np.empty(2)
                for val in (0, 1):
                    g = cl.gamma[c, self.gidx].copy()
                    g[jj] = val
                    m = composite_mu(cl.mu[c], self.xbar, g)
                    d = solve_triangular(L, (x[rows] - m).T, lower=True)
                    ll[val] = -0.5 * (d * d).sum()
                if rho[jj] <= 0:
                    p1 = 0.0
                elif rho[jj] >= 1:
                    p1 = 1.0
                else:
                    p1 = expit(np.log(rho[jj]) - np.log1p(-rho[jj]) + ll[1] - ll[0])
                cl.gamma[c, j] = float(rng.random() < p1)

    def _update_gaussian(self, state, st, rng):
        A = state.z_star
        cl = state.clusters
        s = self.selectors(state, A)[:, self.gidx]
        for c in range(A):
            try:
                cl.mu[c], cl.Sigma[c] = gaussian_conjugate_update(
                    int(st.n[c]), st.sum_x[c], st.sum_outer[c], cl.mu[c], self.hp, rng,
                    selector=s[c], xbar=self.xbar)
            except NotPositiveDefiniteError as exc:
                raise NotPositiveDefiniteError(f"Sigma_{c + 1}", exc.detail) from None

    def _phi_log_target(self, phi, counts, zeta):
        """Dirichlet prior in additive log-ratio coordinates plus the data term."""
        with np.errstate(divide="ignore", invalid="ignore"):
            prior = np.where(self.kmask, self.a * np.log(phi), 0.0).sum(-1)
            star = zeta[None, :, None] * phi + (1 - zeta[None, :, None]) * self.phi0[None]
            data = np.where(counts > 0, counts * np.log(star), 0.0).sum(-1)
        return prior + data

    def _update_phi_mwg(self, state, st, rng):
        """Metropolis-within-Gibbs for phi when the composite breaks conjugacy."""
        A = state.z_star
        zeta = state.globals.zeta[self.didx]
        phi = state.clusters.phi[:A]
        cnt = st.cat_counts
        with np.errstate(divide="ignore"):
            eta = np.where(self.kmask, np.log(phi) - np.log(phi[:, :, :1]), -np.inf)
        step = self.phi_kernels.step_sizes(slice(0, A))[:, :, None]
        prop_eta = np.where(self.kmask, eta + step * rng.standard_normal(eta.shape), -np.inf)
        prop_eta[:, :, 0] = 0.0
        prop = np.exp(prop_eta - prop_eta.max(-1, keepdims=True))
        prop = prop / prop.sum(-1, keepdims=True)
        prop = np.where(self.kmask, np.maximum(prop, 1e-300), 0.0)
        prop = prop / prop.sum(-1, keepdims=True)
        lr = self._phi_log_target(prop, cnt, zeta) - self._phi_log_target(phi, cnt, zeta)
        acc = mh_accept(lr, rng)
        state.clusters.phi[:A] = np.where(acc[:, :, None], prop, phi)
        self.phi_kernels.record((slice(0, A), slice(None)), acc)

    # -- selection globals (step F) -------------------------------------------

    def update_selectors(self, state, rng):
        if self.select == "BinaryCluster":
            self._update_rho_binary(state, rng)
        elif self.select == "Continuous":
            self._update_rho_continuous(state, rng)

    def _update_rho_binary(self, state, rng):
        """omega_j by collapsed Gibbs over gamma of A u P, then rho_j | omega_j."""
        m = state.c_star
        s = state.clusters.gamma[:m].sum(axis=0)
        a, b = self.hp.a_rho, self.hp.b_rho
        log_on = betaln(a + s, b + m - s) - betaln(a, b)
        p_on = np.where(s > 0, 1.0, expit(log_on))
        omega = (rng.random(self.J) < p_on).astype(np.int64)
        rho = np.zeros(self.J)
        on = omega == 1
        if on.any():
            rho[on] = sample_beta(a + s[on], b + m - s[on], rng)
        state.globals.omega = omega
        state.globals.rho = rho

    def _column_loglik(self, state, j, zeta_j):
        """Total covariate log-likelihood as a function of the selection weight of column j."""
        A = state.z_star
        if self.data.kinds[j] != NORMAL:
            jj = int(np.nonzero(self.didx == j)[0][0])
            star = zeta_j * state.clusters.phi[:A, jj] + (1 - zeta_j) * self.phi0[jj][None]
            obs = self.obs_d[:, jj]
            return float(np.log(star[state.z[obs], self.Xd[obs, jj]]).sum())
        jj = int(np.nonzero(self.gidx == j)[0][0])
        zeta = state.globals.zeta[self.gidx].copy()
        zeta[jj] = zeta_j
        mu = composite_mu(state.clusters.mu[:A], self.xbar[None], zeta[None])
        total = 0.0
        for c in range(A):
            rows = state.z == c
            if rows.any():
                L = self._chol_cache[c]
                d = solve_triangular(L, (state.x_normal[rows] - mu[c]).T, lower=True)
                total -= 0.5 * float((d * d).sum())
        return total

    def _update_rho_continuous(self, state, rng):
        """rho_j (= zeta_j) by logit-scale RWM when on, then an omega flip with a prior proposal."""
        gl = state.globals
        a, b = self.hp.a_rho, self.hp.b_rho
        A = state.z_star
        if self.Jg:
            self._chol_cache = [cholesky(state.clusters.Sigma[c], f"Sigma_{c + 1}") for c in range(A)]
        for j in range(self.J):
            cur = self._column_loglik(state, j, gl.rho[j])
            if gl.omega[j] == 1:
                r = gl.rho[j]
                x = np.log(r) - np.log1p(-r)
                xp = x + np.exp(self.rho_kernels.log_step[j]) * rng.standard_normal()
                rp = float(np.clip(expit(xp), 1e-300, 1 - 1e-16))
                new = self._column_loglik(state, j, rp)
                # Beta prior with the logit Jacobian r(1 - r)
                lr = (new - cur + a * (np.log(rp) - np.log(r)) + b * (np.log1p(-rp) - np.log1p(-r)))
                acc = bool(mh_accept(lr, rng))
                self.rho_kernels.record(j, acc)
                if acc:
                    gl.rho[j], cur = rp, new
                # propose switching off
                off = self._column_loglik(state, j, 0.0)
                if mh_accept(off - cur, rng):
                    gl.rho[j], gl.omega[j] = 0.0, 0
            else:
                rp = sample_beta(a, b, rng)
                new = self._column_loglik(state, j, rp)
                if mh_accept(new - cur, rng):
                    gl.rho[j], gl.omega[j] = rp, 1
        gl.zeta = gl.rho

    # -- missing Gaussian entries ---------------------------------------------

    def impute_missing(self, state, rng):
        """Draw missing Gaussian coordinates from their conditional normal given Z."""
        if not self.has_missing_g:
            return
        A = state.z_star
        mu = self.mu_star(state, A)
        x = state.x_normal
        miss_rows = np.nonzero((~self.obs_g).any(axis=1))[0]
        for i in miss_rows:
            c = state.z[i]
            o = self.obs_g[i]
            m = ~o
            S = state.clusters.Sigma[c]
            if o.any():
                K = np.linalg.solve(S[np.ix_(o, o)], S[np.ix_(o, m)]).T
                mean = mu[c, m] + K @ (self.Xg[i, o] - mu[c, o])
                cov = S[np.ix_(m, m)] - K @ S[np.ix_(o, m)]
            else:
                mean, cov = mu[c], S
            x[i, m] = sample_mvnormal(mean, 0.5 * (cov + cov.T), rng, name=f"Sigma_{c + 1}")

    # -- marginal likelihood --------------------------------------------------

    def log_marginal(self, z, K, x_normal=None):
        """Sum over labels 0..K-1 of log m_X for the cluster's covariate data."""
        st = self.stats(z, K, x_normal)
        total = 0.0
        if self.Jd:
            total += float(dirichlet_multinomial_log_marginal(st.cat_counts, self.a[None]).sum())
        if self.Jg:
            hp = self.hp
            Psi0 = np.linalg.inv(hp.R0)
            lam0 = np.trace(Psi0) / (hp.kappa0 - self.Jg - 1) / np.trace(hp.Sigma0) if hp.kappa0 > self.Jg + 1 \
                else 1.0 / np.trace(hp.Sigma0)
            for c in range(K):
                total += niw_log_marginal(int(st.n[c]), st.sum_x[c], st.sum_outer[c],
                                          hp.mu0, lam0, Psi0, hp.kappa0)
        return total

    # -- simulation -----------------------------------------------------------

    def sample_data(self, state, rng):
        """Covariates drawn from the model given allocations and parameters."""
        C = int(state.z.max()) + 1
        X = np.empty((self.n, self.J))
        s = self.selectors(state, C)
        if self.Jd:
            ps = self.phi_star(state, C, s)[state.z]             # (n, Jd, Kmax)
            cum = np.cumsum(ps, axis=-1)
            u = rng.random((self.n, self.Jd, 1)) * cum[..., -1:]
            X[:, self.didx] = np.minimum((u > cum).sum(-1), self.K[None] - 1)
        if self.Jg:
            mu = self.mu_star(state, C, s)
            for i in range(self.n):
                c = state.z[i]
                X[i, self.gidx] = sample_mvnormal(mu[c], state.clusters.Sigma[c], rng)
        return X

    def set_data(self, X):
        """Replace covariate values in place (same kinds, no missing entries)."""
        self.data.X = np.asarray(X, float)
        Xd = self.data.X[:, self.didx]
        self.obs_d = ~np.isnan(Xd)
        self.Xd = np.where(self.obs_d, Xd, 0).astype(np.int64)
        if self.Jg:
            self.Xg = self.data.X[:, self.gidx]
            self.obs_g = ~np.isnan(self.Xg)
            self.patterns = self._missing_patterns()
