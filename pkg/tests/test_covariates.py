import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from profreg.covariates import (CovariateModel, composite_mu, composite_phi,
                                dirichlet_multinomial_log_marginal, discrete_conjugate_update,
                                discrete_loglik, gaussian_conjugate_update, gaussian_loglik,
                                mu_posterior_moments, mu_posterior_vs, niw_log_marginal)
from profreg.model import ChainState, ClusterParams, Dataset, GlobalParams, HyperParams

from conftest import within_se


def batch_se(x, batches=50):
    x = np.asarray(x)
    b = x[: x.size // batches * batches].reshape(batches, -1).mean(1)
    return b.std(ddof=1) / np.sqrt(batches)


# -- likelihoods ---------------------------------------------------------------

def test_gaussian_loglik_at_mode():
    assert np.isclose(gaussian_loglik([0.0], [0.0], [[1.0]]), -0.5 * np.log(2 * np.pi))
    assert np.isclose(gaussian_loglik([1.0, 2.0], [1.0, 2.0], np.eye(2)), -np.log(2 * np.pi))


def test_gaussian_loglik_missing_is_marginal():
    mu = np.array([0.5, -1.0])
    S = np.array([[2.0, 0.7], [0.7, 1.0]])
    x1 = 1.3
    # integrate the joint density over the missing coordinate
    joint = lambda x2: stats.multivariate_normal(mu, S).pdf([x1, x2])
    marg, _ = integrate.quad(joint, -30, 30)
    assert np.isclose(gaussian_loglik([x1, np.nan], mu, S), np.log(marg), atol=1e-8)
    assert gaussian_loglik([np.nan, np.nan], mu, S) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_gaussian_loglik_matches_scipy(seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(3, 3))
    S = A @ A.T + 0.5 * np.eye(3)
    mu, x = r.normal(size=3), r.normal(size=3)
    assert np.isclose(gaussian_loglik(x, mu, S), stats.multivariate_normal(mu, S).logpdf(x))


def test_discrete_loglik_cases():
    assert np.isclose(discrete_loglik(np.zeros(10), [np.array([0.5, 0.5])] * 10), 10 * np.log(0.5))
    phi = [np.array([0.2, 0.8]), np.array([0.5, 0.5]), np.array([0.1, 0.9])]
    assert np.isclose(discrete_loglik([1, np.nan, 0], phi), np.log(0.8) + np.log(0.1))
    assert np.isclose(discrete_loglik([1, 0], phi[:2]), np.log(0.8) + np.log(0.5))


def test_loglik_matrix_matches_direct(rng):
    n = 30
    X = np.column_stack([rng.integers(0, 3, n), rng.normal(size=n), rng.normal(size=n)]).astype(float)
    X[3, 0] = np.nan
    X[5, 1] = np.nan
    X[7, 1:] = np.nan
    data = Dataset(X=X, kinds=["discrete", "normal", "normal"])
    hp = HyperParams().resolve(data)
    cm = CovariateModel(data, hp)
    cl = ClusterParams()
    cm.allocate(cl, 4)
    st_ = ChainState(z=np.zeros(n, int), v=np.full(4, 0.5), alpha=1.0, clusters=cl, globals=GlobalParams())
    cm.sample_prior(st_, np.arange(4), rng)
    M = cm.loglik_matrix(st_, 4)
    for c in range(4):
        for i in (0, 3, 5, 7):
            ref = discrete_loglik(X[i, :1], [cl.phi[c, 0]]) + gaussian_loglik(X[i, 1:], cl.mu[c], cl.Sigma[c])
            assert np.isclose(M[c, i], ref)


# -- discrete conjugacy --------------------------------------------------------

def test_discrete_update_empty_is_prior(rng):
    draws = np.array([discrete_conjugate_update([np.zeros(3)], [np.array([1.0, 2.0, 3.0])], rng)[0]
                      for _ in range(10_000)])
    for k, m in enumerate(np.array([1, 2, 3]) / 6):
        assert within_se(draws[:, k], m)


def test_discrete_update_moment(rng):
    draws = np.array([discrete_conjugate_update([np.array([9.0, 1.0])], 1.0, rng)[0][0]
                      for _ in range(20_000)])
    assert within_se(draws, 10 / 12)


def test_discrete_update_matches_grid(rng):
    # posterior over phi_1 for K=2 on a grid: prior Beta(1,1) times phi^3 (1-phi)^1
    grid = np.linspace(1e-6, 1 - 1e-6, 20001)
    dens = grid ** 3 * (1 - grid)
    mean = integrate.trapezoid(grid * dens, grid) / integrate.trapezoid(dens, grid)
    second = integrate.trapezoid(grid ** 2 * dens, grid) / integrate.trapezoid(dens, grid)
    draws = np.array([discrete_conjugate_update([np.array([1.0, 3.0])], 1.0, rng)[0][1] for _ in range(20_000)])
    assert within_se(draws, mean)
    assert within_se(draws ** 2, second)


def test_dirichlet_multinomial_enumeration():
    # sequence-form marginal equals integral of product of phi over the Dirichlet prior
    a = np.array([0.7, 1.3, 2.0])
    seq = [0, 2, 2, 1, 2]
    counts = np.bincount(seq, minlength=3)
    r = np.random.default_rng(0)
    phi = r.dirichlet(a, size=400_000)
    mc = np.mean(np.prod(phi[:, seq], axis=1))
    assert np.isclose(np.exp(dirichlet_multinomial_log_marginal(counts, a)), mc, rtol=0.02)


# -- composites ----------------------------------------------------------------

def test_composites():
    assert composite_phi(0.8, 0.4, 1.0) == 0.8
    assert composite_phi(0.8, 0.4, 0.0) == 0.4
    assert np.isclose(composite_phi(0.8, 0.4, 0.5), 0.6)
    assert composite_mu(2.0, -2.0, 1.0) == 2.0
    assert composite_mu(2.0, -2.0, 0.0) == -2.0
    assert np.isclose(composite_mu(2.0, -2.0, 0.25), -1.0)


@given(st.lists(st.floats(0.01, 1), min_size=2, max_size=5), st.floats(0, 1))
def test_composite_phi_on_simplex(w, s):
    phi = np.array(w) / np.sum(w)
    phi0 = np.ones(len(w)) / len(w)
    out = composite_phi(phi, phi0, s)
    assert np.isclose(out.sum(), 1.0) and np.all(out >= 0)


# -- mean with selection ---------------------------------------------------------

def test_mu_moments_identity_selection():
    Sig = np.array([[1.0, 0.3], [0.3, 2.0]])
    S0 = np.eye(2) * 4
    mu0 = np.array([1.0, -1.0])
    xb = np.array([0.5, 0.2])
    mean, cov = mu_posterior_moments(5, xb, 1.0, Sig, mu0, S0, np.array([9.0, 9.0]))
    ref_cov = np.linalg.inv(np.linalg.inv(S0) + 5 * np.linalg.inv(Sig))
    ref_mean = ref_cov @ (np.linalg.inv(S0) @ mu0 + 5 * np.linalg.inv(Sig) @ xb)
    np.testing.assert_allclose(cov, ref_cov)
    np.testing.assert_allclose(mean, ref_mean)


def test_mu_moments_null_selection():
    S0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    mu0 = np.array([1.0, -1.0])
    mean, cov = mu_posterior_moments(7, np.ones(2), 0.0, np.eye(2), mu0, S0, np.zeros(2))
    np.testing.assert_allclose(cov, S0)
    np.testing.assert_allclose(mean, mu0)


def test_mu_moments_hand_case(rng):
    hp = HyperParams(mu0=np.zeros(1), Sigma0=np.eye(1))
    mean, cov = mu_posterior_moments(4, np.array([2.0]), 0.5, np.eye(1), hp.mu0, hp.Sigma0, np.array([1.0]))
    assert np.isclose(cov[0, 0], 0.5) and np.isclose(mean[0], 1.5)
    draws = np.array([mu_posterior_vs(4, np.array([2.0]), 0.5, np.eye(1), hp, rng, np.array([1.0]))[0]
                      for _ in range(20_000)])
    assert within_se(draws, 1.5)
    assert within_se((draws - 1.5) ** 2, 0.5)


def test_mu_selection_matches_grid(rng):
    # grid posterior of mu for the likelihood N(xbar_c; g mu + (1-g) xbar, Sigma / n)
    n, xc, g, xb, mu0, s0 = 3, 0.7, 0.3, -0.4, 0.2, 1.5
    grid = np.linspace(-15, 15, 60001)
    logp = stats.norm.logpdf(grid, mu0, np.sqrt(s0)) + stats.norm.logpdf(xc, g * grid + (1 - g) * xb, np.sqrt(1 / n))
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean, cov = mu_posterior_moments(n, np.array([xc]), g, np.eye(1), np.array([mu0]), np.array([[s0]]), np.array([xb]))
    assert np.isclose(mean[0], (w * grid).sum(), atol=1e-6)
    assert np.isclose(cov[0, 0], (w * (grid - mean[0]) ** 2).sum(), atol=1e-6)


# -- Gaussian conjugacy -----------------------------------------------------------

def _chain_gaussian(x, hp, rng, sweeps):
    n = x.shape[0]
    sx, so = x.sum(0), x.T @ x
    mu = np.zeros(x.shape[1])
    out_mu, out_var = np.empty(sweeps), np.empty(sweeps)
    for t in range(sweeps):
        mu, Sig = gaussian_conjugate_update(n, sx, so, mu, hp, rng)
        out_mu[t], out_var[t] = mu[0], Sig[0, 0]
    return out_mu, out_var


def test_gaussian_update_matches_grid(rng):
    x = np.array([[0.4], [1.9], [1.1]])
    hp = HyperParams(mu0=np.array([0.0]), Sigma0=np.array([[4.0]]), R0=np.array([[0.5]]), kappa0=3.0)
    # unnormalised joint posterior on (mu, log sigma^2)
    mus = np.linspace(-8, 10, 700)
    lv = np.linspace(-6, 6, 700)
    M, LV = np.meshgrid(mus, lv, indexing="ij")
    V = np.exp(LV)
    tau = 1 / V
    # precision ~ Gamma(kappa0/2, rate 1/(2 R0))
    log_prior_tau = stats.gamma.logpdf(tau, a=hp.kappa0 / 2, scale=2 * hp.R0[0, 0])
    log_jac = -LV                                     # d tau / d log v = tau
    logp = (stats.norm.logpdf(M, 0.0, 2.0) + log_prior_tau + log_jac
            + stats.norm.logpdf(x[:, 0][:, None, None], M[None], np.sqrt(V)[None]).sum(0))
    w = np.exp(logp - logsumexp(logp))
    e_mu, e_var = (w * M).sum(), (w * V).sum()
    d_mu, d_var = _chain_gaussian(x, hp, rng, 60_000)
    assert abs(d_mu.mean() - e_mu) < 3 * batch_se(d_mu)
    assert abs(d_var.mean() - e_var) < 3 * batch_se(d_var) + 1e-3 * e_var


def test_gaussian_update_empty_is_prior(rng):
    hp = HyperParams(mu0=np.array([1.0]), Sigma0=np.array([[2.0]]), R0=np.array([[0.5]]), kappa0=6.0)
    mus, vs = [], []
    for _ in range(10_000):
        m, S = gaussian_conjugate_update(0, np.zeros(1), np.zeros((1, 1)), np.zeros(1), hp, rng)
        mus.append(m[0])
        vs.append(S[0, 0])
    assert within_se(mus, 1.0)
    assert within_se(vs, 2.0 / (6 - 2))


def test_gaussian_update_concentrates(rng):
    x = rng.normal(5.0, 1.0, size=(10_000, 1))
    hp = HyperParams(mu0=np.zeros(1), Sigma0=np.eye(1), R0=np.eye(1), kappa0=3.0)
    d_mu, d_var = _chain_gaussian(x, hp, rng, 300)
    assert abs(d_mu[50:].mean() - 5.0) < 0.1


def test_niw_marginal_matches_mc():
    # compare against brute-force Monte Carlo over the NIW prior
    r = np.random.default_rng(4)
    x = np.array([[0.3, -0.1], [1.2, 0.4], [0.8, 0.9]])
    mu0, lam0, Psi0, nu0 = np.zeros(2), 0.5, np.eye(2), 5.0
    ref = []
    for _ in range(4000):
        Sig = stats.invwishart(df=nu0, scale=Psi0).rvs(random_state=r)
        mu = r.multivariate_normal(mu0, Sig / lam0, size=200)
        ll = np.array([stats.multivariate_normal(m, Sig).logpdf(x).sum() for m in mu[:20]])
        ref.extend(ll)
    mc = logsumexp(ref) - np.log(len(ref))
    val = niw_log_marginal(3, x.sum(0), x.T @ x, mu0, lam0, Psi0, nu0)
    assert abs(val - mc) < 0.1


# -- selection -------------------------------------------------------------------

def _single_cluster_state(X, kinds, hp_kw, rng):
    data = Dataset(X=X, kinds=kinds)
    hp = HyperParams(**hp_kw).resolve(data)
    cm = CovariateModel(data, hp)
    cl = ClusterParams()
    cm.allocate(cl, 2)
    gl = GlobalParams()
    cm.init_globals(gl, rng)
    s = ChainState(z=np.zeros(data.n, int), v=np.array([0.5, 1.0]), alpha=1.0, clusters=cl, globals=gl,
                   x_normal=cm.initial_x_normal(), z_star=1, c_star=1)
    cm.sample_prior(s, [0, 1], rng)
    return cm, s


def test_gamma_flip_is_prior_when_phi_equals_null(rng):
    X = rng.integers(0, 2, size=(40, 1)).astype(float)
    cm, s = _single_cluster_state(X, ["discrete"], {"var_select_type": "BinaryCluster"}, rng)
    s.clusters.phi[0] = cm.phi0
    s.globals.rho = np.array([0.3])
    st_ = cm.stats(s.z, 1)
    draws = []
    for _ in range(20_000):
        cm._update_gamma_discrete(s, st_, rng)
        draws.append(s.clusters.gamma[0, 0])
    assert within_se(draws, 0.3)


def test_rho_binary_collapsed_frequencies(rng):
    # gamma all zero over m labels: P(omega=1) = B(a, b+m) / B(a, b) / (1 + that)
    from scipy.special import betaln, expit
    X = rng.integers(0, 2, size=(10, 1)).astype(float)
    cm, s = _single_cluster_state(X, ["discrete"], {"var_select_type": "BinaryCluster"}, rng)
    s.clusters.gamma[:2] = 0.0
    s.c_star = 2
    p = expit(betaln(0.5, 0.5 + 2) - betaln(0.5, 0.5))
    on = []
    for _ in range(20_000):
        cm._update_rho_binary(s, rng)
        on.append(s.globals.omega[0])
        if s.globals.omega[0] == 0:
            assert s.globals.rho[0] == 0.0
    assert within_se(on, p)
    s.clusters.gamma[0] = 1.0
    cm._update_rho_binary(s, rng)
    assert s.globals.omega[0] == 1 and s.globals.rho[0] > 0


def test_phi_mwg_targets_dirichlet_when_selected(rng):
    # with zeta = 1 the Metropolis update must leave Dirichlet(a + counts) invariant
    X = np.r_[np.zeros(6), np.ones(2), np.full(4, 2.0)][:, None]
    cm, s = _single_cluster_state(X, ["discrete"], {"var_select_type": "Continuous"}, rng)
    cm.phi_kernels.grow(2)
    s.globals.zeta = s.globals.rho = np.array([1.0])
    st_ = cm.stats(s.z, 1)
    draws = []
    for t in range(40_000):
        cm._update_phi_mwg(s, st_, rng)
        if t == 5000:
            cm.phi_kernels.adapting = False
        if t > 5000:
            draws.append(s.clusters.phi[0, 0].copy())
    draws = np.array(draws)
    target = np.array([7.0, 3.0, 5.0]) / 15
    for k in range(3):
        assert abs(draws[:, k].mean() - target[k]) < 3 * batch_se(draws[:, k]) + 0.005


def test_prior_draws_respect_padding(rng):
    X = np.column_stack([rng.integers(0, 2, 20), rng.integers(0, 4, 20)]).astype(float)
    cm, s = _single_cluster_state(X, ["discrete", "discrete"], {}, rng)
    assert np.all(s.clusters.phi[:2, 0, 2:] == 0)
    np.testing.assert_allclose(s.clusters.phi[:2].sum(-1), 1.0)
