"""Posterior summaries: similarity, representative partitions, profiles and predictions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .covariates import gaussian_loglik
from .response import expected_response


def canonical_labels(z):
    """Relabel to 0..K-1 in order of first appearance."""
    z = np.asarray(z)
    _, first, inv = np.unique(z, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv.reshape(-1)].astype(np.int64)


def build_similarity(allocations):
    """S_ij = fraction of sweeps in which i and j share a cluster."""
    Z = np.asarray(allocations)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.shape[0] == 0:
        raise ValueError("cannot build a similarity matrix from an empty archive")
    n = Z.shape[1]
    S = np.zeros((n, n))
    for z in Z:
        S += z[:, None] == z[None, :]
    return S / Z.shape[0]


@dataclass
class Partition:
    labels: np.ndarray           # 1-based dense labels
    K: int
    method: str
    score: float = float("nan")  # LS distance or average silhouette
    extra: dict = field(default_factory=dict)


def _one_hot(labels, K=None):
    K = int(labels.max()) + 1 if K is None else K
    H = np.zeros((labels.size, K))
    H[np.arange(labels.size), labels] = 1.0
    return H


def ls_distance(z, S):
    """sum_{i<j} (1{z_i = z_j} - S_ij)^2."""
    z = canonical_labels(z)
    H = _one_hot(z)
    M = 1.0 - 2.0 * S
    same = np.einsum("ik,ij,jk->", H, M, H)
    full = same + np.sum(S * S)
    # remove the diagonal (A_ii = S_ii = 1 contributes zero) and halve
    diag = np.sum((1.0 - np.diag(S)) ** 2)
    return float(0.5 * (full - diag))


def ls_optimal_partition(allocations, S):
    """Archived partition closest to S in squared distance; earliest sweep wins ties."""
    Z = np.asarray(allocations)
    seen = {}
    best, best_d, best_t = None, math.inf, -1
    for t, z in enumerate(Z):
        c = canonical_labels(z)
        key = c.tobytes()
        if key in seen:
            continue
        d = ls_distance(c, S)
        seen[key] = d
        if d < best_d - 1e-12:
            best, best_d, best_t = c, d, t
    return Partition(labels=best + 1, K=int(best.max()) + 1, method="LS", score=best_d,
                     extra={"sweep": best_t})


# -- PAM ----------------------------------------------------------------------


def _assign(D, medoids):
    d = D[medoids]                     # (k, n)
    nearest = np.argmin(d, axis=0)
    return nearest, d[nearest, np.arange(D.shape[0])].sum()


def pam(D, k, max_iter=1000):
    """Partitioning around medoids: BUILD then steepest-descent SWAP.

    Returns ``(medoids, labels, cost, history)`` where ``history`` lists the
    cost after BUILD and after every accepted swap.
    """
    D = np.asarray(D, float)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    medoids = [int(np.argmin(D.sum(axis=1)))]
    best = D[medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(best[None, :] - D, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        m = int(np.argmax(gain))
        medoids.append(m)
        best = np.minimum(best, D[m])
    medoids = np.array(medoids)
    _, cost = _assign(D, medoids)
    history = [cost]
    for _ in range(max_iter):
        d = D[medoids]                                   # (k, n)
        order = np.argsort(d, axis=0, kind="stable")
        first = d[order[0], np.arange(n)]
        second = d[order[1], np.arange(n)] if k > 1 else np.full(n, np.inf)
        is_med = np.zeros(n, bool)
        is_med[medoids] = True
        cand = np.nonzero(~is_med)[0]
        best_cost, best_swap = cost, None
        for mi in range(k):
            # distance to nearest remaining medoid if medoid mi is removed
            keep = np.where(order[0] == mi, second, first)
            new = np.minimum(keep[None, :], D[cand]).sum(axis=1)
            h = int(np.argmin(new))
            if new[h] < best_cost - 1e-12 * max(1.0, abs(best_cost)):
                best_cost, best_swap = float(new[h]), (mi, int(cand[h]))
        if best_swap is None:
            break
        medoids = medoids.copy()
        medoids[best_swap[0]] = best_swap[1]
        _, new_cost = _assign(D, medoids)
        assert new_cost <= cost + 1e-9, "PAM swap increased the cost"
        cost = new_cost
        history.append(cost)
    labels, cost = _assign(D, medoids)
    return medoids, labels, float(cost), history


def silhouette_samples(D, labels):
    """Silhouette widths with s(i) = 0 for members of singleton clusters."""
    D = np.asarray(D, float)
    labels = canonical_labels(labels)
    K = int(labels.max()) + 1
    n = labels.size
    if K < 2:
        return np.zeros(n)
    H = _one_hot(labels, K)
    sizes = H.sum(axis=0)
    sums = D @ H                                         # (n, K)
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes[None, :]
    other[np.arange(n), labels] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


def default_k_max(n):
    return int(min(10, math.ceil(n / 10) + 2, n - 1))


def pam_optimal_partition(S, k_max=None):
    """PAM on 1 - S for k = 2..k_max, keeping the k with the largest average silhouette."""
    D = 1.0 - np.asarray(S, float)
    np.fill_diagonal(D, 0.0)
    n = D.shape[0]
    if n < 3:
        raise ValueError("PAM partitioning needs at least three individuals")
    k_max = default_k_max(n) if k_max is None else int(k_max)
    if not 2 <= k_max <= n - 1:
        raise ValueError(f"k_max={k_max} must lie in [2, {n - 1}]")
    best = None
    widths = {}
    for k in range(2, k_max + 1):
        med, lab, cost, _ = pam(D, k)
        w = float(silhouette_samples(D, lab).mean())
        widths[k] = w
        if best is None or w > best[0] + 1e-12:
            best = (w, k, med, lab, cost)
    w, k, med, lab, cost = best
    labels = canonical_labels(lab) + 1
    return Partition(labels=labels, K=int(labels.max()), method="PAM", score=w,
                     extra={"medoids": med, "cost": cost, "silhouette": widths})


# -- profiles -----------------------------------------------------------------


@dataclass
class RiskProfile:
    """Per-sweep cluster summaries for a fixed partition and their quantiles."""

    levels: tuple
    sizes: np.ndarray
    risk: Optional[np.ndarray] = None      # (T, K) or (T, K, R)
    phi: Optional[np.ndarray] = None       # (T, K, Jd, Kmax)
    mu: Optional[np.ndarray] = None        # (T, K, Jg)

    def quantiles(self, name):
        arr = getattr(self, name)
        return None if arr is None else np.quantile(arr, self.levels, axis=0)

    def summary(self):
        return {name: self.quantiles(name) for name in ("risk", "phi", "mu") if getattr(self, name) is not None}


def risk_profiles(records, partition, y_model=None, levels=(0.05, 0.5, 0.95)):
    """Cluster averages of baseline response and covariate profiles, per sweep."""
    labels = np.asarray(partition.labels) - 1
    K = int(labels.max()) + 1
    H = _one_hot(labels, K).T
    sizes = H.sum(axis=1)
    A = H / sizes[:, None]                               # (K, n) averaging operator
    risk, phi, mu = [], [], []
    for rec in records:
        z = rec.z
        if y_model is not None and rec.params is not None and rec.params.theta is not None:
            base = expected_response(y_model, rec.params.theta)
            risk.append(np.tensordot(A, base[z], axes=1))
        if rec.phi_star is not None:
            phi.append(np.tensordot(A, rec.phi_star[z], axes=1))
        if rec.mu_star is not None:
            mu.append(A @ rec.mu_star[z])
    levels = tuple(sorted(levels))
    as_arr = lambda x: np.array(x) if x else None
    return RiskProfile(levels=levels, sizes=sizes, risk=as_arr(risk), phi=as_arr(phi), mu=as_arr(mu))


# -- predictions --------------------------------------------------------------


def scenario_log_weights(rec, x, kinds, discrete_idx, normal_idx):
    """log psi_c + log f_X(x | Theta_c) over the labels stored with the sweep."""
    C = rec.psi.size
    lw = np.log(rec.psi).copy()
    if discrete_idx.size:
        xd = x[discrete_idx]
        obs = ~np.isnan(xd)
        if obs.any():
            cols = np.nonzero(obs)[0]
            with np.errstate(divide="ignore"):
                lw += np.log(rec.phi_star[:C, cols, xd[obs].astype(np.int64)]).sum(axis=1)
    if normal_idx.size:
        xg = x[normal_idx]
        if (~np.isnan(xg)).any():
            Sig = rec.params.Sigma
            lw += np.array([gaussian_loglik(xg, rec.mu_star[c], Sig[c]) for c in range(C)])
    return lw


def predict(records, scenarios, kinds, y_model, mode="RaoBlackwell", rng=None, W=None, offset=None):
    """Per-sweep predicted response means for each scenario row.

    ``scenarios`` is an (m, J) array with NaN for missing covariates.  Returns
    an array of shape (T, m) or (T, m, R) for categorical outcomes.
    """
    if mode not in ("RaoBlackwell", "RandomAllocation"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    if mode == "RandomAllocation" and rng is None:
        raise ValueError("RandomAllocation needs a random generator")
    X = np.atleast_2d(np.asarray(scenarios, float))
    kinds = list(kinds)
    didx = np.array([j for j, k in enumerate(kinds) if k == "discrete"], dtype=int)
    gidx = np.array([j for j, k in enumerate(kinds) if k != "discrete"], dtype=int)
    m = X.shape[0]
    out = []
    for rec in records:
        theta = rec.params.theta
        rows = []
        for s in range(m):
            lw = scenario_log_weights(rec, X[s], kinds, didx, gidx)
            w = np.exp(lw - logsumexp(lw))
            eta = theta[:w.size].astype(float)
            if W is not None and rec.beta is not None and np.size(rec.beta):
                fixed = np.asarray(rec.beta) @ np.asarray(W[s], float)
                eta = eta + fixed
            off = None if offset is None else offset[s]
            means = expected_response(y_model, eta, off)
            if mode == "RaoBlackwell":
                rows.append(np.tensordot(w, means, axes=1))
            else:
                rows.append(means[rng.choice(w.size, p=w)])
        out.append(rows)
    return np.array(out)


def batch_means_se(x, n_batches=None):
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, float)
    N = x.shape[0]
    if N < 4:
        return float("nan") if x.ndim == 1 else np.full(x.shape[1:], np.nan)
    a = int(np.floor(np.sqrt(N))) if n_batches is None else int(n_batches)
    b = N // a
    means = x[:a * b].reshape((a, b) + x.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / np.sqrt(a)


def adjusted_rand_index(a, b):
    """Hubert-Arabie adjusted Rand index of two labelings."""
    a = canonical_labels(a)
    b = canonical_labels(b)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    pairs = lambda x: np.sum(x * (x - 1) / 2.0)
    index = pairs(table)
    ra, rb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = a.size * (a.size - 1) / 2.0
    expected = ra * rb / total
    top = 0.5 * (ra + rb)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))
