"""Synthetic data with a known cluster structure.

The two presets use fixed, implementation-chosen profile values: five
balanced clusters of binary covariates with category-1 probabilities 0.9 or
0.1 following a per-cluster bit code, and cluster response probabilities
spread over (0.1, 0.9).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logit

from .model import DISCRETE, NORMAL, Dataset


@dataclass
class SyntheticSpec:
    """Declarative description of a simulated profile regression dataset."""

    n_subjects: int
    proportions: list
    # (n_clusters, J_informative, K) category probabilities
    covariate_profiles: np.ndarray
    # (J_noise, K) cluster-independent probabilities
    noise_profile: Optional[np.ndarray] = None
    # (n_clusters, J_normal) Gaussian covariate means and a common sd
    normal_means: Optional[np.ndarray] = None
    normal_sd: float = 1.0
    y_model: Optional[str] = "Bernoulli"
    # cluster linear predictors theta_c (categorical: (n_clusters, R-1))
    theta: Optional[np.ndarray] = None
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trials: int = 10
    sigma_y: float = 1.0
    eps_sd: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, float)
        if not np.isclose(self.proportions.sum(), 1.0) or np.any(self.proportions < 0):
            raise ValueError("cluster proportions must be non-negative and sum to 1")
        self.covariate_profiles = np.asarray(self.covariate_profiles, float)
        if self.covariate_profiles.ndim != 3 or self.covariate_profiles.shape[0] != self.n_clusters:
            raise ValueError("covariate_profiles must have shape (n_clusters, J, K)")
        if not np.allclose(self.covariate_profiles.sum(-1), 1.0):
            raise ValueError("covariate profiles must sum to 1 over categories")
        if self.noise_profile is not None:
            self.noise_profile = np.atleast_2d(np.asarray(self.noise_profile, float))
        self.beta = np.asarray(self.beta, float)

    @property
    def n_clusters(self):
        return self.proportions.size

    @property
    def n_noise(self):
        return 0 if self.noise_profile is None else self.noise_profile.shape[0]


def balanced_sizes(n, proportions):
    """Cluster sizes with largest-remainder rounding."""
    raw = n * np.asarray(proportions, float)
    sizes = np.floor(raw).astype(int)
    short = n - sizes.sum()
    sizes[np.argsort(-(raw - sizes), kind="stable")[:short]] += 1
    return sizes


def generate_sample_data(spec: SyntheticSpec, rng):
    """Draw a dataset and its true (1-based) cluster labels."""
    n = spec.n_subjects
    sizes = balanced_sizes(n, spec.proportions)
    truth = rng.permutation(np.repeat(np.arange(spec.n_clusters), sizes))

    cols, kinds, names = [], [], []
    prof = spec.covariate_profiles
    for j in range(prof.shape[1]):
        p = prof[truth, j]
        cols.append((rng.random((n, 1)) > np.cumsum(p, axis=1)).sum(1))
        kinds.append(DISCRETE)
    for j in range(spec.n_noise):
        cols.append(rng.choice(spec.noise_profile.shape[1], size=n, p=spec.noise_profile[j]))
        kinds.append(DISCRETE)
    if spec.normal_means is not None:
        means = np.atleast_2d(spec.normal_means)
        for j in range(means.shape[1]):
            cols.append(means[truth, j] + spec.normal_sd * rng.standard_normal(n))
            kinds.append(NORMAL)
    X = np.column_stack(cols).astype(float)
    names = [f"Variable{j + 1}" for j in range(X.shape[1])]

    L = spec.beta.shape[-1] if spec.beta.size else 0
    W = rng.standard_normal((n, L))
    y = trials = offset = None
    if spec.y_model is not None:
        theta = np.asarray(spec.theta, float)
        eta = theta[truth] + (W @ spec.beta.T if spec.beta.size else 0.0)
        if spec.eps_sd > 0:
            eta = eta + spec.eps_sd * rng.standard_normal(eta.shape)
        kind = spec.y_model
        if kind == "Bernoulli":
            y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
        elif kind == "Binomial":
            trials = np.full(n, float(spec.trials))
            y = rng.binomial(spec.trials, 1 / (1 + np.exp(-eta))).astype(float)
        elif kind == "Poisson":
            offset = np.ones(n)
            y = rng.poisson(np.exp(eta)).astype(float)
        elif kind == "Normal":
            y = eta + spec.sigma_y * rng.standard_normal(n)
        elif kind == "Categorical":
            full = np.column_stack([np.zeros(n), eta])
            p = np.exp(full - full.max(1, keepdims=True))
            p /= p.sum(1, keepdims=True)
            y = (rng.random((n, 1)) > np.cumsum(p, axis=1)).sum(1).astype(float)
        else:
            raise ValueError(f"unknown outcome model {kind!r}")
    data = Dataset(X=X, kinds=kinds, y=y, y_model=spec.y_model, W=W, trials=trials, offset=offset,
                   covariate_names=names, fixed_effect_names=[f"FixedEffects{l + 1}" for l in range(L)])
    return data, truth + 1


_CODES = np.array([[1, 1, 1, 1, 0, 0, 0, 0],
                   [0, 0, 0, 0, 1, 1, 1, 1],
                   [1, 1, 0, 0, 1, 1, 0, 0],
                   [0, 0, 1, 1, 0, 0, 1, 1],
                   [1, 0, 1, 0, 1, 0, 1, 0]])
_RISK = np.array([0.1, 0.25, 0.5, 0.75, 0.9])


def _binary_profiles(codes, high=0.9):
    p1 = np.where(codes == 1, high, 1 - high)
    return np.stack([1 - p1, p1], axis=-1)


def var_select_bernoulli_discrete(n_subjects=1000, beta=(0.1, -0.1)):
    """Five clusters, ten binary covariates of which the first eight are informative."""
    return SyntheticSpec(n_subjects=n_subjects, proportions=[0.2] * 5,
                         covariate_profiles=_binary_profiles(_CODES),
                         noise_profile=np.array([[0.5, 0.5], [0.5, 0.5]]),
                         y_model="Bernoulli", theta=logit(_RISK), beta=np.array(beta, float),
                         name="varselect_bernoulli_discrete")


def bernoulli_discrete(n_subjects=1000, beta=(0.1, -0.1)):
    """Five clusters, five informative binary covariates, Bernoulli response."""
    codes = np.array([[0, 0, 1, 0, 0],
                      [1, 1, 0, 0, 1],
                      [0, 1, 0, 1, 0],
                      [1, 0, 1, 1, 1],
                      [1, 1, 1, 0, 0]])
    return SyntheticSpec(n_subjects=n_subjects, proportions=[0.2] * 5,
                         covariate_profiles=_binary_profiles(codes),
                         y_model="Bernoulli", theta=logit(_RISK), beta=np.array(beta, float),
                         name="bernoulli_discrete")


PRESETS = {"varselect_bernoulli_discrete": var_select_bernoulli_discrete,
           "bernoulli_discrete": bernoulli_discrete}
