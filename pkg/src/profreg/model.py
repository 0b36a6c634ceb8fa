"""Data, hyperparameters, chain state and stick-breaking bookkeeping.

Cluster labels are stored 0-based in arrays (label ``c`` here is cluster
``c + 1`` in the usual 1-based notation and in every output file).  Counts
such as ``z_star`` and ``c_star`` are reported 1-based, i.e. as the number of
labels in ``A`` and ``A u P`` respectively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, InsufficientSticksError, ParameterDomainError

DISCRETE = "discrete"
NORMAL = "normal"

Y_MODELS = ("Bernoulli", "Binomial", "Poisson", "Categorical", "Normal")
VARIANTS = ("SliceDependent", "SliceIndependent", "Truncated")
VAR_SELECT_TYPES = ("None", "Continuous", "BinaryCluster")

V_MIN = 1e-300
V_MAX = 1.0 - 1e-15


@dataclass
class Dataset:
    """Outcome, covariates (NaN marks a missing entry) and fixed effects."""

    X: np.ndarray
    kinds: list
    y: Optional[np.ndarray] = None
    y_model: Optional[str] = None
    W: Optional[np.ndarray] = None
    trials: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    n_categories: Optional[np.ndarray] = None
    n_outcome_categories: Optional[int] = None
    covariate_names: Optional[list] = None
    fixed_effect_names: Optional[list] = None
    outcome_name: str = "outcome"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n, J = self.X.shape
        self.kinds = [str(k).lower() for k in self.kinds]
        if len(self.kinds) != J:
            raise DataError(f"{J} covariate columns but {len(self.kinds)} kinds")
        if J == 0:
            raise DataError("at least one covariate is required")
        for k in self.kinds:
            if k not in (DISCRETE, NORMAL):
                raise DataError(f"unknown covariate kind {k!r}")
        if self.covariate_names is None:
            self.covariate_names = [f"X{j + 1}" for j in range(J)]
        if self.W is None:
            self.W = np.zeros((n, 0))
        self.W = np.asarray(self.W, dtype=float).reshape(n, -1)
        if self.fixed_effect_names is None:
            self.fixed_effect_names = [f"W{l + 1}" for l in range(self.W.shape[1])]
        if np.any(~np.isfinite(self.W)):
            raise DataError("fixed effects may not be missing")

        obs = ~np.isnan(self.X)
        K = np.zeros(J, dtype=int)
        given = None if self.n_categories is None else np.asarray(self.n_categories, int)
        for j, kind in enumerate(self.kinds):
            col = self.X[obs[:, j], j]
            if kind == DISCRETE:
                if np.any(col != np.round(col)) or np.any(col < 0):
                    bad = np.nonzero(obs[:, j] & ((self.X[:, j] != np.round(self.X[:, j])) | (self.X[:, j] < 0)))[0][0]
                    raise DataError("discrete covariate values must be non-negative integers",
                                    row=int(bad), column=self.covariate_names[j])
                inferred = int(col.max()) + 1 if col.size else 2
                K[j] = max(2, inferred) if given is None or given[j] <= 0 else given[j]
                if col.size and col.max() >= K[j]:
                    bad = int(np.nonzero(obs[:, j] & (self.X[:, j] >= K[j]))[0][0])
                    raise DataError(f"category {int(self.X[bad, j])} outside [0, {K[j]})",
                                    row=bad, column=self.covariate_names[j])
            elif np.any(~np.isfinite(col)):
                raise DataError("non-finite continuous covariate", column=self.covariate_names[j])
        self.n_categories = K

        if self.y_model is not None:
            if self.y_model not in Y_MODELS:
                raise DataError(f"unknown outcome model {self.y_model!r}")
            if self.y is None:
                raise DataError(f"outcome model {self.y_model} needs an outcome column")
            self.y = np.asarray(self.y, dtype=float).reshape(-1)
            if self.y.size != n:
                raise DataError("outcome length does not match covariates")
            if np.any(~np.isfinite(self.y)):
                raise DataError("outcome may not be missing", column=self.outcome_name)
            self._check_outcome()

    def _check_outcome(self):
        y, m = self.y, self.y_model
        integer = np.all(y == np.round(y))
        if m == "Bernoulli":
            if not np.all((y == 0) | (y == 1)):
                raise DataError("Bernoulli outcome must be 0/1", column=self.outcome_name)
        elif m == "Binomial":
            if self.trials is None:
                raise DataError("Binomial outcome needs trials")
            self.trials = np.asarray(self.trials, dtype=float).reshape(-1)
            if np.any(self.trials < 1) or np.any(self.trials != np.round(self.trials)):
                raise DataError("trials must be positive integers")
            if not integer or np.any(y < 0) or np.any(y > self.trials):
                raise DataError("Binomial outcome must lie in [0, trials]", column=self.outcome_name)
        elif m == "Poisson":
            if self.offset is None:
                self.offset = np.ones_like(y)
            self.offset = np.asarray(self.offset, dtype=float).reshape(-1)
            if np.any(~(self.offset > 0)):
                raise DataError("Poisson offsets must be positive")
            if not integer or np.any(y < 0):
                raise DataError("Poisson outcome must be a non-negative integer", column=self.outcome_name)
        elif m == "Categorical":
            if not integer or np.any(y < 0):
                raise DataError("categorical outcome must be a non-negative integer", column=self.outcome_name)
            R = self.n_outcome_categories or int(y.max()) + 1
            if np.any(y >= R):
                raise DataError(f"categorical outcome outside [0, {R})", column=self.outcome_name)
            self.n_outcome_categories = max(2, R)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def J(self):
        return self.X.shape[1]

    @property
    def L(self):
        return self.W.shape[1]

    @property
    def missing(self):
        return np.isnan(self.X)

    @property
    def discrete_idx(self):
        return np.array([j for j, k in enumerate(self.kinds) if k == DISCRETE], dtype=int)

    @property
    def normal_idx(self):
        return np.array([j for j, k in enumerate(self.kinds) if k == NORMAL], dtype=int)


@dataclass
class HyperParams:
    """Prior hyperparameters and model options.

    ``None`` entries of the Gaussian block are filled from the data by
    :meth:`resolve`.  ``R0`` follows the inverse-Wishart convention of
    :mod:`profreg.rand`: ``E[Sigma_c] = inv(R0) / (kappa0 - J - 1)``.
    """

    mu0: Optional[np.ndarray] = None
    Sigma0: Optional[np.ndarray] = None
    R0: Optional[np.ndarray] = None
    kappa0: Optional[float] = None
    a_dir: Optional[float] = 1.0
    mu_theta: float = 0.0
    sigma_theta: float = 2.5
    mu_beta: float = 0.0
    sigma_beta: float = 2.5
    t_dof: float = 7.0
    shape_alpha: float = 1.0
    rate_alpha: float = 0.5
    alpha_fixed: Optional[float] = None
    s_tau_y: float = 2.5
    r_tau_y: float = 2.5
    s_tau_eps: float = 5.0
    r_tau_eps: float = 0.5
    a_rho: float = 0.5
    b_rho: float = 0.5
    var_select_type: str = "None"
    extra_variation: bool = False

    def resolve(self, data: Dataset) -> "HyperParams":
        """Copy with data-dependent defaults filled and every value validated."""
        hp = HyperParams(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        gidx = data.normal_idx
        Jg = gidx.size
        if Jg:
            Xg = data.X[:, gidx]
            means = np.nanmean(Xg, axis=0)
            var = np.nanvar(Xg, axis=0)
            rng_ = np.nanmax(Xg, axis=0) - np.nanmin(Xg, axis=0)
            var = np.where(var > 0, var, 1.0)
            rng_ = np.where(rng_ > 0, rng_, 1.0)
            hp.mu0 = means if hp.mu0 is None else np.asarray(hp.mu0, float).reshape(Jg)
            hp.Sigma0 = np.diag(rng_ ** 2) if hp.Sigma0 is None else np.asarray(hp.Sigma0, float).reshape(Jg, Jg)
            hp.kappa0 = float(Jg + 2) if hp.kappa0 is None else float(hp.kappa0)
            if hp.R0 is None:
                hp.R0 = np.diag(1.0 / var) / (hp.kappa0 - Jg - 1)
            hp.R0 = np.asarray(hp.R0, float).reshape(Jg, Jg)
        hp.validate(data)
        return hp

    def validate(self, data: Optional[Dataset] = None):
        for name in ("sigma_theta", "sigma_beta", "t_dof", "shape_alpha", "rate_alpha",
                     "s_tau_y", "r_tau_y", "s_tau_eps", "r_tau_eps", "a_rho", "b_rho"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterDomainError(f"hyperparameter {name} must be positive, got {v}")
        if self.alpha_fixed is not None and not self.alpha_fixed > 0:
            raise ParameterDomainError("alpha_fixed must be positive")
        if np.any(np.asarray(self.a_dir, float) <= 0):
            raise ParameterDomainError("Dirichlet concentrations must be positive")
        if self.var_select_type not in VAR_SELECT_TYPES:
            raise ParameterDomainError(f"unknown var_select_type {self.var_select_type!r}")
        if self.Sigma0 is not None:
            Jg = np.atleast_2d(self.Sigma0).shape[0]
            if not self.kappa0 > Jg - 1:
                raise ParameterDomainError(f"kappa0={self.kappa0} must exceed J-1={Jg - 1}")
            for name in ("Sigma0", "R0"):
                m = np.atleast_2d(getattr(self, name))
                if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
                    raise ParameterDomainError(f"{name} must be symmetric positive definite")
        if data is not None and self.extra_variation and data.y_model not in ("Bernoulli", "Binomial", "Poisson"):
            raise ParameterDomainError("extra variation needs a Bernoulli, Binomial or Poisson outcome")


# ---------------------------------------------------------------------------
# stick breaking


def stick_weights(v):
    """psi_c = V_c * prod_{l<c} (1 - V_l)."""
    v = np.asarray(v, dtype=float)
    if np.any(~(v >= 0) | ~(v <= 1)):
        raise ParameterDomainError("stick proportions must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rest = np.concatenate([[0.0], np.cumsum(np.log1p(-v[:-1]))]) if v.size else v
        return np.exp(np.log(v) + log_rest)


def log_remaining(v):
    """log prod_{l<=c} (1 - V_l) for every c, i.e. log(1 - sum_{l<=c} psi_l)."""
    with np.errstate(divide="ignore"):
        return np.cumsum(np.log1p(-np.asarray(v, dtype=float)))


def clamp_sticks(v):
    return np.clip(v, V_MIN, V_MAX)


def refresh_counts(z, size=None):
    """Cluster sizes n_c and tail counts n_c^+ = #{i: Z_i > c} for 0-based z."""
    z = np.asarray(z, dtype=np.int64)
    size = int(z.max()) + 1 if size is None else size
    n = np.bincount(z, minlength=size)[:size]
    nplus = z.size - np.cumsum(n)
    return n, nplus


def compute_active_bounds(z, u, v):
    """(z_star, u_star, c_star) with z_star and c_star as 1-based counts.

    c_star is the smallest c with sum_{l<=c} psi_l > 1 - u_star, evaluated as
    prod_{l<=c}(1 - V_l) < u_star to avoid cancellation.
    """
    z_star = int(np.max(z)) + 1
    u_star = float(np.min(u))
    rem = log_remaining(v)
    hit = np.nonzero(rem < np.log(u_star))[0]
    if hit.size == 0:
        raise InsufficientSticksError(
            f"{len(v)} sticks leave mass {np.exp(rem[-1]) if len(v) else 1.0:.3g} >= u_star={u_star:.3g}")
    return z_star, u_star, int(hit[0]) + 1


def slice_xi(c_count, kappa):
    """Deterministic slice sequence xi_c = (1 - kappa) kappa^(c-1), c = 1..c_count."""
    return (1.0 - kappa) * kappa ** np.arange(c_count)


def xi_c_star(u_star, kappa):
    """Number of leading labels whose xi exceeds u_star."""
    # xi_c > u  <=>  c - 1 < log(u / (1-kappa)) / log(kappa); count exactly near the edge
    bound = np.log(u_star / (1.0 - kappa)) / np.log(kappa)
    m = max(int(np.ceil(bound)), 0) + 2
    return int(np.sum(slice_xi(m, kappa) > u_star))


# ---------------------------------------------------------------------------
# chain state


@dataclass
class ClusterParams:
    """Per-label parameters stored in arrays indexed by 0-based label."""

    mu: Optional[np.ndarray] = None        # (C, Jg)
    Sigma: Optional[np.ndarray] = None     # (C, Jg, Jg)
    phi: Optional[np.ndarray] = None       # (C, Jd, Kmax), zero padded
    theta: Optional[np.ndarray] = None     # (C,) or (C, R-1)
    gamma: Optional[np.ndarray] = None     # (C, J) selection indicators in {0, 1}

    _FIELDS = ("mu", "Sigma", "phi", "theta", "gamma")

    @property
    def capacity(self):
        for name in self._FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                return arr.shape[0]
        return 0

    def grow(self, size):
        cap = self.capacity
        if size <= cap:
            return
        new = max(size, 2 * cap, 8)
        for name in self._FIELDS:
            arr = getattr(self, name)
            if arr is None:
                continue
            pad = np.zeros((new - cap,) + arr.shape[1:], dtype=arr.dtype)
            setattr(self, name, np.concatenate([arr, pad]))

    def swap(self, a, b):
        for name in self._FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                arr[[a, b]] = arr[[b, a]]

    def snapshot(self, upto):
        return ClusterParams(**{name: (None if getattr(self, name) is None else getattr(self, name)[:upto].copy())
                                for name in self._FIELDS})


@dataclass
class GlobalParams:
    beta: Optional[np.ndarray] = None      # (L,) or (R-1, L)
    tau_y: float = 1.0
    tau_eps: float = 1.0
    lam: Optional[np.ndarray] = None       # latent linear predictor (extra variation)
    rho: Optional[np.ndarray] = None       # (J,)
    omega: Optional[np.ndarray] = None     # (J,) sparsity indicators
    zeta: Optional[np.ndarray] = None      # (J,) soft selection weights


@dataclass
class ChainState:
    z: np.ndarray
    v: np.ndarray
    alpha: float
    clusters: ClusterParams
    globals: GlobalParams = field(default_factory=GlobalParams)
    u: Optional[np.ndarray] = None
    x_normal: Optional[np.ndarray] = None  # Gaussian covariates with missing entries imputed
    z_star: int = 0
    c_star: int = 0
    u_star: float = 1.0

    @property
    def psi(self):
        return stick_weights(self.v)

    def counts(self, size=None):
        return refresh_counts(self.z, size if size is not None else max(self.c_star, self.z_star, 1))

    def refresh_z_star(self):
        self.z_star = int(self.z.max()) + 1
        return self.z_star

    def swap_labels(self, a, b):
        za = self.z == a
        zb = self.z == b
        self.z[za] = b
        self.z[zb] = a
        self.clusters.swap(a, b)
