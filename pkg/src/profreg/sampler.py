"""Blocked slice sampler for the profile regression mixture.

One sweep runs steps A to G in order:

A  counts n_c and n_c^+ for the active labels
B  sticks, cluster parameters, label-switch moves and slice variables
C  U* and Z*
D  alpha, then extension of the sticks to C*
E  prior draws for the potential labels
F  global parameters (fixed effects, precisions, selection probabilities)
G  allocation, then imputation of missing Gaussian covariates

Three variants share the code: ``SliceDependent`` (slices on psi),
``SliceIndependent`` (slices on a geometric sequence xi) and ``Truncated``
(a fixed number of components, no slice variables).
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .covariates import CovariateModel
from .errors import (ImpossibleStateError, ParameterDomainError, SamplerError,
                     StickExtensionError)
from .model import (VARIANTS, ChainState, ClusterParams, Dataset, GlobalParams,
                    HyperParams, clamp_sticks, log_remaining, refresh_counts,
                    slice_xi, xi_c_star)
from .rand import AdaptiveKernelState, adaptive_rwm_step, make_rng, mh_accept, sample_beta
from .response import ResponseModel


@dataclass
class SamplerConfig:
    """Run settings kept apart from the prior hyperparameters."""

    variant: str = "SliceDependent"
    n_sweeps: int = 1000
    n_burn: int = 1000
    n_clus_init: int = 20
    truncation: int = 50
    kappa: float = 0.8
    report_every: int = 0
    label_switch: bool = True
    compute_marg_post: bool = True
    check_invariants: bool = True
    store_params: bool = True
    seed: Optional[int] = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise ParameterDomainError(f"unknown sampler variant {self.variant!r}")
        if self.n_sweeps < 0 or self.n_burn < 0:
            raise ParameterDomainError("n_sweeps and n_burn must be non-negative")
        if self.n_clus_init < 1:
            raise ParameterDomainError("n_clus_init must be at least 1")
        if not 0 < self.kappa < 1:
            raise ParameterDomainError("kappa must lie in (0, 1)")
        if self.variant == "Truncated" and self.truncation < max(2, self.n_clus_init):
            raise ParameterDomainError("truncation must be at least max(2, n_clus_init)")


@dataclass
class SweepLog:
    """Record of one archived sweep (labels 0-based)."""

    sweep: int
    z: np.ndarray
    alpha: float
    n_clusters: int
    z_star: int
    c_star: int
    theta: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    tau_y: Optional[float] = None
    tau_eps: Optional[float] = None
    log_marg_post: float = float("nan")
    psi: Optional[np.ndarray] = None
    params: Optional[ClusterParams] = None
    phi_star: Optional[np.ndarray] = None
    mu_star: Optional[np.ndarray] = None


@dataclass
class Archive:
    """Post burn-in sweep records plus the online co-allocation counts."""

    n: int
    records: list = field(default_factory=list)
    co_counts: Optional[np.ndarray] = None
    violations: Counter = field(default_factory=Counter)
    acceptance: dict = field(default_factory=dict)
    seconds: float = 0.0

    def add(self, rec: SweepLog, track_similarity=True):
        self.records.append(rec)
        if track_similarity:
            if self.co_counts is None:
                self.co_counts = np.zeros((self.n, self.n), dtype=np.int64)
            self.co_counts += rec.z[:, None] == rec.z[None, :]

    def __len__(self):
        return len(self.records)

    def similarity(self):
        if not self.records:
            raise ValueError("archive is empty")
        if self.co_counts is None:
            from .postprocess import build_similarity
            return build_similarity([r.z for r in self.records])
        return self.co_counts / len(self.records)

    def allocations(self):
        return np.array([r.z for r in self.records])

    def trace(self, name):
        return np.array([getattr(r, name) for r in self.records])


def log_eppf(z, alpha):
    """Log exchangeable partition probability of the Dirichlet process."""
    sizes = np.bincount(z)
    sizes = sizes[sizes > 0]
    n = z.size
    return float(gammaln(alpha) - gammaln(alpha + n) + sizes.size * np.log(alpha) + gammaln(sizes).sum())


class Sampler:
    """Chain driver; owns its state, kernels and random stream."""

    def __init__(self, data: Dataset, hp: HyperParams, cfg: SamplerConfig, rng=None):
        cfg.validate()
        self.data = data
        self.hp = hp.resolve(data)
        self.cfg = cfg
        self.rng = rng if rng is not None else make_rng(cfg.seed)
        # invariant spot checks draw from their own stream so they never perturb the chain
        self.check_rng = make_rng(self.rng.integers(2 ** 63))
        self.cov = CovariateModel(data, self.hp)
        self.resp = ResponseModel(data, self.hp) if data.y_model is not None else None
        self.alpha_kernel = AdaptiveKernelState()
        self.moves = {m: Counter() for m in (1, 2, 3)}
        self.violations = Counter()
        self.sweep_index = 0
        self.adapting = True
        self.n = data.n
        self.stick_cap = 10 * self.n + 1000
        self.state: Optional[ChainState] = None

    @property
    def truncated(self):
        return self.cfg.variant == "Truncated"

    @property
    def independent(self):
        return self.cfg.variant == "SliceIndependent"

    # -- initialisation -------------------------------------------------------

    def _ensure_capacity(self, size):
        cl = self.state.clusters
        cl.grow(size)
        cap = cl.capacity
        self.cov.grow(cap)
        if self.resp is not None:
            self.resp.grow(cap)

    def initialize(self):
        rng = self.rng
        hp = self.hp
        n_init = self.cfg.n_clus_init
        z = rng.integers(0, n_init, size=self.n).astype(np.int64)
        alpha = hp.alpha_fixed if hp.alpha_fixed is not None else \
            float(rng.gamma(hp.shape_alpha, 1.0 / hp.rate_alpha))
        z_star = int(z.max()) + 1
        cap = self.cfg.truncation if self.truncated else max(z_star, 8)
        clusters = ClusterParams()
        self.cov.allocate(clusters, cap)
        if self.resp is not None:
            self.resp.allocate(clusters, cap)
        n_v = self.cfg.truncation if self.truncated else z_star
        v = clamp_sticks(sample_beta(1.0, alpha, rng, size=n_v))
        if self.truncated:
            v[-1] = 1.0
        state = ChainState(z=z, v=v, alpha=alpha, clusters=clusters, globals=GlobalParams())
        state.x_normal = self.cov.initial_x_normal()
        state.z_star = z_star
        state.c_star = self.cfg.truncation if self.truncated else z_star
        self.state = state
        self._ensure_capacity(state.c_star)
        self.cov.init_globals(state.globals, rng)
        self.cov.sample_prior(state, np.arange(state.c_star), rng)
        if self.resp is not None:
            self.resp.sample_prior(state, np.arange(state.c_star), rng)
            self.resp.init_globals(state.globals, state, rng)
        return state

    # -- helpers --------------------------------------------------------------

    def _log_psi(self, v):
        with np.errstate(divide="ignore"):
            rest = np.concatenate([[0.0], np.cumsum(np.log1p(-v[:-1]))])
            return np.log(v) + rest

    def _n_sticks_for_alpha(self):
        s = self.state
        return self.cfg.truncation - 1 if self.truncated else s.z_star

    # -- step B ---------------------------------------------------------------

    def step_b1_sticks(self):
        s = self.state
        m = self._n_sticks_for_alpha()
        n_c, nplus = refresh_counts(s.z, m)
        v = s.v
        v[:m] = clamp_sticks(sample_beta(1.0 + n_c, s.alpha + nplus, self.rng))

    def step_b2_parameters(self):
        self.cov.update_active(self.state, self.rng)
        if self.resp is not None:
            self.resp.update_theta(self.state, self.rng)
        if self.truncated:
            # empty labels above Z* are updated from the prior
            s = self.state
            labels = np.arange(s.z_star, self.cfg.truncation)
            self.cov.sample_prior(s, labels, self.rng)
            if self.resp is not None:
                self.resp.sample_prior(s, labels, self.rng)

    def _pair_terms(self, v, n, nplus, alpha):
        """Stick-breaking target contribution of a set of positions."""
        with np.errstate(divide="ignore", invalid="ignore"):
            t = n * np.log(v) + (nplus + alpha - 1.0) * np.log1p(-v)
        return np.where(np.isnan(t), -np.inf, t).sum()

    def label_move_proposal(self, move, c):
        """Log acceptance ratio and new sticks for swapping labels c and c+1.

        Returns ``None`` when the proposal is rejected outright.
        """
        s = self.state
        zs = int(s.z.max()) + 1
        n, nplus = refresh_counts(s.z, zs)
        if c + 1 == zs - 1 and n[c] == 0:
            # the swap would shrink Z*; rejecting keeps the proposal symmetric
            return None
        if move > 1 and self.truncated and c + 1 >= self.cfg.truncation - 1:
            return None
        vc, vd = s.v[c], s.v[c + 1]
        nn = np.array([n[c + 1], n[c]])
        np_new = np.array([n[c] + nplus[c + 1], nplus[c + 1]])
        old_n = np.array([n[c], n[c + 1]])
        old_np = np.array([nplus[c], nplus[c + 1]])
        if move == 1:
            lp = self._log_psi(s.v[:c + 2])
            return (n[c + 1] - n[c]) * (lp[c] - lp[c + 1]), None
        if move == 2:
            new_v = np.array([vd, vc])
            return (self._pair_terms(new_v, nn, np_new, s.alpha)
                    - self._pair_terms(np.array([vc, vd]), old_n, old_np, s.alpha)), new_v
        new_v = clamp_sticks(sample_beta(1.0 + nn, s.alpha + np_new, self.rng))
        return (betaln(1.0 + nn, s.alpha + np_new).sum()
                - betaln(1.0 + old_n, s.alpha + old_np).sum()), new_v

    def label_switch_moves(self):
        """Three Metropolis moves on adjacent label pairs, U integrated out."""
        s = self.state
        for move in (1, 2, 3):
            zs = int(s.z.max()) + 1
            if zs < 2:
                continue
            c = int(self.rng.integers(0, zs - 1))
            self.moves[move]["proposed"] += 1
            prop = self.label_move_proposal(move, c)
            if prop is None:
                continue
            log_ratio, new_v = prop
            if mh_accept(log_ratio, self.rng):
                s.swap_labels(c, c + 1)
                if new_v is not None:
                    s.v[c], s.v[c + 1] = new_v
                self.moves[move]["accepted"] += 1

    def step_b4_slices(self):
        s = self.state
        if self.truncated:
            s.u = None
            return
        if self.independent:
            width = slice_xi(s.z_star, self.cfg.kappa)[s.z]
        else:
            width = np.exp(self._log_psi(s.v[:s.z_star]))[s.z]
        u = self.rng.random(self.n) * width
        s.u = np.maximum(u, np.finfo(float).tiny)
        if self.cfg.check_invariants and not self.independent:
            self.violations["u_below_psi"] += int(np.sum(~(s.u < width)))

    # -- steps C, D, E --------------------------------------------------------

    def step_c_bounds(self):
        s = self.state
        s.z_star = int(s.z.max()) + 1
        if s.u is not None:
            s.u_star = float(s.u.min())

    def step_d1_alpha(self):
        s = self.state
        hp = self.hp
        if hp.alpha_fixed is not None:
            s.alpha = float(hp.alpha_fixed)
            return
        m = self._n_sticks_for_alpha()
        slog = float(np.sum(np.log1p(-s.v[:m])))

        def log_target(x):
            a = np.exp(x)
            return (hp.shape_alpha * x - hp.rate_alpha * a) + m * x + (a - 1.0) * slog

        self.alpha_kernel.adapting = self.adapting
        x, _, _ = adaptive_rwm_step(log_target, np.log(s.alpha), self.alpha_kernel, self.rng)
        s.alpha = float(np.exp(x))

    def step_d2_extend(self):
        """Truncate the sticks to Z* and extend with Beta(1, alpha) draws until C* is certified."""
        s = self.state
        if self.truncated:
            s.c_star = self.cfg.truncation
            return
        v = s.v[:s.z_star]
        if self.independent:
            target = xi_c_star(s.u_star, self.cfg.kappa)
            if target > self.stick_cap:
                raise StickExtensionError(f"C* = {target} exceeds the cap {self.stick_cap}")
            extra = max(target - v.size, 0)
            if extra:
                v = np.concatenate([v, clamp_sticks(sample_beta(1.0, s.alpha, self.rng, size=extra))])
            s.v = v
            s.c_star = target
        else:
            log_u = np.log(s.u_star)
            rem = log_remaining(v)[-1] if v.size else 0.0
            batch = 8
            while not rem < log_u:
                if v.size >= self.stick_cap:
                    raise StickExtensionError(
                        f"stick extension exceeded {self.stick_cap} components (alpha={s.alpha:.3g}, U*={s.u_star:.3g})")
                new = clamp_sticks(sample_beta(1.0, s.alpha, self.rng, size=batch))
                v = np.concatenate([v, new])
                rem = log_remaining(v)[-1]
                batch *= 2
            # keep only the sticks up to C*
            s.c_star = int(np.nonzero(log_remaining(v) < log_u)[0][0]) + 1
            s.v = v[:max(s.c_star, s.z_star)].copy()
        if self.cfg.check_invariants:
            self._check_bounds()

    def _check_bounds(self):
        s = self.state
        self.violations["c_star_below_z_star"] += int(s.c_star < s.z_star)
        if self.independent:
            xi = slice_xi(s.c_star + 10, self.cfg.kappa)
            self.violations["beyond_c_star"] += int(np.sum(xi[s.c_star:] > s.u_star))
        else:
            extra = clamp_sticks(sample_beta(1.0, s.alpha, self.check_rng, size=10))
            lp = self._log_psi(np.concatenate([s.v, extra]))[s.c_star:]
            self.violations["beyond_c_star"] += int(np.sum(~(lp < np.log(s.u_star))))

    def step_e_potential(self):
        s = self.state
        if self.truncated:
            return
        self._ensure_capacity(s.c_star)
        labels = np.arange(s.z_star, s.c_star)
        self.cov.sample_prior(s, labels, self.rng)
        if self.resp is not None:
            self.resp.sample_prior(s, labels, self.rng)

    # -- steps F, G -----------------------------------------------------------

    def step_f_globals(self):
        if self.resp is not None:
            self.resp.update_globals(self.state, self.rng)
        self.cov.update_selectors(self.state, self.rng)

    def allocation_log_weights(self):
        """(C*, n) unnormalised log allocation weights."""
        s = self.state
        C = s.c_star
        logf = self.cov.loglik_matrix(s, C)
        if self.resp is not None:
            logf = logf + self.resp.loglik_matrix(s, C)
        log_psi = self._log_psi(s.v[:C])
        if self.truncated:
            return logf + log_psi[:, None]
        if self.independent:
            xi = slice_xi(C, self.cfg.kappa)
            ok = xi[:, None] > s.u[None, :]
            return np.where(ok, logf + (log_psi - np.log(xi))[:, None], -np.inf)
        ok = log_psi[:, None] > np.log(s.u)[None, :]
        return np.where(ok, logf, -np.inf)

    def step_g_allocate(self):
        s = self.state
        lw = self.allocation_log_weights()
        with np.errstate(invalid="ignore"):
            lse = logsumexp(lw, axis=0)
        if not np.all(np.isfinite(lse)):
            bad = int(np.nonzero(~np.isfinite(lse))[0][0])
            raise ImpossibleStateError(f"no admissible cluster for individual {bad + 1}")
        p = np.exp(lw - lse[None, :])
        cum = np.cumsum(p, axis=0)
        u = self.rng.random(self.n) * cum[-1]
        z = (u[None, :] > cum).sum(axis=0)
        old_counts = np.bincount(s.z, minlength=s.c_star)
        s.z = np.minimum(z, s.c_star - 1).astype(np.int64)
        if self.adapting:
            new_counts = np.bincount(s.z, minlength=old_counts.size)[:old_counts.size]
            emptied = np.nonzero((old_counts > 0) & (new_counts == 0))[0]
            self.cov.reset_kernels(emptied)
            if self.resp is not None:
                self.resp.reset_kernels(emptied)
        s.z_star = int(s.z.max()) + 1
        self.cov.impute_missing(s, self.rng)

    # -- sweep ----------------------------------------------------------------

    def sweep(self):
        steps = (("B.1", self.step_b1_sticks), ("B.2", self.step_b2_parameters),
                 ("B.3", self.label_switch_moves if self.cfg.label_switch else None),
                 ("B.4", self.step_b4_slices), ("C", self.step_c_bounds),
                 ("D.1", self.step_d1_alpha), ("D.2", self.step_d2_extend),
                 ("E", self.step_e_potential), ("F", self.step_f_globals),
                 ("G", self.step_g_allocate))
        self.state.z_star = int(self.state.z.max()) + 1
        for name, fn in steps:
            if fn is None:
                continue
            try:
                fn()
            except SamplerError:
                raise
            except Exception as exc:
                raise SamplerError(self.sweep_index, name, exc) from exc
        self.sweep_index += 1

    def freeze_adaptation(self):
        self.adapting = False
        self.alpha_kernel.adapting = False
        self.cov.freeze()
        if self.resp is not None:
            self.resp.freeze()

    def log_marg_model_post(self):
        """log p(Z | D) up to a constant: covariate and response marginals plus the EPPF."""
        s = self.state
        K = int(s.z.max()) + 1
        total = log_eppf(s.z, s.alpha) + self.cov.log_marginal(s.z, K, s.x_normal)
        if self.resp is not None:
            total += self.resp.log_marginal(s, K)
        return float(total)

    def record(self):
        s = self.state
        cfg = self.cfg
        gl = s.globals
        counts = np.bincount(s.z)
        rec = SweepLog(sweep=self.sweep_index, z=s.z.copy(), alpha=s.alpha,
                       n_clusters=int(np.count_nonzero(counts)), z_star=s.z_star, c_star=s.c_star)
        if self.resp is not None:
            rec.theta = s.clusters.theta[:s.z_star].copy()
            rec.beta = None if gl.beta is None else np.array(gl.beta, copy=True)
            rec.tau_y = gl.tau_y if self.resp.kind == "Normal" else None
            rec.tau_eps = gl.tau_eps if self.resp.extra else None
        if gl.rho is not None:
            rec.rho = np.array(gl.rho, copy=True)
            rec.omega = np.array(gl.omega, copy=True)
        if cfg.compute_marg_post:
            rec.log_marg_post = self.log_marg_model_post()
        if cfg.store_params:
            rec.psi = np.exp(self._log_psi(s.v[:s.c_star]))
            rec.params = s.clusters.snapshot(s.c_star)
            sel = self.cov.selectors(s, s.c_star)
            if self.cov.Jd:
                rec.phi_star = self.cov.phi_star(s, s.c_star, sel)
            if self.cov.Jg:
                rec.mu_star = self.cov.mu_star(s, s.c_star, sel)
        return rec

    def acceptance_summary(self):
        out = {"alpha": self.alpha_kernel.acceptance_rate}
        for m, c in self.moves.items():
            out[f"label_move_{m}"] = c["accepted"] / c["proposed"] if c["proposed"] else float("nan")
        if self.resp is not None:
            out["theta"] = self.resp.theta_kernels.acceptance_rate()
            out["beta"] = self.resp.beta_kernels.acceptance_rate()
            if self.resp.extra:
                out["lambda"] = self.resp.lam_kernels.acceptance_rate()
        if self.cov.select == "Continuous":
            out["phi"] = self.cov.phi_kernels.acceptance_rate()
            out["rho"] = self.cov.rho_kernels.acceptance_rate()
        return out

    def run(self, on_record: Optional[Callable] = None, track_similarity=True, log=None):
        """Burn-in then archived sweeps; returns the archive."""
        if self.state is None:
            self.initialize()
        archive = Archive(n=self.n)
        t0 = time.perf_counter()
        total = self.cfg.n_burn + self.cfg.n_sweeps
        for t in range(total):
            if t == self.cfg.n_burn:
                self.freeze_adaptation()
            self.sweep()
            if t >= self.cfg.n_burn:
                rec = self.record()
                archive.add(rec, track_similarity)
                if on_record is not None:
                    on_record(rec)
            if log is not None and self.cfg.report_every and (t + 1) % self.cfg.report_every == 0:
                log(f"sweep {t + 1}/{total} alpha={self.state.alpha:.3f} "
                    f"clusters={np.count_nonzero(np.bincount(self.state.z))} C*={self.state.c_star}")
        if self.cfg.n_burn >= total:
            self.freeze_adaptation()
        archive.seconds = time.perf_counter() - t0
        archive.violations = Counter(self.violations)
        archive.acceptance = self.acceptance_summary()
        return archive


def run_chain(data, hp=None, cfg=None, rng=None, on_record=None, track_similarity=True, log=None):
    """Convenience wrapper: build a sampler, run it and return ``(archive, sampler)``."""
    sampler = Sampler(data, hp or HyperParams(), cfg or SamplerConfig(), rng)
    archive = sampler.run(on_record=on_record, track_similarity=track_similarity, log=log)
    return archive, sampler
