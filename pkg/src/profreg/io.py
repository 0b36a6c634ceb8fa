"""Data files, configuration files and run archives on disk.

Data files are UTF-8 delimited text with a header line; the delimiter (tab or
comma) is detected from the header and ``NA`` is the only missing token.

Archive files hold one row per archived sweep, space separated, numbers
rendered with ``%.17g``.  Labels are written 1-based.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .model import ClusterParams, Dataset, HyperParams
from .sampler import SamplerConfig, SweepLog

MISSING = "NA"


def fmt(x):
    return "%.17g" % x


def _row(values):
    return " ".join(fmt(v) for v in np.ravel(values))


# -- data files ---------------------------------------------------------------


def _split(line, delim):
    return [tok.strip() for tok in line.rstrip("\r\n").split(delim)]


def read_table(path):
    """Header and rows of a delimited text file, NA cells as None."""
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path=path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty file", path=path)
    delim = "\t" if "\t" in lines[0] else ","
    header = _split(lines[0], delim)
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = _split(ln, delim)
        if len(cells) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(cells)}", row=lineno, path=path)
        row = []
        for name, cell in zip(header, cells):
            if cell == MISSING:
                row.append(None)
                continue
            try:
                row.append(float(cell))
            except ValueError:
                raise DataError(f"non-numeric value {cell!r}", row=lineno, column=name, path=path) from None
        rows.append(row)
    return header, rows


def load_dataset(path, covariates, kinds, outcome=None, y_model=None, fixed_effects=(),
                 trials=None, offset=None, n_categories=None):
    """Build a validated :class:`Dataset` from a delimited file.

    ``kinds`` is a single kind for every covariate or one per covariate.
    Line numbers in errors count the header as line 1.
    """
    header, rows = read_table(path)
    index = {name: k for k, name in enumerate(header)}
    covariates = list(covariates)
    fixed_effects = list(fixed_effects or ())
    for name in covariates + fixed_effects + [c for c in (outcome, trials, offset) if c]:
        if name not in index:
            raise DataError(f"column {name!r} not in header", path=path)
    if isinstance(kinds, str):
        kinds = [kinds] * len(covariates)

    def column(name, allow_missing):
        out = np.empty(len(rows))
        for r, row in enumerate(rows):
            v = row[index[name]]
            if v is None:
                if not allow_missing:
                    raise DataError("missing value not allowed here", row=r + 2, column=name, path=path)
                v = np.nan
            out[r] = v
        return out

    X = np.column_stack([column(c, True) for c in covariates]) if covariates else np.zeros((len(rows), 0))
    W = np.column_stack([column(c, False) for c in fixed_effects]) if fixed_effects else None
    y = column(outcome, False) if outcome else None
    try:
        data = Dataset(X=X, kinds=kinds, y=y, y_model=y_model if outcome else None, W=W,
                       trials=column(trials, False) if trials else None,
                       offset=column(offset, False) if offset else None,
                       n_categories=n_categories, covariate_names=covariates,
                       fixed_effect_names=fixed_effects, outcome_name=outcome or "outcome")
    except DataError as exc:
        # report file line numbers (header is line 1)
        row = None if exc.row is None else exc.row + 2
        raise DataError(exc.message, row=row, column=exc.column, path=path) from None
    return data


def save_dataset(data: Dataset, path, delimiter="\t", truth=None):
    """Write a dataset (and optional true labels as a last column) in the loadable format."""
    cols, names = [], []
    if data.y is not None:
        cols.append(data.y)
        names.append(data.outcome_name)
    for j, name in enumerate(data.covariate_names):
        cols.append(data.X[:, j])
        names.append(name)
    for l, name in enumerate(data.fixed_effect_names):
        cols.append(data.W[:, l])
        names.append(name)
    if data.y_model == "Binomial":
        cols.append(data.trials)
        names.append("trials")
    if data.y_model == "Poisson":
        cols.append(data.offset)
        names.append("offset")
    if truth is not None:
        cols.append(np.asarray(truth, float))
        names.append("truth")
    M = np.column_stack(cols)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(names) + "\n")
        for row in M:
            fh.write(delimiter.join(MISSING if np.isnan(v) else fmt(v) for v in row) + "\n")


# -- configuration ------------------------------------------------------------

RUN_KEYS = {"data", "outcome", "y_model", "covariates", "kinds", "fixed_effects", "trials", "offset",
            "n_categories", "output", "predict", "predict_mode", "postprocess", "k_max"}
SAMPLER_KEYS = {f.name for f in fields(SamplerConfig)}
HYPER_KEYS = {f.name for f in fields(HyperParams)}


def parse_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in ln.split("=", 1))
            out[k] = v
    return out


def _parse_value(text, current):
    """Coerce ``text`` to the type suggested by the current default."""
    t = text.strip()
    if t.lower() in ("none", "null"):
        return None
    if isinstance(current, bool):
        if t.lower() in ("true", "1", "yes"):
            return True
        if t.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(t)
    if isinstance(current, str):
        return t
    if ";" in t:
        return np.array([[float(x) for x in r.split(",")] for r in t.split(";")])
    if "," in t:
        return np.array([float(x) for x in t.split(",")])
    try:
        return float(t)
    except ValueError:
        return t


def split_config(entries):
    """Separate run options, sampler settings and ``hyper.`` overrides; unknown keys are errors."""
    run, sampler, hyper = {}, {}, {}
    defaults_s = SamplerConfig()
    defaults_h = HyperParams()
    for key, value in entries.items():
        if key.startswith("hyper."):
            name = key[len("hyper."):]
            if name not in HYPER_KEYS:
                raise ConfigError(f"unknown hyperparameter {name!r}")
            hyper[name] = value if not isinstance(value, str) else _parse_value(value, getattr(defaults_h, name))
        elif key in SAMPLER_KEYS:
            cur = getattr(defaults_s, key)
            if key == "seed":
                cur = 0
            sampler[key] = value if not isinstance(value, str) else _parse_value(value, cur)
        elif key in RUN_KEYS:
            run[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return run, sampler, hyper


# -- archives -----------------------------------------------------------------

TRACE_FILES = ("z", "alpha", "nClusters", "theta", "beta", "rho", "margModPost", "psi",
               "clusterParams", "tauY", "tauEps")


class ArchiveWriter:
    """Appends one line per archived sweep to each trace file."""

    def __init__(self, prefix, meta):
        self.prefix = str(prefix)
        parent = os.path.dirname(self.prefix)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self.meta = meta
        with open(self.prefix + "_run.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
        self.files = {}
        names = ["z", "alpha", "nClusters", "margModPost", "psi", "clusterParams"]
        if meta.get("y_model"):
            names += ["theta", "beta"]
            if meta["y_model"] == "Normal":
                names.append("tauY")
            if meta.get("extra_variation"):
                names.append("tauEps")
        if meta.get("var_select_type", "None") != "None":
            names.append("rho")
        for name in names:
            self.files[name] = open(f"{self.prefix}_{name}.txt", "w", encoding="utf-8")

    def path(self, name):
        return f"{self.prefix}_{name}.txt"

    def __call__(self, rec: SweepLog):
        f = self.files
        f["z"].write(_row(rec.z + 1) + "\n")
        f["alpha"].write(fmt(rec.alpha) + "\n")
        f["nClusters"].write(str(rec.n_clusters) + "\n")
        f["margModPost"].write(fmt(rec.log_marg_post) + "\n")
        f["psi"].write(_row(np.concatenate([[rec.psi.size], rec.psi])) + "\n")
        f["clusterParams"].write(_row(np.concatenate([[rec.psi.size], _flatten_params(rec)])) + "\n")
        if "theta" in f:
            th = np.atleast_1d(rec.theta)
            f["theta"].write(_row(np.concatenate([[th.shape[0]], th.ravel()])) + "\n")
            f["beta"].write((_row(rec.beta) if np.size(rec.beta) else "") + "\n")
        if "tauY" in f:
            f["tauY"].write(fmt(rec.tau_y) + "\n")
        if "tauEps" in f:
            f["tauEps"].write(fmt(rec.tau_eps) + "\n")
        if "rho" in f:
            f["rho"].write(_row(rec.rho) + "\n")
        for fh in f.values():
            fh.flush()

    def close(self):
        for fh in self.files.values():
            fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _flatten_params(rec):
    """Per label: theta, phi*, mu*, Sigma, concatenated label by label."""
    C = rec.psi.size
    parts = []
    p = rec.params
    for c in range(C):
        if p.theta is not None:
            parts.append(np.ravel(p.theta[c]))
        if rec.phi_star is not None:
            parts.append(rec.phi_star[c].ravel())
        if rec.mu_star is not None:
            parts.append(rec.mu_star[c])
            parts.append(p.Sigma[c].ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [ln.split() for ln in fh.read().splitlines()]


def read_archive(prefix):
    """Rebuild sweep records (with parameters) from archive files."""
    prefix = str(prefix)
    meta_path = prefix + "_run.json"
    if not os.path.exists(meta_path):
        raise DataError("run metadata not found", path=meta_path)
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    z_rows = _read_lines(prefix + "_z.txt")
    alpha = _read_lines(prefix + "_alpha.txt")
    ncl = _read_lines(prefix + "_nClusters.txt")
    mmp = _read_lines(prefix + "_margModPost.txt")
    psi = _read_lines(prefix + "_psi.txt")
    par = _read_lines(prefix + "_clusterParams.txt")
    beta = _read_lines(prefix + "_beta.txt") if os.path.exists(prefix + "_beta.txt") else None
    rho = _read_lines(prefix + "_rho.txt") if os.path.exists(prefix + "_rho.txt") else None
    T = min(len(z_rows), len(alpha), len(psi), len(par))
    dim = meta.get("theta_dim", 0) if meta.get("y_model") else 0
    Jd, Kmax, Jg = meta["Jd"], meta["Kmax"], meta["Jg"]
    records = []
    for t in range(T):
        z = np.array(z_rows[t], dtype=float).astype(np.int64) - 1
        ps = np.array(psi[t][1:], float)
        C = ps.size
        flat = np.array(par[t][1:], float)
        width = dim + Jd * Kmax + Jg + Jg * Jg
        blk = flat.reshape(C, width) if C else np.zeros((0, width))
        off = 0
        theta = phi = mu = Sigma = None
        if dim:
            theta = blk[:, :dim] if meta["y_model"] == "Categorical" else blk[:, 0]
            off = dim
        if Jd:
            phi = blk[:, off:off + Jd * Kmax].reshape(C, Jd, Kmax)
            off += Jd * Kmax
        if Jg:
            mu = blk[:, off:off + Jg]
            Sigma = blk[:, off + Jg:off + Jg + Jg * Jg].reshape(C, Jg, Jg)
        b = None
        if beta is not None:
            b = np.array(beta[t], float)
            if meta["y_model"] == "Categorical" and b.size:
                b = b.reshape(dim, -1)
        rec = SweepLog(sweep=t, z=z, alpha=float(alpha[t][0]), n_clusters=int(ncl[t][0]),
                       z_star=int(z.max()) + 1, c_star=C,
                       theta=None if theta is None else theta[:int(z.max()) + 1],
                       beta=b, rho=None if rho is None else np.array(rho[t], float),
                       log_marg_post=float(mmp[t][0]) if t < len(mmp) else float("nan"),
                       psi=ps, params=ClusterParams(theta=theta, Sigma=Sigma),
                       phi_star=phi, mu_star=mu)
        records.append(rec)
    return meta, records


def run_metadata(data: Dataset, hp: HyperParams, cfg: SamplerConfig, resp_dim: int, Kmax: int):
    hyper = {}
    for k, v in asdict(hp).items():
        hyper[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return {
        "n": data.n, "kinds": data.kinds, "covariate_names": data.covariate_names,
        "fixed_effect_names": data.fixed_effect_names, "y_model": data.y_model,
        "n_categories": [int(k) for k in data.n_categories],
        "n_outcome_categories": data.n_outcome_categories,
        "Jd": int(len(data.discrete_idx)), "Jg": int(len(data.normal_idx)), "Kmax": int(Kmax),
        "theta_dim": int(resp_dim), "extra_variation": bool(hp.extra_variation),
        "var_select_type": hp.var_select_type,
        "sampler": {k: v for k, v in asdict(cfg).items()}, "hyper": hyper,
    }


def write_matrix(path, M, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write("\t".join(header) + "\n")
        for row in np.atleast_2d(M):
            fh.write(" ".join(fmt(v) for v in row) + "\n")


def write_table(path, header, rows):
    """Tab separated table with a header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
