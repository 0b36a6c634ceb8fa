"""Command line entry point: ``profreg run|generate|postprocess|predict|margmodpost``."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .errors import ConfigError, DataError, ParameterDomainError, SamplerError
from .model import HyperParams
from .postprocess import (batch_means_se, build_similarity, ls_optimal_partition, pam_optimal_partition, predict,
                          risk_profiles)
from .rand import make_rng
from .sampler import Sampler, SamplerConfig
from .simulate import PRESETS, generate_sample_data

ENV_OUTPUT_DIR = "PROFREG_OUTPUT_DIR"


def default_prefix():
    return os.path.join(os.environ.get(ENV_OUTPUT_DIR, "."), "output")


def _csv(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _ints(text):
    return [int(v) for v in _csv(text)] if text else None


def _add_run_args(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--data")
    p.add_argument("--outcome")
    p.add_argument("--y-model", dest="y_model")
    p.add_argument("--covariates", help="comma separated covariate columns")
    p.add_argument("--kinds", help="'discrete', 'normal', or a comma separated list")
    p.add_argument("--fixed-effects", dest="fixed_effects")
    p.add_argument("--trials")
    p.add_argument("--offset")
    p.add_argument("--n-categories", dest="n_categories", help="comma separated category counts")
    p.add_argument("--output", help="output prefix")
    p.add_argument("--predict", help="scenario file for predictions")
    p.add_argument("--predict-mode", dest="predict_mode")
    p.add_argument("--postprocess", choices=["true", "false"])
    p.add_argument("--k-max", dest="k_max")
    p.add_argument("--variant")
    p.add_argument("--n-sweeps", dest="n_sweeps")
    p.add_argument("--n-burn", dest="n_burn")
    p.add_argument("--n-clus-init", dest="n_clus_init")
    p.add_argument("--truncation")
    p.add_argument("--kappa")
    p.add_argument("--seed")
    p.add_argument("--hyper", action="append", default=[], metavar="NAME=VALUE")


def build_parser():
    parser = argparse.ArgumentParser(prog="profreg", description="Dirichlet process profile regression")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the sampler")
    _add_run_args(run)

    gen = sub.add_parser("generate", help="simulate a dataset from a preset")
    gen.add_argument("--preset", choices=sorted(PRESETS), default="varselect_bernoulli_discrete")
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--output", required=True, help="data file to write")

    post = sub.add_parser("postprocess", help="similarity, partitions and profiles from an archive")
    post.add_argument("--output", default=None, help="archive prefix")
    post.add_argument("--k-max", type=int, default=None)

    pred = sub.add_parser("predict", help="predictions for scenarios from an archive")
    pred.add_argument("--output", default=None, help="archive prefix")
    pred.add_argument("--scenarios", required=True)
    pred.add_argument("--mode", choices=["RaoBlackwell", "RandomAllocation"], default="RaoBlackwell")
    pred.add_argument("--seed", type=int, default=1)

    mmp = sub.add_parser("margmodpost", help="compare marginal model posterior traces of several runs")
    mmp.add_argument("prefixes", nargs="+")
    mmp.add_argument("--table", help="write the comparison table here")
    return parser


def _gather_run_config(args):
    entries = io.parse_config_file(args.config) if args.config else {}
    for key in io.RUN_KEYS | {"variant", "n_sweeps", "n_burn", "n_clus_init", "truncation", "kappa", "seed"}:
        val = getattr(args, key, None)
        if val is not None:
            entries[key] = val
    for item in args.hyper:
        if "=" not in item:
            raise ConfigError(f"--hyper expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        entries["hyper." + k.strip()] = v
    try:
        return io.split_config(entries)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_run(args, out=sys.stdout):
    run, sampler_kw, hyper = _gather_run_config(args)
    if "data" not in run:
        raise ConfigError("no data file given (--data or data=...)")
    covs = _csv(run.get("covariates", ""))
    if not covs:
        raise ConfigError("no covariates given")
    kinds = _csv(run.get("kinds", "discrete"))
    kinds = kinds[0] if len(kinds) == 1 else kinds
    data = io.load_dataset(run["data"], covs, kinds, outcome=run.get("outcome"),
                           y_model=run.get("y_model"), fixed_effects=_csv(run.get("fixed_effects", "")),
                           trials=run.get("trials"), offset=run.get("offset"),
                           n_categories=_ints(run.get("n_categories")))
    hp = HyperParams(**hyper)
    cfg = SamplerConfig(**sampler_kw)
    prefix = run.get("output") or default_prefix()
    sampler = Sampler(data, hp, cfg, make_rng(cfg.seed))
    meta = io.run_metadata(data, sampler.hp, cfg, sampler.resp.dim if sampler.resp else 0, sampler.cov.Kmax)
    with io.ArchiveWriter(prefix, meta) as writer:
        archive = sampler.run(on_record=writer, log=lambda m: print(m, file=out))
    print(f"{len(archive)} sweeps archived to {prefix}_*.txt in {archive.seconds:.1f}s", file=out)
    if sum(archive.violations.values()):
        print(f"invariant violations: {dict(archive.violations)}", file=out)
    if len(archive) and str(run.get("postprocess", "true")).lower() == "true":
        k_max = int(run["k_max"]) if run.get("k_max") else None
        postprocess_archive(prefix, meta, archive.records, k_max, S=archive.similarity(), out=out)
    if run.get("predict") and len(archive):
        write_predictions(prefix, meta, archive.records, run["predict"],
                          run.get("predict_mode", "RaoBlackwell"), seed=cfg.seed, out=out)
    return 0


def postprocess_archive(prefix, meta, records, k_max=None, S=None, out=sys.stdout):
    if S is None:
        S = build_similarity([r.z for r in records])
    io.write_matrix(f"{prefix}_similarity.txt", S)
    n = S.shape[0]
    pam_part = pam_optimal_partition(S, k_max) if n >= 3 else None
    ls_part = ls_optimal_partition([r.z for r in records], S)
    with open(f"{prefix}_optimalPartition.txt", "w", encoding="utf-8") as fh:
        fh.write("PAM\tLS\n")
        for i in range(n):
            pam_label = pam_part.labels[i] if pam_part is not None else ls_part.labels[i]
            fh.write(f"{pam_label}\t{ls_part.labels[i]}\n")
    rep = pam_part if pam_part is not None else ls_part
    if pam_part is not None:
        io.write_table(f"{prefix}_silhouette.txt", ["k", "avgSilhouette"],
                       [(k, float(w)) for k, w in pam_part.extra["silhouette"].items()])
    prof = risk_profiles(records, rep, meta.get("y_model"))
    rows = []
    levels = prof.levels
    for name, arr in (("risk", prof.risk), ("phi", prof.phi), ("mu", prof.mu)):
        if arr is None:
            continue
        q = np.quantile(arr, levels, axis=0)
        mean = arr.mean(axis=0)
        for idx in np.ndindex(*arr.shape[1:]):
            k = idx[0]
            if name == "phi":
                j, cat = idx[1], idx[2]
                if cat >= meta["n_categories"][meta_discrete(meta)[j]]:
                    continue
                var = meta["covariate_names"][meta_discrete(meta)[j]]
            elif name == "mu":
                j, cat = idx[1], ""
                var = meta["covariate_names"][meta_normal(meta)[j]]
            else:
                var, cat = "outcome", (idx[1] if len(idx) > 1 else "")
            rows.append([k + 1, int(prof.sizes[k]), name, var, cat, float(mean[idx])]
                        + [float(q[(l,) + idx]) for l in range(len(levels))])
    io.write_table(f"{prefix}_riskProfile.txt",
                   ["cluster", "size", "quantity", "variable", "category", "mean"]
                   + [f"q{lv:g}" for lv in levels], rows)
    print(f"representative partition: K={rep.K} ({rep.method})", file=out)
    return rep, ls_part, prof


def meta_discrete(meta):
    return [j for j, k in enumerate(meta["kinds"]) if k == "discrete"]


def meta_normal(meta):
    return [j for j, k in enumerate(meta["kinds"]) if k != "discrete"]


def write_predictions(prefix, meta, records, scenario_path, mode, seed=None, out=sys.stdout):
    header, rows = io.read_table(scenario_path)
    names = meta["covariate_names"]
    index = {h: k for k, h in enumerate(header)}
    missing_cols = [c for c in names if c not in index]
    if missing_cols:
        raise DataError(f"scenario file lacks covariates {missing_cols}", path=scenario_path)
    X = np.array([[np.nan if r[index[c]] is None else r[index[c]] for c in names] for r in rows], float)
    for j, kind in enumerate(meta["kinds"]):
        if kind == "discrete":
            col = X[:, j]
            bad = ~np.isnan(col) & ((col < 0) | (col >= meta["n_categories"][j]) | (col != np.round(col)))
            if bad.any():
                raise DataError("invalid category in scenario", row=int(np.nonzero(bad)[0][0]) + 2,
                                column=names[j], path=scenario_path)
    W = None
    fe = meta["fixed_effect_names"]
    if fe and all(c in index for c in fe):
        W = np.array([[r[index[c]] for c in fe] for r in rows], float)
    preds = predict(records, X, meta["kinds"], meta["y_model"], mode=mode, rng=make_rng(seed), W=W)
    flat = preds.reshape(preds.shape[0], -1)
    if preds.ndim == 3:
        head = [f"scenario{s + 1}_cat{r}" for s in range(preds.shape[1]) for r in range(preds.shape[2])]
    else:
        head = [f"scenario{s + 1}" for s in range(preds.shape[1])]
    io.write_matrix(f"{prefix}_predictions.txt", flat, header=head)
    means = flat.mean(axis=0)
    ses = batch_means_se(flat)
    for h, m, s in zip(head, means, np.atleast_1d(ses)):
        print(f"{h}: mean {m:.4f} (MC-SE {s:.4f})", file=out)
    return preds


def cmd_generate(args, out=sys.stdout):
    spec = PRESETS[args.preset](n_subjects=args.n)
    data, truth = generate_sample_data(spec, make_rng(args.seed))
    io.save_dataset(data, args.output, truth=truth)
    print(f"wrote {data.n} rows ({spec.name}) to {args.output}", file=out)
    return 0


def cmd_postprocess(args, out=sys.stdout):
    prefix = args.output or default_prefix()
    meta, records = io.read_archive(prefix)
    if not records:
        raise DataError("archive holds no sweeps", path=prefix + "_z.txt")
    postprocess_archive(prefix, meta, records, args.k_max, out=out)
    return 0


def cmd_predict(args, out=sys.stdout):
    prefix = args.output or default_prefix()
    meta, records = io.read_archive(prefix)
    if not meta.get("y_model"):
        raise ConfigError("predictions need a run with an outcome model")
    write_predictions(prefix, meta, records, args.scenarios, args.mode, args.seed, out=out)
    return 0


def margmodpost_table(traces):
    """Median and IQR per run plus the pairwise overlap check."""
    stats = []
    for t in traces:
        q1, med, q3 = np.quantile(t, [0.25, 0.5, 0.75])
        stats.append((med, q3 - q1))
    pairs = []
    for a in range(len(stats)):
        for b in range(a + 1, len(stats)):
            diff = abs(stats[a][0] - stats[b][0])
            tol = 2 * max(stats[a][1], stats[b][1])
            pairs.append((a, b, diff, tol, diff < tol))
    return stats, pairs


def cmd_margmodpost(args, out=sys.stdout):
    traces = []
    for prefix in args.prefixes:
        path = f"{prefix}_margModPost.txt"
        if not os.path.exists(path):
            raise DataError("marginal model posterior file not found", path=path)
        traces.append(np.loadtxt(path, ndmin=1))
    stats, pairs = margmodpost_table(traces)
    lines = ["run\tmedian\tIQR"] + [f"{p}\t{m:.6g}\t{i:.6g}" for p, (m, i) in zip(args.prefixes, stats)]
    lines += ["runA\trunB\t|median diff|\t2xIQR\toverlap"]
    lines += [f"{args.prefixes[a]}\t{args.prefixes[b]}\t{d:.6g}\t{t:.6g}\t{ok}" for a, b, d, t, ok in pairs]
    text = "\n".join(lines) + "\n"
    out.write(text)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


COMMANDS = {"run": cmd_run, "generate": cmd_generate, "postprocess": cmd_postprocess,
            "predict": cmd_predict, "margmodpost": cmd_margmodpost}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (DataError, ConfigError, ParameterDomainError, SamplerError, TypeError) as exc:
        print(f"profreg {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
