"""Posterior mean number of occupied clusters under the three sampler variants."""
from __future__ import annotations

import argparse
import itertools
from dataclasses import dataclass

import numpy as np

from profreg import HyperParams, SamplerConfig, generate_sample_data, run_chain
from profreg.postprocess import batch_means_se
from profreg.rand import make_rng
from profreg.simulate import var_select_bernoulli_discrete

VARIANTS = ("Truncated", "SliceDependent", "SliceIndependent")


@dataclass
class AgreementConfig:
    n: int = 200
    n_burn: int = 2000
    n_sweeps: int = 10_000
    truncation: int = 50
    data_seed: int = 4
    chain_seed: int = 40


def occupied_clusters(cfg: AgreementConfig):
    data, _ = generate_sample_data(var_select_bernoulli_discrete(cfg.n), make_rng(cfg.data_seed))
    out = {}
    for variant in VARIANTS:
        scfg = SamplerConfig(variant=variant, n_burn=cfg.n_burn, n_sweeps=cfg.n_sweeps,
                             truncation=cfg.truncation, seed=cfg.chain_seed,
                             compute_marg_post=False, store_params=False)
        archive, _ = run_chain(data, HyperParams(), scfg, make_rng(cfg.chain_seed), track_similarity=False)
        k = np.array([np.count_nonzero(np.bincount(r.z)) for r in archive.records], float)
        out[variant] = (k.mean(), batch_means_se(k, 50), archive.seconds)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-sweeps", type=int, default=10_000)
    a = ap.parse_args()
    out = occupied_clusters(AgreementConfig(n_sweeps=a.n_sweeps))
    for v, (m, se, sec) in out.items():
        print(f"{v:17s} mean clusters {m:.3f}  MC-SE {se:.3f}  ({sec:.0f}s)")
    for x, y in itertools.combinations(VARIANTS, 2):
        d = abs(out[x][0] - out[y][0]) / np.hypot(out[x][1], out[y][1])
        print(f"{x} vs {y}: {d:.2f} combined SE")


if __name__ == "__main__":
    main()
