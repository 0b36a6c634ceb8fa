"""Successive-conditional check of the full sampler on a ten-subject Bernoulli model."""
from __future__ import annotations

import argparse

from profreg import SamplerConfig
from profreg.diagnostics import geweke_successive, toy_dataset
from profreg.rand import make_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variant", default="SliceDependent")
    ap.add_argument("--n-iter", type=int, default=50_000)
    ap.add_argument("--thin", type=int, default=25)
    ap.add_argument("--seed", type=int, default=33)
    a = ap.parse_args()
    cfg = SamplerConfig(variant=a.variant, n_sweeps=0, n_burn=0, compute_marg_post=False,
                        store_params=False, check_invariants=False)
    res = geweke_successive(toy_dataset(n=10, rng=make_rng(3)), cfg=cfg, n_iter=a.n_iter,
                            thin=a.thin, rng=make_rng(a.seed))
    for k, p in res.pvalues.items():
        print(f"{k:7s} KS p = {p:.4f}")


if __name__ == "__main__":
    main()
