"""Wall time per sweep as the number of subjects grows, other settings fixed."""
from __future__ import annotations

import argparse
import time

from profreg import HyperParams, SamplerConfig, generate_sample_data, run_chain
from profreg.rand import make_rng
from profreg.simulate import var_select_bernoulli_discrete


def time_run(n, n_burn=200, n_sweeps=400, repeats=2):
    data, _ = generate_sample_data(var_select_bernoulli_discrete(n), make_rng(10))
    best = float("inf")
    for rep in range(repeats):
        cfg = SamplerConfig(n_burn=n_burn, n_sweeps=n_sweeps, seed=100 + rep)
        t0 = time.perf_counter()
        run_chain(data, HyperParams(), cfg, make_rng(cfg.seed))
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="125,250,500,1000")
    a = ap.parse_args()
    prev = None
    for n in (int(s) for s in a.sizes.split(",")):
        t = time_run(n)
        ratio = "" if prev is None else f"  x{t / prev:.2f}"
        print(f"n={n:5d}  {t:.2f}s  ({1000 * t / 600:.2f} ms/sweep){ratio}")
        prev = t


if __name__ == "__main__":
    main()
