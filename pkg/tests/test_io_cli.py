import os

import numpy as np
import pytest

from profreg import io
from profreg.cli import default_prefix, main, margmodpost_table
from profreg.errors import ConfigError, DataError
from profreg.simulate import (SyntheticSpec, balanced_sizes, generate_sample_data,
                              var_select_bernoulli_discrete)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def bern_file(tmp_path, rng):
    data, truth = generate_sample_data(var_select_bernoulli_discrete(60), rng)
    path = tmp_path / "data.txt"
    io.save_dataset(data, path, truth=truth)
    return path, data


def _run_args(path, prefix, *extra):
    covs = ",".join(f"Variable{j}" for j in range(1, 11))
    return ["run", "--data", str(path), "--outcome", "outcome", "--y-model", "Bernoulli",
            "--covariates", covs, "--kinds", "discrete", "--output", str(prefix),
            "--n-sweeps", "10", "--n-burn", "5", "--seed", "3", *extra]


# -- data files -----------------------------------------------------------------


def test_missing_data_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code = main(["run", "--data", str(missing), "--covariates", "a", "--output", str(tmp_path / "o")])
    assert code != 0
    assert str(missing) in capsys.readouterr().err


def test_na_covariate_sets_mask(tmp_path):
    p = _write(tmp_path / "d.csv", "y,a,b\n1,0,1\n0,NA,0\n1,1,NA\n")
    data = io.load_dataset(p, ["a", "b"], "discrete", outcome="y", y_model="Bernoulli")
    assert np.isnan(data.X[1, 0]) and np.isnan(data.X[2, 1])
    assert np.isnan(data.X).sum() == 2


def test_tab_and_comma_agree(tmp_path):
    a = io.load_dataset(_write(tmp_path / "a.txt", "a\tb\n0\t1\n1\t0\n"), ["a", "b"], "discrete")
    b = io.load_dataset(_write(tmp_path / "b.csv", "a,b\n0,1\n1,0\n"), ["a", "b"], "discrete")
    np.testing.assert_array_equal(a.X, b.X)


def test_out_of_range_category_names_row_and_column(tmp_path):
    p = _write(tmp_path / "d.txt", "a\tb\n0\t1\n1\t2\n")
    with pytest.raises(DataError) as exc:
        io.load_dataset(p, ["a", "b"], "discrete", n_categories=[2, 2])
    assert exc.value.row == 3 and exc.value.column == "b"
    assert "line 3" in str(exc.value)


def test_na_in_outcome_is_an_error(tmp_path):
    p = _write(tmp_path / "d.txt", "y\ta\n1\t0\nNA\t1\n")
    with pytest.raises(DataError) as exc:
        io.load_dataset(p, ["a"], "discrete", outcome="y", y_model="Bernoulli")
    assert exc.value.row == 3 and exc.value.column == "y"


def test_non_numeric_cell(tmp_path):
    p = _write(tmp_path / "d.txt", "a\tb\n0\tx\n")
    with pytest.raises(DataError) as exc:
        io.read_table(p)
    assert exc.value.row == 2 and exc.value.column == "b"


def test_round_trip(tmp_path, rng):
    data, _ = generate_sample_data(var_select_bernoulli_discrete(50), rng)
    data.X[3, 2] = np.nan
    p = tmp_path / "rt.txt"
    io.save_dataset(data, p)
    back = io.load_dataset(p, data.covariate_names, data.kinds, outcome=data.outcome_name,
                           y_model="Bernoulli", fixed_effects=data.fixed_effect_names)
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.W, data.W)
    np.testing.assert_array_equal(back.n_categories, data.n_categories)


# -- configuration -------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    p = _write(tmp_path / "c.cfg", "n_sweeps = 100  # comment\nvariant=Truncated\nhyper.shape_alpha=2.5\n"
                                   "hyper.var_select_type=BinaryCluster\n")
    run, sampler, hyper = io.split_config(io.parse_config_file(p))
    assert sampler == {"n_sweeps": 100, "variant": "Truncated"}
    assert hyper == {"shape_alpha": 2.5, "var_select_type": "BinaryCluster"}
    assert run == {}


def test_cli_flag_overrides_config(tmp_path, bern_file):
    path, _ = bern_file
    cfg = _write(tmp_path / "c.cfg", "n_sweeps=500\npostprocess=false\n")
    prefix = tmp_path / "out" / "r"
    assert main(_run_args(path, prefix, "--config", str(cfg))) == 0
    assert len(open(f"{prefix}_alpha.txt").read().split()) == 10


@pytest.mark.parametrize("entry", ["hyper.not_a_thing=1", "bogus=3"])
def test_unknown_key_is_error(entry):
    k, v = entry.split("=")
    with pytest.raises(ConfigError):
        io.split_config({k: v})


def test_unknown_hyper_on_cli(tmp_path, bern_file, capsys):
    path, _ = bern_file
    assert main(_run_args(path, tmp_path / "r", "--hyper", "nonsense=1")) == 2
    assert "nonsense" in capsys.readouterr().err


def test_default_prefix_env(monkeypatch, tmp_path):
    monkeypatch.setenv("PROFREG_OUTPUT_DIR", str(tmp_path))
    assert default_prefix() == os.path.join(str(tmp_path), "output")


# -- runs and archives ------------------------------------------------------------


def test_minimal_run_writes_parseable_files(tmp_path, bern_file):
    path, data = bern_file
    prefix = tmp_path / "r"
    scen = _write(tmp_path / "scen.txt",
                  "\t".join(data.covariate_names) + "\n" + "\t".join(["1"] * 10) + "\n"
                  + "\t".join(["NA"] * 10) + "\n")
    assert main(_run_args(path, prefix, "--predict", str(scen))) == 0
    for name in ("z", "alpha", "nClusters", "theta", "beta", "margModPost", "similarity",
                 "optimalPartition", "riskProfile", "predictions", "silhouette"):
        assert os.path.getsize(f"{prefix}_{name}.txt") > 0, name
    meta, records = io.read_archive(prefix)
    assert len(records) == 10
    assert all(r.z.shape == (60,) and r.z.min() >= 0 for r in records)
    theta_rows = [ln.split() for ln in open(f"{prefix}_theta.txt")]
    assert all(int(float(r[0])) == len(r) - 1 for r in theta_rows)
    assert np.loadtxt(f"{prefix}_similarity.txt").shape == (60, 60)
    part = np.loadtxt(f"{prefix}_optimalPartition.txt", skiprows=1)
    assert part.shape == (60, 2) and part.min() >= 1
    pred = np.loadtxt(f"{prefix}_predictions.txt", skiprows=1)
    assert pred.shape == (10, 2) and np.all((pred > 0) & (pred < 1))


def test_fixed_seed_gives_identical_files(tmp_path, bern_file):
    path, _ = bern_file
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(_run_args(path, a, "--postprocess", "false")) == 0
    assert main(_run_args(path, b, "--postprocess", "false")) == 0
    for name in ("z", "alpha", "theta", "margModPost", "clusterParams"):
        assert open(f"{a}_{name}.txt").read() == open(f"{b}_{name}.txt").read()


def test_postprocess_and_predict_subcommands(tmp_path, bern_file):
    path, data = bern_file
    prefix = tmp_path / "r"
    assert main(_run_args(path, prefix, "--postprocess", "false")) == 0
    assert not os.path.exists(f"{prefix}_similarity.txt")
    assert main(["postprocess", "--output", str(prefix), "--k-max", "4"]) == 0
    assert os.path.exists(f"{prefix}_riskProfile.txt")
    scen = _write(tmp_path / "s.txt", "\t".join(data.covariate_names) + "\n" + "\t".join(["0"] * 10) + "\n")
    assert main(["predict", "--output", str(prefix), "--scenarios", str(scen)]) == 0
    bad = _write(tmp_path / "b.txt", "\t".join(data.covariate_names) + "\n" + "\t".join(["5"] * 10) + "\n")
    assert main(["predict", "--output", str(prefix), "--scenarios", str(bad)]) == 2


def test_truncated_archive_is_readable(tmp_path, bern_file):
    path, _ = bern_file
    prefix = tmp_path / "r"
    assert main(_run_args(path, prefix, "--postprocess", "false")) == 0
    # drop the last line of one file, as after a crash
    lines = open(f"{prefix}_z.txt").read().splitlines()[:-1]
    open(f"{prefix}_z.txt", "w").write("\n".join(lines) + "\n")
    _, records = io.read_archive(prefix)
    assert len(records) == 9


def test_margmodpost_table():
    rng = np.random.default_rng(1)
    traces = [rng.normal(0, 1, 400), rng.normal(0.1, 1, 400), rng.normal(10, 1, 400)]
    stats, pairs = margmodpost_table(traces)
    assert len(stats) == 3 and len(pairs) == 3
    ok = {(a, b): flag for a, b, _, _, flag in pairs}
    assert ok[(0, 1)] and not ok[(0, 2)] and not ok[(1, 2)]
    assert abs(stats[0][1] - 1.349) < 0.2


def test_margmodpost_cli(tmp_path, bern_file):
    path, _ = bern_file
    prefixes = []
    for init in (2, 8):
        p = tmp_path / f"r{init}"
        assert main(_run_args(path, p, "--postprocess", "false", "--n-clus-init", str(init))) == 0
        prefixes.append(str(p))
    table = tmp_path / "t.txt"
    assert main(["margmodpost", *prefixes, "--table", str(table)]) == 0
    assert "median" in table.read_text()


# -- synthetic data ---------------------------------------------------------------


def test_generate_balanced_sizes(rng):
    data, truth = generate_sample_data(var_select_bernoulli_discrete(1000), rng)
    assert data.n == 1000 and data.X.shape == (1000, 10)
    np.testing.assert_array_equal(np.bincount(truth)[1:], [200] * 5)
    assert list(balanced_sizes(7, [0.5, 0.5])) in ([4, 3], [3, 4])


def test_generate_single_cluster(rng):
    spec = SyntheticSpec(n_subjects=100, proportions=[1.0],
                         covariate_profiles=np.array([[[0.3, 0.7]] * 3]), theta=np.array([0.0]))
    data, truth = generate_sample_data(spec, rng)
    assert np.all(truth == 1)


def test_generate_profile_frequencies(rng):
    spec = var_select_bernoulli_discrete(5000)
    data, truth = generate_sample_data(spec, rng)
    for c in range(5):
        rows = data.X[truth == c + 1]
        p = spec.covariate_profiles[c, :, 1]
        freq = rows[:, :8].mean(axis=0)
        se = np.sqrt(p * (1 - p) / rows.shape[0])
        assert np.all(np.abs(freq - p) < 3.5 * se)


def test_generate_cli(tmp_path):
    out = tmp_path / "sim.txt"
    assert main(["generate", "--n", "100", "--seed", "2", "--output", str(out)]) == 0
    header, rows = io.read_table(out)
    assert header[0] == "outcome" and header[-1] == "truth" and len(rows) == 100


def test_bad_proportions():
    with pytest.raises(ValueError):
        SyntheticSpec(n_subjects=10, proportions=[0.5, 0.6], covariate_profiles=np.full((2, 1, 2), 0.5))
