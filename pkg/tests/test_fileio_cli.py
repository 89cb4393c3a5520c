import subprocess
import sys

import numpy as np
import pytest

from interimpute.cli import main
from interimpute.data import Dataset
from interimpute.errors import ConfigError, CsvFormatError
from interimpute.fileio import (
    CONFIG_DEFAULTS,
    effective_config,
    load_config,
    read_dataset_csv,
    read_raw_csv,
    read_table_csv,
    write_config,
    write_dataset_csv,
    write_table_csv,
)

from conftest import make_toy_dataset, toy_specs


def test_dataset_csv_round_trip(tmp_path):
    d = make_toy_dataset(n=80, seed=123)
    path = tmp_path / "d.csv"
    write_dataset_csv(d, path)
    back = read_dataset_csv(path, d.columns)
    assert np.array_equal(back.values[back.mask], d.values[d.mask])
    assert np.array_equal(back.mask, d.mask)
    assert back.columns == d.columns


def test_dataset_csv_round_trip_extreme_floats(tmp_path):
    values = np.array([[0.0, 1e-300, 1.0, 1e-300],
                       [1.0, np.pi, 0.0, 0.0],
                       [1.0, 1/3, 1.0, 1/3]])
    d = Dataset(toy_specs(z_kind="continuous"), values)
    path = tmp_path / "x.csv"
    write_dataset_csv(d, path)
    back = read_dataset_csv(path, d.columns)
    assert np.array_equal(back.values, d.values)  # bit-exact round trip


def test_csv_parsing_rules(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("y,z,x,xz\n1,1e-3,,\n0,2.5,1,2.5\n", encoding="utf-8")
    d = read_dataset_csv(path, toy_specs(z_kind="continuous"))
    assert d.column("z")[0] == 0.001
    assert not d.observed("x")[0]
    assert not d.observed("xz")[0]
    assert d.observed("x")[1]


def test_csv_errors_name_location(tmp_path):
    p1 = tmp_path / "bad_header.csv"
    p1.write_text("y,z\n1,2\n", encoding="utf-8")
    with pytest.raises(CsvFormatError, match="header mismatch"):
        read_dataset_csv(p1, toy_specs())

    p2 = tmp_path / "bad_cell.csv"
    p2.write_text("y,z,x,xz\n1,oops,1,1\n", encoding="utf-8")
    with pytest.raises(CsvFormatError, match="bad_cell.csv:2"):
        read_dataset_csv(p2, toy_specs())

    p3 = tmp_path / "ragged.csv"
    p3.write_text("y,z,x,xz\n1,0,1\n", encoding="utf-8")
    with pytest.raises(CsvFormatError, match="ragged.csv:2"):
        read_dataset_csv(p3, toy_specs())

    p4 = tmp_path / "empty.csv"
    p4.write_text("", encoding="utf-8")
    with pytest.raises(CsvFormatError, match="header row is mandatory"):
        read_raw_csv(p4)


def test_table_csv_round_trip(tmp_path):
    rows = [{"a": "x", "b": 1.5, "c": None}, {"a": "y", "b": -2.0, "c": 7}]
    path = tmp_path / "table.csv"
    write_table_csv(path, ("a", "b", "c"), rows)
    header, back = read_table_csv(path, numeric=("b", "c"))
    assert header == ["a", "b", "c"]
    assert back[0] == {"a": "x", "b": 1.5, "c": None}
    assert back[1] == {"a": "y", "b": -2.0, "c": 7.0}


def test_config_empty_file_all_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("", encoding="utf-8")
    merged = effective_config(CONFIG_DEFAULTS, load_config(path), {})
    assert merged["m"] == 10
    assert merged["iterations"] == 10


def test_config_precedence_flag_over_file_over_default(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('m = 5\nseed = 3\n', encoding="utf-8")
    merged = effective_config(CONFIG_DEFAULTS, load_config(path),
                              {"m": 7, "seed": None})
    assert merged["m"] == 7          # flag wins
    assert merged["seed"] == 3       # file wins over default
    assert merged["iterations"] == 10  # default


def test_config_errors_name_the_key(tmp_path):
    p1 = tmp_path / "unknown.toml"
    p1.write_text("bogus = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(p1)
    p2 = tmp_path / "badtype.toml"
    p2.write_text('m = "ten"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="'m'"):
        load_config(p2)


def test_config_echo_round_trip(tmp_path):
    values = {"seed": 42, "dgm": ["1", "null"], "m": 10, "formula": 'y ~ "x"'}
    path = tmp_path / "echo.toml"
    write_config(path, values)
    assert load_config(path) == values


# -- CLI ----------------------------------------------------------------------------


def write_toy_csv(path, n=600, missing=0.25, seed=5):
    d = make_toy_dataset(n=n, missing=missing, seed=seed)
    cols = [s for s in d.columns if s.name != "xz"]
    idx = [d.index(s.name) for s in cols]
    d2 = Dataset(cols, d.values[:, idx], d.mask[:, idx])
    write_dataset_csv(d2, path)
    return d2


def test_cli_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])  # missing --out
    assert exc.value.code == 2


def test_cli_unknown_method_exit_2(tmp_path):
    assert main(["simulate", "--dgm", "1", "--n-sim", "2", "--methods", "bogus",
                 "--out", str(tmp_path)]) == 2


def test_cli_analyze_fully_observed_matches_complete_case(tmp_path):
    data_path = tmp_path / "full.csv"
    write_toy_csv(data_path, missing=0.0)
    out = tmp_path / "out"
    rc = main(["analyze", "--data", str(data_path),
               "--formula", "y ~ z + x + x:z",
               "--methods", "passive,jav,sia,smcfcs",
               "--m", "3", "--iter", "2", "--seed", "11",
               "--out", str(out)])
    assert rc == 0
    _, rows = read_table_csv(out / "analysis.csv",
                             numeric=("or", "or_ci_low", "or_ci_high",
                                      "estimate", "se", "ci_low", "ci_high", "df"))
    cc = {r["term"]: r for r in rows if r["method"] == "complete_case"}
    for method in ("passive", "jav", "sia", "smcfcs"):
        mrows = {r["term"]: r for r in rows if r["method"] == method}
        assert set(mrows) == set(cc)
        for term, r in mrows.items():
            assert r["estimate"] == pytest.approx(cc[term]["estimate"], abs=1e-9)
            # pooled df is Barnard-Rubin (~n-p-2) vs n-p for the single fit:
            # bounds agree to the t-quantile difference
            assert r["ci_low"] == pytest.approx(cc[term]["ci_low"], rel=1e-4)


def test_cli_analyze_rejects_missing_outcome(tmp_path):
    data_path = tmp_path / "bad.csv"
    data_path.write_text("y,z,x\n1,0,1\n,1,0\n", encoding="utf-8")
    rc = main(["analyze", "--data", str(data_path), "--formula", "y ~ z + x",
               "--out", str(tmp_path / "o")])
    assert rc == 1


def test_cli_analyze_malformed_row_names_line(tmp_path, capsys):
    data_path = tmp_path / "bad.csv"
    data_path.write_text("y,z,x\n1,0,1\n0,zap,0\n", encoding="utf-8")
    rc = main(["analyze", "--data", str(data_path), "--formula", "y ~ z + x",
               "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "bad.csv:3" in err


def test_cli_simulate_deterministic_outputs(tmp_path):
    args = ["simulate", "--dgm", "1", "--n-sim", "2", "--n-obs", "500",
            "--seed", "7", "--m", "3", "--iterations", "2",
            "--calibration-probe", "50000"]
    rc1 = main(args + ["--out", str(tmp_path / "a")])
    rc2 = main(args + ["--out", str(tmp_path / "b")])
    assert rc1 == 0 and rc2 == 0
    for name in ("replicates.csv", "performance.csv", "config.toml"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def test_cli_simulate_workers_do_not_change_bytes(tmp_path, monkeypatch):
    base = ["simulate", "--dgm", "1", "--n-sim", "2", "--n-obs", "500",
            "--seed", "7", "--m", "3", "--iterations", "2",
            "--calibration-probe", "50000"]
    main(base + ["--workers", "1", "--out", str(tmp_path / "w1")])
    main(base + ["--workers", "2", "--out", str(tmp_path / "w2")])
    monkeypatch.setenv("INTERIMPUTE_WORKERS", "2")
    main(base + ["--out", str(tmp_path / "w3")])  # worker count from the env
    ref = (tmp_path / "w1" / "replicates.csv").read_bytes()
    assert (tmp_path / "w2" / "replicates.csv").read_bytes() == ref
    assert (tmp_path / "w3" / "replicates.csv").read_bytes() == ref


def test_cli_outputs_regenerable_from_echoed_config(tmp_path):
    out1 = tmp_path / "first"
    main(["simulate", "--dgm", "1", "--n-sim", "2", "--n-obs", "500",
          "--seed", "13", "--m", "3", "--iterations", "2",
          "--calibration-probe", "50000", "--out", str(out1)])
    # regenerate purely from the echoed provenance file
    out2 = tmp_path / "second"
    rc = main(["simulate", "--config", str(out1 / "config.toml"), "--out", str(out2)])
    assert rc == 0
    for name in ("replicates.csv", "performance.csv", "config.toml"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_cli_simulate_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('n_sim = 2\nn_obs = 400\nseed = 5\nm = 3\niterations = 2\n'
                   'dgm = ["1"]\nmethods = ["passive"]\n'
                   'calibration_probe = 50000\n', encoding="utf-8")
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)])
    assert rc == 0
    echoed = load_config(out / "config.toml")
    assert echoed["seed"] == 9      # flag override echoed
    assert echoed["n_obs"] == 400   # file value echoed
    _, rows = read_table_csv(out / "performance.csv", numeric=("coverage_pct",))
    assert {r["method"] for r in rows} == {"passive"}
    assert len(rows) == 3  # one method x three estimand terms


def test_replicates_performance_mutual_consistency(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--dgm", "1", "--n-sim", "3", "--n-obs", "600",
          "--seed", "21", "--m", "3", "--iterations", "2",
          "--calibration-probe", "50000", "--out", str(out)])
    from interimpute.cli import PERFORMANCE_COLUMNS, performance_rows_as_dicts
    from interimpute.performance import build_table
    from interimpute.simulate import ESTIMAND_TERMS

    numeric = ("estimate", "se", "ci_low", "ci_high", "truth", "failed_flag")
    _, reps = read_table_csv(out / "replicates.csv", numeric=numeric)
    for r in reps:
        r["replicate"] = int(r["replicate"])
        r["failed_flag"] = int(r["failed_flag"])
    methods = ("passive", "jav", "sia", "smcfcs")
    table = build_table([r for r in reps if r["method"] in methods],
                        terms=ESTIMAND_TERMS, methods=list(methods))
    recomputed = performance_rows_as_dicts(table)
    tmp = tmp_path / "recomputed.csv"
    write_table_csv(tmp, PERFORMANCE_COLUMNS, recomputed)
    assert tmp.read_bytes() == (out / "performance.csv").read_bytes()


def test_cli_impute_and_pool_round_trip(tmp_path):
    data_path = tmp_path / "toy.csv"
    write_toy_csv(data_path)
    imp_dir = tmp_path / "imps"
    rc = main(["impute", "--data", str(data_path), "--formula", "y ~ z + x + x:z",
               "--strategy", "smcfcs", "--m", "3", "--iter", "2", "--seed", "3",
               "--out", str(imp_dir)])
    assert rc == 0
    files = sorted(imp_dir.glob("imputed_*.csv"))
    assert len(files) == 3
    # completed datasets are fully observed and keep the derived consistency
    header, values, mask = read_raw_csv(str(files[0]))
    assert mask.all()
    xz = values[:, header.index("x_z")]
    assert np.array_equal(xz, values[:, header.index("x")] * values[:, header.index("z")])

    pool_dir = tmp_path / "pool"
    rc = main(["pool", "--imputed", str(imp_dir), "--formula", "y ~ z + x + x:z",
               "--out", str(pool_dir)])
    assert rc == 0
    _, rows = read_table_csv(pool_dir / "pooled.csv", numeric=("estimate", "se"))
    assert [r["term"] for r in rows] == ["(intercept)", "z", "x", "x:z"]


def test_cli_report_outputs(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--dgm", "1", "--n-sim", "3", "--n-obs", "600",
          "--seed", "2", "--m", "3", "--iterations", "2",
          "--calibration-probe", "50000", "--out", str(out)])
    rep = tmp_path / "rep"
    rc = main(["report", "--results", str(out), "--out", str(rep)])
    assert rc == 0
    assert (rep / "table_a1.csv").exists()
    pngs = list(rep.glob("figure_*.png"))
    csvs = list(rep.glob("figure_*.csv"))
    assert len(pngs) == 9
    assert len(csvs) == 9
    _, wide = read_table_csv(rep / "table_a1.csv", numeric=("z_rbias", "xz_cov"))
    assert {r["method"] for r in wide} == {"passive", "jav", "sia", "smcfcs"}


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "interimpute.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
