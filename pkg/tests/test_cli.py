"""
End-to-end tests of the command-line entry point
"""
import json
import logging

import pandas as pd
import pytest

from core.dataset import BasinSeries, write_csv
from main import EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE, main
from tests.conftest import make_frame

RANGE = ["--start", "2000-01-01", "--end", "2000-12-31"]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "panel.csv"
    series = [
        BasinSeries(basin="SC", frame=make_frame(end="2000-12-31", seed=1)),
        BasinSeries(basin="SFB", frame=make_frame(end="2000-12-31", seed=2)),
    ]
    write_csv(series, path)
    return str(path)


def _read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def test_validate_ok(dataset, tmp_path):
    out = tmp_path / "out"
    code = main(["validate", "--data", dataset, *RANGE, "--basin", "SC,SFB", "-o", str(out), "--no-progress"])
    assert code == EXIT_OK
    report = _read_json(out / "validation.json")
    assert report["ok"]
    assert report["days_per_basin"] == {"SC": 366, "SFB": 366}
    manifest = _read_json(out / "manifest.json")
    assert manifest["status"] == "ok"
    assert manifest["track"] == "validate"
    assert [a["name"] for a in manifest["artifacts"]] == ["validation.json"]


def test_manifest_is_reproducible(dataset, tmp_path):
    out = tmp_path / "out"
    argv = ["validate", "--data", dataset, *RANGE, "-o", str(out), "--no-progress"]
    assert main(argv) == EXIT_OK
    first = (out / "manifest.json").read_bytes()
    assert main(argv) == EXIT_OK
    assert (out / "manifest.json").read_bytes() == first


def test_data_error_exits_one(dataset, tmp_path):
    lines = open(dataset, "r", encoding="utf-8").read().splitlines()
    cells = lines[5].split(",")
    cells[-1] = "abc"
    lines[5] = ",".join(cells)
    with open(dataset, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

    out = tmp_path / "out"
    code = main(["validate", "--data", dataset, *RANGE, "-o", str(out), "--no-progress"])
    assert code == EXIT_ANALYSIS
    report = _read_json(out / "validation.json")
    assert not report["ok"]
    assert any(error.startswith("line 6:") for error in report["errors"])
    assert _read_json(out / "manifest.json")["status"] == "failed"


def test_missing_dataset_exits_one(tmp_path):
    out = tmp_path / "out"
    code = main(["tsreg", "--data", str(tmp_path / "absent.csv"), *RANGE, "-o", str(out), "--no-progress"])
    assert code == EXIT_ANALYSIS


@pytest.mark.parametrize("extra", [
    ["--df1", "11"],
    ["--outcome", "pm25"],
    ["--table", "9"],
    ["--window", "4-1"],
])
def test_bad_options_exit_two(dataset, tmp_path, extra):
    track = "movmed" if extra[0] == "--window" else "tsreg"
    code = main([track, "--data", dataset, *RANGE, "-o", str(tmp_path / "out"), *extra])
    assert code == EXIT_USAGE


def test_usage_errors_exit_two(dataset, tmp_path):
    assert main(["no-such-track"]) == EXIT_USAGE
    assert main(["tsreg", "--data", dataset, "--jobs", "many"]) == EXIT_USAGE
    assert main(["validate", "--data", dataset, "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"plots": {"dpi": 300}}))
    assert main(["validate", "--data", dataset, "--config", str(bad)]) == EXIT_USAGE


def test_config_file_wins_over_flags(dataset, tmp_path, caplog):
    config = tmp_path / "run.json"
    out = tmp_path / "from-file"
    config.write_text(json.dumps({"run": {"output_dir": str(out), "progress": False},
                                  "data": {"start": "2000-01-01", "end": "2000-12-31"}}))
    with caplog.at_level(logging.WARNING):
        code = main(["validate", "--data", dataset, "--config", str(config), "-o", str(tmp_path / "from-flag")])
    assert code == EXIT_OK
    assert (out / "manifest.json").exists()
    assert not (tmp_path / "from-flag" / "manifest.json").exists()
    assert "ignoring command-line value" in caplog.text


def test_predict_grid_dry_run(dataset, tmp_path):
    out = tmp_path / "out"
    code = main(["predict-grid", "--data", dataset, "--dry-run", "--basin", "SC", "--outcomes", "ac6574",
                 "-o", str(out), "--no-progress"])
    assert code == EXIT_OK
    plan = _read_json(out / "predict_grid_plan.json")
    assert plan["study"]["per_cell"] == 189
    assert plan["study"]["per_group"] == {"ozone": 108, "pm25": 108}
    assert plan["this_run"]["hold_out_years"] == 12
    assert plan["this_run"]["fits"] == 189 * 12


def test_meta_from_estimates(dataset, tmp_path):
    estimates = tmp_path / "estimates.csv"
    pd.DataFrame({"basin": ["SC", "SFB", "SJV"], "theta": [0.001, 0.002, 0.0015],
                  "variance": [1e-7, 2e-7, 1.5e-7]}).to_csv(estimates, index=False)
    out = tmp_path / "out"
    code = main(["meta", "--data", dataset, "--estimates", str(estimates), "-o", str(out), "--no-progress"])
    assert code == EXIT_OK
    pooled = _read_json(out / "meta_pooled.json")
    assert 0.001 <= pooled["theta_hat"] <= 0.002
    assert pooled["sigma2"] >= 0
    assert len(pooled["per_basin"]) == 3


def test_meta_estimates_missing_columns(dataset, tmp_path):
    estimates = tmp_path / "estimates.csv"
    pd.DataFrame({"basin": ["SC"], "theta": [0.001]}).to_csv(estimates, index=False)
    code = main(["meta", "--data", dataset, "--estimates", str(estimates), "-o", str(tmp_path / "out")])
    assert code == EXIT_ANALYSIS


def test_predict_grid_single_outcome_plan(dataset, tmp_path):
    out = tmp_path / "out"
    code = main(["predict-grid", "--data", dataset, "--basin", "SC", "--outcome", "hl75p", "--dry-run",
                 "-o", str(out), "--no-progress"])
    assert code == EXIT_OK
    plan = _read_json(out / "predict_grid_plan.json")
    assert plan["this_run"]["outcomes"] == ["hl75p"]
    assert plan["this_run"]["fits"] == 189 * 12


def test_predict_grid_writes_every_fit(tmp_path):
    path = tmp_path / "panel.csv"
    write_csv([BasinSeries(basin="SC", frame=make_frame(end="2003-12-31", seed=3, seasonal=False))], path)
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"analysis": {"time_df_year": 2}}))
    out = tmp_path / "out"
    code = main(["predict-grid", "--data", str(path), "--config", str(config), "--start", "2000-01-01",
                 "--end", "2003-12-31", "--basin", "SC", "--outcome", "hl75p", "-o", str(out), "--no-progress"])
    assert code == EXIT_OK
    results = pd.read_csv(out / "predict_grid_results.csv")
    assert len(results) == 189 * 3
    assert set(results["outcome"]) == {"hl75p"}
    assert sorted(results["year"].unique()) == [2001, 2002, 2003]
    assert not (out / "predict_grid.partial.csv").exists()


def test_tsreg_table_two(dataset, tmp_path):
    out = tmp_path / "out"
    argv = ["tsreg", "--data", dataset, *RANGE, "--basin", "SC", "--table", "2", "-o", str(out), "--no-progress"]
    assert main(argv) == EXIT_OK
    table = pd.read_csv(out / "table2.csv", dtype={"lags": str})
    assert len(table) == 10
    assert table["lags"].iloc[0] == "0"
    first = (out / "manifest.json").read_bytes()
    assert main(argv) == EXIT_OK
    assert (out / "manifest.json").read_bytes() == first


def test_movmed_writes_deviation_series(dataset, tmp_path):
    out = tmp_path / "out"
    argv = ["movmed", "--data", dataset, *RANGE, "--basin", "SC", "-o", str(out), "--no-progress"]
    assert main(argv) == EXIT_OK
    devs = pd.read_csv(out / "movmed" / "SC_deviations.csv")
    assert list(devs.columns) == ["date", "dev_deaths", "dev_pm25", "dev_ozone", "dev_tmax", "dev_tmin",
                                  "dev_rhmax"]
    assert len(devs) == 366
    assert devs["date"].iloc[0] == "2000-01-01"
    assert devs["dev_rhmax"].notna().sum() > 300

    manifest = _read_json(out / "manifest.json")
    assert "movmed/SC_deviations.csv" in [a["name"] for a in manifest["artifacts"]]
    first = (out / "manifest.json").read_bytes()
    assert main(argv) == EXIT_OK
    assert (out / "manifest.json").read_bytes() == first
