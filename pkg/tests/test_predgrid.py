"""
Tests for core.predgrid
"""
import os

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from core.dataset import BasinSeries
from core.predgrid import (
    AQ_LEVELS,
    RESULT_COLUMNS,
    TIME_ONLY_ID,
    GridModel,
    GridRunner,
    GridSpec,
    boxplot_stats,
    enumerate_grid,
    grid_counts,
    loyo_fit_predict,
    partition,
    summarize,
    time_only_reference,
)
from tests.conftest import make_frame

FAST_GRID = GridSpec(time_df_year=2)


@pytest.fixture(scope="module")
def null_series():
    return BasinSeries(basin="SC", frame=make_frame(end="2003-12-31", seed=21, seasonal=False))


@pytest.fixture(scope="module")
def ozone_series():
    return BasinSeries(basin="SC", frame=make_frame(end="2003-12-31", seed=22, seasonal=False, ozone_beta=0.02))


def _reference(series, outcome, years):
    time_only = GridModel(0, 0, 0, 0)
    results = [loyo_fit_predict(series, time_only, year, outcome=outcome, grid=FAST_GRID) for year in years]
    return time_only_reference(results, len(series))


def test_grid_counts():
    counts = grid_counts()
    assert counts["per_cell"] == 189
    assert counts["per_group"] == {"ozone": 108, "pm25": 108}
    assert counts["shared"] == 27
    assert counts["per_basin"] == 9828
    assert counts["total"] == 78624


def test_model_ids():
    models = enumerate_grid()
    ids = [m.model_id for m in models]
    assert ids[0] == TIME_ONLY_ID
    assert ids[-1] == "M188"
    assert ids == sorted(set(ids))
    assert GridModel(1, 0, 0, 0).model_id == "M027"
    assert GridModel(0, 2, 1, 0).model_id == "M021"
    assert len(models) == len(AQ_LEVELS) * 27


def test_partition_shares_met_only_models():
    models = enumerate_grid()
    shared = {m.model_id for m in partition(models, "ozone")} & {m.model_id for m in partition(models, "pm25")}
    assert shared == {m.model_id for m in models if m.aq == 0}
    with pytest.raises(ValueError):
        partition(models, "no2")


def test_cell_specs():
    spec = GridModel(0, 0, 0, 0).spec("ac6574")
    assert spec.met == ()
    assert spec.aq.kind == "none"
    assert spec.time == "tprs"
    assert not spec.dow

    spec = GridModel(6, 2, 1, 0).spec("hl75p")
    assert [term.name for term in spec.met] == ["tmax[0]", "rhmax[0]", "rhmax[1-3]"]
    assert all(term.kind == "tprs" and term.df == 4 for term in spec.met)
    assert spec.aq.kind == "crossbasis"
    assert spec.aq.pollutant == "pm25"

    spec = GridModel(2, 0, 0, 0).spec("ac6574")
    assert spec.aq.kind == "mean"
    assert spec.aq.lags.label == "0,1"
    assert spec.aq.pollutant == "o3max8"


def test_time_only_ratio_is_one(null_series):
    result = loyo_fit_predict(null_series, GridModel(0, 0, 0, 0), 2002, grid=FAST_GRID)
    assert result.converged
    assert result.ratio == 1.0
    assert result.n_test == 365
    assert result.n_train == len(null_series) - 365


def test_time_only_against_its_own_reference(null_series):
    reference = _reference(null_series, "ac6574", [2002])
    result = loyo_fit_predict(null_series, GridModel(0, 0, 0, 0), 2002, grid=FAST_GRID, reference=reference)
    assert_allclose(result.ratio, 1.0, rtol=1e-12)


def test_hold_out_outside_series(null_series):
    with pytest.raises(ValueError):
        loyo_fit_predict(null_series, GridModel(0, 0, 0, 0), 1995, grid=FAST_GRID)


def test_null_ratios_center_on_one(null_series):
    years = [2001, 2002, 2003]
    reference = _reference(null_series, "ac6574", years)
    models = [GridModel(1, 0, 0, 0), GridModel(2, 0, 0, 0), GridModel(4, 0, 0, 0),
              GridModel(0, 1, 0, 0), GridModel(0, 0, 1, 0), GridModel(0, 0, 0, 1)]
    ratios = [
        loyo_fit_predict(null_series, model, year, grid=FAST_GRID, reference=reference).ratio
        for model in models
        for year in years
    ]
    assert np.all(np.isfinite(ratios))
    assert 0.98 <= np.median(ratios) <= 1.02


def test_injected_ozone_effect_lowers_ratio(ozone_series):
    years = [2001, 2002, 2003]
    reference = _reference(ozone_series, "ac75p", years)
    for model in (GridModel(1, 0, 0, 0), GridModel(2, 0, 0, 0), GridModel(3, 0, 0, 0)):
        for year in years:
            result = loyo_fit_predict(ozone_series, model, year, outcome="ac75p", grid=FAST_GRID,
                                      reference=reference)
            assert result.converged
            assert result.ratio < 1.0, (model.model_id, year)


def test_boxplot_stats():
    stats = boxplot_stats([0.97, 0.99, 1.00, 1.01, 1.03])
    assert_allclose([stats["q1"], stats["median"], stats["q3"]], [0.99, 1.00, 1.01])
    assert stats["n"] == 5
    assert stats["outliers"] == 0
    assert_allclose([stats["whisker_lo"], stats["whisker_hi"]], [0.97, 1.03])


def _result_rows(ratios, year=2005, start=1):
    rows = []
    for offset, ratio in enumerate(ratios):
        model = enumerate_grid()[start + offset]
        rows.append({"basin": "SC", "outcome": "ac6574", "year": year, "model_id": model.model_id,
                     "aq": "none", "rh": "none", "tmax": "none", "tmin": "none", "n_train": 4380,
                     "n_test": 365, "mspe": 12.0 * ratio, "ratio": ratio, "converged": True})
    return rows


def test_summarize_five_ratios():
    frame = pd.DataFrame(_result_rows([0.97, 0.99, 1.00, 1.01, 1.03]), columns=list(RESULT_COLUMNS))
    summary = summarize(frame)
    boxes = summary["boxplots"]
    assert set(boxes["group"]) == {"ozone", "pm25"}
    for _, box in boxes.iterrows():
        assert_allclose([box["q1"], box["median"], box["q3"]], [0.99, 1.00, 1.01])
    assert summary["best"].iloc[0]["model_id"] == "M001"
    assert summary["excluded"] == 0


def test_summarize_single_result_and_skipped_year():
    rows = _result_rows([0.95]) + _result_rows([0.90], year=2000)
    summary = summarize(pd.DataFrame(rows, columns=list(RESULT_COLUMNS)))
    box = summary["boxplots"].iloc[0]
    assert box["q1"] == box["median"] == box["q3"] == 0.95
    assert summary["excluded"] == 1
    assert list(summary["best"]["year"]) == [2005]
    consistency = summary["consistency"].iloc[0]
    assert consistency["model_id"] == "M001"
    assert consistency["years_best"] == 1


def test_summarize_drops_failed_fits():
    rows = _result_rows([0.95, 1.05])
    rows[1]["converged"] = False
    summary = summarize(pd.DataFrame(rows, columns=list(RESULT_COLUMNS)))
    assert summary["excluded"] == 1
    assert summary["boxplots"].iloc[0]["n"] == 1


def test_runner_resumes_from_checkpoint(null_series, tmp_path):
    checkpoint = str(tmp_path / "checkpoint.csv")
    models = [GridModel(1, 0, 0, 0)]
    first, unpredictable = GridRunner(FAST_GRID, checkpoint=checkpoint, progress=False, models=models).run(
        {"SC": null_series}, outcomes=("ac6574",))
    assert list(first.columns) == list(RESULT_COLUMNS)
    assert list(first["model_id"]) == ["M000", "M027"] * 3
    assert sorted(set(first["year"])) == [2001, 2002, 2003]
    assert first["converged"].all()
    assert os.path.exists(checkpoint)
    assert len(pd.read_csv(checkpoint)) == 6
    assert "SC/ac6574" in unpredictable

    second, _ = GridRunner(FAST_GRID, checkpoint=checkpoint, progress=False, models=models).run(
        {"SC": null_series}, outcomes=("ac6574",))
    assert len(pd.read_csv(checkpoint)) == 6
    assert list(second["model_id"]) == list(first["model_id"])
    assert list(second["year"]) == list(first["year"])
    assert_allclose(second["ratio"].to_numpy(), first["ratio"].to_numpy(), rtol=1e-12)


def test_runner_keeps_predictions(null_series):
    runner = GridRunner(FAST_GRID, progress=False, keep_predictions=True, models=[GridModel(0, 0, 1, 0)])
    frame, _ = runner.run({"SC": null_series}, outcomes=("hl6574",))
    predictions = runner.prediction_frame()
    assert len(predictions) == 2 * 3 * 365
    assert set(predictions["model_id"]) == {"M000", "M003"}
    assert np.all(predictions["predicted"] > 0)
    assert len(frame) == 6


def test_training_deviance_monotone_over_nested_cells(ozone_series):
    # each cell adds one term to the previous one on the same day-0 rows
    chain = [GridModel(0, 0, 0, 0), GridModel(0, 0, 1, 0), GridModel(0, 1, 1, 0), GridModel(1, 1, 1, 0),
             GridModel(1, 1, 1, 1)]
    results = [loyo_fit_predict(ozone_series, model, 2002, outcome="ac75p", grid=FAST_GRID) for model in chain]
    assert len({r.n_train for r in results}) == 1
    deviances = [r.deviance for r in results]
    for smaller, larger in zip(deviances, deviances[1:]):
        assert larger <= smaller * (1 + 1e-9)
    assert deviances[-1] < deviances[0]
