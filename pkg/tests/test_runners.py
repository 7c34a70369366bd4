# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math

import pytest

from brw_workbench.runners import (
    CmdSimulation,
    CmdTrend,
    CorridorExperiment,
    LawCheck,
    SpineCheck,
    SpineMoment,
    TailContrast,
    TailCurveExperiment,
)

LATTICE = {"family": "lattice-binary"}
GAUSSIAN = {"family": "gaussian-binary"}
UNIT_BAND = {"lower": -1, "upper": 1, "scaling": {"type": "constant", "value": 1}}


@pytest.mark.unit
def test_law_check_to_dict():
    check = LawCheck(law=LATTICE)
    assert check.to_dict() == {
        "type": "brw_workbench.runners.LawCheck",
        "init_parameters": {
            "law": {"family": "lattice-binary"},
            "x_grid": [5.0, 10.0, 20.0, 40.0, 80.0],
            "mc_draws": 0,
        },
    }


@pytest.mark.unit
def test_law_check_from_dict():
    data = {
        "type": "brw_workbench.runners.LawCheck",
        "init_parameters": {"law": {"family": "gaussian-binary"}, "x_grid": [10.0], "mc_draws": 0},
    }
    check = LawCheck.from_dict(data)
    assert check.law.family == "gaussian-binary"
    assert check.x_grid == [10.0]
    assert check.to_dict() == data


@pytest.mark.unit
def test_law_check_run():
    result = LawCheck(law=GAUSSIAN, x_grid=[5.0, 20.0]).run()
    table = result["table"]
    residuals = table[table["quantity"].isin(["residual_w1", "residual_vw"])]["value"]
    assert (residuals.abs() < 1e-9).all()
    assert table[table["quantity"] == "integrability"]["x"].tolist() == [5.0, 20.0]
    assert result["summary"]["family"] == "gaussian-binary"
    assert result["summary"]["lambda_star"] == pytest.approx(2.7378, abs=1e-4)
    assert not result["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_law_check_with_monte_carlo_moments():
    table = LawCheck(law=LATTICE, mc_draws=1000).run(seed=3)["table"]
    assert any(quantity.startswith("mc_") for quantity in table["quantity"])
    with pytest.raises(ValueError):
        LawCheck(law=LATTICE, mc_draws=-1)


@pytest.mark.unit
def test_cmd_simulation():
    result = CmdSimulation(law=LATTICE, n=4, replicates=5).run(seed=1)
    table = result["table"]
    assert list(table.columns) == ["replicate", "L_n", "censored", "extinct", "nodes_expanded", "completed"]
    assert table["completed"].all()
    assert result["summary"]["completed"] == 5
    assert result["summary"]["cap"] is None
    assert not result["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_cmd_simulation_out_of_budget():
    result = CmdSimulation(law=LATTICE, n=5, replicates=3).run(budget_nodes=1)
    assert not result["table"]["completed"].any()
    assert result["table"]["L_n"].isna().all()
    assert result["summary"]["median_scaled"] is None
    assert result["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_cmd_simulation_is_reproducible():
    experiment = CmdSimulation(law=LATTICE, n=6, replicates=4)
    first = experiment.run(seed=11, threads=1)["table"]
    second = experiment.run(seed=11, threads=2)["table"]
    assert first.equals(second)


@pytest.mark.unit
def test_cmd_trend():
    result = CmdTrend(law=LATTICE, n_list=[2, 4], replicates=5).run(seed=2)
    assert result["table"]["n"].tolist() == [2, 4]
    assert len(result["summary"]["scaled"]) == 2
    with pytest.raises(ValueError):
        CmdTrend(law=LATTICE, n_list=[4, 2])


@pytest.mark.unit
def test_cmd_trend_out_of_budget():
    result = CmdTrend(law=LATTICE, n_list=[5, 6], replicates=3).run(budget_nodes=1)
    assert result["table"].empty
    assert result["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_spine_check_with_exact_values():
    result = SpineCheck(law=LATTICE, n=2, replicates=500, exact=True).run(seed=4)
    table = result["table"]
    assert table["method"].tolist() == ["mc", "mc", "exact", "exact"]
    assert result["summary"]["exact_gap"] < 1e-12
    assert result["summary"]["forward"] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        SpineCheck(law=LATTICE, n=2, functional="area")


@pytest.mark.unit
def test_spine_moment():
    result = SpineMoment(law=LATTICE, lam=20.0, n=3, delta=1000.0).run()
    assert result["table"]["estimate"].tolist() == [pytest.approx(8.0, rel=1e-10)]
    assert set(result["summary"]) == {
        "estimate",
        "se",
        "log_over_n13",
        "target_exponent",
        "budget_exceeded",
    }


@pytest.mark.unit
def test_spine_moment_argument_checks():
    with pytest.raises(ValueError):
        SpineMoment(law=LATTICE, lam=1.0, n=3, method="exact")
    with pytest.raises(ValueError):
        SpineMoment(law=LATTICE, lam=1.0, n=3, quantity="yn")


@pytest.mark.unit
def test_corridor_dp():
    experiment = CorridorExperiment(corridor=UNIT_BAND, n_grid=[2, 4])
    table = experiment.run()["table"]
    assert table["probability"].tolist() == [pytest.approx(0.5), pytest.approx(0.25)]
    assert table["log_p"].tolist() == [pytest.approx(math.log(0.5)), pytest.approx(math.log(0.25))]


@pytest.mark.unit
def test_corridor_to_dict():
    experiment = CorridorExperiment(corridor=UNIT_BAND, n_grid=[2, 4], mode="mc", replicates=100)
    assert experiment.to_dict() == {
        "type": "brw_workbench.runners.CorridorExperiment",
        "init_parameters": {
            "corridor": UNIT_BAND,
            "n_grid": [2, 4],
            "mode": "mc",
            "replicates": 100,
            "start": 0.0,
            "heavy": None,
        },
    }


@pytest.mark.unit
def test_corridor_mc():
    table = CorridorExperiment(corridor=UNIT_BAND, n_grid=[4], mode="mc", replicates=4000).run(seed=5)["table"]
    row = table.iloc[0]
    assert abs(row["probability"] - 0.25) < 4 * row["se"]


@pytest.mark.unit
def test_corridor_mode_checks():
    with pytest.raises(ValueError):
        CorridorExperiment(corridor=UNIT_BAND, n_grid=[2], mode="exact")
    with pytest.raises(ValueError):
        CorridorExperiment(corridor=UNIT_BAND, n_grid=[2], mode="gap")


@pytest.mark.unit
def test_corridor_gap():
    h = math.acosh(2.0)
    band = {
        "lower": 0,
        "upper": 1,
        "scaling": {"type": "power", "exponent": 0.25},
        "walk": {"type": "lattice", "step": h},
    }
    heavy = dict(band, mark={"type": "two-point", "c": 0.0}, threshold={"type": "power"})
    n_grid = [round(((k + 0.5) * h) ** 4) for k in (12, 16, 20, 24)]
    result = CorridorExperiment(corridor=band, n_grid=n_grid, mode="gap", heavy=heavy).run()
    assert result["summary"]["gap"] == 0.0
    assert result["table"]["spec"].tolist() == ["nice"] * 4 + ["heavy"] * 4


@pytest.mark.unit
def test_tail_curve_experiment():
    result = TailCurveExperiment(law=LATTICE, n=8, lambdas=[1.0, 2.0], delta=0.5).run()
    table = result["table"]
    assert list(table.columns[:3]) == ["lambda", "estimate", "se_or_exact"]
    assert (table["se_or_exact"] == 0.0).all()
    assert table["estimate"].equals(table["lower"])
    assert not result["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_tail_curve_experiment_direct():
    result = TailCurveExperiment(law=LATTICE, n=8, lambdas=[2.0], mode="direct", replicates=20).run(seed=6)
    table = result["table"]
    assert table["estimate"].equals(table["log_rate"])
    assert table["se_or_exact"].equals(table["se"])


@pytest.mark.unit
def test_tail_contrast():
    result = TailContrast(nice=GAUSSIAN, heavy=LATTICE, n_grid=[8], replicates=500).run(seed=7)
    assert result["summary"]["deficit_nice"] == [0.0]
    assert result["summary"]["deficit_heavy"] == [0.0]
