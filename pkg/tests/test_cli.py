# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import hashlib
import json
from unittest.mock import Mock, patch

import pandas as pd
import pytest

from brw_workbench.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_OK, build_argument_parser, resolve_component, run
from brw_workbench.errors import BudgetExceeded
from brw_workbench.reports import EstimateReport
from brw_workbench.runners import CorridorExperiment, LawCheck

CORRIDOR_DP = ["corridor", "dp", "--band", "0:-1:1,1:-1:1", "--an-rule", "constant:1", "--walk", "lattice:1"]


@pytest.fixture
def law_file(tmp_path):
    path = tmp_path / "law.yaml"
    path.write_text("law:\n  family: lattice-binary\n")
    return path


def read_manifest(out):
    return json.loads(out.with_name(out.name + ".manifest").read_text())


def failing_component(failure: BudgetExceeded) -> Mock:
    component = Mock(spec=CorridorExperiment)
    component.run.side_effect = failure
    component.to_dict.return_value = {"type": "brw_workbench.runners.CorridorExperiment", "init_parameters": {}}
    return component


@pytest.mark.unit
def test_corridor_dp_writes_table_and_manifest(tmp_path):
    out = tmp_path / "p.csv"
    assert run([*CORRIDOR_DP, "--n-grid", "2,4", "--out", str(out)]) == EXIT_OK

    table = pd.read_csv(out)
    assert table["n"].tolist() == [2, 4]
    assert table["probability"].tolist() == [pytest.approx(0.5), pytest.approx(0.25)]

    manifest = read_manifest(out)
    assert manifest["subcommand"] == "corridor dp"
    assert manifest["seed"] == 0
    assert not manifest["partial"]
    assert manifest["error"] is None
    assert manifest["outputs"] == {"p.csv": hashlib.sha256(out.read_bytes()).hexdigest()}
    assert manifest["config"]["type"] == "brw_workbench.runners.CorridorExperiment"


@pytest.mark.unit
def test_manifest_config_replays(tmp_path):
    out = tmp_path / "p.csv"
    assert run([*CORRIDOR_DP, "--n-grid", "3,5", "--out", str(out)]) == EXIT_OK
    experiment = CorridorExperiment.from_dict(read_manifest(out)["config"])
    replayed = experiment.run()["table"]
    assert replayed["probability"].tolist() == pd.read_csv(out)["probability"].tolist()


@pytest.mark.unit
def test_output_does_not_depend_on_threads(tmp_path):
    outputs = []
    for threads in ("1", "2"):
        out = tmp_path / f"mc-{threads}.csv"
        argv = ["corridor", "mc", "--band", "0:-3:3,1:-3:3", "--an-rule", "constant:1", "--n-grid", "12"]
        assert run([*argv, "--replicates", "25000", "--seed", "7", "--threads", threads, "--out", str(out)]) == EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.unit
def test_table_goes_to_stdout_without_out(tmp_path, capsys):
    assert run([*CORRIDOR_DP, "--n-grid", "4"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n,a_n,log_p,scaled_log_p,probability"
    assert len(lines) == 2
    assert list(tmp_path.iterdir()) == []


@pytest.mark.unit
def test_unknown_flag_is_a_config_error(tmp_path):
    out = tmp_path / "p.csv"
    assert run([*CORRIDOR_DP, "--n-grid", "4", "--colour", "red", "--out", str(out)]) == EXIT_CONFIG
    assert list(tmp_path.iterdir()) == []


@pytest.mark.unit
def test_seed_must_fit_in_64_bits():
    assert run([*CORRIDOR_DP, "--n-grid", "4", "--seed", str(1 << 64)]) == EXIT_CONFIG
    assert run([*CORRIDOR_DP, "--n-grid", "4", "--seed", "-1"]) == EXIT_CONFIG


@pytest.mark.unit
def test_broken_yaml_is_a_config_error(tmp_path, capsys):
    config = tmp_path / "broken.yaml"
    config.write_text("n_grid: [2, 4\n")
    out = tmp_path / "p.csv"
    assert run([*CORRIDOR_DP, "--config", str(config), "--out", str(out)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.unit
def test_invalid_law_is_a_config_error(tmp_path):
    law = tmp_path / "law.yaml"
    law.write_text("family: gaussian-binary\nmu: 1.0\ns2: 1.0\n")
    out = tmp_path / "check.csv"
    assert run(["laws", "check", "--law", str(law), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


@pytest.mark.unit
def test_missing_parameter_is_a_config_error(tmp_path):
    out = tmp_path / "p.csv"
    assert run([*CORRIDOR_DP, "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


@pytest.mark.unit
def test_budget_exhaustion_writes_partial_results(tmp_path, law_file):
    out = tmp_path / "cmd.csv"
    argv = ["simulate", "cmd", "--law", str(law_file), "--n", "5", "--replicates", "3", "--budget-nodes", "1"]
    assert run([*argv, "--out", str(out)]) == EXIT_BUDGET
    assert len(pd.read_csv(out)) == 3
    manifest = read_manifest(out)
    assert manifest["partial"]
    assert manifest["summary"]["budget_exceeded"]


@pytest.mark.unit
def test_budget_failure_writes_the_partial_estimate(tmp_path):
    partial = EstimateReport(0.25, 0.01, 1875, 7, False, "cmd_cdf", {"surviving": 1500})
    failure = BudgetExceeded("125 of 2000 replicates exhausted the node budget", nodes=50, partial=partial)
    out = tmp_path / "p.csv"
    with patch("brw_workbench.cli.resolve_component", return_value=failing_component(failure)):
        assert run([*CORRIDOR_DP, "--n-grid", "4", "--out", str(out)]) == EXIT_BUDGET

    table = pd.read_csv(out)
    assert table["estimate"].tolist() == [0.25]
    assert table["replicates"].tolist() == [1875]
    assert table["surviving"].tolist() == [1500]
    manifest = read_manifest(out)
    assert manifest["partial"]
    assert manifest["error"] == str(failure)
    assert manifest["summary"]["estimate"] == 0.25
    assert manifest["summary"]["nodes"] == 50
    assert manifest["outputs"] == {"p.csv": hashlib.sha256(out.read_bytes()).hexdigest()}


@pytest.mark.unit
def test_budget_failure_without_an_estimate_writes_the_manifest_only(tmp_path):
    out = tmp_path / "p.csv"
    failure = BudgetExceeded("out of nodes", nodes=1)
    with patch("brw_workbench.cli.resolve_component", return_value=failing_component(failure)):
        assert run([*CORRIDOR_DP, "--n-grid", "4", "--out", str(out)]) == EXIT_BUDGET
    assert not out.exists()
    manifest = read_manifest(out)
    assert manifest["partial"]
    assert manifest["outputs"] == {}


@pytest.mark.unit
def test_laws_check(tmp_path, law_file):
    out = tmp_path / "check.csv"
    assert run(["laws", "check", "--law", str(law_file), "--x-grid", "10,20", "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out)
    assert table.loc[table["quantity"] == "integrability", "x"].tolist() == [10.0, 20.0]
    assert read_manifest(out)["summary"]["family"] == "lattice-binary"


@pytest.mark.unit
def test_flags_override_the_config_file(tmp_path, law_file):
    config = tmp_path / "check.yaml"
    config.write_text("x_grid: [5, 40]\nmc_draws: 0\n")
    args = build_argument_parser().parse_args(["laws", "check", "--config", str(config), "--law", str(law_file)])
    component = resolve_component(args)
    assert isinstance(component, LawCheck)
    assert component.x_grid == [5, 40]

    args = build_argument_parser().parse_args(
        ["laws", "check", "--config", str(config), "--law", str(law_file), "--x-grid", "80"]
    )
    assert resolve_component(args).x_grid == [80.0]


@pytest.mark.unit
def test_corridor_from_the_config_file(tmp_path):
    config = tmp_path / "corridor.yaml"
    config.write_text(
        "corridor:\n  lower: -1\n  upper: 1\n  scaling:\n    type: constant\n    value: 1\nn_grid: [2, 4]\n"
    )
    out = tmp_path / "p.csv"
    assert run(["corridor", "dp", "--config", str(config), "--out", str(out)]) == EXIT_OK
    assert pd.read_csv(out)["probability"].tolist() == [pytest.approx(0.5), pytest.approx(0.25)]


@pytest.mark.unit
def test_spine_zmean(tmp_path, law_file):
    out = tmp_path / "zn.csv"
    argv = ["spine", "zmean", "--law", str(law_file), "--lambda", "20", "--delta", "1000", "--n", "3"]
    assert run([*argv, "--out", str(out)]) == EXIT_OK
    assert pd.read_csv(out)["estimate"].tolist() == [pytest.approx(8.0, rel=1e-10)]
    assert read_manifest(out)["config"]["init_parameters"]["quantity"] == "zn"


@pytest.mark.unit
def test_version(capsys):
    assert run(["--version"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("brw-workbench ")
