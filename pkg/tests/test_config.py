# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math

import pytest

from brw_workbench.config import (
    corridor_from_config,
    law_from_config,
    load_config,
    parse_band_flag,
    parse_typed_flag,
)
from brw_workbench.corridor import (
    ConstantScaling,
    EngineeredThreshold,
    LatticeWalk,
    NoMark,
    PiecewiseLinear,
    PowerScaling,
    TwoPointMark,
)
from brw_workbench.errors import ConfigError


@pytest.mark.unit
def test_load_config(tmp_path):
    path = tmp_path / "law.yaml"
    path.write_text("law:\n  family: lattice-binary\n")
    assert load_config(path) == {"law": {"family": "lattice-binary"}}


@pytest.mark.unit
def test_load_config_reports_the_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("law:\n  family: [lattice-binary\n  epsilon: 0.1\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(path)


@pytest.mark.unit
def test_load_config_needs_a_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


@pytest.mark.unit
def test_law_families():
    assert law_from_config({"family": "lattice-binary"}).family == "lattice-binary"
    assert law_from_config({"family": "gaussian-binary"}).params == {
        "mu": 2 * math.log(2.0),
        "s2": 2 * math.log(2.0),
    }
    heavy = law_from_config({"family": "heavy-mixture", "epsilon": 0.05})
    assert heavy.params == {"epsilon": 0.05, "y_min": 2.0, "c0": 1.0}


@pytest.mark.unit
def test_user_table_law():
    law = law_from_config(
        {
            "family": "user-table",
            "lattice_step": 0.6931471805599453,
            "configurations": [
                {"probability": "1/4", "displacements": [0.6931471805599453] * 4},
                {"probability": "1/4", "displacements": [-0.6931471805599453]},
                {"probability": "1/2", "displacements": []},
            ],
        }
    )
    assert law.can_go_extinct
    assert law.lattice_step == pytest.approx(math.log(2.0))


@pytest.mark.unit
def test_invalid_laws_name_the_field():
    with pytest.raises(ConfigError, match=r"law\.family"):
        law_from_config({"family": "poisson"})
    with pytest.raises(ConfigError, match=r"law\.family: missing"):
        law_from_config({})
    with pytest.raises(ConfigError, match=r"law\.epsilon"):
        law_from_config({"family": "heavy-mixture", "epsilon": "many"})
    with pytest.raises(ConfigError, match="boundary case"):
        law_from_config({"family": "gaussian-binary", "mu": 1.0, "s2": 1.0})
    with pytest.raises(ConfigError, match="sum to exactly 1"):
        law_from_config({"family": "user-table", "configurations": [{"probability": 0.5, "displacements": [0.0]}]})


@pytest.mark.unit
def test_validation_can_be_skipped():
    law = law_from_config({"family": "gaussian-binary", "mu": 1.0, "s2": 1.0, "validate": False})
    assert law.params == {"mu": 1.0, "s2": 1.0}


@pytest.mark.unit
def test_corridor_defaults():
    spec = corridor_from_config({"lower": -1, "upper": 1})
    assert spec.lower == PiecewiseLinear.constant(-1.0)
    assert spec.scaling == PowerScaling()
    assert spec.walk == LatticeWalk.symmetric()
    assert spec.mark == NoMark()


@pytest.mark.unit
def test_corridor_sections():
    spec = corridor_from_config(
        {
            "lower": [[0, -1], [1, 0]],
            "upper": "0:1,1:2",
            "scaling": {"type": "constant", "value": 2},
            "walk": {"type": "lattice", "step": 0.5},
            "mark": {"type": "two-point", "c": 2},
            "threshold": {"type": "engineered", "c": 0.5},
        }
    )
    assert spec.lower(0.5) == pytest.approx(-0.5)
    assert spec.upper(0.5) == pytest.approx(1.5)
    assert spec.scaling == ConstantScaling(2.0)
    assert spec.walk.step == 0.5
    assert spec.mark == TwoPointMark(2.0, 0.0)
    assert spec.threshold == EngineeredThreshold(0.5)


@pytest.mark.unit
def test_corridor_errors():
    with pytest.raises(ConfigError, match=r"corridor\.upper: missing"):
        corridor_from_config({"lower": 0})
    with pytest.raises(ConfigError, match=r"corridor\.mark\.type"):
        corridor_from_config({"lower": 0, "upper": 1, "mark": {"type": "cauchy"}})
    with pytest.raises(ConfigError, match=r"corridor\.walk"):
        corridor_from_config({"lower": 0, "upper": 1, "walk": {"type": "lattice", "probs": [0.7, 0.0, 0.3]}})
    with pytest.raises(ConfigError):
        corridor_from_config({"lower": 1, "upper": 0})


@pytest.mark.unit
def test_parse_band_flag():
    assert parse_band_flag("0:-1:1,1:-1:1") == {"lower": [[0.0, -1.0], [1.0, -1.0]], "upper": [[0.0, 1.0], [1.0, 1.0]]}
    with pytest.raises(ConfigError):
        parse_band_flag("0:-1")


@pytest.mark.unit
def test_parse_typed_flag():
    assert parse_typed_flag("mark", "two-point:1:0.5") == {"type": "two-point", "c": 1.0, "growth": 0.5}
    assert parse_typed_flag("walk", "lattice") == {"type": "lattice"}
    assert parse_typed_flag("threshold", "engineered:2") == {"type": "engineered", "c": 2.0}
    with pytest.raises(ConfigError):
        parse_typed_flag("mark", "cauchy:1")
    with pytest.raises(ConfigError):
        parse_typed_flag("scaling", "power:0.25:1")
    with pytest.raises(ConfigError):
        parse_typed_flag("walk", "gaussian:wide")
