# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
YAML configuration for laws and corridor experiments.

A law file looks like::

    law:
      family: heavy-mixture
      epsilon: 0.05
      y_min: 2.0
      c0: 1.0

Errors name the offending line (syntax) or the dotted field path (content).
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Union

import yaml

from brw_workbench.corridor import (
    BoundedMark,
    ConstantScaling,
    ConstantThreshold,
    CorridorSpec,
    EngineeredThreshold,
    GaussianWalk,
    LatticeWalk,
    NoMark,
    ParetoMark,
    PiecewiseLinear,
    PowerScaling,
    PowerThreshold,
    TableScaling,
    TwoPointMark,
)
from brw_workbench.errors import ConfigError, WorkbenchError
from brw_workbench.laws import (
    ReproductionLaw,
    make_gaussian_binary,
    make_heavy_mixture,
    make_lattice_binary,
    validate_law,
)

logger = logging.getLogger(__name__)


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a YAML mapping from `path`.

    :raises ConfigError: when the file is missing, is not valid YAML, or does not hold a mapping.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        err = f"Cannot read config '{path}': {exc}"
        raise ConfigError(err) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        err = f"Invalid YAML in '{path}'{where}: {getattr(exc, 'problem', exc)}"
        raise ConfigError(err) from exc
    if not isinstance(data, dict):
        err = f"Config '{path}' must hold a mapping at the top level"
        raise ConfigError(err)
    return data


def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if key not in data:
        err = f"{where}.{key}: missing"
        raise ConfigError(err)
    return data[key]


def _number(data: Dict[str, Any], key: str, where: str, default: Any = None) -> float:
    value = data.get(key, default)
    if value is None:
        err = f"{where}.{key}: missing"
        raise ConfigError(err)
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        err = f"{where}.{key}: expected a number, got {value!r}"
        raise ConfigError(err) from exc


def law_from_config(data: Dict[str, Any], where: str = "law") -> ReproductionLaw:
    """
    Build a law from its config section.

    `validate: false` skips the boundary-case checks (diagnostic laws only).

    :raises ConfigError: on unknown families, missing or malformed fields, and laws failing validation.
    """
    if not isinstance(data, dict):
        err = f"{where}: expected a mapping"
        raise ConfigError(err)
    family = _require(data, "family", where)
    validate = bool(data.get("validate", True))
    try:
        if family == "gaussian-binary":
            if "mu" in data or "s2" in data:
                law = ReproductionLaw(family, {"mu": _number(data, "mu", where), "s2": _number(data, "s2", where)})
                return validate_law(law) if validate else law
            return make_gaussian_binary()
        if family == "lattice-binary":
            return make_lattice_binary()
        if family == "heavy-mixture":
            return make_heavy_mixture(
                _number(data, "epsilon", where, 0.05),
                _number(data, "y_min", where, 2.0),
                _number(data, "c0", where, 1.0),
            )
        if family == "user-table":
            rows = _require(data, "configurations", where)
            if not isinstance(rows, list):
                err = f"{where}.configurations: expected a list"
                raise ConfigError(err)
            params: Dict[str, Any] = {"configurations": rows}
            if data.get("lattice_step") is not None:
                params["lattice_step"] = _number(data, "lattice_step", where)
            law = ReproductionLaw(family, params)
            law.model  # noqa: B018
            return validate_law(law) if validate else law
    except (WorkbenchError, ValueError) as exc:
        err = f"{where}: {exc}"
        raise ConfigError(err) from exc
    err = f"{where}.family: unknown family {family!r}"
    raise ConfigError(err)


def _band(value: Any, where: str) -> PiecewiseLinear:
    try:
        if isinstance(value, (int, float)):
            return PiecewiseLinear.constant(float(value))
        if isinstance(value, str):
            return PiecewiseLinear.parse(value)
        return PiecewiseLinear(tuple((float(t), float(v)) for t, v in value))
    except (TypeError, ValueError) as exc:
        err = f"{where}: cannot read band edge {value!r}"
        raise ConfigError(err) from exc


_SCALINGS: Dict[str, Callable[[Dict[str, Any], str], Any]] = {
    "power": lambda d, w: PowerScaling(_number(d, "exponent", w, 1.0 / 3.0)),
    "constant": lambda d, w: ConstantScaling(_number(d, "value", w, 1.0)),
    "table": lambda d, w: TableScaling(tuple((int(n), float(a)) for n, a in _require(d, "table", w))),
}

_WALKS: Dict[str, Callable[[Dict[str, Any], str], Any]] = {
    "lattice": lambda d, w: LatticeWalk(
        _number(d, "step", w, 1.0),
        tuple(float(p) for p in d.get("probs", (0.5, 0.0, 0.5))),
        int(d.get("min_offset", -1)),
    ),
    "gaussian": lambda d, w: GaussianWalk(_number(d, "sigma2", w, 1.0)),
}

_MARKS: Dict[str, Callable[[Dict[str, Any], str], Any]] = {
    "none": lambda d, w: NoMark(),
    "bounded": lambda d, w: BoundedMark(_number(d, "upper", w, 1.0)),
    "pareto": lambda d, w: ParetoMark(_number(d, "alpha", w, 1.0), _number(d, "scale", w, 1.0)),
    "two-point": lambda d, w: TwoPointMark(_number(d, "c", w, 1.0), _number(d, "growth", w, 0.0)),
}

_THRESHOLDS: Dict[str, Callable[[Dict[str, Any], str], Any]] = {
    "constant": lambda d, w: ConstantThreshold(_number(d, "value", w, float("inf"))),
    "power": lambda d, w: PowerThreshold(_number(d, "coefficient", w, 1.0), _number(d, "exponent", w, 1.0 / 3.0)),
    "engineered": lambda d, w: EngineeredThreshold(_number(d, "c", w, 1.0)),
}


def _typed(section: Any, registry: Dict[str, Callable[[Dict[str, Any], str], Any]], where: str, default: str) -> Any:
    section = {"type": default} if section is None else section
    if not isinstance(section, dict):
        err = f"{where}: expected a mapping"
        raise ConfigError(err)
    kind = section.get("type", default)
    if kind not in registry:
        err = f"{where}.type: unknown type {kind!r}. Valid types are: {list(registry)}"
        raise ConfigError(err)
    try:
        return registry[kind](section, where)
    except (TypeError, ValueError) as exc:
        err = f"{where}: {exc}"
        raise ConfigError(err) from exc


def corridor_from_config(data: Dict[str, Any], where: str = "corridor") -> CorridorSpec:
    """
    Build a `CorridorSpec` from a mapping with keys `lower`, `upper`, `scaling`, `walk`, `mark`, `threshold`.
    """
    if not isinstance(data, dict):
        err = f"{where}: expected a mapping"
        raise ConfigError(err)
    try:
        return CorridorSpec(
            lower=_band(_require(data, "lower", where), f"{where}.lower"),
            upper=_band(_require(data, "upper", where), f"{where}.upper"),
            scaling=_typed(data.get("scaling"), _SCALINGS, f"{where}.scaling", "power"),
            walk=_typed(data.get("walk"), _WALKS, f"{where}.walk", "lattice"),
            mark=_typed(data.get("mark"), _MARKS, f"{where}.mark", "none"),
            threshold=_typed(data.get("threshold"), _THRESHOLDS, f"{where}.threshold", "constant"),
        )
    except ValueError as exc:
        err = f"{where}: {exc}"
        raise ConfigError(err) from exc


def parse_band_flag(text: str) -> Dict[str, Any]:
    """`t:f:g,t:f:g,...` into lower/upper knot lists."""
    lower: List[List[float]] = []
    upper: List[List[float]] = []
    try:
        for item in text.split(","):
            t, f, g = (float(x) for x in item.split(":"))
            lower.append([t, f])
            upper.append([t, g])
    except ValueError as exc:
        err = f"--band: expected 't:f:g,...', got {text!r}"
        raise ConfigError(err) from exc
    return {"lower": lower, "upper": upper}


_FLAG_FIELDS = {
    "walk": {"lattice": ["step"], "gaussian": ["sigma2"]},
    "mark": {"none": [], "bounded": ["upper"], "pareto": ["alpha", "scale"], "two-point": ["c", "growth"]},
    "scaling": {"power": ["exponent"], "constant": ["value"]},
    "threshold": {"constant": ["value"], "power": ["coefficient", "exponent"], "engineered": ["c"]},
}


def parse_typed_flag(kind: str, text: str) -> Dict[str, Any]:
    """
    `type:arg:arg` shorthand into a config section, e.g. `two-point:1.0:0.0` or `lattice:1.3169578969248166`.
    """
    name, *args = text.split(":")
    fields = _FLAG_FIELDS[kind].get(name)
    if fields is None:
        err = f"--{kind}: unknown type {name!r}. Valid types are: {list(_FLAG_FIELDS[kind])}"
        raise ConfigError(err)
    if len(args) > len(fields):
        err = f"--{kind}: too many values in {text!r}"
        raise ConfigError(err)
    section: Dict[str, Any] = {"type": name}
    for key, value in zip(fields, args):
        try:
            section[key] = float(value)
        except ValueError as exc:
            err = f"--{kind}: {key} must be a number, got {value!r}"
            raise ConfigError(err) from exc
    return section
