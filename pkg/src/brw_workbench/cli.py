# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Command line entry point.

    brw-workbench corridor dp --band 0:-1:1,1:-1:1 --an-rule constant:1 --walk lattice:1 --n-grid 2,4 --out p.csv

writes `p.csv` and `p.csv.manifest`. Parameters resolve as component defaults, then `--config` (a YAML mapping of
component parameters), then explicit flags. Exit status: 0 on success, 2 on configuration errors (nothing written),
3 when the node budget ran out (partial results written and flagged in the manifest).
"""
import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from brw_workbench.__about__ import __version__
from brw_workbench.config import load_config, parse_band_flag, parse_typed_flag
from brw_workbench.errors import (
    BudgetExceeded,
    ConfigError,
    LawValidationError,
    NoBoundarySolution,
    StateExplosion,
    UnsupportedFamily,
    WorkbenchError,
)
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

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3

# errors that mean the request itself cannot be served
CONFIG_ERRORS = (ConfigError, ValueError, TypeError, LawValidationError, NoBoundarySolution, UnsupportedFamily)

_U64_MAX = (1 << 64) - 1


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        err = f"expected an unsigned 64-bit integer, got {text!r}"
        raise argparse.ArgumentTypeError(err) from exc
    if not 0 <= value <= _U64_MAX:
        err = f"{value} is outside [0, 2^64)"
        raise argparse.ArgumentTypeError(err)
    return value


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        err = f"expected comma separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(err) from exc


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        err = f"expected comma separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(err) from exc


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML mapping of experiment parameters.")
    common.add_argument("--seed", type=_u64, default=0, help="Master seed, an unsigned 64-bit integer (default: 0).")
    common.add_argument("--out", type=Path, default=None, help="CSV output path; the manifest goes to <out>.manifest.")
    common.add_argument(
        "--threads", type=int, default=None, help="Worker processes (default: all cores). Results do not depend on it."
    )
    common.add_argument("--budget-nodes", type=int, default=None, help="Node budget per forward-simulated tree.")
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level for messages on stderr (default: WARNING).",
    )
    return common


def _add_law(parser: argparse.ArgumentParser):
    parser.add_argument("--law", type=Path, default=None, help="YAML law file.")


def _add_corridor_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--band", default=None, help="Band knots t:f:g,t:f:g,... in units of a_n.")
    parser.add_argument("--walk", default=None, help="lattice:STEP (symmetric) or gaussian:SIGMA2.")
    parser.add_argument("--mark", default=None, help="none, bounded:U, pareto:ALPHA:SCALE or two-point:C[:GROWTH].")
    parser.add_argument("--an-rule", dest="an_rule", default=None, help="power:EXPONENT or constant:VALUE.")
    parser.add_argument(
        "--threshold", default=None, help="constant:TAU, power:COEFFICIENT:EXPONENT or engineered:C."
    )
    parser.add_argument("--n-grid", dest="n_grid", type=_int_list, default=None, help="Comma separated n values.")
    parser.add_argument("--replicates", type=int, default=None)
    parser.add_argument("--start", type=float, default=None, help="Start offset z in units of a_n.")


def build_argument_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="brw-workbench", description="Branching random walk numerics in the boundary case."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)

    laws = groups.add_parser("laws", help="Reproduction law diagnostics.").add_subparsers(dest="action", required=True)
    check = laws.add_parser("check", parents=[common], help="Residuals, sigma^2, lambda* and integrability table.")
    _add_law(check)
    check.add_argument("--x-grid", dest="x_grid", type=_float_list, default=None)
    check.add_argument("--mc-draws", dest="mc_draws", type=int, default=None)

    simulate = groups.add_parser("simulate", help="Forward simulation.").add_subparsers(dest="action", required=True)
    cmd = simulate.add_parser("cmd", parents=[common], help="Replicates of L_n.")
    _add_law(cmd)
    cmd.add_argument("--n", type=int, default=None)
    cmd.add_argument("--cap", type=float, default=None)
    cmd.add_argument("--replicates", type=int, default=None)
    trend = simulate.add_parser("trend", parents=[common], help="Quantile of L_n / n^(1/3) over several n.")
    _add_law(trend)
    trend.add_argument("--n-list", dest="n_list", type=_int_list, default=None)
    trend.add_argument("--quantile", type=float, default=None)
    trend.add_argument("--replicates", type=int, default=None)

    spine = groups.add_parser("spine", help="Spine and many-to-one.").add_subparsers(dest="action", required=True)
    spine_check = spine.add_parser("check", parents=[common], help="Both sides of the many-to-one identity.")
    _add_law(spine_check)
    spine_check.add_argument("--n", type=int, default=None)
    spine_check.add_argument("--functional", default=None)
    spine_check.add_argument("--replicates", type=int, default=None)
    spine_check.add_argument("--exact", action="store_const", const=True, default=None)
    for name, text in (("zmean", "E[Z_n]"), ("xmean", "Union-bound sum E[X_n]")):
        moment = spine.add_parser(name, parents=[common], help=text)
        _add_law(moment)
        moment.add_argument("--lambda", dest="lam", type=float, default=None)
        moment.add_argument("--n", type=int, default=None)
        moment.add_argument("--method", choices=["dp", "mc"], default=None)
        moment.add_argument("--replicates", type=int, default=None)
        if name == "zmean":
            moment.add_argument("--delta", type=float, default=None)

    corridor = groups.add_parser("corridor", help="Corridor probabilities.")
    corridor = corridor.add_subparsers(dest="action", required=True)
    for mode in CorridorExperiment.MODES:
        _add_corridor_flags(corridor.add_parser(mode, parents=[common]))

    tail = groups.add_parser("tail", help="Left tail experiments.").add_subparsers(dest="action", required=True)
    curve = tail.add_parser("curve", parents=[common], help="lambda -> (1/n^(1/3)) log P(L_n <= lambda n^(1/3)).")
    _add_law(curve)
    curve.add_argument("--n", type=int, default=None)
    curve.add_argument("--lambdas", type=_float_list, default=None)
    curve.add_argument("--mode", choices=["direct", "moment_dp"], default=None)
    curve.add_argument("--delta", type=float, default=None)
    curve.add_argument("--replicates", type=int, default=None)
    contrast = tail.add_parser("contrast", parents=[common], help="Integrable against non-integrable law.")
    contrast.add_argument("--nice", type=Path, default=None, help="YAML law file of the integrable law.")
    contrast.add_argument("--heavy", type=Path, default=None, help="YAML law file of the heavy law.")
    contrast.add_argument("--n-grid", dest="n_grid", type=_int_list, default=None)
    contrast.add_argument("--lam-ratio", dest="lam_ratio", type=float, default=None)
    contrast.add_argument("--delta", type=float, default=None)
    contrast.add_argument("--big-a", dest="big_a", type=float, default=None)
    contrast.add_argument("--replicates", type=int, default=None)
    return parser


def _law_section(path: Path) -> Dict[str, Any]:
    data = load_config(path)
    return data["law"] if isinstance(data.get("law"), dict) else data


_PLAIN_FLAGS = (
    "x_grid",
    "mc_draws",
    "n",
    "cap",
    "replicates",
    "n_list",
    "quantile",
    "functional",
    "exact",
    "lam",
    "delta",
    "method",
    "n_grid",
    "start",
    "lambdas",
    "mode",
    "lam_ratio",
    "big_a",
)


def _corridor_params(args: argparse.Namespace, params: Dict[str, Any]):
    base = dict(params.get("corridor") or {})
    if args.band is not None:
        base.update(parse_band_flag(args.band))
    if args.walk is not None:
        base["walk"] = parse_typed_flag("walk", args.walk)
    if args.an_rule is not None:
        base["scaling"] = parse_typed_flag("scaling", args.an_rule)
    marks = {}
    if args.mark is not None:
        marks["mark"] = parse_typed_flag("mark", args.mark)
    if args.threshold is not None:
        marks["threshold"] = parse_typed_flag("threshold", args.threshold)

    if args.action == "gap":
        nice = {k: v for k, v in base.items() if k not in ("mark", "threshold")}
        heavy = dict(params.get("heavy") or base)
        heavy.update({k: v for k, v in base.items() if k not in ("mark", "threshold")})
        heavy.update(marks)
        params["corridor"] = nice
        params["heavy"] = heavy
    else:
        base.update(marks)
        params["corridor"] = base
    params["mode"] = args.action


_COMMANDS: Dict[Tuple[str, str], Tuple[Callable[..., Any], Dict[str, Any]]] = {
    ("laws", "check"): (LawCheck, {}),
    ("simulate", "cmd"): (CmdSimulation, {}),
    ("simulate", "trend"): (CmdTrend, {}),
    ("spine", "check"): (SpineCheck, {}),
    ("spine", "zmean"): (SpineMoment, {"quantity": "zn"}),
    ("spine", "xmean"): (SpineMoment, {"quantity": "xn"}),
    ("tail", "curve"): (TailCurveExperiment, {}),
    ("tail", "contrast"): (TailContrast, {}),
}


def resolve_component(args: argparse.Namespace):
    """
    Build the experiment component for the parsed arguments.

    :raises ConfigError: on unreadable config files or missing parameters.
    """
    params: Dict[str, Any] = dict(load_config(args.config)) if args.config is not None else {}
    if args.group == "corridor":
        cls: Callable[..., Any] = CorridorExperiment
        _corridor_params(args, params)
    else:
        cls, fixed = _COMMANDS[(args.group, args.action)]
        params.update(fixed)
        if getattr(args, "law", None) is not None:
            params["law"] = _law_section(args.law)
        if args.group == "tail" and args.action == "contrast":
            if args.nice is not None:
                params["nice"] = _law_section(args.nice)
            if args.heavy is not None:
                params["heavy"] = _law_section(args.heavy)

    for name in _PLAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    try:
        return cls(**params)
    except TypeError as exc:
        err = f"{args.group} {args.action}: {exc}"
        raise ConfigError(err) from exc


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    err = f"Cannot serialize {type(value).__name__} into the manifest"
    raise TypeError(err)


def partial_result(exc: BudgetExceeded) -> Optional[Dict[str, Any]]:
    """One-row table and summary from the estimate a budget failure carries, or None when it has none."""
    if exc.partial is None:
        return None
    report = exc.partial.to_dict()
    row = {**{key: value for key, value in report.items() if key != "extras"}, **report["extras"]}
    summary = {**row, "budget_exceeded": True, "nodes": exc.nodes}
    return {"table": pd.DataFrame([row]), "summary": summary}


def write_outputs(
    out: Optional[Path],
    subcommand: str,
    component: Any,
    seed: int,
    result: Optional[Dict[str, Any]],
    runtime: float,
    error: Optional[str] = None,
) -> Optional[Path]:
    """
    Write the CSV (when there is a table) and the JSON manifest next to it.

    Without `out` the CSV goes to stdout and no manifest is written.
    """
    outputs: Dict[str, str] = {}
    if result is not None:
        text = result["table"].to_csv(index=False, float_format="%.17g", lineterminator="\n")
        data = text.encode("utf-8")
        if out is None:
            sys.stdout.write(text)
            return None
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(data)
        outputs[out.name] = hashlib.sha256(data).hexdigest()
    if out is None:
        return None

    summary = dict(result["summary"]) if result is not None else {"budget_exceeded": True}
    manifest = {
        "subcommand": subcommand,
        "config": component.to_dict(),
        "seed": seed,
        "version": __version__,
        "summary": summary,
        "partial": bool(summary.get("budget_exceeded", False)),
        "error": error,
        "outputs": outputs,
        "runtime_seconds": runtime,
    }
    manifest_path = out.with_name(out.name + ".manifest")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    logger.info("Manifest written to %s", manifest_path)
    return manifest_path


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, run the experiment and write its outputs.

    :return: the exit status.
    """
    parser = build_argument_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    subcommand = f"{args.group} {args.action}"
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)

    try:
        component = resolve_component(args)
    except CONFIG_ERRORS as exc:
        sys.stderr.write(f"brw-workbench {subcommand}: configuration error: {exc}\n")
        return EXIT_CONFIG

    logger.info("Running %s with seed %d on %d workers", subcommand, args.seed, threads)
    started = time.perf_counter()
    try:
        result = component.run(seed=args.seed, threads=threads, budget_nodes=args.budget_nodes)
    except BudgetExceeded as exc:
        sys.stderr.write(f"brw-workbench {subcommand}: {exc}\n")
        partial = partial_result(exc)
        write_outputs(args.out, subcommand, component, args.seed, partial, time.perf_counter() - started, str(exc))
        return EXIT_BUDGET
    except (ValueError, LawValidationError, UnsupportedFamily, StateExplosion) as exc:
        sys.stderr.write(f"brw-workbench {subcommand}: {exc}\n")
        return EXIT_CONFIG
    except WorkbenchError as exc:
        sys.stderr.write(f"brw-workbench {subcommand}: {exc}\n")
        return EXIT_FAILURE

    write_outputs(args.out, subcommand, component, args.seed, result, time.perf_counter() - started)
    if result["summary"].get("budget_exceeded"):
        return EXIT_BUDGET
    return EXIT_OK


def main() -> None:
    sys.exit(run())
