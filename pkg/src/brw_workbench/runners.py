# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Experiment components.

Every experiment is a haystack component whose init parameters are its complete, JSON-friendly configuration, so
`to_dict()` is what the run manifest records and `from_dict()` replays it. `run(seed, threads, budget_nodes)`
returns the result table and a summary; `summary["budget_exceeded"]` flags tables that only hold partial results.
"""
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from haystack import component, default_from_dict, default_to_dict
from typing_extensions import Self

from brw_workbench.config import corridor_from_config, law_from_config
from brw_workbench.corridor import CorridorSpec, dp_corridor_log, fit_exponent, heavy_tail_gap, mc_corridor
from brw_workbench.errors import BudgetExceeded
from brw_workbench.forward_sim import DEFAULT_BUDGET_NODES, cmd_trend, simulate_cmd
from brw_workbench.laws import (
    ReproductionLaw,
    boundary_residuals,
    extinction_probability,
    integrability_functional,
    mc_moments,
)
from brw_workbench.rng import RngStream
from brw_workbench.spine import (
    estimate_first_moment_Xn,
    estimate_first_moment_Zn,
    get_functional,
    many_to_one_check,
    many_to_one_exact,
)
from brw_workbench.tail import nonintegrable_contrast, tail_curve

logger = logging.getLogger(__name__)

DEFAULT_X_GRID = [5.0, 10.0, 20.0, 40.0, 80.0]


def _finite_or_none(value: float) -> Optional[float]:
    return None if math.isinf(value) else value


class _Experiment:
    """Shared serialization for the experiment components."""

    def _init_parameters(self) -> Dict[str, Any]:
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        """
        Serialize this component to a dictionary.
        """
        return default_to_dict(self, **self._init_parameters())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Self:
        """
        Deserialize this component from a dictionary.
        """
        return default_from_dict(cls, data)


@component
class LawCheck(_Experiment):
    """
    Boundary residuals, σ², λ*, extinction probability and the integrability functional of a law.

    Table columns: quantity, x, value, se (se is 0 for analytic and quadrature values).
    """

    def __init__(self, law: Dict[str, Any], x_grid: Optional[List[float]] = None, mc_draws: int = 0):
        """
        :param law: law config section.
        :param x_grid: points at which the integrability functional is evaluated.
        :param mc_draws: when positive, also report Monte Carlo moment estimates from this many offspring draws.
        """
        self.law_config = law
        self.law: ReproductionLaw = law_from_config(law)
        self.x_grid = list(x_grid) if x_grid else list(DEFAULT_X_GRID)
        if mc_draws < 0:
            err = f"mc_draws must be non-negative. Currently, mc_draws is {mc_draws}"
            raise ValueError(err)
        self.mc_draws = mc_draws

    def _init_parameters(self) -> Dict[str, Any]:
        return {"law": self.law_config, "x_grid": self.x_grid, "mc_draws": self.mc_draws}

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):  # noqa: ARG002
        """
        Run the checks.

        :param seed: master seed for the Monte Carlo moments.
        :return: `table` and `summary`.
        """
        law = self.law
        r1, r2 = boundary_residuals(law)
        rows: List[Dict[str, Any]] = [
            {"quantity": "residual_w1", "x": math.nan, "value": r1, "se": 0.0},
            {"quantity": "residual_vw", "x": math.nan, "value": r2, "se": 0.0},
            {"quantity": "sigma2", "x": math.nan, "value": law.sigma2, "se": 0.0},
            {"quantity": "lambda_star", "x": math.nan, "value": law.lambda_star, "se": 0.0},
            {"quantity": "mean_offspring", "x": math.nan, "value": law.mean_offspring, "se": 0.0},
            {"quantity": "extinction", "x": math.nan, "value": extinction_probability(law), "se": 0.0},
        ]
        for x in self.x_grid:
            rows.append({"quantity": "integrability", "x": x, "value": integrability_functional(law, x), "se": 0.0})
        if self.mc_draws:
            stream = RngStream(seed, "laws")
            for key, report in mc_moments(law, self.mc_draws, stream).items():
                rows.append({"quantity": f"mc_{key}", "x": math.nan, "value": report.estimate, "se": report.se})

        summary = {
            "family": law.family,
            "residuals": [r1, r2],
            "sigma2": law.sigma2,
            "lambda_star": law.lambda_star,
            "budget_exceeded": False,
        }
        logger.info("laws check %s: residuals (%.3e, %.3e), sigma2 %.12g", law.family, r1, r2, law.sigma2)
        return {"table": pd.DataFrame(rows), "summary": summary}


@component
class CmdSimulation(_Experiment):
    """
    Replicates of the consistent maximal displacement L_n.

    Table columns: replicate, L_n, censored, extinct, nodes_expanded, completed. Replicates that ran out of nodes
    keep their row with `completed` False and L_n NaN.
    """

    def __init__(self, law: Dict[str, Any], n: int, cap: Optional[float] = None, replicates: int = 100):
        """
        :param law: law config section.
        :param n: generation.
        :param cap: censoring level; None searches without a cap.
        :param replicates: number of independent trees.
        """
        self.law_config = law
        self.law = law_from_config(law)
        self.n = n
        self.cap = cap
        self.replicates = replicates

    def _init_parameters(self) -> Dict[str, Any]:
        return {"law": self.law_config, "n": self.n, "cap": self.cap, "replicates": self.replicates}

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):
        budget = budget_nodes or DEFAULT_BUDGET_NODES
        cap = math.inf if self.cap is None else self.cap
        stream = RngStream(seed, "forward_sim")
        outcomes = simulate_cmd(self.law, self.n, cap, self.replicates, stream, threads=threads, budget_nodes=budget)

        rows = []
        for index, result in enumerate(outcomes):
            if result is None:
                rows.append(
                    {
                        "replicate": index,
                        "L_n": math.nan,
                        "censored": False,
                        "extinct": False,
                        "nodes_expanded": budget,
                        "completed": False,
                    }
                )
                continue
            rows.append(
                {
                    "replicate": index,
                    "L_n": result.numeric,
                    "censored": result.censored,
                    "extinct": result.extinct,
                    "nodes_expanded": result.nodes_expanded,
                    "completed": True,
                }
            )
        table = pd.DataFrame(rows)
        completed = [r for r in outcomes if r is not None]
        values = np.array([r.numeric for r in completed])
        summary = {
            "n": self.n,
            "cap": _finite_or_none(cap),
            "replicates": self.replicates,
            "completed": len(completed),
            "censored": sum(r.censored for r in completed),
            "extinct": sum(r.extinct for r in completed),
            "median_scaled": float(np.quantile(values, 0.5, method="inverted_cdf")) / self.n ** (1.0 / 3.0)
            if completed
            else None,
            "lambda_star": self.law.lambda_star,
            "budget_exceeded": len(completed) < len(outcomes),
        }
        return {"table": table, "summary": summary}


@component
class CmdTrend(_Experiment):
    """
    Quantile of L_n / n^{1/3} over a list of generations.

    Table columns follow `forward_sim.cmd_trend`. When a generation runs out of nodes the table holds the
    generations before it.
    """

    def __init__(self, law: Dict[str, Any], n_list: List[int], quantile: float = 0.5, replicates: int = 200):
        self.law_config = law
        self.law = law_from_config(law)
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            err = f"n_list must be increasing, got {list(n_list)}"
            raise ValueError(err)
        self.n_list = [int(n) for n in n_list]
        self.quantile = quantile
        self.replicates = replicates

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "law": self.law_config,
            "n_list": self.n_list,
            "quantile": self.quantile,
            "replicates": self.replicates,
        }

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):
        budget = budget_nodes or DEFAULT_BUDGET_NODES
        stream = RngStream(seed, "forward_sim")
        frames = []
        exceeded = False
        # one generation at a time so a budget failure keeps the earlier rows; streams are per n either way
        for n in self.n_list:
            try:
                frames.append(
                    cmd_trend(
                        self.law, [n], self.quantile, self.replicates, stream, threads=threads, budget_nodes=budget
                    )
                )
            except BudgetExceeded as exc:
                logger.warning("cmd trend stopped at n=%d: %s", n, exc)
                exceeded = True
                break
        columns = ["n", "quantile", "l_n", "scaled", "censored", "extinct", "replicates"]
        table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
        summary = {
            "quantile": self.quantile,
            "scaled": table["scaled"].tolist(),
            "lambda_star": self.law.lambda_star,
            "budget_exceeded": exceeded,
        }
        return {"table": table, "summary": summary}


@component
class SpineCheck(_Experiment):
    """
    Both sides of the many-to-one identity for one registered path functional.

    Table columns: side, method, estimate, se, replicates.
    """

    def __init__(
        self, law: Dict[str, Any], n: int, functional: str = "constant", replicates: int = 10_000, exact: bool = False
    ):
        """
        :param exact: add the exact transfer-matrix values of both sides (finite lattice laws only).
        """
        self.law_config = law
        self.law = law_from_config(law)
        get_functional(functional)
        self.n = n
        self.functional = functional
        self.replicates = replicates
        self.exact = exact

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "law": self.law_config,
            "n": self.n,
            "functional": self.functional,
            "replicates": self.replicates,
            "exact": self.exact,
        }

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):
        budget = budget_nodes or DEFAULT_BUDGET_NODES
        stream = RngStream(seed, "spine")
        rows = []
        summary: Dict[str, Any] = {"n": self.n, "functional": self.functional, "budget_exceeded": False}
        try:
            lhs, rhs = many_to_one_check(
                self.law, self.n, self.functional, self.replicates, stream, threads=threads, budget_nodes=budget
            )
            for side, report in (("forward", lhs), ("spine", rhs)):
                rows.append(
                    {
                        "side": side,
                        "method": "mc",
                        "estimate": report.estimate,
                        "se": report.se,
                        "replicates": report.replicates,
                    }
                )
            summary.update(
                {
                    "forward": lhs.estimate,
                    "forward_se": lhs.se,
                    "spine": rhs.estimate,
                    "spine_se": rhs.se,
                    "agree": lhs.agrees_with(rhs),
                }
            )
        except BudgetExceeded as exc:
            logger.warning("spine check: %s", exc)
            summary["budget_exceeded"] = True

        if self.exact:
            forward, spine = many_to_one_exact(self.law, self.n, self.functional)
            rows.append({"side": "forward", "method": "exact", "estimate": forward, "se": 0.0, "replicates": 0})
            rows.append({"side": "spine", "method": "exact", "estimate": spine, "se": 0.0, "replicates": 0})
            summary["exact_gap"] = abs(forward - spine)
        table = pd.DataFrame(rows, columns=["side", "method", "estimate", "se", "replicates"])
        return {"table": table, "summary": summary}


@component
class SpineMoment(_Experiment):
    """
    E[Z_n] (quantity "zn") or the union-bound sum E[X_n] (quantity "xn") by exact DP or spine sampling.

    The single table row carries the estimate, its standard error and every diagnostic of the report.
    """

    def __init__(
        self,
        law: Dict[str, Any],
        lam: float,
        n: int,
        delta: float = 0.05,
        method: str = "dp",
        quantity: str = "zn",
        replicates: int = 100_000,
    ):
        if method not in ("dp", "mc"):
            err = f"Unknown method '{method}'. Valid methods are: ['dp', 'mc']"
            raise ValueError(err)
        if quantity not in ("zn", "xn"):
            err = f"Unknown quantity '{quantity}'. Valid quantities are: ['zn', 'xn']"
            raise ValueError(err)
        self.law_config = law
        self.law = law_from_config(law)
        self.lam = lam
        self.n = n
        self.delta = delta
        self.method = method
        self.quantity = quantity
        self.replicates = replicates

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "law": self.law_config,
            "lam": self.lam,
            "n": self.n,
            "delta": self.delta,
            "method": self.method,
            "quantity": self.quantity,
            "replicates": self.replicates,
        }

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):  # noqa: ARG002
        stream = RngStream(seed, "spine")
        if self.quantity == "zn":
            report = estimate_first_moment_Zn(
                self.law,
                self.lam,
                self.delta,
                self.n,
                self.method,
                replicates=self.replicates,
                rng=stream,
                threads=threads,
            )
        else:
            report = estimate_first_moment_Xn(
                self.law, self.lam, self.n, self.method, replicates=self.replicates, rng=stream, threads=threads
            )
        row = {
            "quantity": self.quantity,
            "method": self.method,
            "estimate": report.estimate,
            "se": report.se,
            "replicates": report.replicates,
            **report.extras,
        }
        summary = {
            "estimate": report.estimate,
            "se": report.se,
            "log_over_n13": report.extras["log_over_n13"],
            "target_exponent": report.extras["target_exponent"],
            "budget_exceeded": False,
        }
        return {"table": pd.DataFrame([row]), "summary": summary}


@component
class CorridorExperiment(_Experiment):
    """
    Corridor probabilities over an n grid.

    Columns are n, a_n, log_p, scaled_log_p, plus probability in mode "dp" and probability, se in mode "mc".
    Mode "gap" stacks the fits of `corridor` (no marks) and `heavy` under a `spec` column.
    """

    MODES = ("dp", "mc", "fit", "gap")

    def __init__(
        self,
        corridor: Dict[str, Any],
        n_grid: List[int],
        mode: str = "dp",
        replicates: int = 10_000,
        start: float = 0.0,
        heavy: Optional[Dict[str, Any]] = None,
    ):
        """
        :param corridor: corridor config section (band, scaling, walk, mark, threshold).
        :param n_grid: step counts to evaluate.
        :param mode: one of `MODES`.
        :param replicates: Monte Carlo replicates per n in mode "mc".
        :param start: start offset z in units of a_n.
        :param heavy: corridor section of the heavy-mark spec for mode "gap".
        """
        if mode not in self.MODES:
            err = f"Unknown mode '{mode}'. Valid modes are: {list(self.MODES)}"
            raise ValueError(err)
        if mode == "gap" and heavy is None:
            err = "mode 'gap' needs a 'heavy' corridor section"
            raise ValueError(err)
        self.corridor_config = corridor
        self.heavy_config = heavy
        self.spec: CorridorSpec = corridor_from_config(corridor)
        self.heavy: Optional[CorridorSpec] = corridor_from_config(heavy, "heavy") if heavy is not None else None
        self.n_grid = [int(n) for n in n_grid]
        self.mode = mode
        self.replicates = replicates
        self.start = start

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "corridor": self.corridor_config,
            "n_grid": self.n_grid,
            "mode": self.mode,
            "replicates": self.replicates,
            "start": self.start,
            "heavy": self.heavy_config,
        }

    def _dp_rows(self) -> pd.DataFrame:
        rows = []
        for n in self.n_grid:
            a_n = self.spec.scaling(n)
            log_p = dp_corridor_log(self.spec, n, self.start)
            rows.append(
                {"n": n, "a_n": a_n, "log_p": log_p, "scaled_log_p": log_p * a_n**2 / n, "probability": math.exp(log_p)}
            )
        return pd.DataFrame(rows)

    def _mc_rows(self, stream: RngStream, threads: int) -> pd.DataFrame:
        rows = []
        for n in self.n_grid:
            a_n = self.spec.scaling(n)
            report = mc_corridor(self.spec, n, self.replicates, stream.child(n), start=self.start, threads=threads)
            log_p = math.log(report.estimate) if report.estimate > 0 else -math.inf
            rows.append(
                {
                    "n": n,
                    "a_n": a_n,
                    "log_p": log_p,
                    "scaled_log_p": log_p * a_n**2 / n,
                    "probability": report.estimate,
                    "se": report.se,
                }
            )
        return pd.DataFrame(rows)

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):  # noqa: ARG002
        summary: Dict[str, Any] = {"mode": self.mode, "budget_exceeded": False}
        if self.mode == "dp":
            table = self._dp_rows()
        elif self.mode == "mc":
            table = self._mc_rows(RngStream(seed, "corridor"), threads)
        elif self.mode == "fit":
            fit = fit_exponent(self.spec, self.n_grid, start=self.start)
            table = fit.to_frame()
            summary["fit"] = fit.to_dict()
        else:
            gap = heavy_tail_gap(self.spec, self.heavy, self.n_grid)
            nice = gap.fit_nice.to_frame()
            nice.insert(0, "spec", "nice")
            heavy = gap.fit_heavy.to_frame()
            heavy.insert(0, "spec", "heavy")
            table = pd.concat([nice, heavy], ignore_index=True)
            summary.update({"fit_nice": gap.fit_nice.to_dict(), "fit_heavy": gap.fit_heavy.to_dict(), "gap": gap.gap})
        return {"table": table, "summary": summary}


@component
class TailCurveExperiment(_Experiment):
    """
    The left-tail curve at one n.

    Besides the mode-specific columns of `TailCurve`, the table carries `estimate` (the direct log-rate or the
    lower proxy) and `se_or_exact` (binomial SE of the probability, 0 for exact DP rows).
    """

    def __init__(
        self,
        law: Dict[str, Any],
        n: int,
        lambdas: List[float],
        mode: str = "moment_dp",
        delta: float = 0.05,
        replicates: int = 200,
    ):
        self.law_config = law
        self.law = law_from_config(law)
        self.n = n
        self.lambdas = [float(x) for x in lambdas]
        self.mode = mode
        self.delta = delta
        self.replicates = replicates

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "law": self.law_config,
            "n": self.n,
            "lambdas": self.lambdas,
            "mode": self.mode,
            "delta": self.delta,
            "replicates": self.replicates,
        }

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):
        curve = tail_curve(
            self.law,
            self.n,
            self.lambdas,
            self.mode,
            delta=self.delta,
            replicates=self.replicates,
            rng=RngStream(seed, "tail"),
            threads=threads,
            budget_nodes=budget_nodes or DEFAULT_BUDGET_NODES,
        )
        table = curve.to_frame()
        if self.mode == "direct":
            table.insert(1, "estimate", table["log_rate"])
            table.insert(2, "se_or_exact", table["se"])
        else:
            table.insert(1, "estimate", table["lower"])
            table.insert(2, "se_or_exact", 0.0)
        summary = {
            "law": curve.law,
            "n": curve.n,
            "mode": curve.mode,
            "lambda_star": self.law.lambda_star,
            "budget_exceeded": not curve.complete,
        }
        return {"table": table, "summary": summary}


@component
class TailContrast(_Experiment):
    """Spine corridor survival with and without the ξ constraint for an integrable and a heavy law."""

    def __init__(
        self,
        nice: Dict[str, Any],
        heavy: Dict[str, Any],
        n_grid: List[int],
        lam_ratio: float = 1.1,
        delta: float = 0.05,
        big_a: float = 10.0,
        replicates: int = 100_000,
    ):
        self.nice_config = nice
        self.heavy_config = heavy
        self.law_nice = law_from_config(nice, "nice")
        self.law_heavy = law_from_config(heavy, "heavy")
        self.n_grid = [int(n) for n in n_grid]
        self.lam_ratio = lam_ratio
        self.delta = delta
        self.big_a = big_a
        self.replicates = replicates

    def _init_parameters(self) -> Dict[str, Any]:
        return {
            "nice": self.nice_config,
            "heavy": self.heavy_config,
            "n_grid": self.n_grid,
            "lam_ratio": self.lam_ratio,
            "delta": self.delta,
            "big_a": self.big_a,
            "replicates": self.replicates,
        }

    @component.output_types(table=pd.DataFrame, summary=Dict[str, Any])
    def run(self, seed: int = 0, threads: int = 1, budget_nodes: Optional[int] = None):  # noqa: ARG002
        table = nonintegrable_contrast(
            self.law_nice,
            self.law_heavy,
            self.n_grid,
            lam_ratio=self.lam_ratio,
            delta=self.delta,
            big_a=self.big_a,
            replicates=self.replicates,
            rng=RngStream(seed, "tail"),
            threads=threads,
        )
        summary = {
            "deficit_nice": table.loc[table["law"] == "nice", "deficit"].tolist(),
            "deficit_heavy": table.loc[table["law"] == "heavy", "deficit"].tolist(),
            "budget_exceeded": False,
        }
        return {"table": table, "summary": summary}
