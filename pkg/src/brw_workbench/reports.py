# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np


@dataclass(frozen=True)
class EstimateReport:
    """
    A point estimate with its standard error.

    :param estimate: the value.
    :param se: standard error; 0.0 for exact values.
    :param replicates: number of Monte Carlo replicates (0 for exact evaluations).
    :param seed: master seed the replicates were drawn from, if any.
    :param exact: True when the value comes from an exact evaluation (enumeration, DP, closed form).
    :param label: what the number is, for tables mixing several quantities.
    :param extras: secondary quantities computed alongside (conditional estimates, log values, ...).
    """

    estimate: float
    se: float = 0.0
    replicates: int = 0
    seed: Optional[int] = None
    exact: bool = False
    label: str = ""
    extras: Dict[str, Any] = field(default_factory=dict)

    def agrees_with(self, other: "EstimateReport", n_se: float = 3.0) -> bool:
        """Whether the two estimates differ by at most `n_se` combined standard errors."""
        combined = math.sqrt(self.se**2 + other.se**2)
        return abs(self.estimate - other.estimate) <= n_se * combined

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def mean_report(values: np.ndarray, *, seed: Optional[int] = None, label: str = "", **extras: Any) -> EstimateReport:
    """Sample mean of `values` with the usual standard error."""
    values = np.asarray(values, dtype=float)
    count = values.size
    if count == 0:
        err = "Cannot build an estimate from zero replicates"
        raise ValueError(err)
    se = float(np.std(values, ddof=1) / math.sqrt(count)) if count > 1 else math.inf
    return EstimateReport(float(np.mean(values)), se, count, seed, False, label, dict(extras))


def binomial_report(hits: int, trials: int, *, seed: Optional[int] = None, label: str = "", **extras: Any):
    """Frequency estimate of a probability with the binomial standard error."""
    if trials <= 0:
        err = f"trials must be greater than 0. Currently, trials is {trials}"
        raise ValueError(err)
    p = hits / trials
    return EstimateReport(p, math.sqrt(p * (1.0 - p) / trials), trials, seed, False, label, dict(extras))


def exact_report(value: float, *, label: str = "", **extras: Any) -> EstimateReport:
    return EstimateReport(float(value), 0.0, 0, None, True, label, dict(extras))
