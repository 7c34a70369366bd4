# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
from brw_workbench.corridor import CorridorSpec, ExponentFit
from brw_workbench.forward_sim import CmdResult, ParticleState
from brw_workbench.laws import PointConfiguration, ReproductionLaw
from brw_workbench.reports import EstimateReport
from brw_workbench.rng import RngStream
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
from brw_workbench.spine import SpineRealization, SpineStep
from brw_workbench.tail import TailCurve

__all__ = [
    "CmdResult",
    "CmdSimulation",
    "CmdTrend",
    "CorridorExperiment",
    "CorridorSpec",
    "EstimateReport",
    "ExponentFit",
    "LawCheck",
    "ParticleState",
    "PointConfiguration",
    "ReproductionLaw",
    "RngStream",
    "SpineCheck",
    "SpineMoment",
    "SpineRealization",
    "SpineStep",
    "TailContrast",
    "TailCurve",
    "TailCurveExperiment",
]
