# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
from typing import TYPE_CHECKING, Optional

from haystack import DeserializationError

if TYPE_CHECKING:
    from brw_workbench.reports import EstimateReport


class WorkbenchError(Exception):
    """Base class of the errors raised by the workbench kernels."""


class LawValidationError(WorkbenchError):
    """A reproduction law is not supercritical, not in the boundary case, or malformed."""


class NoBoundarySolution(WorkbenchError):
    """The moment constraints of the boundary case cannot be met by the requested family parameters."""


class QuadratureFailure(WorkbenchError):
    """Numeric integration did not reach the requested tolerance."""


class UnsupportedFamily(WorkbenchError):
    """The operation is not available for this law, walk or mark family."""


class StateExplosion(WorkbenchError):
    """A transfer-matrix corridor holds more lattice states than the DP accepts."""


class BudgetExceeded(WorkbenchError):
    """
    A tree search expanded more nodes than its budget allows.

    :param message: human readable description.
    :param nodes: number of nodes expanded when the budget ran out.
    :param partial: the estimate assembled from the replicates that did finish, when there is one.
    """

    def __init__(self, message: str, nodes: int = 0, partial: Optional["EstimateReport"] = None):
        super().__init__(message)
        self.nodes = nodes
        self.partial = partial


class ConfigError(DeserializationError):
    """A configuration file or flag could not be turned into a valid experiment."""
