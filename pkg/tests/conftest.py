# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math

import pytest

from brw_workbench.laws import (
    ReproductionLaw,
    make_gaussian_binary,
    make_heavy_mixture,
    make_lattice_binary,
    make_user_table,
)

LN2 = math.log(2.0)


@pytest.fixture
def lattice_law() -> ReproductionLaw:
    return make_lattice_binary()


@pytest.fixture
def gaussian_law() -> ReproductionLaw:
    return make_gaussian_binary()


@pytest.fixture(scope="session")
def heavy_law() -> ReproductionLaw:
    return make_heavy_mixture(0.05, 2.0, 1.0)


@pytest.fixture
def table_law() -> ReproductionLaw:
    """Four children at +ln 2 w.p. 1/4, one child at -ln 2 w.p. 1/4, none w.p. 1/2."""
    return make_user_table([("1/4", [LN2] * 4), ("1/4", [-LN2]), ("1/2", [])], lattice_step=LN2)
