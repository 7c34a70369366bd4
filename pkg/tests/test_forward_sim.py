# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math

import pytest

from brw_workbench.errors import BudgetExceeded, UnsupportedFamily
from brw_workbench.forward_sim import (
    Censored,
    CmdResult,
    cmd_trend,
    count_generation,
    enumerate_cmd,
    estimate_cmd_cdf,
    exact_cmd,
    exact_cmd_cdf,
    simulate_cmd,
)
from brw_workbench.laws import LATTICE_BINARY_STEP, make_user_table
from brw_workbench.rng import RngStream

H = LATTICE_BINARY_STEP


def survival_to(n: int) -> float:
    """1 - f^(n)(0) for the generating function f(s) = 1/2 + s/4 + s^4/4 of the table law."""
    q = 0.0
    for _ in range(n):
        q = 0.5 + q / 4 + q**4 / 4
    return 1.0 - q


def failure_by_recursion(law, x: float, k: int, b: float) -> float:
    """Probability that no k-generation lineage from x keeps its positions at or below b."""
    if k == 0:
        return 0.0
    total = 0.0
    for p, config in zip(law.model.probs, law.model.configs):
        term = p
        for d in config:
            y = x + d
            term *= 1.0 if y > b + 1e-9 else failure_by_recursion(law, y, k - 1, b)
        total += term
    return total


@pytest.mark.unit
def test_first_generation_of_the_lattice_law(lattice_law):
    stream = RngStream(0, "forward_sim")
    for r in range(20):
        result = exact_cmd(lattice_law, 1, math.inf, stream.child(r))
        assert result.value in (0.0, pytest.approx(H))
        assert not result.extinct


@pytest.mark.unit
@pytest.mark.parametrize("n", [2, 4, 6])
def test_branch_and_bound_matches_enumeration(lattice_law, n):
    stream = RngStream(1, "forward_sim")
    for r in range(15):
        pruned = exact_cmd(lattice_law, n, math.inf, stream.child(r))
        full = enumerate_cmd(lattice_law, n, stream.child(r))
        assert pruned.value == full.value
        assert pruned.nodes_expanded <= full.nodes_expanded


@pytest.mark.unit
def test_branch_and_bound_matches_enumeration_with_extinction(table_law):
    stream = RngStream(2, "forward_sim")
    for r in range(30):
        pruned = exact_cmd(table_law, 5, math.inf, stream.child(r))
        full = enumerate_cmd(table_law, 5, stream.child(r))
        assert pruned.value == full.value
        assert pruned.extinct == full.extinct


@pytest.mark.unit
def test_censoring(lattice_law):
    stream = RngStream(3, "forward_sim")
    for r in range(20):
        full = enumerate_cmd(lattice_law, 4, stream.child(r))
        capped = exact_cmd(lattice_law, 4, H, stream.child(r))
        if full.value <= H:
            assert capped.value == full.value
        else:
            assert capped.censored
            assert capped.value == Censored(H)
            assert capped.numeric == math.inf


@pytest.mark.unit
def test_extinct_trees_are_not_censored(table_law):
    stream = RngStream(4, "forward_sim")
    for r in range(30):
        full = enumerate_cmd(table_law, 4, stream.child(r))
        capped = exact_cmd(table_law, 4, 0.0, stream.child(r))
        assert capped.extinct == full.extinct
        if full.extinct:
            assert capped.value == math.inf


@pytest.mark.unit
def test_single_child_at_zero():
    law = make_user_table([("1", [0.0])], validate=False)
    result = exact_cmd(law, 5, math.inf, RngStream(0, "forward_sim"))
    assert result == CmdResult(0.0, False, 5)


@pytest.mark.unit
def test_argument_checks(lattice_law):
    with pytest.raises(ValueError):
        exact_cmd(lattice_law, 0, math.inf, RngStream(0))
    with pytest.raises(ValueError):
        exact_cmd(lattice_law, 3, -1.0, RngStream(0))


@pytest.mark.unit
def test_budget(lattice_law):
    with pytest.raises(BudgetExceeded):
        exact_cmd(lattice_law, 5, math.inf, RngStream(0), budget_nodes=1)


@pytest.mark.unit
def test_at_most():
    assert CmdResult(1.0, False, 3).at_most(1.0)
    assert not CmdResult(Censored(1.0), False, 3).at_most(2.0)
    assert not CmdResult(math.inf, True, 3).at_most(math.inf)


@pytest.mark.unit
def test_count_generation(lattice_law):
    count, _ = count_generation(lattice_law, 3, RngStream(0))
    assert count == 8
    inside, _ = count_generation(lattice_law, 3, RngStream(0), -0.5, 0.5)
    assert inside == 0


@pytest.mark.unit
@pytest.mark.parametrize("b", [0.0, H, 2 * H])
def test_exact_cdf_matches_recursion(lattice_law, b):
    assert exact_cmd_cdf(lattice_law, 3, b) == pytest.approx(1.0 - failure_by_recursion(lattice_law, 0.0, 3, b))


@pytest.mark.unit
def test_exact_cdf_at_infinity_is_survival(table_law):
    assert exact_cmd_cdf(table_law, 5, math.inf) == pytest.approx(survival_to(5), abs=1e-12)


@pytest.mark.unit
def test_exact_cdf_needs_a_lattice(gaussian_law):
    with pytest.raises(UnsupportedFamily):
        exact_cmd_cdf(gaussian_law, 3, 1.0)


@pytest.mark.unit
def test_estimate_agrees_with_exact_cdf(lattice_law):
    b = H
    report = estimate_cmd_cdf(lattice_law, 3, b, 4000, RngStream(5, "forward_sim"))
    assert abs(report.estimate - exact_cmd_cdf(lattice_law, 3, b)) < 4 * report.se


@pytest.mark.unit
def test_estimate_at_infinity_is_survival(table_law):
    report = estimate_cmd_cdf(table_law, 5, math.inf, 4000, RngStream(6, "forward_sim"))
    assert abs(report.estimate - survival_to(5)) < 4 * report.se
    assert report.extras["survivors"] == round(report.estimate * 4000)


@pytest.mark.unit
def test_estimate_below_zero_is_exact(lattice_law):
    report = estimate_cmd_cdf(lattice_law, 3, -0.1, 10, RngStream(0))
    assert report.estimate == 0.0
    assert report.exact


@pytest.mark.unit
def test_estimate_reports_partial_results(lattice_law):
    with pytest.raises(BudgetExceeded) as info:
        estimate_cmd_cdf(lattice_law, 6, math.inf, 5, RngStream(0), budget_nodes=2)
    assert info.value.partial is None


@pytest.mark.unit
def test_simulation_does_not_depend_on_threads(lattice_law):
    stream = RngStream(7, "forward_sim")
    one = simulate_cmd(lattice_law, 6, math.inf, 12, stream, threads=1)
    two = simulate_cmd(lattice_law, 6, math.inf, 12, stream, threads=3)
    assert one == two


@pytest.mark.unit
def test_budget_exhausted_replicates_are_none(lattice_law):
    results = simulate_cmd(lattice_law, 5, math.inf, 3, RngStream(0), budget_nodes=1)
    assert results == [None, None, None]


@pytest.mark.unit
def test_cmd_trend_single_point(lattice_law):
    stream = RngStream(8, "forward_sim")
    frame = cmd_trend(lattice_law, [4], 0.0, 1, stream)
    expected = exact_cmd(lattice_law, 4, math.inf, stream.child(4).child(0)).numeric
    assert frame["l_n"].tolist() == [expected]
    assert list(frame.columns) == ["n", "quantile", "l_n", "scaled", "censored", "extinct", "replicates"]


@pytest.mark.unit
def test_cmd_trend_argument_checks(lattice_law):
    with pytest.raises(ValueError):
        cmd_trend(lattice_law, [8, 4], 0.5, 10, RngStream(0))
    with pytest.raises(ValueError):
        cmd_trend(lattice_law, [4, 8], 1.5, 10, RngStream(0))


@pytest.mark.integration
def test_cmd_trend_stays_below_lambda_star(lattice_law):
    frame = cmd_trend(lattice_law, [8, 27], 0.5, 30, RngStream(9, "forward_sim"))
    assert (frame["scaled"] < lattice_law.lambda_star + 0.1).all()


@pytest.mark.integration
def test_cmd_trend_increases(lattice_law):
    frame = cmd_trend(lattice_law, [27, 64, 125], 0.5, 400, RngStream(10, "forward_sim"))
    scaled = frame["scaled"].tolist()
    assert all(b > a for a, b in zip(scaled, scaled[1:]))
    assert frame["censored"].sum() == 0
    assert scaled[-1] < lattice_law.lambda_star + 0.1
