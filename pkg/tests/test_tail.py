# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import math

import pytest

from brw_workbench.errors import BudgetExceeded
from brw_workbench.laws import spine_xi_tail
from brw_workbench.rng import RngStream
from brw_workbench.tail import (
    contrast_profile,
    lambda_star,
    nonintegrable_contrast,
    profile_f,
    tail_curve,
    zn_sharp_exponent,
)


@pytest.mark.unit
def test_lambda_star():
    assert lambda_star(2 / (3 * math.pi**2)) == pytest.approx(1.0, abs=1e-12)
    assert lambda_star(2 * math.log(2.0)) == pytest.approx(2.7378, abs=1e-4)
    assert lambda_star(8.0) == pytest.approx(2 * lambda_star(1.0), rel=1e-12)
    assert lambda_star(1.0) < lambda_star(1.1)


@pytest.mark.unit
def test_profile_f():
    assert profile_f(1.5, 0.0, 1.0, lam_star=2.0) == pytest.approx(1.5)
    assert profile_f(1.5, 0.0, 0.0, lam_star=2.0) == pytest.approx(-0.5)
    assert profile_f(1.5, 0.3, 0.0, lam_star=2.0) == pytest.approx(1.5 - 2.0 * 1.3 ** (1 / 3))


@pytest.mark.unit
def test_profile_f_from_the_step_variance():
    sigma2 = 2 * math.log(2.0)
    assert profile_f(1.5, 0.0, 0.0, sigma2=sigma2) == pytest.approx(1.5 - lambda_star(sigma2), rel=1e-12)
    assert profile_f(2.0, 0.2, 0.5, sigma2=sigma2) == profile_f(2.0, 0.2, 0.5, lam_star=lambda_star(sigma2))
    with pytest.raises(ValueError):
        profile_f(1.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        profile_f(1.5, 0.0, 0.0, lam_star=2.0, sigma2=sigma2)
    with pytest.raises(TypeError):
        profile_f(1.5, 0.0, 0.0, 2.0)


@pytest.mark.unit
def test_zn_sharp_exponent():
    sigma2 = 2 * math.log(2.0)
    assert zn_sharp_exponent(1.0, 0.0, sigma2) == pytest.approx(1.0 - lambda_star(sigma2))
    assert zn_sharp_exponent(1.0, 0.1, sigma2) > 1.0 - lambda_star(sigma2) * 1.1 ** (1 / 3)


@pytest.mark.unit
def test_contrast_profile():
    profile = contrast_profile(1.1, 0.05, 1.0)
    assert profile(0.0) == pytest.approx(1.1 - (1.1**3 - 0.05) ** (1 / 3))
    assert profile(1.0) == pytest.approx(1.1 - (1.1**3 - 1.05) ** (1 / 3))
    with pytest.raises(ValueError):
        contrast_profile(1.0, 0.05, 1.0)


@pytest.mark.unit
def test_moment_curve(lattice_law):
    curve = tail_curve(lattice_law, 27, [2.0, 1.0, 1.5], "moment_dp", delta=0.5)
    assert curve.lambdas == [1.0, 1.5, 2.0]
    assert curve.complete
    for row in curve.rows:
        assert row["lower"] <= row["zn"] + 1e-12
        assert row["target"] == pytest.approx(row["lambda"] - lattice_law.lambda_star)
    frame = curve.to_frame()
    assert list(frame.columns) == ["lambda", "lower", "zn", "upper", "target", "lower_target", "zn_target"]


@pytest.mark.unit
def test_direct_curve_is_monotone(lattice_law):
    curve = tail_curve(lattice_law, 8, [1.0, 1.5, 2.5], "direct", replicates=100, rng=RngStream(0, "tail"))
    probabilities = curve.column("probability")
    assert probabilities == sorted(probabilities)
    assert all(row["replicates"] == 100 for row in curve.rows)
    assert curve.complete


@pytest.mark.unit
def test_direct_curve_beyond_the_search_limit(lattice_law):
    with pytest.raises(BudgetExceeded):
        tail_curve(lattice_law, 1000, [2.0], "direct", rng=RngStream(0, "tail"))


@pytest.mark.unit
def test_curve_argument_checks(lattice_law):
    with pytest.raises(ValueError):
        tail_curve(lattice_law, 8, [1.0], "direct")
    with pytest.raises(ValueError):
        tail_curve(lattice_law, 8, [1.0], "forward")


@pytest.mark.unit
def test_direct_curve_with_budget_is_incomplete(lattice_law):
    curve = tail_curve(lattice_law, 8, [1.0], "direct", replicates=4, rng=RngStream(0, "tail"), budget_nodes=1)
    assert not curve.complete


@pytest.mark.unit
def test_contrast_deficit_vanishes_for_integrable_laws(gaussian_law, lattice_law):
    frame = nonintegrable_contrast(gaussian_law, lattice_law, [8, 27], replicates=2000, rng=RngStream(1, "tail"))
    assert len(frame) == 4
    assert (frame["deficit"] == 0.0).all()
    assert (frame["corridor_hits"] == frame["constrained_hits"]).all()
    assert list(frame["law"]) == ["nice", "nice", "heavy", "heavy"]


@pytest.mark.unit
def test_contrast_against_the_heavy_mixture(gaussian_law, heavy_law):
    frame = nonintegrable_contrast(
        gaussian_law, heavy_law, [27], big_a=2.0, replicates=100_000, rng=RngStream(2, "tail"), threads=2
    )
    nice = frame[frame["law"] == "nice"].iloc[0]
    assert nice["mogulskii"] < 0
    assert nice["deficit"] == pytest.approx(0.0, abs=1e-3)

    heavy = frame[frame["law"] == "heavy"].iloc[0]
    assert 0 < heavy["constrained_hits"] < heavy["corridor_hits"]
    expected = heavy["expected_deficit"]
    assert expected < -0.1
    # delta-method SE of log(constrained / free) for nested binomial counts, in units of n^{1/3}
    se = math.sqrt(1 / heavy["constrained_hits"] - 1 / heavy["corridor_hits"]) / 3.0
    # bursts move the spine by c0, so conditioning on the corridor shifts the thinning by up to a quarter
    assert abs(heavy["deficit"] - expected) < 0.25 * abs(expected) + 3 * se
    assert heavy["deficit"] < 0.5 * expected


@pytest.mark.unit
@pytest.mark.parametrize("big_a", [1.0, 2.0])
def test_heavy_thinning_stays_away_from_zero(heavy_law, big_a):
    def thinning(law, n):
        n13 = n ** (1.0 / 3.0)
        return n * math.log1p(-spine_xi_tail(law, big_a * n13)) / n13

    heavy = [thinning(heavy_law, n) for n in (10**3, 10**5, 10**7)]
    # P̂(ξ ≥ x) decays like x^{-2}, so n P̂(ξ ≥ A n^{1/3}) / n^{1/3} has a non-zero limit
    assert all(value < -0.02 for value in heavy)
    assert heavy[-1] == pytest.approx(heavy[-2], rel=0.2)


@pytest.mark.integration
def test_moment_curve_at_large_n(lattice_law):
    n = 100_000
    curve = tail_curve(lattice_law, n, [2.0], "moment_dp", delta=0.05)
    row = curve.rows[0]
    assert row["lower"] == pytest.approx(row["lower_target"], rel=0.15)
    assert row["lower"] <= row["upper"] + 2 / n ** (1 / 3)
