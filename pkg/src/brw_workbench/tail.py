# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Left tail of the consistent maximal displacement: (1/n^{1/3}) log P(L_n ≤ λn^{1/3}) → λ - λ*, and what happens to
the spine corridor when the integrability condition fails.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from brw_workbench.corridor import SNAP, CubeRootProfile, PiecewiseLinear, mogulskii_exponent
from brw_workbench.errors import BudgetExceeded
from brw_workbench.forward_sim import DEFAULT_BUDGET_NODES, simulate_cmd
from brw_workbench.laws import ReproductionLaw, lambda_star_of, spine_xi_tail
from brw_workbench.rng import RngStream, run_indexed
from brw_workbench.spine import estimate_first_moment_Xn, estimate_first_moment_Zn, spine_step_batch

logger = logging.getLogger(__name__)

# largest λn^{1/3} the forward search is asked to reach
DIRECT_LIMIT = 18.0
CONTRAST_CHUNK = 10_000


def lambda_star(sigma2: float) -> float:
    """(3π²σ²/2)^{1/3}."""
    return lambda_star_of(sigma2)


def profile_f(
    lam: float,
    delta: float,
    t: Union[float, np.ndarray],
    *,
    lam_star: Optional[float] = None,
    sigma2: Optional[float] = None,
) -> Union[float, np.ndarray]:
    """
    λ - λ*(1 + δ - t)^{1/3}; δ = 0 gives the profile of the upper bound, δ > 0 that of the lower bound.

    :param lam_star: growth constant λ*; computed from `sigma2` when omitted.
    :param sigma2: variance σ² of the spine step, used only when `lam_star` is omitted.
    :raises ValueError: unless exactly one of `lam_star` and `sigma2` is given.
    """
    if (lam_star is None) == (sigma2 is None):
        err = "profile_f needs exactly one of lam_star and sigma2"
        raise ValueError(err)
    if lam_star is None:
        lam_star = lambda_star(sigma2)
    return CubeRootProfile(lam, lam_star, 1.0 + delta)(t)


def zn_sharp_exponent(lam: float, delta: float, sigma2: float) -> float:
    """Exponent of E[Z_n] itself: λ - λ*((1+δ)^{1/3} - δ^{1/3})."""
    lam_star = lambda_star(sigma2)
    return lam - lam_star * ((1.0 + delta) ** (1.0 / 3.0) - delta ** (1.0 / 3.0))


def contrast_profile(lam: float, delta: float, lam_star: float) -> CubeRootProfile:
    """
    t ↦ λ - (λ³ - λ*³(t + δ))^{1/3}, the band used against laws that break the integrability condition.

    :raises ValueError: unless λ³ ≥ λ*³(1 + δ).
    """
    shift = (lam / lam_star) ** 3 - delta
    if shift < 1:
        err = f"lambda={lam} is too small for delta={delta}: need lambda^3 >= lambda*^3 (1 + delta)"
        raise ValueError(err)
    return CubeRootProfile(lam, lam_star, shift)


@dataclass
class TailCurve:
    """
    Per-λ estimates at a fixed n.

    direct mode rows hold `probability`, `se` and `log_rate`; moment_dp rows hold the `lower`, `zn` and `upper`
    proxies. Every row carries `target` = λ - λ*.
    """

    law: str
    n: int
    mode: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    complete: bool = True

    @property
    def lambdas(self) -> List[float]:
        return [row["lambda"] for row in self.rows]

    def column(self, name: str) -> List[float]:
        return [row[name] for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _log_rate(p: float, n13: float) -> float:
    return math.log(p) / n13 if p > 0 else -math.inf


def tail_curve(
    law: ReproductionLaw,
    n: int,
    lambda_grid: Sequence[float],
    mode: str = "moment_dp",
    *,
    delta: float = 0.05,
    replicates: int = 200,
    rng: Optional[RngStream] = None,
    threads: int = 1,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> TailCurve:
    """
    The left-tail curve λ ↦ (1/n^{1/3}) log P(L_n ≤ λn^{1/3}) or its moment proxies.

    direct: one farm of forward searches censored at max(λ)·n^{1/3}, every λ read off the same trees.
    moment_dp: exact lattice DP of the lower proxy f(1)n^{1/3} + log P̂(corridor) from E[Z_n], of
    (1/n^{1/3}) log E[Z_n] itself, and of the union-bound sum E[X_n] as the upper proxy.

    :raises BudgetExceeded: in direct mode when λn^{1/3} exceeds the forward-search limit.
    """
    lambdas = sorted(float(x) for x in lambda_grid)
    n13 = n ** (1.0 / 3.0)
    lam_star = law.lambda_star
    curve = TailCurve(law.family, n, mode)

    if mode == "direct":
        if rng is None:
            err = "mode='direct' needs an rng stream"
            raise ValueError(err)
        cap = max(lambdas) * n13
        if cap > DIRECT_LIMIT:
            err = f"lambda * n^(1/3) = {cap:.3g} exceeds {DIRECT_LIMIT}; use mode='moment_dp'"
            raise BudgetExceeded(err)
        outcomes = simulate_cmd(law, n, cap, replicates, rng, threads=threads, budget_nodes=budget_nodes)
        results = [r for r in outcomes if r is not None]
        curve.complete = len(results) == len(outcomes)
        if not curve.complete:
            logger.warning("%d replicates exhausted the node budget", len(outcomes) - len(results))
        total = len(results)
        for lam in lambdas:
            b = lam * n13
            p = sum(r.at_most(b) for r in results) / total if total else math.nan
            se = math.sqrt(p * (1.0 - p) / total) if total else math.nan
            curve.rows.append(
                {
                    "lambda": lam,
                    "probability": p,
                    "se": se,
                    "log_rate": _log_rate(p, n13),
                    "target": lam - lam_star,
                    "replicates": total,
                }
            )
    elif mode == "moment_dp":
        for lam in lambdas:
            zn = estimate_first_moment_Zn(law, lam, delta, n, "dp")
            xn = estimate_first_moment_Xn(law, lam, n, "dp")
            curve.rows.append(
                {
                    "lambda": lam,
                    "lower": zn.extras["lower_bound_log"] / n13,
                    "zn": zn.extras["log_over_n13"],
                    "upper": xn.extras["log_over_n13"],
                    "target": lam - lam_star,
                    "lower_target": zn.extras["target_exponent"],
                    "zn_target": zn.extras["sharp_exponent"],
                }
            )
            logger.info("tail_curve n=%d lambda=%.4g: %s", n, lam, curve.rows[-1])
    else:
        err = f"Unknown mode '{mode}'. Valid modes are: ['direct', 'moment_dp']"
        raise ValueError(err)
    return curve


def _contrast_chunk(
    law: ReproductionLaw, lower: np.ndarray, upper: float, xi_cap: float, rng: RngStream, sizes, index
) -> Tuple[int, int]:
    generator = rng.child(index).generator()
    size = sizes[index]
    position = np.zeros(size)
    corridor = np.ones(size, dtype=bool)
    marks_ok = np.ones(size, dtype=bool)
    for j in range(lower.size):
        displacement, xi = spine_step_batch(law, size, generator)
        position += displacement
        corridor &= (position >= lower[j] - SNAP) & (position <= upper + SNAP)
        marks_ok &= xi <= xi_cap
    return int(corridor.sum()), int((corridor & marks_ok).sum())


def nonintegrable_contrast(
    law_nice: ReproductionLaw,
    law_heavy: ReproductionLaw,
    n_grid: Sequence[int],
    *,
    lam_ratio: float = 1.1,
    delta: float = 0.05,
    big_a: float = 10.0,
    replicates: int = 100_000,
    rng: RngStream,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Spine corridor survival with and without the constraint ξ(w_{j-1}) ≤ A·n^{1/3}, for both laws.

    The corridor is [f(j/n)n^{1/3}, λn^{1/3}] with f the contrast profile and λ = lam_ratio·λ* of each law. Both
    probabilities come from the same spine realizations, so `deficit` is exactly 0 when the constraint never binds.
    `expected_deficit` is the thinning value n·log(1 - P̂(ξ ≥ A n^{1/3}))/n^{1/3}, and `mogulskii_gap` compares the
    constrained rate with the Brownian value.
    """
    rows = []
    for law_index, (name, law) in enumerate((("nice", law_nice), ("heavy", law_heavy))):
        lam_star = law.lambda_star
        lam = lam_ratio * lam_star
        profile = contrast_profile(lam, delta, lam_star)
        reference = mogulskii_exponent(profile, PiecewiseLinear.constant(lam), law.sigma2)
        for n in n_grid:
            n13 = n ** (1.0 / 3.0)
            lower = profile(np.arange(1, n + 1) / n) * n13
            xi_cap = big_a * n13
            sizes = [CONTRAST_CHUNK] * (replicates // CONTRAST_CHUNK)
            if replicates % CONTRAST_CHUNK:
                sizes.append(replicates % CONTRAST_CHUNK)
            task = partial(_contrast_chunk, law, lower, lam * n13, xi_cap, rng.child(law_index, n), sizes)
            parts = run_indexed(task, range(len(sizes)), threads)
            corridor_hits = sum(p[0] for p in parts)
            constrained_hits = sum(p[1] for p in parts)

            log_free = math.log(corridor_hits / replicates) if corridor_hits else -math.inf
            log_constrained = math.log(constrained_hits / replicates) if constrained_hits else -math.inf
            if constrained_hits == corridor_hits:
                deficit = 0.0
            elif constrained_hits == 0:
                deficit = -math.inf
            else:
                deficit = (log_constrained - log_free) / n13
            tail = spine_xi_tail(law, xi_cap)
            expected = n * math.log1p(-tail) / n13 if tail < 1 else -math.inf
            rows.append(
                {
                    "law": name,
                    "n": n,
                    "lambda": lam,
                    "corridor_hits": corridor_hits,
                    "constrained_hits": constrained_hits,
                    "replicates": replicates,
                    "constrained_rate": log_constrained / n13,
                    "mogulskii": reference,
                    "mogulskii_gap": log_constrained / n13 - reference,
                    "deficit": deficit,
                    "expected_deficit": expected,
                }
            )
            logger.info("contrast %s n=%d: deficit %.6g (thinning %.6g)", name, n, deficit, expected)
    return pd.DataFrame(rows)
