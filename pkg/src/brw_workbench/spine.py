# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
The spine of the size-biased tree, the many-to-one identity

    E[Σ_{|u|=n} F(V(u_j), j ≤ n)] = Ê[e^{S_n} F(S_j, j ≤ n)],

and first/second moments of the corridor counts used by the left-tail bounds.
"""
import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from brw_workbench.corridor import SNAP, CubeRootProfile, LatticeKernel, LatticeMass, interior_bounds, propagate
from brw_workbench.errors import BudgetExceeded, UnsupportedFamily
from brw_workbench.forward_sim import DEFAULT_BUDGET_NODES, count_generation
from brw_workbench.laws import PointConfiguration, ReproductionLaw, spine_atoms
from brw_workbench.reports import EstimateReport, exact_report, mean_report
from brw_workbench.rng import RandomSource, RngStream, as_generator, run_indexed

logger = logging.getLogger(__name__)

SPINE_CHUNK = 10_000
SMALL_N = 8


@dataclass(frozen=True)
class SpineStep:
    """
    One step of the spine: its displacement, the siblings born with it, and ξ = log of Σ e^{-x} over all children.
    """

    spine_displacement: float
    siblings: PointConfiguration
    xi: float

    @property
    def sibling_displacements(self) -> np.ndarray:
        return self.siblings.children()


@dataclass(frozen=True)
class SpineRealization:
    """
    :param positions: V(w_j) for j = 0..n, starting at 0.
    :param xis: ξ(w_{j-1}) for j = 1..n.
    """

    positions: np.ndarray
    xis: np.ndarray

    @property
    def endpoint_weight(self) -> float:
        return math.exp(self.positions[-1])


@dataclass(frozen=True)
class PathFunctional:
    """Indicator that every position V(u_j), j ≤ n, lies in [lower, upper]."""

    name: str
    lower: float
    upper: float

    def holds(self, positions: np.ndarray) -> np.ndarray:
        return np.all((positions >= self.lower) & (positions <= self.upper), axis=-1)


FUNCTIONALS: Dict[str, PathFunctional] = {
    "constant": PathFunctional("constant", -math.inf, math.inf),
    "corridor": PathFunctional("corridor", -5.0, 5.0),
    "running-max": PathFunctional("running-max", -math.inf, 2.0),
}


def get_functional(functional_id: str) -> PathFunctional:
    if functional_id not in FUNCTIONALS:
        err = f"Unknown functional '{functional_id}'. Valid functionals are: {list(FUNCTIONALS)}"
        raise ValueError(err)
    return FUNCTIONALS[functional_id]


def sample_spine_step(law: ReproductionLaw, rng: RandomSource) -> SpineStep:
    """Offspring from the W₁-size-biased law, spine child picked with probability e^{-x}/W₁."""
    displacement, siblings, xi = law.model.spine_step(as_generator(rng))
    return SpineStep(displacement, siblings, xi)


def spine_step_batch(law: ReproductionLaw, size: int, rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """`size` independent (spine displacement, ξ) pairs."""
    return law.model.spine_batch(size, as_generator(rng))


def simulate_spine(law: ReproductionLaw, n: int, rng: RandomSource) -> SpineRealization:
    if n < 1:
        err = f"n must be at least 1. Currently, n is {n}"
        raise ValueError(err)
    displacements, xis = spine_step_batch(law, n, rng)
    return SpineRealization(np.concatenate([[0.0], np.cumsum(displacements)]), xis)


def spine_paths(law: ReproductionLaw, n: int, size: int, rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """
    `size` spine realizations at once.

    :return: positions of shape (size, n + 1) and marks of shape (size, n).
    """
    generator = as_generator(rng)
    positions = np.zeros((size, n + 1))
    xis = np.empty((size, n))
    for j in range(n):
        displacement, xis[:, j] = spine_step_batch(law, size, generator)
        positions[:, j + 1] = positions[:, j] + displacement
    return positions, xis


def _chunks(replicates: int) -> List[int]:
    if replicates < 1:
        err = f"replicates must be at least 1. Currently, replicates is {replicates}"
        raise ValueError(err)
    sizes = [SPINE_CHUNK] * (replicates // SPINE_CHUNK)
    if replicates % SPINE_CHUNK:
        sizes.append(replicates % SPINE_CHUNK)
    return sizes


def _forward_count(law, n, functional, rng, budget_nodes, index) -> Optional[int]:
    try:
        count, _ = count_generation(
            law, n, rng.child(index), functional.lower, functional.upper, budget_nodes=budget_nodes
        )
        return count
    except BudgetExceeded as exc:
        logger.warning("Forward replicate %d: %s", index, exc)
        return None


def _weighted_spine_chunk(law, n, functional, rng, sizes, index) -> np.ndarray:
    positions, _ = spine_paths(law, n, sizes[index], rng.child(index))
    return np.where(functional.holds(positions), np.exp(positions[:, -1]), 0.0)


def many_to_one_check(
    law: ReproductionLaw,
    n: int,
    functional_id: str,
    replicates: int,
    rng: RngStream,
    *,
    threads: int = 1,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> Tuple[EstimateReport, EstimateReport]:
    """
    Both sides of the many-to-one identity by Monte Carlo.

    :return: (forward count of generation-n particles satisfying the functional, spine average of e^{S_n}·F).
    :raises BudgetExceeded: when a forward replicate runs out of nodes.
    """
    functional = get_functional(functional_id)
    forward = partial(_forward_count, law, n, functional, rng.child(0), budget_nodes)
    counts = run_indexed(forward, range(replicates), threads)
    if any(c is None for c in counts):
        err = "Forward side of the many-to-one check exhausted the node budget"
        raise BudgetExceeded(err, nodes=budget_nodes)
    lhs = mean_report(np.array(counts, dtype=float), seed=rng.seed, label="forward", functional=functional_id, n=n)

    sizes = _chunks(replicates)
    spine_side = partial(_weighted_spine_chunk, law, n, functional, rng.child(1), sizes)
    weights = np.concatenate(run_indexed(spine_side, range(len(sizes)), threads))
    rhs = mean_report(weights, seed=rng.seed, label="spine", functional=functional_id, n=n)
    logger.info(
        "many-to-one %s n=%d: forward %.6g ± %.2g, spine %.6g ± %.2g",
        functional_id,
        n,
        lhs.estimate,
        lhs.se,
        rhs.estimate,
        rhs.se,
    )
    return lhs, rhs


def _lattice_offsets(law: ReproductionLaw) -> Tuple[float, List[np.ndarray]]:
    h = law.lattice_step
    if h is None:
        err = f"Exact lattice evaluation needs a finite lattice law, got family '{law.family}'"
        raise UnsupportedFamily(err)
    return h, [np.rint(c / h).astype(np.int64) for c in law.model.configs]


def _spine_kernel(law: ReproductionLaw, xi_cap: float = math.inf) -> Tuple[float, LatticeKernel]:
    h = law.lattice_step
    if h is None:
        err = f"Exact lattice evaluation needs a finite lattice law, got family '{law.family}'"
        raise UnsupportedFamily(err)
    atoms = spine_atoms(law)
    keep = atoms["xi"] <= xi_cap + SNAP
    offsets = np.rint(atoms["displacement"][keep] / h).astype(np.int64)
    return h, LatticeKernel.from_atoms(offsets, atoms["weight"][keep])


def many_to_one_exact(law: ReproductionLaw, n: int, functional_id: str) -> Tuple[float, float]:
    """
    Both sides of the many-to-one identity exactly, for finite lattice laws.

    The forward side propagates the mean offspring measure, the spine side the size-biased step law weighted by
    e^{S_n} at the end.
    """
    functional = get_functional(functional_id)
    h, offsets = _lattice_offsets(law)
    flat = np.concatenate([o for o in offsets if o.size] or [np.zeros(0, dtype=np.int64)])
    weights = np.concatenate([np.full(o.size, p) for p, o in zip(law.model.probs, offsets) if o.size] or [np.zeros(0)])
    mean_kernel = LatticeKernel.from_atoms(flat, weights)

    lo, hi = interior_bounds(np.full(n, functional.lower), np.full(n, functional.upper), h)
    forward = propagate(mean_kernel, lo, hi, LatticeMass.point(0)).log_total()
    _, kernel = _spine_kernel(law)
    spine = propagate(kernel, lo, hi, LatticeMass.point(0)).log_total(tilt=h)
    return math.exp(forward), math.exp(spine)


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


@dataclass(frozen=True)
class _ZnSetup:
    lower: np.ndarray
    upper: np.ndarray
    xi_cap: float
    final_lower: float
    target: float
    sharp: float
    n13: float


def _zn_setup(law: ReproductionLaw, lam: float, delta: float, n: int) -> _ZnSetup:
    if not lam > 0:
        err = f"lambda must be greater than 0. Currently, lambda is {lam}"
        raise ValueError(err)
    if delta < 0:
        err = f"delta must be non-negative. Currently, delta is {delta}"
        raise ValueError(err)
    if n < 1:
        err = f"n must be at least 1. Currently, n is {n}"
        raise ValueError(err)
    lam_star = law.lambda_star
    n13 = n ** (1.0 / 3.0)
    profile = CubeRootProfile(lam, lam_star, 1.0 + delta)
    t = np.arange(1, n + 1) / n
    target = lam - lam_star * (1.0 + delta) ** (1.0 / 3.0)
    sharp = lam - lam_star * ((1.0 + delta) ** (1.0 / 3.0) - delta ** (1.0 / 3.0))
    return _ZnSetup(
        lower=profile(t) * n13,
        upper=np.full(n, lam * n13),
        xi_cap=delta * n13,
        final_lower=float(profile(1.0)) * n13,
        target=target,
        sharp=sharp,
        n13=n13,
    )


def _zn_mc_chunk(law, setup: _ZnSetup, rng: RngStream, sizes, index) -> Tuple[np.ndarray, np.ndarray]:
    generator = rng.child(index).generator()
    size = sizes[index]
    position = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    for j in range(setup.lower.size):
        displacement, xi = spine_step_batch(law, size, generator)
        position += displacement
        alive &= (xi <= setup.xi_cap + SNAP) & (position >= setup.lower[j] - SNAP) & (position <= setup.upper[j] + SNAP)
    return np.where(alive, np.exp(position), 0.0), alive.astype(float)


def estimate_first_moment_Zn(  # noqa: N802
    law: ReproductionLaw,
    lam: float,
    delta: float,
    n: int,
    method: str = "dp",
    *,
    replicates: int = 100_000,
    rng: Optional[RngStream] = None,
    threads: int = 1,
) -> EstimateReport:
    """
    E[Z_n] = Ê[e^{S_n}; S_j ∈ [f(j/n)n^{1/3}, λn^{1/3}], ξ_{j-1} ≤ δn^{1/3}, 1 ≤ j ≤ n]
    with f(t) = λ - λ*(1+δ-t)^{1/3}.

    The extras report the log of the value, the log of the spine corridor probability, the lower bound
    f(1)n^{1/3} + log P̂(corridor) and its target exponent λ - λ*(1+δ)^{1/3}.

    :param method: "dp" for the exact transfer-matrix evaluation (finite lattice laws), "mc" for spine sampling.
    :raises UnsupportedFamily: for "dp" on a law without a finite lattice spine.
    """
    setup = _zn_setup(law, lam, delta, n)
    if method == "dp":
        h, kernel = _spine_kernel(law, setup.xi_cap)
        lo, hi = interior_bounds(setup.lower, setup.upper, h)
        mass = propagate(kernel, lo, hi, LatticeMass.point(0))
        log_value = mass.log_total(tilt=h)
        log_corridor = mass.log_total()
        report = exact_report(_safe_exp(log_value), label="E[Z_n]")
        seed = None
    elif method == "mc":
        if rng is None:
            err = "method='mc' needs an rng stream"
            raise ValueError(err)
        sizes = _chunks(replicates)
        parts = run_indexed(partial(_zn_mc_chunk, law, setup, rng, sizes), range(len(sizes)), threads)
        values = np.concatenate([p[0] for p in parts])
        inside = np.concatenate([p[1] for p in parts])
        report = mean_report(values, seed=rng.seed, label="E[Z_n]")
        log_value = math.log(report.estimate) if report.estimate > 0 else -math.inf
        log_corridor = math.log(inside.mean()) if inside.any() else -math.inf
        seed = rng.seed
    else:
        err = f"Unknown method '{method}'. Valid methods are: ['dp', 'mc']"
        raise ValueError(err)

    extras = {
        "n": n,
        "lambda": lam,
        "delta": delta,
        "log_value": log_value,
        "log_over_n13": log_value / setup.n13,
        "corridor_log_probability": log_corridor,
        "lower_bound_log": setup.final_lower + log_corridor,
        "target_exponent": setup.target,
        "sharp_exponent": setup.sharp,
    }
    logger.info("E[Z_n] (%s) n=%d lambda=%.4g delta=%.4g: log=%.6g", method, n, lam, delta, log_value)
    return EstimateReport(report.estimate, report.se, report.replicates, seed, report.exact, report.label, extras)


def _xn_mc_chunk(law, lower, upper, rng: RngStream, sizes, index) -> np.ndarray:
    generator = rng.child(index).generator()
    size = sizes[index]
    position = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    total = np.zeros(size)
    for j in range(lower.size):
        displacement, _ = spine_step_batch(law, size, generator)
        position += displacement
        exits = alive & (position <= lower[j] + SNAP)
        total[exits] += np.exp(position[exits])
        alive &= (position >= lower[j] - SNAP) & (position <= upper[j] + SNAP)
    return total


def estimate_first_moment_Xn(  # noqa: N802
    law: ReproductionLaw,
    lam: float,
    n: int,
    method: str = "dp",
    *,
    replicates: int = 100_000,
    rng: Optional[RngStream] = None,
    threads: int = 1,
) -> EstimateReport:
    """
    Union-bound sum Σ_{k≤n} Ê[e^{S_k}; S_k ≤ f(k/n)n^{1/3}, S_j ∈ [f(j/n)n^{1/3}, λn^{1/3}], j < k],
    f(t) = λ - λ*(1-t)^{1/3}, which bounds P(L_n ≤ λn^{1/3}) from above.
    """
    if not lam > 0:
        err = f"lambda must be greater than 0. Currently, lambda is {lam}"
        raise ValueError(err)
    lam_star = law.lambda_star
    n13 = n ** (1.0 / 3.0)
    profile = CubeRootProfile(lam, lam_star, 1.0)
    t = np.arange(1, n + 1) / n
    lower = profile(t) * n13
    upper = np.full(n, lam * n13)

    if method == "dp":
        h, kernel = _spine_kernel(law)
        lo, hi = interior_bounds(lower, upper, h)
        exit_top = np.floor(lower / h + SNAP).astype(np.int64)
        collected: List[float] = []

        def collect(j: int, mass: LatticeMass):
            collected.append(mass.log_total(hi=int(exit_top[j - 1]), tilt=h))

        propagate(kernel, lo, hi, LatticeMass.point(0), on_step=collect)
        finite = [c for c in collected if c > -math.inf]
        log_value = float(special.logsumexp(finite)) if finite else -math.inf
        report = exact_report(_safe_exp(log_value), label="E[X_n]")
        seed = None
    elif method == "mc":
        if rng is None:
            err = "method='mc' needs an rng stream"
            raise ValueError(err)
        sizes = _chunks(replicates)
        values = np.concatenate(
            run_indexed(partial(_xn_mc_chunk, law, lower, upper, rng, sizes), range(len(sizes)), threads)
        )
        report = mean_report(values, seed=rng.seed, label="E[X_n]")
        log_value = math.log(report.estimate) if report.estimate > 0 else -math.inf
        seed = rng.seed
    else:
        err = f"Unknown method '{method}'. Valid methods are: ['dp', 'mc']"
        raise ValueError(err)

    extras = {
        "n": n,
        "lambda": lam,
        "log_value": log_value,
        "log_over_n13": log_value / n13,
        "target_exponent": lam - lam_star,
    }
    return EstimateReport(report.estimate, report.se, report.replicates, seed, report.exact, report.label, extras)


@dataclass(frozen=True)
class ZnMoments:
    mean: float
    second_moment: float
    positive_probability: float

    @property
    def cauchy_schwarz_bound(self) -> float:
        """E[Z_n]² / E[Z_n²], a lower bound for P(Z_n > 0)."""
        return self.mean**2 / self.second_moment if self.second_moment > 0 else 0.0


def exact_moments_Zn(law: ReproductionLaw, lam: float, delta: float, n: int) -> ZnMoments:  # noqa: N802
    """
    E[Z_n], E[Z_n²] and P(Z_n > 0) by backward recursion over the generations of a finite lattice law.

    Z_n counts generation-n particles u with V(u_j) ∈ [f(j/n)n^{1/3}, λn^{1/3}] and ξ(u_{j-1}) ≤ δn^{1/3} for
    1 ≤ j ≤ n. A particle's children are independent, so given its configuration
    E[Z²] = Σ E[Z_i²] + (Σ E[Z_i])² - Σ E[Z_i]².
    """
    setup = _zn_setup(law, lam, delta, n)
    h, offsets = _lattice_offsets(law)
    model = law.model
    with np.errstate(divide="ignore"):
        xis = np.log(model.w1)
    reach = max([1] + [int(np.abs(o).max()) for o in offsets if o.size])
    width = 2 * n * reach + 1
    states = np.arange(width) - n * reach
    lo, hi = interior_bounds(setup.lower, setup.upper, h)

    def inside(j: int) -> np.ndarray:
        return (states >= lo[j - 1]) & (states <= hi[j - 1])

    first = inside(n).astype(float)
    second = first.copy()
    none = 1.0 - first

    for j in range(n - 1, -1, -1):
        ok = inside(j + 1)
        pad_first = np.pad(np.where(ok, first, 0.0), reach)
        pad_second = np.pad(np.where(ok, second, 0.0), reach)
        pad_none = np.pad(np.where(ok, none, 1.0), reach, constant_values=1.0)

        new_first = np.zeros(width)
        new_second = np.zeros(width)
        new_none = np.zeros(width)
        for p, offs, xi in zip(model.probs, offsets, xis):
            if xi > setup.xi_cap + SNAP:
                new_none += p
                continue
            sum1 = np.zeros(width)
            sum2 = np.zeros(width)
            sum_sq = np.zeros(width)
            prod = np.ones(width)
            for o in offs.tolist():
                a1 = pad_first[reach + o : reach + o + width]
                sum1 += a1
                sum_sq += a1 * a1
                sum2 += pad_second[reach + o : reach + o + width]
                prod *= pad_none[reach + o : reach + o + width]
            new_first += p * sum1
            new_second += p * (sum2 + sum1 * sum1 - sum_sq)
            new_none += p * prod
        first, second, none = new_first, new_second, new_none

    origin = n * reach
    return ZnMoments(float(first[origin]), float(second[origin]), float(1.0 - none[origin]))


def second_moment_Zn_small(law: ReproductionLaw, lam: float, delta: float, n: int) -> float:  # noqa: N802
    """
    E[Z_n²] for small n.

    :raises BudgetExceeded: for n > 8.
    """
    if n > SMALL_N:
        err = f"second_moment_Zn_small is limited to n <= {SMALL_N}, got n={n}"
        raise BudgetExceeded(err)
    return exact_moments_Zn(law, lam, delta, n).second_moment
