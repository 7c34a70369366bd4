# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Forward simulation of the branching random walk and the consistent maximal displacement

    L_n = min_{|u|=n} max_{k≤n} V(u_k).

Every tree node owns a Philox key derived from its parent's key and its birth index, so a replicate's tree is fixed
by (seed, replicate) and pruning only decides how much of it gets looked at.
"""
import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from brw_workbench.errors import BudgetExceeded, UnsupportedFamily
from brw_workbench.laws import ReproductionLaw
from brw_workbench.reports import EstimateReport, binomial_report, exact_report
from brw_workbench.rng import RngStream, TreeRng, child_key, run_indexed

logger = logging.getLogger(__name__)

DEFAULT_BUDGET_NODES = 10**8
MAX_BROOD = 10**7
SNAP = 1e-9


class ParticleState(NamedTuple):
    position: float
    running_max: float
    generation: int
    key: int


@dataclass(frozen=True)
class Censored:
    """L_n is known to exceed `cap`."""

    cap: float


@dataclass(frozen=True)
class CmdResult:
    """
    Outcome of one consistent-maximal-displacement computation.

    :param value: L_n, `Censored(cap)` when L_n > cap, or +inf when the tree died out before generation n.
    :param extinct: True when generation n is empty.
    :param nodes_expanded: number of particles whose offspring were drawn.
    """

    value: Union[float, Censored]
    extinct: bool
    nodes_expanded: int

    @property
    def censored(self) -> bool:
        return isinstance(self.value, Censored)

    @property
    def numeric(self) -> float:
        """L_n as a float, +inf when censored or extinct."""
        return math.inf if isinstance(self.value, Censored) else self.value

    def at_most(self, b: float) -> bool:
        """L_n ≤ b; never true for an extinct tree."""
        return not self.censored and not self.extinct and self.value <= b


def _children(law: ReproductionLaw, tree: TreeRng, state: ParticleState) -> List[ParticleState]:
    config = law.model.sample(tree.at(state.key))
    if config.size > MAX_BROOD:
        err = f"A particle produced {config.size:.3g} children, more than can be traversed"
        raise BudgetExceeded(err)
    out = []
    for index, x in enumerate(config.children().tolist()):
        position = state.position + x
        out.append(
            ParticleState(position, max(state.running_max, position), state.generation + 1, child_key(state.key, index))
        )
    return out


class _Counter:
    def __init__(self, budget: int):
        self.budget = budget
        self.nodes = 0

    def tick(self):
        self.nodes += 1
        if self.nodes > self.budget:
            err = f"Node budget of {self.budget} expansions exhausted"
            raise BudgetExceeded(err, nodes=self.nodes)


def _survives(law: ReproductionLaw, tree: TreeRng, n: int, counter: _Counter) -> bool:
    stack = [ParticleState(0.0, 0.0, 0, tree.root_key)]
    while stack:
        state = stack.pop()
        if state.generation == n:
            return True
        counter.tick()
        stack.extend(reversed(_children(law, tree, state)))
    return False


def exact_cmd(
    law: ReproductionLaw, n: int, cap: float, rng: RngStream, *, budget_nodes: int = DEFAULT_BUDGET_NODES
) -> CmdResult:
    """
    Exact L_n by depth-first branch and bound.

    A lineage is dropped as soon as its running maximum exceeds `cap` or reaches the best value found so far;
    a running maximum equal to `cap` is kept.

    :param law: reproduction law.
    :param n: generation.
    :param cap: censoring level, may be +inf.
    :param rng: stream identifying the replicate.
    :param budget_nodes: maximum number of expansions.
    :raises BudgetExceeded: when more than `budget_nodes` particles need expanding.
    """
    if n < 1:
        err = f"n must be at least 1. Currently, n is {n}"
        raise ValueError(err)
    if cap < 0:
        err = f"cap must be non-negative. Currently, cap is {cap}"
        raise ValueError(err)

    tree = TreeRng(rng)
    counter = _Counter(budget_nodes)
    best = math.inf
    stack = [ParticleState(0.0, 0.0, 0, tree.root_key)]
    while stack:
        state = stack.pop()
        if state.running_max >= best:
            continue
        if state.generation == n:
            best = state.running_max
            continue
        counter.tick()
        for child in reversed(_children(law, tree, state)):
            if child.running_max <= cap and child.running_max < best:
                stack.append(child)

    if best < math.inf:
        return CmdResult(best, False, counter.nodes)
    if math.isinf(cap):
        return CmdResult(math.inf, True, counter.nodes)
    if law.can_go_extinct and not _survives(law, tree, n, counter):
        return CmdResult(math.inf, True, counter.nodes)
    return CmdResult(Censored(cap), False, counter.nodes)


def enumerate_cmd(
    law: ReproductionLaw, n: int, rng: RngStream, *, budget_nodes: int = DEFAULT_BUDGET_NODES
) -> CmdResult:
    """L_n over the full, unpruned tree of the same replicate."""
    tree = TreeRng(rng)
    counter = _Counter(budget_nodes)
    best = math.inf
    stack = [ParticleState(0.0, 0.0, 0, tree.root_key)]
    while stack:
        state = stack.pop()
        if state.generation == n:
            best = min(best, state.running_max)
            continue
        counter.tick()
        stack.extend(reversed(_children(law, tree, state)))
    return CmdResult(best, math.isinf(best), counter.nodes)


def count_generation(
    law: ReproductionLaw,
    n: int,
    rng: RngStream,
    lower: float = -math.inf,
    upper: float = math.inf,
    *,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> Tuple[int, int]:
    """
    Number of generation-n particles whose whole ancestral path stays in [lower, upper].

    :return: (count, nodes expanded).
    """
    tree = TreeRng(rng)
    counter = _Counter(budget_nodes)
    count = 0
    stack = [ParticleState(0.0, 0.0, 0, tree.root_key)]
    while stack:
        state = stack.pop()
        if state.generation == n:
            count += 1
            continue
        counter.tick()
        stack.extend(c for c in _children(law, tree, state) if lower <= c.position <= upper)
    return count, counter.nodes


def exact_cmd_cdf(law: ReproductionLaw, n: int, b: float) -> float:
    """
    Exact P(L_n ≤ b) for a finite lattice law.

    Works backwards with r_k(x), the probability that no k-generation lineage started at x keeps its positions
    at or below b: r_k(x) = Σ_c p_c Π_{children j} r_{k-1}(x + x_j), with r_{k-1} = 1 above b and r_0 = 0.

    :raises UnsupportedFamily: for laws without finitely many configurations on a lattice.
    """
    h = law.lattice_step
    if h is None:
        err = f"exact_cmd_cdf needs a finite lattice law, got family '{law.family}'"
        raise UnsupportedFamily(err)
    if b < 0:
        return 0.0

    model = law.model
    offsets = [np.rint(c / h).astype(np.int64) for c in model.configs]
    reach = max([1] + [int(np.abs(o).max()) for o in offsets if o.size])
    bottom = -n * reach
    top = n * reach if math.isinf(b) else min(math.floor(b / h + SNAP), n * reach)
    size = top - bottom + 1

    failure = np.zeros(size)
    for _ in range(n):
        padded = np.concatenate([np.full(reach, failure[0]), failure, np.ones(reach)])
        updated = np.zeros(size)
        for p, offs in zip(model.probs, offsets):
            term = np.full(size, p)
            for o in offs.tolist():
                term *= padded[reach + o : reach + o + size]
            updated += term
        failure = updated
    return float(1.0 - failure[-bottom])


def _replicate(
    law: ReproductionLaw, n: int, cap: float, rng: RngStream, budget_nodes: int, index: int
) -> Optional[CmdResult]:
    try:
        return exact_cmd(law, n, cap, rng.child(index), budget_nodes=budget_nodes)
    except BudgetExceeded as exc:
        logger.warning("Replicate %d: %s", index, exc)
        return None


def simulate_cmd(
    law: ReproductionLaw,
    n: int,
    cap: float,
    replicates: int,
    rng: RngStream,
    *,
    threads: int = 1,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> List[Optional[CmdResult]]:
    """
    `exact_cmd` on `replicates` independent trees, replicate r using `rng.child(r)`.

    :return: one result per replicate in replicate order; None where the node budget ran out.
    """
    if replicates < 1:
        err = f"replicates must be at least 1. Currently, replicates is {replicates}"
        raise ValueError(err)
    task = partial(_replicate, law, n, cap, rng, budget_nodes)
    return run_indexed(task, range(replicates), threads)


def _cdf_report(results: Sequence[CmdResult], b: float, rng: RngStream, n: int) -> EstimateReport:
    hits = sum(r.at_most(b) for r in results)
    survivors = sum(not r.extinct for r in results)
    conditional = hits / survivors if survivors else math.nan
    return binomial_report(
        hits,
        len(results),
        seed=rng.seed,
        label="cmd_cdf",
        n=n,
        b=b,
        survivors=survivors,
        conditional_on_survival=conditional,
    )


def estimate_cmd_cdf(
    law: ReproductionLaw,
    n: int,
    b: float,
    replicates: int,
    rng: RngStream,
    *,
    threads: int = 1,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> EstimateReport:
    """
    Monte Carlo estimate of P(L_n ≤ b) with a binomial standard error.

    The extras carry the number of surviving replicates and the estimate conditional on survival to generation n.

    :raises BudgetExceeded: when a replicate runs out of nodes; `partial` holds the estimate over the replicates that
        completed.
    """
    if b < 0:
        return exact_report(0.0, label="cmd_cdf", n=n, b=b)
    outcomes = simulate_cmd(law, n, b, replicates, rng, threads=threads, budget_nodes=budget_nodes)
    completed = [r for r in outcomes if r is not None]
    if len(completed) < len(outcomes):
        partial_report = _cdf_report(completed, b, rng, n) if completed else None
        err = f"{len(outcomes) - len(completed)} of {len(outcomes)} replicates exhausted the node budget"
        raise BudgetExceeded(err, nodes=budget_nodes, partial=partial_report)
    return _cdf_report(completed, b, rng, n)


def cmd_trend(
    law: ReproductionLaw,
    n_list: Sequence[int],
    quantile: float,
    replicates: int,
    rng: RngStream,
    *,
    cap: float = math.inf,
    threads: int = 1,
    budget_nodes: int = DEFAULT_BUDGET_NODES,
) -> pd.DataFrame:
    """
    Empirical `quantile` of L_n / n^{1/3} for each n, censored and extinct replicates counting as +inf.

    Each n draws its replicates from `rng.child(n)`.
    """
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        err = f"n_list must be increasing, got {list(n_list)}"
        raise ValueError(err)
    if not 0 <= quantile <= 1:
        err = f"quantile must lie in [0, 1]. Currently, quantile is {quantile}"
        raise ValueError(err)

    rows = []
    for n in n_list:
        results = simulate_cmd(law, n, cap, replicates, rng.child(n), threads=threads, budget_nodes=budget_nodes)
        if any(r is None for r in results):
            err = f"Node budget exhausted at n={n}"
            raise BudgetExceeded(err, nodes=budget_nodes)
        values = np.array([r.numeric for r in results])
        raw = float(np.quantile(values, quantile, method="inverted_cdf"))
        rows.append(
            {
                "n": n,
                "quantile": quantile,
                "l_n": raw,
                "scaled": raw / n ** (1.0 / 3.0),
                "censored": sum(r.censored for r in results),
                "extinct": sum(r.extinct for r in results),
                "replicates": replicates,
            }
        )
        logger.info("cmd_trend n=%d quantile of L_n/n^(1/3) = %.6g", n, rows[-1]["scaled"])
    return pd.DataFrame(rows)
