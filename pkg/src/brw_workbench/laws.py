# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Reproduction laws of branching random walks in the boundary case.

A law is described by a family tag and a small dictionary of parameters. The family model behind it knows how to
evaluate the moments E[Σ e^{-V}], E[Σ V e^{-V}] and σ² = E[Σ V² e^{-V}], the integrability functional
x² E[Σ e^{-V} 1{log W₁ ≥ x}], how to draw a point configuration, and how to draw one step of the spine of the
size-biased law (configuration reweighted by W₁, spine child chosen with probability e^{-V(child)}/W₁).
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from haystack import default_from_dict, default_to_dict
from scipy import integrate, interpolate, special

from brw_workbench.errors import LawValidationError, NoBoundarySolution, QuadratureFailure, UnsupportedFamily
from brw_workbench.reports import EstimateReport, mean_report
from brw_workbench.rng import RandomSource, as_generator

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian-binary", "lattice-binary", "heavy-mixture", "user-table")

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
# quad's error estimate is pessimistic; only reject results far outside the requested tolerance
QUAD_SLACK = 1e3

BOUNDARY_TOLERANCE = 1e-9
LATTICE_BINARY_STEP = math.acosh(2.0)


def lambda_star_of(sigma2: float) -> float:
    """(3π²σ²/2)^{1/3}, the growth constant of the consistent maximal displacement."""
    if not sigma2 > 0:
        err = f"sigma2 must be greater than 0. Currently, sigma2 is {sigma2}"
        raise ValueError(err)
    return (1.5 * math.pi**2 * sigma2) ** (1.0 / 3.0)


def checked_quad(
    func: Callable[[float], float], lower: float, upper: float, points: Optional[Sequence[float]] = None
) -> float:
    """`scipy.integrate.quad` at the workbench tolerances, raising `QuadratureFailure` on a poor result."""
    inner = None
    if points is not None:
        inner = sorted(p for p in points if lower < p < upper) or None
    value, abserr = integrate.quad(
        func, lower, upper, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=500, points=inner
    )
    if not math.isfinite(value) or abserr > QUAD_SLACK * max(QUAD_EPSABS, QUAD_EPSREL * abs(value)):
        err = f"Quadrature on [{lower}, {upper}] did not converge: value={value}, error estimate={abserr}"
        raise QuadratureFailure(err)
    return value


@dataclass
class PointConfiguration:
    """
    One realized offspring set, displacements relative to the parent.

    Identical children are stored once with a multiplicity, so that bursts of many children at the same place stay
    cheap. Multiplicities are floats because the heavy family can produce more than 2**53 identical children.

    :param displacements: distinct child displacements.
    :param counts: multiplicity of each displacement.
    :param w1: Σ e^{-x} over all children.
    :param xi: log(w1); -inf for an empty configuration.
    """

    displacements: np.ndarray
    counts: np.ndarray
    w1: float
    xi: float

    @classmethod
    def from_displacements(
        cls, displacements: Sequence[float], counts: Optional[Sequence[float]] = None
    ) -> "PointConfiguration":
        displacements = np.asarray(displacements, dtype=float)
        counts = np.ones_like(displacements) if counts is None else np.asarray(counts, dtype=float)
        w1 = float(np.sum(counts * np.exp(-displacements)))
        xi = math.log(w1) if w1 > 0 else -math.inf
        return cls(displacements, counts, w1, xi)

    @property
    def size(self) -> float:
        return float(np.sum(self.counts))

    def children(self) -> np.ndarray:
        """All child displacements, multiplicities expanded, in sampling order."""
        return np.repeat(self.displacements, self.counts.astype(np.int64))


class _GaussianBinary:
    """Two children with i.i.d. N(mu, s2) displacements."""

    def __init__(self, mu: float, s2: float):
        if not s2 > 0:
            err = f"s2 must be greater than 0. Currently, s2 is {s2}"
            raise LawValidationError(err)
        self.mu = float(mu)
        self.s2 = float(s2)
        self.s = math.sqrt(self.s2)
        # E[e^{-X}] for one child
        self.tilt = math.exp(-self.mu + self.s2 / 2.0)
        self.tilted_mean = self.mu - self.s2
        self.min_children = 2

    def _weighted(self, g: Callable[[float], float]) -> float:
        """2 E[g(X) e^{-X}] by quadrature."""
        norm = 1.0 / math.sqrt(2.0 * math.pi * self.s2)

        def integrand(x: float) -> float:
            return 2.0 * g(x) * norm * math.exp(-x - (x - self.mu) ** 2 / (2.0 * self.s2))

        centre = self.tilted_mean
        return checked_quad(integrand, centre - 40.0 * self.s, centre + 40.0 * self.s, points=[centre, 0.0])

    def residuals(self) -> Tuple[float, float]:
        return self._weighted(lambda _: 1.0) - 1.0, self._weighted(lambda x: x)

    def sigma2(self) -> float:
        return self._weighted(lambda x: x * x)

    def analytic_sigma2(self) -> float:
        return 2.0 * self.tilt * (self.tilted_mean**2 + self.s2)

    def mean_offspring(self) -> float:
        return 2.0

    def w1_tail(self, x: float) -> float:
        """E[W₁ 1{log W₁ ≥ x}], reduced to one dimension by conditioning on the first child."""
        threshold = math.exp(x)

        def integrand(x1: float) -> float:
            rest = threshold - math.exp(-x1)
            inner = 1.0 if rest <= 0 else float(special.ndtr((-math.log(rest) - self.mu) / self.s))
            return inner * math.exp(-((x1 - self.tilted_mean) ** 2) / (2.0 * self.s2))

        centre = self.tilted_mean
        value = checked_quad(integrand, centre - 40.0 * self.s, centre + 40.0 * self.s, points=[-x, centre])
        return 2.0 * self.tilt * value / math.sqrt(2.0 * math.pi * self.s2)

    def sample(self, rng: np.random.Generator) -> PointConfiguration:
        return PointConfiguration.from_displacements(rng.normal(self.mu, self.s, size=2))

    def moment_terms(self, size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        x = rng.normal(self.mu, self.s, size=(size, 2))
        e = np.exp(-x)
        return {
            "w1": e.sum(axis=1),
            "vw": (x * e).sum(axis=1),
            "v2w": (x * x * e).sum(axis=1),
            "count": np.full(size, 2.0),
        }

    def spine_step(self, rng: np.random.Generator) -> Tuple[float, PointConfiguration, float]:
        spine = rng.normal(self.tilted_mean, self.s)
        sibling = rng.normal(self.mu, self.s)
        xi = float(np.logaddexp(-spine, -sibling))
        return float(spine), PointConfiguration.from_displacements([sibling]), xi

    def spine_batch(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        spine = rng.normal(self.tilted_mean, self.s, size=size)
        sibling = rng.normal(self.mu, self.s, size=size)
        return spine, np.logaddexp(-spine, -sibling)


class _FiniteTable:
    """Finitely many configurations with explicit probabilities."""

    def __init__(
        self,
        probabilities: Sequence[Union[Fraction, float]],
        configurations: Sequence[Sequence[float]],
        lattice_step: Optional[float] = None,
    ):
        if len(probabilities) != len(configurations) or not configurations:
            err = "A table law needs one probability per configuration and at least one configuration"
            raise LawValidationError(err)
        if any(p < 0 for p in probabilities):
            err = "Configuration probabilities must be non-negative"
            raise LawValidationError(err)

        self.probs = np.array([float(p) for p in probabilities])
        self.configs = [np.asarray(c, dtype=float) for c in configurations]
        self.w1 = np.array([float(np.exp(-c).sum()) for c in self.configs])
        self.vw = np.array([float((c * np.exp(-c)).sum()) for c in self.configs])
        self.v2w = np.array([float((c * c * np.exp(-c)).sum()) for c in self.configs])
        self.counts = np.array([c.size for c in self.configs], dtype=float)
        self.min_children = int(self.counts.min())
        self.lattice_step = lattice_step

        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self._atoms = self._build_spine_atoms()
        self._atom_cdf = np.cumsum(self._atoms["weight"] / self._atoms["weight"].sum())
        if self._atom_cdf.size:
            self._atom_cdf[-1] = 1.0

        if lattice_step is not None:
            for c in self.configs:
                ratio = c / lattice_step
                if np.any(np.abs(ratio - np.round(ratio)) > 1e-9):
                    err = f"Displacements {c.tolist()} are not multiples of the lattice step {lattice_step}"
                    raise LawValidationError(err)

    def _build_spine_atoms(self) -> Dict[str, np.ndarray]:
        rows: List[Tuple[int, int, float, float, float]] = []
        for index, (p, c) in enumerate(zip(self.probs, self.configs)):
            if p == 0 or c.size == 0:
                continue
            xi = math.log(self.w1[index])
            for slot, x in enumerate(c):
                rows.append((index, slot, float(x), xi, float(p) * math.exp(-x)))
        columns = list(zip(*rows)) if rows else [(), (), (), (), ()]
        return {
            "config": np.array(columns[0], dtype=int),
            "slot": np.array(columns[1], dtype=int),
            "displacement": np.array(columns[2], dtype=float),
            "xi": np.array(columns[3], dtype=float),
            "weight": np.array(columns[4], dtype=float),
        }

    def residuals(self) -> Tuple[float, float]:
        r1 = math.fsum(self.probs * self.w1) - 1.0
        r2 = math.fsum(self.probs * self.vw)
        return r1, r2

    def sigma2(self) -> float:
        return math.fsum(self.probs * self.v2w)

    analytic_sigma2 = sigma2

    def mean_offspring(self) -> float:
        return math.fsum(self.probs * self.counts)

    def w1_tail(self, x: float) -> float:
        with np.errstate(divide="ignore"):
            mask = np.log(self.w1) >= x
        return math.fsum(self.probs[mask] * self.w1[mask])

    def sample(self, rng: np.random.Generator) -> PointConfiguration:
        index = min(int(np.searchsorted(self._cdf, rng.random(), side="right")), len(self.configs) - 1)
        return PointConfiguration.from_displacements(self.configs[index])

    def moment_terms(self, size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        index = np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"), len(self.configs) - 1)
        return {"w1": self.w1[index], "vw": self.vw[index], "v2w": self.v2w[index], "count": self.counts[index]}

    def spine_atoms(self) -> Dict[str, np.ndarray]:
        """Exact law of (configuration, spine slot) under the size-biased measure, one row per atom."""
        weights = self._atoms["weight"]
        return {**self._atoms, "weight": weights / weights.sum()}

    def spine_step(self, rng: np.random.Generator) -> Tuple[float, PointConfiguration, float]:
        atom = min(int(np.searchsorted(self._atom_cdf, rng.random(), side="right")), self._atom_cdf.size - 1)
        config = self.configs[self._atoms["config"][atom]]
        siblings = np.delete(config, self._atoms["slot"][atom])
        return float(self._atoms["displacement"][atom]), PointConfiguration.from_displacements(siblings), float(
            self._atoms["xi"][atom]
        )

    def spine_batch(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        atom = np.minimum(np.searchsorted(self._atom_cdf, rng.random(size), side="right"), self._atom_cdf.size - 1)
        return self._atoms["displacement"][atom], self._atoms["xi"][atom]


def _gamma_m2(a: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """∫_a^∞ e^{-y} y^{-3} dy."""
    return special.expn(3, a) / np.square(a)


def _tail_count_sum(k: float, switch: int = 1 << 17) -> float:
    """Σ_{j ≥ k} ∫_{log j}^∞ e^{-y} y^{-3} dy: explicit up to `switch`, then Euler-Maclaurin."""
    total = 0.0
    start = k
    if k < switch:
        j = np.arange(int(k), switch, dtype=float)
        total = math.fsum(_gamma_m2(np.log(j)))
        start = float(switch)
    a = math.log(start)
    g = float(_gamma_m2(a))
    integral = 0.5 / (a * a) - start * g
    derivative = -1.0 / (start * start * a**3)
    return total + integral + 0.5 * g - derivative / 12.0


class _HeavyMixture:
    """
    With probability 1-epsilon a retuned Gaussian pair, with probability epsilon a burst of K = ceil(e^Y) children
    all at displacement c0, Y having density proportional to e^{-y} y^{-3} on [y_min, ∞).
    """

    TABLE_POINTS = 20001
    TABLE_SPAN = 40.0

    def __init__(self, epsilon: float, y_min: float, c0: float):
        if not 0 < epsilon < 1:
            err = f"epsilon must lie in (0, 1). Currently, epsilon is {epsilon}"
            raise LawValidationError(err)
        if not y_min > 1:
            err = f"y_min must be greater than 1. Currently, y_min is {y_min}"
            raise LawValidationError(err)
        self.epsilon = float(epsilon)
        self.y_min = float(y_min)
        self.c0 = float(c0)
        self.norm = float(_gamma_m2(self.y_min))
        self.k_min = math.ceil(math.exp(self.y_min))
        self.mean_k = self.k_min + _tail_count_sum(self.k_min) / self.norm
        self.min_children = 2

        # P-hat mass of the burst component, E[W₁; burst]
        self.burst_mass = self.epsilon * math.exp(-self.c0) * self.mean_k
        base_mass = 1.0 - self.burst_mass
        if base_mass <= 0:
            err = f"The burst alone carries E[W₁] = {self.burst_mass} ≥ 1; lower epsilon or raise c0"
            raise NoBoundarySolution(err)
        level = math.log(base_mass / (2.0 * (1.0 - self.epsilon)))
        drift = -self.c0 * self.burst_mass / base_mass
        s2 = -2.0 * (level + drift)
        if s2 <= 0:
            err = f"Retuned base variance is not positive (s2={s2}) for epsilon={epsilon}, c0={c0}"
            raise NoBoundarySolution(err)
        self.base = _GaussianBinary(drift + s2, s2)
        logger.debug("Heavy mixture retuned base to mu=%s s2=%s, E[K]=%s", self.base.mu, s2, self.mean_k)

    @cached_property
    def _inverse_survival(self) -> interpolate.CubicSpline:
        y = np.linspace(self.y_min, self.y_min + self.TABLE_SPAN, self.TABLE_POINTS)
        neg_log_survival = -(np.log(_gamma_m2(y)) - math.log(self.norm))
        return interpolate.CubicSpline(neg_log_survival, y)

    def _sample_y(self, size: int, rng: np.random.Generator) -> np.ndarray:
        spline = self._inverse_survival
        t = -np.log1p(-rng.random(size))
        t_max = spline.x[-1]
        y = spline(np.minimum(t, t_max))
        beyond = t > t_max
        if np.any(beyond):
            slope = float(spline(t_max, 1))
            y[beyond] = spline(t_max) + (t[beyond] - t_max) * slope
        return y

    def _sample_y_size_biased(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Y reweighted by ceil(e^Y), by rejection from the density ∝ (e^y + 1) e^{-y} y^{-3}."""
        pareto_weight = 0.5 / self.y_min**2
        out = np.empty(size)
        todo = np.arange(size)
        while todo.size:
            pareto = rng.random(todo.size) < pareto_weight / (pareto_weight + self.norm)
            y = np.where(pareto, self.y_min / np.sqrt(1.0 - rng.random(todo.size)), self._sample_y(todo.size, rng))
            with np.errstate(over="ignore"):
                ey = np.exp(y)
            accept_prob = np.where(y < 700.0, np.ceil(ey) / (ey + 1.0), 1.0)
            accepted = rng.random(todo.size) < accept_prob
            out[todo[accepted]] = y[accepted]
            todo = todo[~accepted]
        return out

    @staticmethod
    def _log_k(y: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.where(y < 700.0, np.log(np.ceil(np.exp(np.minimum(y, 700.0)))), y)

    def _k_at_least(self, m: float) -> float:
        """E[K 1{K ≥ m}]."""
        if m <= self.k_min:
            return self.mean_k
        survival_before = float(_gamma_m2(math.log(m - 1.0))) / self.norm if m - 1.0 >= self.k_min else 1.0
        return m * survival_before + _tail_count_sum(m) / self.norm

    def residuals(self) -> Tuple[float, float]:
        r1, r2 = self.base.residuals()
        weight = 1.0 - self.epsilon
        burst = self.epsilon * math.exp(-self.c0) * self.mean_k
        return weight * (r1 + 1.0) + burst - 1.0, weight * r2 + self.c0 * burst

    def sigma2(self) -> float:
        burst = self.epsilon * math.exp(-self.c0) * self.mean_k * self.c0**2
        return (1.0 - self.epsilon) * self.base.sigma2() + burst

    def analytic_sigma2(self) -> float:
        burst = self.epsilon * math.exp(-self.c0) * self.mean_k * self.c0**2
        return (1.0 - self.epsilon) * self.base.analytic_sigma2() + burst

    def mean_offspring(self) -> float:
        return 2.0 * (1.0 - self.epsilon) + self.epsilon * self.mean_k

    def w1_tail(self, x: float) -> float:
        exponent = x + self.c0
        threshold = math.exp(exponent)
        m = float(math.ceil(threshold)) if threshold < 2.0**53 else threshold
        burst = self.epsilon * math.exp(-self.c0) * self._k_at_least(m)
        return (1.0 - self.epsilon) * self.base.w1_tail(x) + burst

    def sample(self, rng: np.random.Generator) -> PointConfiguration:
        if rng.random() < self.epsilon:
            y = self._sample_y(1, rng)[0]
            return PointConfiguration.from_displacements([self.c0], [math.ceil(math.exp(y))])
        return self.base.sample(rng)

    def moment_terms(self, size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        terms = self.base.moment_terms(size, rng)
        burst = rng.random(size) < self.epsilon
        k = np.exp(self._log_k(self._sample_y(int(burst.sum()), rng)))
        w = k * math.exp(-self.c0)
        terms["w1"][burst] = w
        terms["vw"][burst] = self.c0 * w
        terms["v2w"][burst] = self.c0**2 * w
        terms["count"][burst] = k
        return terms

    def spine_step(self, rng: np.random.Generator) -> Tuple[float, PointConfiguration, float]:
        if rng.random() < self.burst_mass:
            y = self._sample_y_size_biased(1, rng)
            log_k = float(self._log_k(y)[0])
            siblings = PointConfiguration.from_displacements([self.c0], [math.exp(log_k) - 1.0])
            return self.c0, siblings, log_k - self.c0
        return self.base.spine_step(rng)

    def spine_batch(self, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        spine, xi = self.base.spine_batch(size, rng)
        burst = rng.random(size) < self.burst_mass
        y = self._sample_y_size_biased(int(burst.sum()), rng)
        spine[burst] = self.c0
        xi[burst] = self._log_k(y) - self.c0
        return spine, xi


def _parse_table(params: Dict[str, Any]) -> _FiniteTable:
    rows = params.get("configurations")
    if not rows:
        err = "user-table laws need a non-empty 'configurations' list"
        raise LawValidationError(err)
    probabilities = []
    configurations = []
    for i, row in enumerate(rows):
        if "probability" not in row or "displacements" not in row:
            err = f"configurations[{i}] needs 'probability' and 'displacements'"
            raise LawValidationError(err)
        probabilities.append(Fraction(str(row["probability"])))
        configurations.append([float(x) for x in row["displacements"]])
    if sum(probabilities) != 1:
        err = f"Configuration probabilities must sum to exactly 1, got {sum(probabilities)}"
        raise LawValidationError(err)
    step = params.get("lattice_step")
    return _FiniteTable(probabilities, configurations, None if step is None else float(step))


def _lattice_binary_table() -> _FiniteTable:
    h = LATTICE_BINARY_STEP
    up = math.exp(h) / 4.0
    down = math.exp(-h) / 4.0
    return _FiniteTable(
        [up * up, up * down, down * up, down * down],
        [[h, h], [h, -h], [-h, h], [-h, -h]],
        lattice_step=h,
    )


_MODEL_BUILDERS: Dict[str, Callable[[Dict[str, Any]], Any]] = {
    "gaussian-binary": lambda p: _GaussianBinary(p.get("mu", 2.0 * math.log(2.0)), p.get("s2", 2.0 * math.log(2.0))),
    "lattice-binary": lambda _: _lattice_binary_table(),
    "heavy-mixture": lambda p: _HeavyMixture(p["epsilon"], p["y_min"], p["c0"]),
    "user-table": _parse_table,
}


@dataclass(frozen=True)
class ReproductionLaw:
    """
    Parametric description of the offspring point process.

    Values are immutable and safe to share across workers; the family model and the derived constants are built
    lazily and cached on the instance.

    :param family: one of `FAMILIES`.
    :param params: family parameters (JSON-compatible).
    """

    family: str
    params: Dict[str, Any] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            err = f"Unknown law family '{self.family}'. Valid families are: {list(FAMILIES)}"
            raise LawValidationError(err)

    @cached_property
    def model(self) -> Any:
        try:
            return _MODEL_BUILDERS[self.family](self.params)
        except KeyError as exc:
            err = f"Missing parameter {exc} for family '{self.family}'"
            raise LawValidationError(err) from exc

    @cached_property
    def sigma2(self) -> float:
        return sigma_squared(self)

    @property
    def lambda_star(self) -> float:
        return lambda_star_of(self.sigma2)

    @property
    def mean_offspring(self) -> float:
        return self.model.mean_offspring()

    @property
    def can_go_extinct(self) -> bool:
        return self.model.min_children == 0

    @property
    def lattice_step(self) -> Optional[float]:
        return getattr(self.model, "lattice_step", None)

    def to_dict(self) -> Dict[str, Any]:
        return default_to_dict(self, family=self.family, params=self.params)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReproductionLaw":
        return default_from_dict(cls, data)


def validate_law(law: ReproductionLaw) -> ReproductionLaw:
    """
    Check supercriticality, the boundary case and 0 < σ² < ∞.

    :raises LawValidationError: when any of the conditions fails.
    """
    r1, r2 = boundary_residuals(law)
    if abs(r1) >= BOUNDARY_TOLERANCE or abs(r2) >= BOUNDARY_TOLERANCE:
        err = f"Law '{law.family}' is not in the boundary case: residuals ({r1:.3e}, {r2:.3e})"
        raise LawValidationError(err)
    sigma2 = law.sigma2
    if not 0 < sigma2 < math.inf:
        err = f"Law '{law.family}' has sigma^2 = {sigma2}, expected a finite positive value"
        raise LawValidationError(err)
    if not law.mean_offspring > 1:
        err = f"Law '{law.family}' is not supercritical: mean offspring {law.mean_offspring}"
        raise LawValidationError(err)
    return law


def make_gaussian_binary() -> ReproductionLaw:
    """Two children with i.i.d. N(2 ln 2, 2 ln 2) displacements; σ² = 2 ln 2."""
    two_log_two = 2.0 * math.log(2.0)
    return validate_law(ReproductionLaw("gaussian-binary", {"mu": two_log_two, "s2": two_log_two}))


def make_lattice_binary() -> ReproductionLaw:
    """Two children, each at +h w.p. e^h/4 and -h w.p. e^{-h}/4 with h = arccosh(2); σ² = h²."""
    return validate_law(ReproductionLaw("lattice-binary", {}))


def make_heavy_mixture(epsilon: float, y_min: float, c0: float) -> ReproductionLaw:
    """
    Boundary-case law violating the integrability condition.

    :param epsilon: probability of a burst.
    :param y_min: lower end of the support of Y; must exceed 1.
    :param c0: displacement shared by all burst children.
    :raises NoBoundarySolution: when the Gaussian part cannot absorb the burst's moments.
    """
    return validate_law(ReproductionLaw("heavy-mixture", {"epsilon": epsilon, "y_min": y_min, "c0": c0}))


def make_user_table(
    configurations: Sequence[Tuple[Union[Fraction, str, float], Sequence[float]]],
    lattice_step: Optional[float] = None,
    *,
    validate: bool = True,
) -> ReproductionLaw:
    """
    Law with finitely many configurations.

    :param configurations: (probability, displacements) pairs; probabilities are read as exact fractions.
    :param lattice_step: common step of all displacements, enabling the transfer-matrix routines.
    :param validate: run `validate_law` on the result.
    """
    params: Dict[str, Any] = {
        "configurations": [
            {"probability": str(Fraction(str(p))), "displacements": [float(x) for x in xs]} for p, xs in configurations
        ]
    }
    if lattice_step is not None:
        params["lattice_step"] = float(lattice_step)
    law = ReproductionLaw("user-table", params)
    return validate_law(law) if validate else law


def boundary_residuals(law: ReproductionLaw) -> Tuple[float, float]:
    """(E[Σ e^{-V}] - 1, E[Σ V e^{-V}])."""
    return law.model.residuals()


def sigma_squared(law: ReproductionLaw) -> float:
    """E[Σ V² e^{-V}]."""
    return law.model.sigma2()


def integrability_functional(law: ReproductionLaw, x: float) -> float:
    """x² E[Σ_{|u|=1} e^{-V(u)} 1{log W₁ ≥ x}]."""
    if x < 0:
        err = f"x must be non-negative. Currently, x is {x}"
        raise ValueError(err)
    if x == 0:
        return 0.0
    return x * x * law.model.w1_tail(x)


def spine_xi_tail(law: ReproductionLaw, x: float) -> float:
    """P̂(ξ(w₀) ≥ x) = E[W₁ 1{log W₁ ≥ x}]."""
    return law.model.w1_tail(x)


def sample_offspring(law: ReproductionLaw, rng: RandomSource) -> PointConfiguration:
    """Draw one configuration from the law."""
    return law.model.sample(as_generator(rng))


def spine_atoms(law: ReproductionLaw) -> Dict[str, np.ndarray]:
    """
    Exact size-biased spine law of a finite law: columns config, slot, displacement, xi, weight.

    :raises UnsupportedFamily: for families with a continuous component.
    """
    if not isinstance(law.model, _FiniteTable):
        err = f"Family '{law.family}' has no finite spine law"
        raise UnsupportedFamily(err)
    return law.model.spine_atoms()


def extinction_probability(law: ReproductionLaw, tol: float = 1e-15, max_iter: int = 1_000_000) -> float:
    """Smallest fixed point in [0, 1] of the offspring-count generating function."""
    model = law.model
    if model.min_children > 0:
        return 0.0
    probs, counts = model.probs, model.counts
    s = 0.0
    for _ in range(max_iter):
        updated = math.fsum(probs * np.power(s, counts))
        if abs(updated - s) < tol:
            return updated
        s = updated
    logger.warning("Extinction fixed point did not converge in %d iterations", max_iter)
    return s


def mc_moments(law: ReproductionLaw, draws: int, rng: RandomSource, chunk: int = 100_000) -> Dict[str, EstimateReport]:
    """Monte Carlo estimates of E[W₁], E[Σ V e^{-V}], E[Σ V² e^{-V}] and the mean offspring count."""
    generator = as_generator(rng)
    parts: Dict[str, List[np.ndarray]] = {"w1": [], "vw": [], "v2w": [], "count": []}
    remaining = draws
    while remaining > 0:
        size = min(chunk, remaining)
        for key, values in law.model.moment_terms(size, generator).items():
            parts[key].append(values)
        remaining -= size
    return {key: mean_report(np.concatenate(values), label=key) for key, values in parts.items()}
