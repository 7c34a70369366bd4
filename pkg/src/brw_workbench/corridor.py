# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
"""
Small-deviation probabilities of random walks kept inside a shrinking corridor [f(j/n), g(j/n)]·a_n, optionally
paired with i.i.d. marks that must stay below a threshold τ_n.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special

from brw_workbench.errors import StateExplosion, UnsupportedFamily
from brw_workbench.laws import checked_quad
from brw_workbench.reports import EstimateReport, binomial_report
from brw_workbench.rng import RngStream, run_indexed

logger = logging.getLogger(__name__)

MAX_STATES = 100_000
# widest constant band evaluated by dense matrix powers
MAX_DENSE_STATES = 2_000
# lattice snapping tolerance when discretizing band edges
SNAP = 1e-9
MC_CHUNK = 10_000
MC_STEP_BLOCK = 256

Band = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PiecewiseLinear:
    """
    Continuous piecewise-linear function on [0, 1].

    :param knots: (t, value) pairs with strictly increasing t covering 0 and 1.
    """

    knots: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        ts = [t for t, _ in self.knots]
        if len(ts) < 1 or ts[0] > 0 or ts[-1] < 1 or any(b <= a for a, b in zip(ts, ts[1:])):
            err = f"Knots must have strictly increasing t covering [0, 1], got {list(self.knots)}"
            raise ValueError(err)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls(((0.0, float(value)), (1.0, float(value))))

    @classmethod
    def parse(cls, text: str) -> "PiecewiseLinear":
        """Parse `t:v,t:v,...`; a bare number is a constant band edge."""
        text = text.strip()
        if ":" not in text:
            return cls.constant(float(text))
        knots = []
        for item in text.split(","):
            t, v = item.split(":")
            knots.append((float(t), float(v)))
        return cls(tuple(knots))

    def __call__(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        ts, vs = zip(*self.knots)
        return np.interp(t, ts, vs)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "piecewise-linear", "knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class CubeRootProfile:
    """t ↦ level - scale · (shift - t)^{1/3}; needs shift ≥ 1 to stay real on [0, 1]."""

    level: float
    scale: float
    shift: float = 1.0

    def __post_init__(self):
        if self.shift < 1:
            err = f"shift must be at least 1. Currently, shift is {self.shift}"
            raise ValueError(err)

    def __call__(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return self.level - self.scale * np.cbrt(self.shift - np.asarray(t, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "cube-root", "level": self.level, "scale": self.scale, "shift": self.shift}


@dataclass(frozen=True)
class PowerScaling:
    """a_n = n^exponent."""

    exponent: float = 1.0 / 3.0

    def __call__(self, n: int) -> float:
        return float(n) ** self.exponent

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "power", "exponent": self.exponent}


@dataclass(frozen=True)
class ConstantScaling:
    """a_n = value for every n; bands are then in absolute units."""

    value: float = 1.0

    def __call__(self, n: int) -> float:
        return self.value

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class TableScaling:
    table: Tuple[Tuple[int, float], ...]

    def __call__(self, n: int) -> float:
        values = dict(self.table)
        if n not in values:
            err = f"No a_n entry for n={n}; the table covers {sorted(values)}"
            raise ValueError(err)
        return float(values[n])

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "table", "table": [list(row) for row in self.table]}


ScalingRule = Union[PowerScaling, ConstantScaling, TableScaling]


@dataclass(frozen=True)
class LatticeWalk:
    """
    Walk with steps `offset * step`, offsets being consecutive integers starting at `min_offset`.

    :param step: lattice spacing h.
    :param probs: probabilities of the offsets min_offset, min_offset + 1, ...
    """

    step: float = 1.0
    probs: Tuple[float, ...] = (0.5, 0.0, 0.5)
    min_offset: int = -1

    def __post_init__(self):
        if not math.isclose(math.fsum(self.probs), 1.0, abs_tol=1e-12):
            err = f"Step probabilities must sum to 1, got {math.fsum(self.probs)}"
            raise ValueError(err)
        if abs(self.mean) > 1e-12:
            err = f"Walk must be centred, its mean is {self.mean}"
            raise ValueError(err)

    @classmethod
    def symmetric(cls, step: float = 1.0) -> "LatticeWalk":
        return cls(step, (0.5, 0.0, 0.5), -1)

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.min_offset, self.min_offset + len(self.probs))

    @property
    def mean(self) -> float:
        return self.step * math.fsum(o * p for o, p in zip(self.offsets.tolist(), self.probs))

    @property
    def sigma2(self) -> float:
        return self.step**2 * math.fsum(o * o * p for o, p in zip(self.offsets.tolist(), self.probs))

    def kernel(self) -> "LatticeKernel":
        return LatticeKernel(self.min_offset, np.asarray(self.probs, dtype=float))

    def sample(self, size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        return self.step * rng.choice(self.offsets, size=size, p=np.asarray(self.probs))

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "lattice", "step": self.step, "probs": list(self.probs), "min_offset": self.min_offset}


@dataclass(frozen=True)
class GaussianWalk:
    sigma2: float = 1.0

    def sample(self, size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(self.sigma2), size=size)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "gaussian", "sigma2": self.sigma2}


Walk = Union[LatticeWalk, GaussianWalk]


@dataclass(frozen=True)
class NoMark:
    def log_survival(self, tau: float, a_n: float) -> float:
        return 0.0

    def sample(self, size: Tuple[int, int], tau: float, a_n: float, rng: np.random.Generator) -> Optional[np.ndarray]:
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "none"}


@dataclass(frozen=True)
class BoundedMark:
    """ξ uniform on [0, upper]."""

    upper: float = 1.0

    def log_survival(self, tau: float, a_n: float) -> float:
        if tau >= self.upper:
            return 0.0
        if tau <= 0:
            return -math.inf
        return math.log(tau / self.upper)

    def tail_quantile(self, tail: float) -> float:
        return self.upper * max(0.0, 1.0 - tail)

    def sample(self, size: Tuple[int, int], tau: float, a_n: float, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, self.upper, size=size)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "bounded", "upper": self.upper}


@dataclass(frozen=True)
class ParetoMark:
    """P(ξ > x) = (scale / x)^alpha for x ≥ scale."""

    alpha: float = 1.0
    scale: float = 1.0

    def log_survival(self, tau: float, a_n: float) -> float:
        if tau <= self.scale:
            return -math.inf
        return math.log1p(-((self.scale / tau) ** self.alpha))

    def tail_quantile(self, tail: float) -> float:
        return self.scale * tail ** (-1.0 / self.alpha)

    def sample(self, size: Tuple[int, int], tau: float, a_n: float, rng: np.random.Generator) -> np.ndarray:
        return self.scale * (1.0 - rng.random(size)) ** (-1.0 / self.alpha)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "pareto", "alpha": self.alpha, "scale": self.scale}


@dataclass(frozen=True)
class TwoPointMark:
    """
    ξ = 0 with probability 1 - c_n / a_n², else ξ = τ_n + 1, where c_n = c · a_n^growth.

    The thinning factor P(ξ ≤ τ_n)^n = (1 - c_n/a_n²)^n is then known exactly.
    """

    c: float = 1.0
    growth: float = 0.0

    def exceed_probability(self, a_n: float) -> float:
        return self.c * a_n**self.growth / a_n**2

    def log_survival(self, tau: float, a_n: float) -> float:
        if tau < 0:
            return -math.inf
        p = self.exceed_probability(a_n)
        if p >= 1:
            return -math.inf
        return math.log1p(-p)

    def sample(self, size: Tuple[int, int], tau: float, a_n: float, rng: np.random.Generator) -> np.ndarray:
        hit = rng.random(size) < self.exceed_probability(a_n)
        return np.where(hit, tau + 1.0, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "two-point", "c": self.c, "growth": self.growth}


MarkLaw = Union[NoMark, BoundedMark, ParetoMark, TwoPointMark]


@dataclass(frozen=True)
class ConstantThreshold:
    value: float = math.inf

    def __call__(self, n: int, a_n: float, mark: MarkLaw) -> float:
        return self.value

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class PowerThreshold:
    """τ_n = coefficient · n^exponent."""

    coefficient: float = 1.0
    exponent: float = 1.0 / 3.0

    def __call__(self, n: int, a_n: float, mark: MarkLaw) -> float:
        return self.coefficient * float(n) ** self.exponent

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "power", "coefficient": self.coefficient, "exponent": self.exponent}


@dataclass(frozen=True)
class EngineeredThreshold:
    """τ_n chosen so that a_n² P(ξ > τ_n) = c."""

    c: float = 1.0

    def __call__(self, n: int, a_n: float, mark: MarkLaw) -> float:
        if not hasattr(mark, "tail_quantile"):
            err = f"Cannot engineer a threshold for a {type(mark).__name__}"
            raise ValueError(err)
        return mark.tail_quantile(self.c / a_n**2)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "engineered", "c": self.c}


ThresholdRule = Union[ConstantThreshold, PowerThreshold, EngineeredThreshold]


def _describe(part: Any) -> Any:
    return part.to_dict() if hasattr(part, "to_dict") else repr(part)


@dataclass(frozen=True)
class CorridorSpec:
    """
    A corridor experiment: band edges f < g on [0, 1] in units of a_n, the walk, and the mark constraint.

    Band edges may be any vectorized callables; only `PiecewiseLinear` edges round-trip through configuration.
    """

    lower: Band
    upper: Band
    scaling: ScalingRule = field(default_factory=PowerScaling)
    walk: Walk = field(default_factory=LatticeWalk.symmetric)
    mark: MarkLaw = field(default_factory=NoMark)
    threshold: ThresholdRule = field(default_factory=ConstantThreshold)

    def __post_init__(self):
        grid = np.linspace(0.0, 1.0, 1001)
        gap = np.asarray(self.upper(grid)) - np.asarray(self.lower(grid))
        if not np.all(gap > 0):
            err = "Band edges must satisfy f < g on all of [0, 1]"
            raise ValueError(err)

    @property
    def sigma2(self) -> float:
        return self.walk.sigma2

    def same_walk_and_band(self, other: "CorridorSpec") -> bool:
        mine = (self.lower, self.upper, self.scaling, self.walk)
        return mine == (other.lower, other.upper, other.scaling, other.walk)

    def log_mark_survival(self, n: int) -> float:
        a_n = self.scaling(n)
        return self.mark.log_survival(self.threshold(n, a_n, self.mark), a_n)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lower": _describe(self.lower),
            "upper": _describe(self.upper),
            "scaling": _describe(self.scaling),
            "walk": _describe(self.walk),
            "mark": _describe(self.mark),
            "threshold": _describe(self.threshold),
        }


@dataclass(frozen=True)
class LatticeKernel:
    """Sub-stochastic step law on consecutive integer offsets starting at `min_offset`."""

    min_offset: int
    probs: np.ndarray

    @classmethod
    def from_atoms(cls, offsets: np.ndarray, weights: np.ndarray) -> "LatticeKernel":
        offsets = np.asarray(offsets, dtype=np.int64)
        if offsets.size == 0:
            return cls(0, np.zeros(1))
        low = int(offsets.min())
        return cls(low, np.bincount(offsets - low, weights=weights))

    @property
    def max_offset(self) -> int:
        return self.min_offset + self.probs.size - 1


@dataclass
class LatticeMass:
    """
    Unnormalized mass on the integer states lo, lo + 1, ..., kept as values · e^{log_scale}.
    """

    lo: int
    values: np.ndarray
    log_scale: float = 0.0

    @classmethod
    def point(cls, state: int = 0) -> "LatticeMass":
        return cls(state, np.ones(1))

    @property
    def hi(self) -> int:
        return self.lo + self.values.size - 1

    @property
    def empty(self) -> bool:
        return self.values.size == 0 or not np.any(self.values > 0)

    def step(self, kernel: LatticeKernel) -> "LatticeMass":
        return LatticeMass(self.lo + kernel.min_offset, np.convolve(self.values, kernel.probs), self.log_scale)

    def clip(self, lo: int, hi: int) -> "LatticeMass":
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a > b:
            return LatticeMass(a, np.zeros(0), self.log_scale)
        return LatticeMass(a, self.values[a - self.lo : b - self.lo + 1], self.log_scale)

    def renormalize(self) -> "LatticeMass":
        top = float(self.values.max()) if self.values.size else 0.0
        if top > 0:
            self.values = self.values / top
            self.log_scale += math.log(top)
        return self

    def log_total(self, lo: Optional[int] = None, hi: Optional[int] = None, tilt: float = 0.0) -> float:
        """log Σ_{lo ≤ k ≤ hi} values_k e^{tilt·k}, in the true (unscaled) units."""
        part = self.clip(self.lo if lo is None else lo, self.hi if hi is None else hi)
        if part.empty:
            return -math.inf
        states = np.arange(part.lo, part.hi + 1, dtype=float)
        return float(special.logsumexp(tilt * states, b=part.values)) + self.log_scale


def interior_bounds(lower: np.ndarray, upper: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice states inside [lower, upper]: edges rounded toward the interior."""
    with np.errstate(invalid="ignore"):
        lo = np.ceil(np.asarray(lower, dtype=float) / step - SNAP)
        hi = np.floor(np.asarray(upper, dtype=float) / step + SNAP)
    return lo, hi


def propagate(
    kernel: LatticeKernel,
    lo: np.ndarray,
    hi: np.ndarray,
    start: LatticeMass,
    on_step: Optional[Callable[[int, LatticeMass], None]] = None,
) -> LatticeMass:
    """
    Push `start` through len(lo) kernel steps, keeping only states in [lo[j], hi[j]] after step j + 1.

    Float bounds may be infinite; they are clamped to the reachable range first. `on_step(j, mass)` sees the mass
    after step j (1-based) before clipping.
    """
    steps = len(lo)
    j = np.arange(1, steps + 1)
    reach_lo = start.lo + j * kernel.min_offset
    reach_hi = start.hi + j * kernel.max_offset
    lo_i = np.maximum(lo, reach_lo)
    hi_i = np.minimum(hi, reach_hi)
    widest = float(np.max(hi_i - lo_i + 1)) if steps else 0.0
    if widest > MAX_STATES:
        err = f"Corridor needs {int(widest)} lattice states, more than the limit of {MAX_STATES}"
        raise StateExplosion(err)
    lo_i = lo_i.astype(np.int64)
    hi_i = hi_i.astype(np.int64)

    mass = start
    for index in range(steps):
        mass = mass.step(kernel)
        if on_step is not None:
            on_step(index + 1, mass)
        mass = mass.clip(int(lo_i[index]), int(hi_i[index])).renormalize()
        if mass.empty:
            logger.debug("Corridor mass vanished at step %d", index + 1)
            return mass
    return mass


def _log_matrix_power(
    kernel: LatticeKernel, lo: int, hi: int, first: LatticeMass, steps: int
) -> LatticeMass:
    """Constant-band fast path: first · M^steps on states [lo, hi] by repeated squaring."""
    width = hi - lo + 1
    matrix = np.zeros((width, width))
    for offset, p in zip(range(kernel.min_offset, kernel.max_offset + 1), kernel.probs):
        if p == 0:
            continue
        idx = np.arange(width)
        target = idx + offset
        ok = (target >= 0) & (target < width)
        matrix[idx[ok], target[ok]] = p

    vector = np.zeros(width)
    part = first.clip(lo, hi)
    if part.empty:
        return LatticeMass(lo, np.zeros(0), first.log_scale)
    vector[part.lo - lo : part.hi - lo + 1] = part.values
    log_scale = part.log_scale

    power, power_scale = matrix, 0.0
    remaining = steps
    while remaining:
        if remaining & 1:
            vector = vector @ power
            top = vector.max()
            if top <= 0:
                return LatticeMass(lo, np.zeros(0), log_scale)
            vector /= top
            log_scale += math.log(top) + power_scale
        remaining >>= 1
        if remaining:
            power = power @ power
            top = power.max()
            power /= top
            power_scale = 2.0 * power_scale + math.log(top)
    return LatticeMass(lo, vector, log_scale)


def _dense_is_cheaper(width: int, n: int, kernel: LatticeKernel) -> bool:
    """Whether width² log2(n) matrix work beats n·width·|kernel| banded steps, within `MAX_DENSE_STATES`."""
    if width < 1 or width > MAX_DENSE_STATES:
        return False
    return width * width * math.log2(n) < n * width * kernel.probs.size


def dp_corridor_log(
    spec: CorridorSpec,
    n: int,
    start: float = 0.0,
    window: Optional[Tuple[float, float]] = None,
) -> float:
    """
    log P_{z·a_n}(T_j/a_n ∈ [f(j/n), g(j/n)], ξ_j ≤ τ_n, 1 ≤ j ≤ n [, T_n/a_n ∈ window]),
    evaluated by transfer matrices.

    :param spec: corridor with a lattice walk and a mark law with closed-form survival.
    :param n: number of steps.
    :param start: start offset z, in units of a_n.
    :param window: optional endpoint window (y, y') in units of a_n.
    :raises UnsupportedFamily: for non-lattice walks.
    :raises StateExplosion: when the band spans more than `MAX_STATES` lattice states.
    """
    if n < 1:
        err = f"n must be at least 1. Currently, n is {n}"
        raise ValueError(err)
    walk = spec.walk
    if not isinstance(walk, LatticeWalk):
        err = f"Transfer-matrix evaluation needs a lattice walk, got {type(walk).__name__}"
        raise UnsupportedFamily(err)

    a_n = spec.scaling(n)
    shift = start * a_n
    t = np.arange(1, n + 1) / n
    lower = np.asarray(spec.lower(t)) * a_n - shift
    lo, hi = interior_bounds(lower, np.asarray(spec.upper(t)) * a_n - shift, walk.step)
    kernel = walk.kernel()
    origin = LatticeMass.point(0)

    if n > 2 and np.all(lo[1:] == lo[0]) and np.all(hi[1:] == hi[0]):
        first = propagate(kernel, lo[:1], hi[:1], origin)
        low = int(max(lo[0], n * kernel.min_offset))
        high = int(min(hi[0], n * kernel.max_offset))
        if first.empty:
            mass = first
        elif _dense_is_cheaper(high - low + 1, n, kernel):
            mass = _log_matrix_power(kernel, low, high, first, n - 1)
        else:
            mass = propagate(kernel, lo[1:], hi[1:], first)
    else:
        mass = propagate(kernel, lo, hi, origin)

    if window is None:
        log_p = mass.log_total()
    else:
        edges = np.array([window[0] * a_n - shift]), np.array([window[1] * a_n - shift])
        w_lo, w_hi = interior_bounds(*edges, walk.step)
        log_p = mass.log_total(int(max(w_lo[0], mass.lo)), int(min(w_hi[0], mass.hi)))

    log_q = spec.log_mark_survival(n)
    if log_q != 0.0:
        log_p += n * log_q
    logger.debug("dp_corridor n=%d a_n=%.6g log_p=%.12g", n, a_n, log_p)
    return log_p


def dp_corridor(
    spec: CorridorSpec, n: int, start: float = 0.0, window: Optional[Tuple[float, float]] = None
) -> float:
    """Exact corridor probability; see `dp_corridor_log`."""
    return math.exp(dp_corridor_log(spec, n, start, window))


def _mc_chunk(spec: CorridorSpec, n: int, start: float, stream: RngStream, sizes: Sequence[int], chunk: int) -> int:
    rng = stream.child(chunk).generator()
    size = sizes[chunk]
    a_n = spec.scaling(n)
    tau = spec.threshold(n, a_n, spec.mark)
    position = np.full(size, start * a_n)
    alive = np.ones(size, dtype=bool)
    for begin in range(0, n, MC_STEP_BLOCK):
        width = min(MC_STEP_BLOCK, n - begin)
        steps = spec.walk.sample((size, width), rng)
        paths = position[:, None] + np.cumsum(steps, axis=1)
        t = np.arange(begin + 1, begin + width + 1) / n
        inside = (paths >= np.asarray(spec.lower(t)) * a_n) & (paths <= np.asarray(spec.upper(t)) * a_n)
        alive &= inside.all(axis=1)
        marks = spec.mark.sample((size, width), tau, a_n, rng)
        if marks is not None:
            alive &= (marks <= tau).all(axis=1)
        position = paths[:, -1]
    return int(alive.sum())


def mc_corridor(
    spec: CorridorSpec, n: int, replicates: int, rng: RngStream, *, start: float = 0.0, threads: int = 1
) -> EstimateReport:
    """
    Direct Monte Carlo of the corridor probability with a binomial standard error.

    Replicates are processed in fixed chunks of `MC_CHUNK`, each with its own child stream, so the estimate does not
    depend on `threads`.
    """
    if replicates < 1:
        err = f"replicates must be at least 1. Currently, replicates is {replicates}"
        raise ValueError(err)
    sizes = [MC_CHUNK] * (replicates // MC_CHUNK)
    if replicates % MC_CHUNK:
        sizes.append(replicates % MC_CHUNK)
    task = partial(_mc_chunk, spec, n, start, rng, sizes)
    hits = sum(run_indexed(task, range(len(sizes)), threads))
    return binomial_report(hits, replicates, seed=rng.seed, label="corridor_probability", n=n)


def mogulskii_exponent(f: Band, g: Band, sigma2: float) -> float:
    """
    -(π²σ²/2) ∫_0^1 ds / (g(s) - f(s))².

    Integrated in u with s = 1 - u³, which absorbs (1 - s)^{1/3}-type behaviour at s = 1.
    """
    grid = np.linspace(0.0, 1.0, 1001)
    gap = np.asarray(g(grid)) - np.asarray(f(grid))
    # the band may close at an endpoint, as the cube-root profiles do at s = 1
    if not (np.all(gap >= 0) and np.all(gap[1:-1] > 0)):
        err = "mogulskii_exponent needs f < g on (0, 1)"
        raise ValueError(err)

    def integrand(u: float) -> float:
        s = 1.0 - u**3
        width = float(g(s)) - float(f(s))
        return 3.0 * u * u / (width * width)

    return -0.5 * math.pi**2 * sigma2 * checked_quad(integrand, 0.0, 1.0)


@dataclass
class ExponentFit:
    """
    Finite-n values of (a_n²/n) log p_n and their extrapolation to 1/a_n → 0.

    :param points: (n, scaled log-probability) pairs.
    :param a_values: a_n for each point.
    :param fitted_limit: intercept of the affine fit in 1/a_n; -inf when the fit diverges.
    :param slope: slope of the fit.
    :param residuals: fit residuals over the points used.
    :param used: number of largest-n points used in the fit.
    :param diverging: True when the scaled values fall without bound across the grid.
    """

    points: List[Tuple[int, float]]
    a_values: List[float]
    fitted_limit: float
    slope: float
    residuals: List[float]
    used: int
    diverging: bool = False

    def to_frame(self) -> pd.DataFrame:
        ns, scaled = zip(*self.points)
        log_p = [s * n / a**2 for (n, s), a in zip(self.points, self.a_values)]
        return pd.DataFrame({"n": ns, "a_n": self.a_values, "log_p": log_p, "scaled_log_p": scaled})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": [list(p) for p in self.points],
            "a_values": self.a_values,
            "fitted_limit": self.fitted_limit,
            "slope": self.slope,
            "residuals": self.residuals,
            "used": self.used,
            "diverging": self.diverging,
        }


def _is_diverging(scaled: np.ndarray) -> bool:
    if np.any(np.isneginf(scaled)):
        return True
    return bool(np.all(np.diff(scaled) < 0) and scaled[-1] - scaled[0] < -max(1.0, abs(scaled[0])))


def fit_exponent(spec: CorridorSpec, n_grid: Sequence[int], *, start: float = 0.0) -> ExponentFit:
    """
    Extrapolate (a_n²/n) log p_n affinely in 1/a_n by least squares over the largest max(4, ⌈len/2⌉) grid points.

    :raises ValueError: for fewer than 4 grid points or a grid that is not increasing.
    """
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        err = f"n_grid must be increasing with at least 4 points, got {n_grid}"
        raise ValueError(err)

    a_values = [spec.scaling(n) for n in n_grid]
    scaled = np.array([dp_corridor_log(spec, n, start) * a**2 / n for n, a in zip(n_grid, a_values)])
    points = list(zip(n_grid, scaled.tolist()))
    used = max(4, math.ceil(len(n_grid) / 2))

    if _is_diverging(scaled):
        logger.info("Exponent fit diverges: scaled values %s", scaled.tolist())
        return ExponentFit(points, a_values, -math.inf, math.nan, [], used, diverging=True)

    x = 1.0 / np.array(a_values[-used:])
    y = scaled[-used:]
    slope, intercept = np.polyfit(x, y, 1)
    residuals = (y - (intercept + slope * x)).tolist()
    logger.info("Exponent fit: limit=%.6g slope=%.6g over %d points", intercept, slope, used)
    return ExponentFit(points, a_values, float(intercept), float(slope), residuals, used)


class TailGap(NamedTuple):
    fit_nice: ExponentFit
    fit_heavy: ExponentFit
    gap: float


def heavy_tail_gap(spec_nice: CorridorSpec, spec_heavy: CorridorSpec, n_grid: Sequence[int]) -> TailGap:
    """
    Fit both specs on the same grid; gap = heavy limit - nice limit (-inf when the heavy fit diverges).

    :raises ValueError: when the specs differ in anything but the mark law and threshold.
    """
    if not spec_nice.same_walk_and_band(spec_heavy):
        err = "heavy_tail_gap compares specs that differ only in their mark law"
        raise ValueError(err)
    fit_nice = fit_exponent(spec_nice, n_grid)
    fit_heavy = fit_exponent(spec_heavy, n_grid)
    gap = -math.inf if fit_heavy.diverging else fit_heavy.fitted_limit - fit_nice.fitted_limit
    return TailGap(fit_nice, fit_heavy, gap)
