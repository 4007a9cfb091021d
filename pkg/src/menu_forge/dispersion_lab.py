"""Dispersion measurements, the lottery crossing experiment, and grid Exp3-SET.

Tariff discontinuities come from hyperplanes whose offsets are buyer values,
so a bounded-density buyer crosses a small ball with probability
proportional to its radius.  Lottery indifference hyperplanes pass through
a common point for every value, which the crossing experiment makes visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .cover import TariffCoverParams, tariff_cover_array
from .experts import RegretTrace, make_rng
from .limited_types import Hyperplane, ParameterSpace, TypeSet, build_hyperplanes
from .mechanisms import DemandKind, ItemValuation, TariffMenuArray, UnitValuation


class InvalidConstruction(ValueError):
    pass


class NumericalFloorError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# Densities


@dataclass(frozen=True)
class BoundedDensity:
    """A density with known maximum ``kappa``.

    ``name`` is one of ``uniform`` (params ``a``, ``b``), ``triangular_down``
    (f(x) = 2(1-x) on [0, 1]) or ``piecewise_constant`` (params ``breaks``,
    ``heights``; heights must integrate to one over the breaks).
    """

    name: str
    params: tuple = ()

    def __post_init__(self) -> None:
        if self.name == "uniform":
            a, b = self.params or (0.0, 1.0)
            if not b > a:
                raise ValueError("uniform density needs a < b")
            object.__setattr__(self, "params", (float(a), float(b)))
        elif self.name == "triangular_down":
            object.__setattr__(self, "params", ())
        elif self.name == "piecewise_constant":
            breaks, heights = self.params
            breaks = tuple(float(x) for x in breaks)
            heights = tuple(float(h) for h in heights)
            if len(breaks) != len(heights) + 1 or any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
                raise ValueError("need increasing breaks and one height per interval")
            if any(h < 0 for h in heights):
                raise ValueError("heights must be nonnegative")
            mass = sum(h * (b2 - b1) for h, b1, b2 in zip(heights, breaks, breaks[1:]))
            if abs(mass - 1.0) > 1e-9:
                raise ValueError(f"piecewise density integrates to {mass}, not 1")
            object.__setattr__(self, "params", (breaks, heights))
        else:
            raise ValueError(f"unknown density {self.name!r}")

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "BoundedDensity":
        return cls("uniform", (a, b))

    @classmethod
    def triangular_down(cls) -> "BoundedDensity":
        return cls("triangular_down")

    @classmethod
    def piecewise_constant(cls, breaks: Sequence[float], heights: Sequence[float]) -> "BoundedDensity":
        return cls("piecewise_constant", (tuple(breaks), tuple(heights)))

    @classmethod
    def from_json(cls, obj: dict) -> "BoundedDensity":
        name = obj.get("name")
        if name == "uniform":
            return cls.uniform(obj.get("a", 0.0), obj.get("b", 1.0))
        if name == "triangular_down":
            return cls.triangular_down()
        if name == "piecewise_constant":
            return cls.piecewise_constant(obj["breaks"], obj["heights"])
        raise ValueError(f"unknown density {name!r}")

    def to_json(self) -> dict:
        if self.name == "uniform":
            return {"name": "uniform", "a": self.params[0], "b": self.params[1]}
        if self.name == "piecewise_constant":
            return {"name": self.name, "breaks": list(self.params[0]), "heights": list(self.params[1])}
        return {"name": self.name}

    @property
    def support(self) -> tuple[float, float]:
        if self.name == "uniform":
            return self.params
        if self.name == "triangular_down":
            return (0.0, 1.0)
        return (self.params[0][0], self.params[0][-1])

    @property
    def kappa(self) -> float:
        if self.name == "uniform":
            a, b = self.params
            return 1.0 / (b - a)
        if self.name == "triangular_down":
            return 2.0
        return max(self.params[1])

    @property
    def min_density(self) -> float:
        """Smallest density value on the support."""
        if self.name == "uniform":
            return self.kappa
        if self.name == "triangular_down":
            return 0.0
        return min(self.params[1])

    def pdf(self, x) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        if self.name == "uniform":
            return np.where(inside, self.kappa, 0.0)
        if self.name == "triangular_down":
            return np.where(inside, 2.0 * (1.0 - x), 0.0)
        breaks, heights = self.params
        i = np.clip(np.searchsorted(breaks, x, side="right") - 1, 0, len(heights) - 1)
        return np.where(inside, np.asarray(heights)[i], 0.0)

    def cdf(self, x) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.support
        if self.name == "uniform":
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if self.name == "triangular_down":
            y = np.clip(x, 0.0, 1.0)
            return 1.0 - (1.0 - y) ** 2
        breaks, heights = map(np.asarray, self.params)
        cum = np.r_[0.0, np.cumsum(heights * np.diff(breaks))]
        y = np.clip(x, lo, hi)
        i = np.clip(np.searchsorted(breaks, y, side="right") - 1, 0, len(heights) - 1)
        return cum[i] + heights[i] * (y - breaks[i])

    def ppf(self, u) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=np.float64)
        lo, hi = self.support
        if self.name == "uniform":
            return lo + u * (hi - lo)
        if self.name == "triangular_down":
            return 1.0 - np.sqrt(1.0 - u)
        breaks, heights = map(np.asarray, self.params)
        cum = np.r_[0.0, np.cumsum(heights * np.diff(breaks))]
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(heights) - 1)
        # zero-height pieces carry no mass; searchsorted never lands on them for u in (0,1)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = breaks[i] + np.where(heights[i] > 0, (u - cum[i]) / heights[i], 0.0)
        return np.clip(x, lo, hi)

    def sample(self, rng: np.random.Generator, size) -> NDArray[np.float64]:
        return self.ppf(rng.random(size))


def draw_unit_valuations(density: BoundedDensity, n: int, K: int, H: float, rng: np.random.Generator) -> list[UnitValuation]:
    """Multi-unit buyers: K i.i.d. draws sorted ascending give v(1) <= ... <= v(K)."""
    lo, hi = density.support
    if lo < 0 or hi > H:
        raise ValueError(f"density support {density.support} leaves [0, {H}]")
    X = np.sort(density.sample(rng, (n, K)), axis=1)
    return [UnitValuation((0.0, *row), H) for row in X]


def draw_item_valuations(
    density: BoundedDensity,
    n: int,
    m: int,
    H: float,
    rng: np.random.Generator,
    demand_kind: DemandKind | str = DemandKind.ADDITIVE,
    shared: float = 0.0,
) -> list[ItemValuation]:
    """Per-item i.i.d. draws; with probability ``shared`` all items copy one common draw."""
    lo, hi = density.support
    if lo < 0 or hi > H:
        raise ValueError(f"density support {density.support} leaves [0, {H}]")
    X = density.sample(rng, (n, m))
    if shared > 0:
        common = density.sample(rng, (n, 1))
        X = np.where(rng.random((n, 1)) < shared, common, X)
    return [ItemValuation(tuple(row), H, demand_kind) for row in X]


# ---------------------------------------------------------------------------
# Ball splits


def _plane_arrays(hyperplanes) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    hps = list(hyperplanes)
    if not hps:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0)
    if isinstance(hps[0], Hyperplane):
        N = np.array([h.normal for h in hps], dtype=np.float64)
        b = np.array([h.offset for h in hps], dtype=np.float64)
        w = np.array([h.multiplicity for h in hps], dtype=np.float64)
    else:
        N = np.array([h[0] for h in hps], dtype=np.float64)
        b = np.array([h[1] for h in hps], dtype=np.float64)
        w = np.ones(len(hps))
    return N, b, w


def count_ball_splits(hyperplanes, center, radius: float) -> int:
    """Number of hyperplanes (with multiplicity) passing strictly inside the ball."""
    N, b, w = _plane_arrays(hyperplanes)
    if len(b) == 0:
        return 0
    c = np.asarray(center, dtype=np.float64)
    dist = np.abs(N @ c - b) / np.linalg.norm(N, axis=1)
    return int(round(float(w[dist < radius].sum())))


@dataclass(frozen=True)
class DispersionParams:
    w: float
    kappa: float = 1.0
    L: float = 1.0
    zeta: float = 0.05
    trials: int = 200

    def __post_init__(self) -> None:
        if self.w <= 0 or self.kappa <= 0 or self.trials < 1:
            raise ValueError("w, kappa and trials must be positive")


def _function_hyperplanes(vals: Sequence[UnitValuation], ell: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Non-box discontinuities of all rounds, one row per round and option pair."""
    if not vals:
        return np.zeros((0, 2 * ell)), np.zeros(0)
    rows, offs = [], []
    hps = build_hyperplanes(TypeSet(tuple(vals)), ell, include_box=False)
    for h in hps:
        for _ in range(h.multiplicity):
            rows.append(h.normal)
            offs.append(h.offset)
    return np.array(rows), np.array(offs)


def tariff_dispersion_experiment(
    params: DispersionParams,
    T: int,
    ell: int,
    K: int,
    distribution: BoundedDensity,
    seed,
    H: float = 1.0,
    schedule: Sequence[float] | None = None,
) -> list[tuple[float, float, int]]:
    """Rows ``(w, mean_splits, max_splits)`` over ``params.trials`` random ball centers."""
    rng = make_rng(seed)
    vals = draw_unit_valuations(distribution, T, K, H, rng)
    N, b = _function_hyperplanes(vals, ell)
    schedule = list(schedule) if schedule is not None else [params.w * 2.0**-i for i in range(6)]
    centers = rng.uniform(0.0, H, size=(params.trials, 2 * ell))
    if len(b):
        dist = np.abs(centers @ N.T - b) / np.linalg.norm(N, axis=1)
    else:
        dist = np.zeros((params.trials, 0))
    rows = []
    for w in schedule:
        counts = (dist < w).sum(axis=1)
        rows.append((float(w), float(counts.mean()), int(counts.max(initial=0))))
    return rows


def tariff_crossing_probability(
    eps_schedule: Sequence[float],
    K: int,
    distribution: BoundedDensity,
    trials: int,
    seed,
    center: Sequence[float] = (0.3, 0.2),
    H: float = 1.0,
) -> list[tuple[float, float, float]]:
    """For one-tariff menus: fraction of buyers with some discontinuity within eps of ``center``.

    Rows ``(eps, estimate, standard_error)``.
    """
    rng = make_rng(seed)
    vals = draw_unit_valuations(distribution, trials, K, H, rng)
    c = np.asarray(center, dtype=np.float64)
    space = ParameterSpace("tariff", 1, H, K=K)
    nearest = np.empty(trials)
    for t, v in enumerate(vals):
        A, off = space.utility_forms(v)
        n = A[:, None, :] - A[None, :, :]
        o = off[None, :] - off[:, None]
        iu = np.triu_indices(len(off), 1)
        n, o = n[iu], o[iu]
        nearest[t] = np.min(np.abs(n @ c - o) / np.linalg.norm(n, axis=1))
    rows = []
    for eps in eps_schedule:
        p = float(np.mean(nearest < eps))
        rows.append((float(eps), p, math.sqrt(p * (1 - p) / trials)))
    return rows


# ---------------------------------------------------------------------------
# Lottery crossing experiment


@dataclass(frozen=True)
class CrossingRow:
    epsilon: float
    estimate: float
    standard_error: float
    interval_probability: float
    floor: float


def lottery_crossing_floor(c: float, L: float, kappa: float) -> float:
    return c * (c + 1) / ((L + c + 1) * kappa)


def lottery_dispersion_failure(
    c: float,
    L: float,
    epsilon_schedule: Iterable[float],
    distribution: BoundedDensity,
    trials: int,
    seed,
    H: float = 1.0,
    base: tuple[float, float] = (0.25, 0.25),
) -> list[CrossingRow]:
    """Probability that a random buyer's indifference between two close lotteries
    passes within ``eps`` of the pair, for a shrinking ``eps``.

    The pair is ``(phi2, p2) = base`` and ``phi1 - phi2 = (L+1)eps/c + eps/2``,
    ``p1 - p2 = (L + 1/2)eps``; coordinates are ``(phi1, p1, phi2, p2)``.  The
    Monte-Carlo ``estimate`` counts buyers whose hyperplane has Euclidean
    distance below ``eps``; ``interval_probability`` is the exact mass of the
    sufficient value interval ``[Lc/(L+c+1), c]``.
    """
    if not 0 < c <= H:
        raise InvalidConstruction(f"need 0 < c <= H, got c={c}, H={H}")
    lo, hi = distribution.support
    if lo < 0 or hi > 1:
        raise InvalidConstruction("values must be supported on [0, 1]")
    kappa = max(distribution.kappa, 1.0 / distribution.min_density) if distribution.min_density > 0 else math.inf
    floor = lottery_crossing_floor(c, L, kappa)
    rng = make_rng(seed)
    rows = []
    for eps in epsilon_schedule:
        dphi = (L + 1) * eps / c + eps / 2
        dp = (L + 0.5) * eps
        if base[0] + dphi > 1:
            raise InvalidConstruction(f"eps={eps} pushes an allocation above 1")
        v = distribution.sample(rng, trials)
        dist = np.abs(v * dphi - dp) / np.sqrt(2 * v**2 + 2)
        p = float(np.mean(dist < eps))
        v_min = L * c / (L + c + 1)
        interval = float(distribution.cdf(c) - distribution.cdf(v_min))
        rows.append(CrossingRow(float(eps), p, math.sqrt(p * (1 - p) / trials), interval, floor))
    return rows


# ---------------------------------------------------------------------------
# Grid Exp3-SET


def semibandit_region(cover: TariffMenuArray, val: UnitValuation, played: int) -> tuple[NDArray[np.bool_], NDArray[np.float64], NDArray[np.intp]]:
    """Cover menus where the buyer makes the same choice as at the played menu,
    plus every menu's revenue and chosen option."""
    revs, opt = cover.evaluate(val)
    return opt == opt[played], revs, opt


def run_semibandit_exp3set(
    adversary: Iterable[UnitValuation],
    T: int,
    seed,
    cover: TariffMenuArray | None = None,
    ell: int = 1,
    alpha: float | None = None,
    lambda_step: float | None = None,
    H: float | None = None,
) -> RegretTrace:
    """Exponential weights over a tariff grid with feedback on the whole choice region.

    After each sale the learner sees the revenue of every grid menu on which
    the buyer would make the same purchase, and charges the importance
    weighted loss ``(H - revenue)/H / P(region)`` on exactly those menus.
    """
    rng = make_rng(seed)
    it = iter(adversary)
    first = next(it)
    H = first.H if H is None else H
    if cover is None:
        alpha = 1.0 / math.sqrt(T) if alpha is None else alpha
        cover = tariff_cover_array(TariffCoverParams(alpha, H, first.K, ell))
    n = len(cover)
    lam = math.sqrt(math.log(n) / T) if lambda_step is None else lambda_step
    logw = np.zeros(n)
    totals = np.zeros(n)
    experts, realized, best, choices = [], [], [], []
    val = first
    for t in range(T):
        if t:
            try:
                val = next(it)
            except StopIteration:
                raise ValueError(f"adversary ran out of valuations after {t} rounds (T={T})") from None
        p = np.exp(logw - logw.max())
        p /= p.sum()
        cdf = np.cumsum(p)
        k = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), n - 1)
        region, revs, opt = semibandit_region(cover, val, k)
        mass = float(p[region].sum())
        if mass < 1e-12:
            raise NumericalFloorError(f"region probability {mass} below 1e-12 at round {t + 1}")
        loss = (H - revs[region]) / H
        logw[region] -= lam * loss / mass
        totals += revs
        experts.append(k)
        realized.append(float(revs[k]))
        best.append(float(totals.max()))
        choices.append(cover.options[opt[k]])
    return RegretTrace(
        experts=np.asarray(experts, dtype=np.intp),
        revenues=np.asarray(realized),
        best_cum=np.asarray(best),
        best_expert=int(np.argmax(totals)),
        payoff_cap=H,
        choices=choices,
    )
