"""Revenue-preserving rounding of menus and enumeration of the finite menu covers."""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from .mechanisms import LotteryEntry, LotteryMenu, LotteryMenuArray, TariffMenu, TariffMenuArray

DEFAULT_CAP = 10**7
CAP_ENV = "MENU_FORGE_CAP"

# slack when snapping x/alpha onto the integer lattice, so 0.3/0.1 floors to 3
_SNAP = 1e-9


class EnumerationTooLarge(RuntimeError):
    def __init__(self, count: int, cap: int, what: str = "cover"):
        super().__init__(f"{what} has {count} elements, above the enumeration cap {cap}")
        self.count = count
        self.cap = cap


def enumeration_cap() -> int:
    raw = os.environ.get(CAP_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_CAP
    return int(float(raw))


def check_cap(count: int, what: str = "cover", cap: int | None = None) -> None:
    cap = enumeration_cap() if cap is None else cap
    if count > cap:
        raise EnumerationTooLarge(count, cap, what)


def floor_steps(x: float, step: float) -> int:
    """Largest integer i with i*step <= x, tolerant to representation error."""
    return int(math.floor(x / step + _SNAP))


# ---------------------------------------------------------------------------
# Tariffs


@dataclass(frozen=True)
class TariffCoverParams:
    alpha: float
    H: float
    K: int
    ell: int

    def __post_init__(self) -> None:
        if not (0 < self.alpha < 1) and not (self.alpha == 1 and self.H >= 1):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.H <= 0 or self.K < 1 or self.ell < 1:
            raise ValueError("H, K and ell must be positive")

    def grid(self) -> NDArray[np.float64]:
        steps = floor_steps(self.H, self.alpha)
        return np.array([i * self.alpha for i in range(steps + 1)], dtype=np.float64)

    @property
    def count(self) -> int:
        return (floor_steps(self.H, self.alpha) + 1) ** (2 * self.ell)


def pareto_frontier(tariffs: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Remove dominated tariffs one at a time; of identical tariffs one survives."""
    kept = list(tariffs)
    i = 0
    while i < len(kept):
        p1, p2 = kept[i]
        if any(j != i and q1 <= p1 and q2 <= p2 for j, (q1, q2) in enumerate(kept)):
            del kept[i]
        else:
            i += 1
    return kept


def round_tariff_menu(menu: TariffMenu, alpha: float) -> TariffMenu:
    """Round a tariff menu onto the alpha-grid without letting buyers switch to fewer units.

    Tariff i (1-based, after sorting the Pareto frontier by fixed fee) gets
    both prices lowered by (i-1)*alpha before rounding down, so tariffs aimed
    at larger purchases are discounted more.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    frontier = sorted(pareto_frontier(list(menu.tariffs)), key=lambda t: t[0])
    out: list[tuple[float, float]] = []
    for i, (p1, p2) in enumerate(frontier):
        cut = i * alpha
        q1 = max(p1 - cut, 0.0)
        q2 = max(p2 - cut, 0.0)
        t = (floor_steps(q1, alpha) * alpha, floor_steps(q2, alpha) * alpha)
        if t not in out:
            out.append(t)
    return TariffMenu(tuple(out))


def enumerate_tariff_cover(params: TariffCoverParams) -> Iterator[TariffMenu]:
    """Every menu of ``ell`` tariffs with prices on the grid, in lexicographic order."""
    check_cap(params.count, "tariff cover")
    grid = [float(x) for x in params.grid()]
    pairs = list(itertools.product(grid, repeat=2))

    def gen() -> Iterator[TariffMenu]:
        for combo in itertools.product(pairs, repeat=params.ell):
            yield TariffMenu(combo)

    return gen()


def tariff_cover_array(params: TariffCoverParams) -> TariffMenuArray:
    """The tariff cover materialised for array evaluation, same order as the enumerator."""
    check_cap(params.count, "tariff cover")
    grid = params.grid()
    g = len(grid)
    d = 2 * params.ell
    idx = np.indices((g,) * d).reshape(d, -1).T
    prices = grid[idx].reshape(-1, params.ell, 2)
    return TariffMenuArray(prices, params.K)


# ---------------------------------------------------------------------------
# Lotteries


@dataclass(frozen=True)
class LotteryCoverParams:
    alpha: float
    delta: float
    levels_K: int
    m: int
    H: float
    ell: int

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if self.levels_K < 1 or self.m < 1 or self.H <= 0 or self.ell < 0:
            raise ValueError("levels_K, m, H must be positive and ell nonnegative")
        if self.K_prime < 0:
            raise ValueError("alpha too large: K' would be negative")

    @property
    def K_prime(self) -> int:
        return int(math.floor(math.log(self.H * self.m / self.alpha) / self.alpha + _SNAP))

    @property
    def mH(self) -> float:
        return self.m * self.H

    def allocation_grid(self) -> NDArray[np.float64]:
        """Ascending ``{0} U {(1-alpha)^i : i = 0..K'}``."""
        powers = [(1.0 - self.alpha) ** i for i in range(self.K_prime, -1, -1)]
        return np.array([0.0] + powers, dtype=np.float64)

    def rounding_grid(self) -> NDArray[np.float64]:
        """The part of the allocation grid used when rounding: 0 and powers >= alpha/(Hm)."""
        g = self.allocation_grid()
        floor = self.alpha / self.mH
        return np.concatenate([[0.0], g[1:][g[1:] >= floor * (1 - 1e-12)]])

    def price_grid(self) -> NDArray[np.float64]:
        step = self.mH * self.alpha
        return np.array([i * step for i in range(floor_steps(self.mH, step) + 1)], dtype=np.float64)

    @property
    def count(self) -> int:
        per_entry = len(self.price_grid()) * len(self.allocation_grid()) ** self.m
        return per_entry**self.ell

    def level_of(self, price: float) -> int:
        """Price level 1..K, or 0 when the entry falls below the lowest level."""
        K, q = self.levels_K, 1.0 - self.delta
        if price <= self.mH * q**K:
            return 0
        for k in range(K, 0, -1):
            if price > self.mH * q ** (K - k + 1):
                return k
        return 0


def _round_down_to(grid: NDArray[np.float64], x: float) -> float:
    i = int(np.searchsorted(grid, x * (1 + 1e-12) + 1e-15, side="right")) - 1
    return float(grid[max(i, 0)])


def round_lottery_menu(menu: LotteryMenu, params: LotteryCoverParams) -> LotteryMenu:
    """Round a lottery menu so no buyer moves to a cheaper price level.

    Entries in higher price levels have their allocations shrunk less and
    their prices cut more than entries in lower levels.
    """
    K, a = params.levels_K, params.alpha
    grid = params.rounding_grid()
    shrink_all = (1.0 - a) ** K
    out: list[LotteryEntry] = []
    for e in menu.entries:
        k = params.level_of(e.price)
        if k == 0:
            continue
        factor = (1.0 - a) ** (K - k)
        phi = tuple(_round_down_to(grid, x * factor) for x in e.phi)
        steps = floor_steps(e.price * shrink_all, a) - 2 * k
        out.append(LotteryEntry(phi, max(steps, 0) * a))
    return LotteryMenu(tuple(out))


def enumerate_lottery_cover(params: LotteryCoverParams) -> Iterator[LotteryMenu]:
    check_cap(params.count, "lottery cover")
    prices = [float(x) for x in params.price_grid()]
    allocs = [float(x) for x in params.allocation_grid()]
    entries = [LotteryEntry(phi, p) for phi in itertools.product(allocs, repeat=params.m) for p in prices]

    def gen() -> Iterator[LotteryMenu]:
        for combo in itertools.product(entries, repeat=params.ell):
            yield LotteryMenu(combo)

    return gen()


def lottery_cover_array(params: LotteryCoverParams) -> LotteryMenuArray:
    check_cap(params.count, "lottery cover")
    prices = params.price_grid()
    allocs = params.allocation_grid()
    m, ell = params.m, params.ell
    # one entry = m allocation indices then a price index, matching the enumerator's order
    idx = np.indices((len(allocs),) * m + (len(prices),)).reshape(m + 1, -1).T
    n_entries = idx.shape[0]
    if ell == 0:
        return LotteryMenuArray(np.zeros((1, 0, m)), np.zeros((1, 0)))
    combo = np.indices((n_entries,) * ell).reshape(ell, -1).T
    phis = allocs[idx[combo, :m]]
    pr = prices[idx[combo, m]]
    return LotteryMenuArray(phis.reshape(-1, ell, m), pr.reshape(-1, ell))
