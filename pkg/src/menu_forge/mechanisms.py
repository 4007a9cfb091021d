"""Valuations, menus, buyer best responses and revenue for tariff and lottery menus.

Two evaluation paths are provided and kept in lockstep:

* scalar functions (``best_response_tariff`` / ``best_response_lottery``) on
  single menus, used for exact checks and small instances;
* array evaluators (:class:`TariffMenuArray`, :class:`LotteryMenuArray`) that
  score many menus against one valuation at once, used by the learners.

Both apply the same seller-favorable tie rule: among options whose utility is
within ``TIE_TOL`` of the best, take the highest revenue (again within
``TIE_TOL``), then the earliest option in the canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence, Union

import numpy as np
from numpy.typing import NDArray

TIE_TOL = 1e-9


class MechanismError(ValueError):
    """Base class for invalid valuations, menus or choices."""


class InvalidValuationError(MechanismError):
    pass


class InvalidMenuError(MechanismError):
    pass


class InvalidChoiceError(MechanismError):
    pass


# ---------------------------------------------------------------------------
# Choices


@dataclass(frozen=True)
class NoPurchase:
    def __repr__(self) -> str:
        return "NoPurchase"


NO_PURCHASE = NoPurchase()


@dataclass(frozen=True)
class TariffChoice:
    """Buy ``k`` units through tariff ``j`` (both 1-based)."""

    j: int
    k: int


@dataclass(frozen=True)
class LotteryChoice:
    """Take lottery entry ``j``; 0 is the free null entry."""

    j: int


Choice = Union[NoPurchase, TariffChoice, LotteryChoice]


# ---------------------------------------------------------------------------
# Valuations


@dataclass(frozen=True)
class UnitValuation:
    """Multi-unit buyer: ``values[k]`` is the value of receiving ``k`` units."""

    values: tuple[float, ...]
    H: float

    def __post_init__(self) -> None:
        vals = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "H", float(self.H))
        if self.H <= 0 or not np.isfinite(self.H):
            raise InvalidValuationError(f"H must be positive, got {self.H}")
        if len(vals) < 2:
            raise InvalidValuationError("need values for 0 and at least 1 unit")
        if vals[0] != 0.0:
            raise InvalidValuationError("value of zero units must be exactly 0")
        for a, b in zip(vals, vals[1:]):
            if b < a:
                raise InvalidValuationError(f"values must be nondecreasing: {vals}")
        if vals[-1] > self.H or not all(np.isfinite(vals)):
            raise InvalidValuationError(f"values must lie in [0, {self.H}]")

    @property
    def K(self) -> int:
        return len(self.values) - 1

    def to_json(self) -> dict[str, Any]:
        return {"values": list(self.values), "H": self.H, "K": self.K}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "UnitValuation":
        val = cls(tuple(obj["values"]), obj["H"])
        if "K" in obj and int(obj["K"]) != val.K:
            raise InvalidValuationError(f"K={obj['K']} disagrees with {len(val.values)} values")
        return val


class DemandKind(str, Enum):
    ADDITIVE = "additive"
    UNIT_DEMAND = "unit_demand"


@dataclass(frozen=True)
class ItemValuation:
    """Multi-item buyer with per-item values ``item_values[i]``."""

    item_values: tuple[float, ...]
    H: float
    demand_kind: DemandKind = DemandKind.ADDITIVE

    def __post_init__(self) -> None:
        vals = tuple(float(x) for x in self.item_values)
        object.__setattr__(self, "item_values", vals)
        object.__setattr__(self, "H", float(self.H))
        object.__setattr__(self, "demand_kind", DemandKind(self.demand_kind))
        if self.H <= 0 or not np.isfinite(self.H):
            raise InvalidValuationError(f"H must be positive, got {self.H}")
        if not vals:
            raise InvalidValuationError("need at least one item")
        if any(not (0.0 <= x <= self.H) for x in vals):
            raise InvalidValuationError(f"item values must lie in [0, {self.H}]")

    @property
    def m(self) -> int:
        return len(self.item_values)

    def to_json(self) -> dict[str, Any]:
        return {"item_values": list(self.item_values), "H": self.H, "demand_kind": self.demand_kind.value}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ItemValuation":
        return cls(tuple(obj["item_values"]), obj["H"], obj.get("demand_kind", "additive"))


Valuation = Union[UnitValuation, ItemValuation]


def valuation_from_json(obj: dict[str, Any]) -> Valuation:
    if "values" in obj:
        return UnitValuation.from_json(obj)
    if "item_values" in obj:
        return ItemValuation.from_json(obj)
    raise InvalidValuationError(f"unrecognised valuation object: {sorted(obj)}")


# ---------------------------------------------------------------------------
# Menus


@dataclass(frozen=True)
class TariffMenu:
    """Ordered list of two-part tariffs ``(p1, p2)``: fixed fee and per-unit fee."""

    tariffs: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        tariffs = tuple((float(p1), float(p2)) for p1, p2 in self.tariffs)
        object.__setattr__(self, "tariffs", tariffs)
        for p1, p2 in tariffs:
            if not (p1 >= 0 and p2 >= 0 and np.isfinite(p1) and np.isfinite(p2)):
                raise InvalidMenuError(f"tariff prices must be finite and nonnegative: {(p1, p2)}")

    @property
    def ell(self) -> int:
        return len(self.tariffs)

    def to_json(self) -> dict[str, Any]:
        return {"tariffs": [list(t) for t in self.tariffs]}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TariffMenu":
        return cls(tuple(tuple(t) for t in obj["tariffs"]))


@dataclass(frozen=True)
class LotteryEntry:
    phi: tuple[float, ...]
    price: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))
        object.__setattr__(self, "price", float(self.price))
        if any(not (0.0 <= x <= 1.0) for x in self.phi):
            raise InvalidMenuError(f"allocation probabilities must lie in [0,1]: {self.phi}")
        if not (self.price >= 0 and np.isfinite(self.price)):
            raise InvalidMenuError(f"price must be finite and nonnegative: {self.price}")


@dataclass(frozen=True)
class LotteryMenu:
    """Priced lotteries; the free null entry is implicit at index 0."""

    entries: tuple[LotteryEntry, ...]

    def __post_init__(self) -> None:
        entries = tuple(e if isinstance(e, LotteryEntry) else LotteryEntry(*e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if len({len(e.phi) for e in entries}) > 1:
            raise InvalidMenuError("all entries must allocate the same number of items")

    @property
    def ell(self) -> int:
        return len(self.entries)

    @property
    def m(self) -> int | None:
        return len(self.entries[0].phi) if self.entries else None

    def to_json(self) -> dict[str, Any]:
        return {"entries": [{"phi": list(e.phi), "price": e.price} for e in self.entries]}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "LotteryMenu":
        return cls(tuple(LotteryEntry(tuple(e["phi"]), e["price"]) for e in obj["entries"]))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[Sequence[float], float]], skip_null: bool = True) -> "LotteryMenu":
        """Build from ``(phi, price)`` rows; an explicit leading null row is dropped."""
        rows = list(rows)
        if skip_null and rows and rows[0][1] == 0 and not any(rows[0][0]):
            rows = rows[1:]
        return cls(tuple(LotteryEntry(tuple(phi), price) for phi, price in rows))


Menu = Union[TariffMenu, LotteryMenu]


def menu_from_json(obj: dict[str, Any]) -> Menu:
    if "tariffs" in obj:
        return TariffMenu.from_json(obj)
    if "entries" in obj:
        return LotteryMenu.from_json(obj)
    raise InvalidMenuError(f"unrecognised menu object: {sorted(obj)}")


# ---------------------------------------------------------------------------
# Scalar best responses


def _pick(utilities: Sequence[float], revenues: Sequence[float]) -> int:
    """Index of the seller-favorable utility maximiser (first wins remaining ties)."""
    best_u = max(utilities)
    cands = [i for i, u in enumerate(utilities) if u >= best_u - TIE_TOL]
    best_r = max(revenues[i] for i in cands)
    for i in cands:
        if revenues[i] >= best_r - TIE_TOL:
            return i
    raise AssertionError("unreachable")


def tariff_options(ell: int, K: int) -> list[Choice]:
    """Canonical option order: (1,1), (1,2), ..., (ell,K), then NoPurchase."""
    opts: list[Choice] = [TariffChoice(j, k) for j in range(1, ell + 1) for k in range(1, K + 1)]
    opts.append(NO_PURCHASE)
    return opts


def tariff_price(menu: TariffMenu, choice: Choice) -> float:
    if isinstance(choice, NoPurchase):
        return 0.0
    if not isinstance(choice, TariffChoice) or not (1 <= choice.j <= menu.ell) or choice.k < 1:
        raise InvalidChoiceError(f"{choice!r} is not an option of a {menu.ell}-tariff menu")
    p1, p2 = menu.tariffs[choice.j - 1]
    return p1 + choice.k * p2


def tariff_utility(menu: TariffMenu, val: UnitValuation, choice: Choice) -> float:
    if isinstance(choice, TariffChoice) and choice.k > val.K:
        raise InvalidChoiceError(f"{choice!r} asks for more than K={val.K} units")
    price = tariff_price(menu, choice)
    if isinstance(choice, NoPurchase):
        return 0.0
    return val.values[choice.k] - price


def best_response_tariff(menu: TariffMenu, val: UnitValuation) -> tuple[Choice, float]:
    opts = tariff_options(menu.ell, val.K)
    prices = [tariff_price(menu, o) for o in opts]
    utils = [0.0 if isinstance(o, NoPurchase) else val.values[o.k] - p for o, p in zip(opts, prices)]
    i = _pick(utils, prices)
    return opts[i], prices[i]


def _check_unit_demand(menu: LotteryMenu, val: ItemValuation) -> None:
    if val.demand_kind is DemandKind.UNIT_DEMAND:
        for j, e in enumerate(menu.entries, start=1):
            if sum(e.phi) > 1.0 + 1e-12:
                raise InvalidMenuError(f"entry {j} allocates {sum(e.phi)} > 1 to a unit-demand buyer")


def lottery_utility(menu: LotteryMenu, val: ItemValuation, choice: Choice) -> float:
    if not isinstance(choice, LotteryChoice) or not (0 <= choice.j <= menu.ell):
        raise InvalidChoiceError(f"{choice!r} is not an option of a {menu.ell}-entry lottery menu")
    if choice.j == 0:
        return 0.0
    e = menu.entries[choice.j - 1]
    if len(e.phi) != val.m:
        raise InvalidMenuError(f"menu allocates {len(e.phi)} items, buyer has {val.m}")
    return float(np.dot(val.item_values, e.phi)) - e.price


def best_response_lottery(menu: LotteryMenu, val: ItemValuation) -> tuple[Choice, float]:
    _check_unit_demand(menu, val)
    utils = [lottery_utility(menu, val, LotteryChoice(j)) for j in range(menu.ell + 1)]
    prices = [0.0] + [e.price for e in menu.entries]
    j = _pick(utils, prices)
    return LotteryChoice(j), prices[j]


def best_response(menu: Menu, val: Valuation) -> tuple[Choice, float]:
    if isinstance(menu, TariffMenu) and isinstance(val, UnitValuation):
        return best_response_tariff(menu, val)
    if isinstance(menu, LotteryMenu) and isinstance(val, ItemValuation):
        return best_response_lottery(menu, val)
    raise MechanismError(f"cannot pair {type(menu).__name__} with {type(val).__name__}")


def revenue(menu: Menu, val: Valuation) -> float:
    return best_response(menu, val)[1]


# ---------------------------------------------------------------------------
# Array evaluators


def _pick_many(util: NDArray[np.float64], rev: NDArray[np.float64]) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
    """Column-wise version of :func:`_pick` over an ``(options, n)`` table.

    Returns the chosen option of every column and the revenue it pays.
    """
    ok = util >= util.max(axis=0) - TIE_TOL
    masked = np.where(ok, rev, -np.inf)
    ok &= masked >= masked.max(axis=0) - TIE_TOL
    idx = ok.argmax(axis=0)
    return idx, np.take_along_axis(rev, idx[None, :], axis=0)[0]


class TariffMenuArray:
    """``n`` menus of ``ell`` tariffs stored as an ``(n, ell, 2)`` price array."""

    family = "tariff"

    def __init__(self, prices: NDArray[np.float64], K: int):
        prices = np.asarray(prices, dtype=np.float64)
        if prices.ndim != 3 or prices.shape[2] != 2:
            raise InvalidMenuError(f"expected (n, ell, 2) prices, got shape {prices.shape}")
        self.prices = prices
        self.K = int(K)
        n, ell, _ = prices.shape
        units = np.arange(1, self.K + 1, dtype=np.float64)
        # option (j,k) -> column (j-1)*K + (k-1); NoPurchase is the extra last column
        opt = prices[:, :, :1] + units[None, None, :] * prices[:, :, 1:]
        # kept options-major: reductions over a handful of options per menu run along contiguous rows
        self._prices_by_option = np.ascontiguousarray(np.concatenate([opt.reshape(n, ell * self.K), np.zeros((n, 1))], axis=1).T)
        self._options = tariff_options(ell, self.K)

    @classmethod
    def from_menus(cls, menus: Iterable[TariffMenu], K: int) -> "TariffMenuArray":
        menus = list(menus)
        ells = {m.ell for m in menus}
        if len(ells) != 1:
            raise InvalidMenuError("array evaluation needs menus of one common length")
        return cls(np.array([m.tariffs for m in menus], dtype=np.float64), K)

    def __len__(self) -> int:
        return self.prices.shape[0]

    @property
    def ell(self) -> int:
        return self.prices.shape[1]

    @property
    def options(self) -> list[Choice]:
        return self._options

    @property
    def option_prices(self) -> NDArray[np.float64]:
        """``(n, options)`` price table."""
        return self._prices_by_option.T

    def menu(self, i: int) -> TariffMenu:
        return TariffMenu(tuple(map(tuple, self.prices[i])))

    def evaluate(self, val: UnitValuation) -> tuple[NDArray[np.float64], NDArray[np.intp]]:
        """Revenue and chosen option column for every menu against one buyer."""
        if val.K != self.K:
            raise MechanismError(f"valuation has K={val.K}, menus expect K={self.K}")
        v = np.asarray(val.values[1:], dtype=np.float64)
        P = self._prices_by_option
        util = np.empty_like(P)
        np.subtract(np.tile(v, self.ell)[:, None], P[:-1], out=util[:-1])
        util[-1] = 0.0
        idx, rev = _pick_many(util, P)
        return rev, idx

    def revenues(self, val: UnitValuation) -> NDArray[np.float64]:
        return self.evaluate(val)[0]


class LotteryMenuArray:
    """``n`` lottery menus: allocations ``(n, ell, m)`` and prices ``(n, ell)``."""

    family = "lottery"

    def __init__(self, phis: NDArray[np.float64], prices: NDArray[np.float64]):
        phis = np.asarray(phis, dtype=np.float64)
        prices = np.asarray(prices, dtype=np.float64)
        if phis.ndim != 3 or prices.shape != phis.shape[:2]:
            raise InvalidMenuError(f"shape mismatch: phis {phis.shape}, prices {prices.shape}")
        self.phis = phis
        self.prices = prices
        n = phis.shape[0]
        self._prices_by_option = np.ascontiguousarray(np.concatenate([np.zeros((n, 1)), prices], axis=1).T)
        self._options: list[Choice] = [LotteryChoice(j) for j in range(self.ell + 1)]
        self._row_mass = phis.sum(axis=2)

    @classmethod
    def from_menus(cls, menus: Iterable[LotteryMenu], m: int) -> "LotteryMenuArray":
        menus = list(menus)
        ells = {x.ell for x in menus}
        if len(ells) != 1:
            raise InvalidMenuError("array evaluation needs menus of one common length")
        ell = ells.pop()
        phis = np.array([[e.phi for e in x.entries] for x in menus], dtype=np.float64).reshape(len(menus), ell, m)
        prices = np.array([[e.price for e in x.entries] for x in menus], dtype=np.float64).reshape(len(menus), ell)
        return cls(phis, prices)

    def __len__(self) -> int:
        return self.phis.shape[0]

    @property
    def ell(self) -> int:
        return self.phis.shape[1]

    @property
    def m(self) -> int:
        return self.phis.shape[2]

    @property
    def options(self) -> list[Choice]:
        return self._options

    @property
    def option_prices(self) -> NDArray[np.float64]:
        """``(n, options)`` price table."""
        return self._prices_by_option.T

    def unit_demand_feasible(self) -> "LotteryMenuArray":
        """Subset whose entries all allocate at most one item in total."""
        keep = np.all(self._row_mass <= 1.0 + 1e-12, axis=1)
        return LotteryMenuArray(self.phis[keep], self.prices[keep])

    def menu(self, i: int) -> LotteryMenu:
        return LotteryMenu(tuple(LotteryEntry(tuple(p), c) for p, c in zip(self.phis[i], self.prices[i])))

    def evaluate(self, val: ItemValuation) -> tuple[NDArray[np.float64], NDArray[np.intp]]:
        if val.m != self.m:
            raise MechanismError(f"valuation has m={val.m}, menus expect m={self.m}")
        if val.demand_kind is DemandKind.UNIT_DEMAND and np.any(self._row_mass > 1.0 + 1e-12):
            raise InvalidMenuError("menu allocates more than one item in total to a unit-demand buyer")
        v = np.asarray(val.item_values, dtype=np.float64)
        P = self._prices_by_option
        util = np.empty_like(P)
        util[0] = 0.0
        util[1:] = (self.phis @ v - self.prices).T
        idx, rev = _pick_many(util, P)
        return rev, idx

    def revenues(self, val: ItemValuation) -> NDArray[np.float64]:
        return self.evaluate(val)[0]


MenuArray = Union[TariffMenuArray, LotteryMenuArray]


def as_menu_array(menus: Any, *, K: int | None = None, m: int | None = None) -> MenuArray:
    """Accept an existing array evaluator or a sequence of menus."""
    if isinstance(menus, (TariffMenuArray, LotteryMenuArray)):
        return menus
    menus = list(menus)
    if not menus:
        raise MechanismError("empty menu collection")
    if isinstance(menus[0], TariffMenu):
        if K is None:
            raise MechanismError("K is required to evaluate tariff menus")
        return TariffMenuArray.from_menus(menus, K)
    if m is None:
        m = menus[0].m
    if m is None:
        raise MechanismError("m is required for null-only lottery menus")
    return LotteryMenuArray.from_menus(menus, m)
