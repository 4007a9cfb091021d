"""Empirical revenue maximisation over a menu cover, and how many samples it needs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .cover import LotteryCoverParams, TariffCoverParams
from .mechanisms import Menu, Valuation, as_menu_array


@dataclass(frozen=True)
class ErmResult:
    menu: Menu
    index: int
    mean_revenue: float
    cover_size: int
    n_samples: int


def compensated_revenue_sums(samples: Sequence[Valuation], arr) -> NDArray[np.float64]:
    """Per-menu revenue totals over the samples, accumulated with Neumaier summation."""
    total = np.zeros(len(arr))
    comp = np.zeros(len(arr))
    for s in samples:
        r = arr.revenues(s)
        t = total + r
        comp += np.where(np.abs(total) >= np.abs(r), (total - t) + r, (r - t) + total)
        total = t
    return total + comp


def erm_over_cover(samples: Sequence[Valuation], cover, K: int | None = None, m: int | None = None) -> ErmResult:
    """The cover menu with the highest average revenue on the samples (first one on ties)."""
    samples = list(samples)
    if not samples:
        raise ValueError("ERM needs at least one sample")
    first = samples[0]
    arr = as_menu_array(cover, K=K if K is not None else getattr(first, "K", None), m=m if m is not None else getattr(first, "m", None))
    sums = compensated_revenue_sums(samples, arr)
    i = int(np.argmax(sums))
    return ErmResult(arr.menu(i), i, float(sums[i] / len(samples)), len(arr), len(samples))


def _check_positive(**kw: float) -> None:
    for name, x in kw.items():
        if not x > 0:
            raise ValueError(f"{name} must be positive, got {x}")


def sample_complexity_tariff(eps: float, delta: float, H: float, K: int, ell: int) -> int:
    """Samples for an eps-optimal tariff menu with probability 1 - delta."""
    _check_positive(eps=eps, delta=delta, H=H, K=K, ell=ell)
    if eps >= H:
        raise ValueError("eps must be smaller than H")
    n = (H**2 / (2 * eps**2)) * (2 * ell * math.log(2 * K * H * ell / eps) + math.log(2 / delta))
    return int(math.ceil(n))


def default_tariff_alpha(eps: float, K: int, ell: int) -> float:
    """Cover pitch eps'/(2 K ell) with eps' = eps/2, balancing rounding and sampling error."""
    return (eps / 2) / (2 * K * ell)


@dataclass(frozen=True)
class LotterySampleComplexity:
    N: int
    eps_prime: float
    alpha: float
    d: float
    K: float
    log_cover_size: float

    def cover_params(self, m: int, H: float, ell: int) -> LotteryCoverParams:
        return LotteryCoverParams(self.alpha, self.d, max(1, math.ceil(self.K)), m, H, ell)


def sample_complexity_lottery(eps: float, delta: float, H: float, m: int, ell: int) -> LotterySampleComplexity:
    """Samples for an eps-optimal lottery menu, with the rounding parameters that go with it.

    The log cover size is ``(ell*m + ell) ln(1/alpha) + ell*m ln ln(Hm/alpha)``,
    the logarithm of the count of rounded menus.
    """
    _check_positive(eps=eps, delta=delta, H=H, m=m, ell=ell)
    mH = m * H
    eps_p = eps / 4
    if mH / eps_p <= 1:
        raise ValueError("eps too large relative to mH")
    lg = math.log(mH / eps_p)
    alpha = eps_p / (2 * m**2 * H**2 * lg)
    d = eps_p / (2 * mH)
    K = (2 * mH / eps_p) * lg
    log_cover = (ell * m + ell) * math.log(1 / alpha) + ell * m * math.log(math.log(mH / alpha))
    n = (m**2 * H**2 / (2 * eps_p**2)) * (log_cover + math.log(2 / delta))
    return LotterySampleComplexity(int(math.ceil(n)), eps_p, alpha, d, K, log_cover)


def tariff_erm_params(eps: float, H: float, K: int, ell: int, alpha: float | None = None) -> TariffCoverParams:
    return TariffCoverParams(alpha if alpha is not None else default_tariff_alpha(eps, K, ell), H, K, ell)
