"""Weighted-majority and Exp3 learners over a finite set of menus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

from .mechanisms import Choice, MenuArray, Valuation, as_menu_array


class GainOutOfRange(ValueError):
    pass


def make_rng(seed: int | np.random.SeedSequence | np.random.Generator) -> np.random.Generator:
    """One PCG64 stream per run; generators are passed through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class ExpertState:
    """Multiplicative weights kept in log space.

    ``log_weights[k] = cumulative_gain[k] / payoff_cap * ln(1 + beta)``, i.e.
    the weight is ``(1 + beta) ** (cumulative_gain[k] / payoff_cap)``.
    ``gain_floor`` is 0 for revenue gains; the limited-type learner feeds
    signed estimates and lowers it to ``-payoff_cap``.
    """

    cumulative_gain: NDArray[np.float64]
    beta: float
    payoff_cap: float
    gamma: float = 0.0
    gain_floor: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0,1], got {self.beta}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0,1], got {self.gamma}")
        if self.payoff_cap <= 0:
            raise ValueError("payoff_cap must be positive")
        self.cumulative_gain = np.asarray(self.cumulative_gain, dtype=np.float64).copy()

    @classmethod
    def fresh(cls, n: int, beta: float, payoff_cap: float, gamma: float = 0.0, gain_floor: float = 0.0) -> "ExpertState":
        if n < 1:
            raise ValueError("need at least one expert")
        return cls(np.zeros(n), beta, payoff_cap, gamma, gain_floor)

    @property
    def n(self) -> int:
        return self.cumulative_gain.shape[0]

    @property
    def log_weights(self) -> NDArray[np.float64]:
        return self.cumulative_gain / self.payoff_cap * math.log1p(self.beta)

    @property
    def weights(self) -> NDArray[np.float64]:
        """Weights rescaled by the largest one (the ratios are what matter)."""
        lw = self.log_weights
        return np.exp(lw - lw.max())

    def probabilities(self) -> NDArray[np.float64]:
        w = self.weights
        return w / w.sum()

    def exp3_probabilities(self) -> NDArray[np.float64]:
        return (1.0 - self.gamma) * self.probabilities() + self.gamma / self.n

    def _check_gains(self, gains: NDArray[np.float64]) -> None:
        tol = 1e-12 * self.payoff_cap
        if np.any(gains < self.gain_floor - tol) or np.any(gains > self.payoff_cap + tol) or not np.all(np.isfinite(gains)):
            raise GainOutOfRange(f"gains must lie in [{self.gain_floor}, {self.payoff_cap}]")


def sample_index(p: NDArray[np.float64], rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(p) - 1)


def wm_select(state: ExpertState, rng: np.random.Generator) -> int:
    return sample_index(state.probabilities(), rng)


def wm_update_full(state: ExpertState, gains: Sequence[float] | NDArray[np.float64]) -> None:
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != state.cumulative_gain.shape:
        raise ValueError(f"expected {state.n} gains, got {gains.shape}")
    state._check_gains(gains)
    state.cumulative_gain += gains


def exp3_select(state: ExpertState, rng: np.random.Generator) -> int:
    return sample_index(state.exp3_probabilities(), rng)


def exp3_step(state: ExpertState, realized_gain_of_chosen: float, chosen: int) -> float:
    """Credit the importance-weighted gain to the chosen expert; returns that gain."""
    g = float(realized_gain_of_chosen)
    state._check_gains(np.array([g]))
    pbar = state.exp3_probabilities()[chosen]
    simulated = (state.gamma / state.n) * g / pbar
    state.cumulative_gain[chosen] += simulated
    return simulated


# ---------------------------------------------------------------------------
# Traces

CSV_HEADER = "round,expert,revenue,cum_revenue,best_cum,regret"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RegretTrace:
    """Per-round record of an online run.

    ``best_cum[t]`` is the best fixed expert's cumulative revenue through
    round ``t`` (inclusive), and ``best_expert`` the final best expert.
    """

    experts: NDArray[np.intp]
    revenues: NDArray[np.float64]
    best_cum: NDArray[np.float64]
    best_expert: int
    payoff_cap: float
    choices: list[Choice] = field(default_factory=list)

    @property
    def T(self) -> int:
        return int(self.revenues.shape[0])

    @property
    def cum_revenue(self) -> NDArray[np.float64]:
        return np.cumsum(self.revenues)

    @property
    def regret(self) -> NDArray[np.float64]:
        return self.best_cum - self.cum_revenue

    @property
    def final_regret(self) -> float:
        return float(self.regret[-1]) if self.T else 0.0

    def csv_lines(self) -> Iterator[str]:
        yield CSV_HEADER
        cum = self.cum_revenue
        for t in range(self.T):
            yield ",".join(
                [str(t + 1), str(int(self.experts[t])), fmt(self.revenues[t]), fmt(cum[t]), fmt(self.best_cum[t]), fmt(self.best_cum[t] - cum[t])]
            )

    def write_csv(self, out: IO[str]) -> None:
        for line in self.csv_lines():
            out.write(line + "\n")


class _Hindsight:
    """Running cumulative revenue of every expert, for the best-in-hindsight column."""

    def __init__(self, n: int):
        self.totals = np.zeros(n)
        self.best: list[float] = []

    def add(self, revs: NDArray[np.float64]) -> None:
        self.totals += revs
        self.best.append(float(self.totals.max()))

    def finish(self, experts: list[int], realized: list[float], cap: float, choices: list[Choice]) -> RegretTrace:
        return RegretTrace(
            experts=np.asarray(experts, dtype=np.intp),
            revenues=np.asarray(realized, dtype=np.float64),
            best_cum=np.asarray(self.best, dtype=np.float64),
            best_expert=int(np.argmax(self.totals)) if len(self.totals) else 0,
            payoff_cap=cap,
            choices=choices,
        )


def payoff_cap_of(val: Valuation) -> float:
    return val.H * getattr(val, "m", 1)


def _take(adversary: Iterable[Valuation], T: int) -> Iterator[Valuation]:
    it = iter(adversary)
    for t in range(T):
        try:
            yield next(it)
        except StopIteration:
            raise ValueError(f"adversary ran out of valuations after {t} rounds (T={T})") from None


def default_full_info_params(T: int) -> dict[str, float]:
    a = 1.0 / math.sqrt(T)
    return {"alpha": a, "beta": a}


def default_bandit_params(T: int, ell: int) -> dict[str, float]:
    a = T ** (-1.0 / (2 * (1 + ell)))
    b = T ** (-1.0 / (4 * (1 + ell)))
    return {"alpha": a, "beta": b, "gamma": b}


def _prepare(cover, K: int | None, m: int | None) -> MenuArray:
    return as_menu_array(cover, K=K, m=m)


def run_full_information(
    cover,
    adversary: Iterable[Valuation],
    T: int,
    seed,
    beta: float | None = None,
    payoff_cap: float | None = None,
) -> RegretTrace:
    """Weighted majority with full feedback: every menu's revenue is observed each round."""
    vals = list(_take(adversary, T))
    arr = _prepare(cover, getattr(vals[0], "K", None) if vals else None, getattr(vals[0], "m", None) if vals else None)
    beta = default_full_info_params(T)["beta"] if beta is None else beta
    cap = payoff_cap if payoff_cap is not None else (payoff_cap_of(vals[0]) if vals else 1.0)
    rng = make_rng(seed)
    state = ExpertState.fresh(len(arr), beta, cap)
    hind = _Hindsight(len(arr))
    experts, realized, choices = [], [], []
    for val in vals:
        k = wm_select(state, rng)
        revs, opt = arr.evaluate(val)
        experts.append(k)
        realized.append(float(revs[k]))
        choices.append(arr.options[opt[k]])
        hind.add(revs)
        wm_update_full(state, revs)
    return hind.finish(experts, realized, cap, choices)


def run_bandit(
    cover,
    adversary: Iterable[Valuation],
    T: int,
    seed,
    beta: float | None = None,
    gamma: float | None = None,
    payoff_cap: float | None = None,
) -> RegretTrace:
    """Exp3: only the played menu's revenue reaches the learner.

    All menus are still scored each round, but solely to fill the
    best-in-hindsight column of the trace.
    """
    vals = list(_take(adversary, T))
    arr = _prepare(cover, getattr(vals[0], "K", None) if vals else None, getattr(vals[0], "m", None) if vals else None)
    defaults = default_bandit_params(T, arr.ell)
    beta = defaults["beta"] if beta is None else beta
    gamma = defaults["gamma"] if gamma is None else gamma
    cap = payoff_cap if payoff_cap is not None else (payoff_cap_of(vals[0]) if vals else 1.0)
    rng = make_rng(seed)
    state = ExpertState.fresh(len(arr), beta, cap, gamma=gamma)
    hind = _Hindsight(len(arr))
    experts, realized, choices = [], [], []
    for val in vals:
        k = exp3_select(state, rng)
        revs, opt = arr.evaluate(val)
        experts.append(k)
        realized.append(float(revs[k]))
        choices.append(arr.options[opt[k]])
        hind.add(revs)
        exp3_step(state, revs[k], k)
    return hind.finish(experts, realized, cap, choices)


def auer_full_info_bound(opt: float, beta: float, cap: float, n: int) -> float:
    """Lower bound on expected realized revenue for weighted majority."""
    return (1 - beta / 2) * opt - cap * math.log(n) / beta


def auer_bandit_bound(opt: float, beta: float, gamma: float, cap: float, n: int) -> float:
    """Lower bound on expected realized revenue for Exp3."""
    return opt - (gamma + beta / 2) * opt - cap * n * math.log(n) / (beta * gamma)
