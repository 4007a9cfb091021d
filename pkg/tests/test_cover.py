import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from menu_forge.cover import (
    EnumerationTooLarge,
    LotteryCoverParams,
    TariffCoverParams,
    enumerate_lottery_cover,
    enumerate_tariff_cover,
    lottery_cover_array,
    pareto_frontier,
    round_lottery_menu,
    round_tariff_menu,
    tariff_cover_array,
)
from menu_forge.mechanisms import (
    NO_PURCHASE,
    ItemValuation,
    LotteryEntry,
    LotteryMenu,
    TariffMenu,
    UnitValuation,
    best_response_lottery,
    best_response_tariff,
    revenue,
)


def test_rounding_discounts_later_tariffs():
    out = round_tariff_menu(TariffMenu(((0.13, 0.27), (0.31, 0.12))), 0.1)
    assert np.allclose(out.tariffs, [(0.1, 0.2), (0.2, 0.0)], atol=1e-12)


def test_rounding_keeps_on_grid_single_tariff():
    assert round_tariff_menu(TariffMenu(((0.2, 0.4),)), 0.1) == TariffMenu(((0.2, 0.4),))


def test_rounding_drops_dominated_tariff():
    assert round_tariff_menu(TariffMenu(((0.1, 0.2), (0.3, 0.2))), 0.1) == TariffMenu(((0.1, 0.2),))


def test_pareto_keeps_one_of_identical_tariffs():
    assert pareto_frontier([(0.2, 0.2), (0.2, 0.2), (0.5, 0.1)]) == [(0.2, 0.2), (0.5, 0.1)]


@pytest.mark.parametrize("ell,alpha,count", [(1, 0.5, 9), (1, 1.0, 4), (2, 0.5, 81)])
def test_tariff_cover_counts(ell, alpha, count):
    params = TariffCoverParams(alpha, 1.0, 1, ell)
    menus = list(enumerate_tariff_cover(params))
    assert len(menus) == params.count == count
    assert len(set(menus)) == count


def test_tariff_grid_points_are_exact_products():
    grid = TariffCoverParams(0.1, 1.0, 1, 1).grid()
    assert list(grid) == [i * 0.1 for i in range(11)]


def test_tariff_array_order_matches_enumerator():
    params = TariffCoverParams(0.25, 1.0, 2, 2)
    arr = tariff_cover_array(params)
    assert [arr.menu(i) for i in range(len(arr))] == list(enumerate_tariff_cover(params))


def test_cap_is_enforced(monkeypatch):
    monkeypatch.setenv("MENU_FORGE_CAP", "80")
    with pytest.raises(EnumerationTooLarge) as err:
        enumerate_tariff_cover(TariffCoverParams(0.5, 1.0, 1, 2))
    assert err.value.count == 81
    assert "81" in str(err.value)
    with pytest.raises(EnumerationTooLarge):
        lottery_cover_array(LotteryCoverParams(0.2, 0.1, 1, 1, 1.0, 2))


tariff_pair = st.tuples(
    st.integers(1, 3),
    st.integers(1, 5),
    st.sampled_from([0.2, 0.1, 0.05]),
    st.randoms(use_true_random=False),
)


@given(tariff_pair)
def test_tariff_rounding_loses_at_most_2_K_alpha_ell_and_never_switches_down(case):
    ell, K, alpha, rnd = case
    menu = TariffMenu(tuple((rnd.random(), rnd.random()) for _ in range(ell)))
    val = UnitValuation((0.0, *sorted(rnd.random() for _ in range(K))), 1)
    rounded = round_tariff_menu(menu, alpha)
    c0, r0 = best_response_tariff(menu, val)
    c1, r1 = best_response_tariff(rounded, val)
    assert r1 >= r0 - 2 * K * alpha * ell
    units = lambda c: 0 if c is NO_PURCHASE else c.k
    assert units(c1) >= units(c0)


@given(st.integers(0, 10), st.integers(0, 10), st.sampled_from([0.1, 0.25, 0.5]))
def test_rounding_on_grid_single_tariff_is_idempotent(i, j, alpha):
    steps = int(math.floor(1 / alpha + 1e-9))
    menu = TariffMenu(((min(i, steps) * alpha, min(j, steps) * alpha),))
    assert round_tariff_menu(menu, alpha) == menu


# lotteries


def test_lottery_entry_in_level_one_is_rounded():
    params = LotteryCoverParams(alpha=0.05, delta=0.1, levels_K=2, m=1, H=1.0, ell=1)
    assert params.level_of(0.9) == 1
    out = round_lottery_menu(LotteryMenu((LotteryEntry((1.0,), 0.9),)), params)
    assert out.ell == 1
    assert out.entries[0].phi == (0.95,)
    assert out.entries[0].price == pytest.approx(0.70, abs=1e-12)


def test_cheap_lottery_entry_is_dropped():
    params = LotteryCoverParams(alpha=0.05, delta=0.1, levels_K=2, m=1, H=1.0, ell=1)
    assert round_lottery_menu(LotteryMenu((LotteryEntry((0.5,), 0.5),)), params).ell == 0
    # exactly on the lowest boundary: dropped as well
    assert round_lottery_menu(LotteryMenu((LotteryEntry((0.5,), 0.9**2),)), params).ell == 0
    assert round_lottery_menu(LotteryMenu(()), params) == LotteryMenu(())


def test_lottery_cover_counts():
    p = LotteryCoverParams(0.5, 0.1, 1, 1, 1.0, 1)
    assert p.K_prime == 1
    assert list(p.allocation_grid()) == [0.0, 0.5, 1.0]
    assert list(p.price_grid()) == [0.0, 0.5, 1.0]
    assert len(list(enumerate_lottery_cover(p))) == p.count == 9

    q = LotteryCoverParams(0.99, 0.1, 1, 1, 1.0, 1)
    assert q.K_prime == 0
    assert list(q.allocation_grid()) == [0.0, 1.0]
    assert q.count == len(q.price_grid()) * 2 == 4

    assert list(enumerate_lottery_cover(LotteryCoverParams(0.5, 0.1, 1, 1, 1.0, 0))) == [LotteryMenu(())]
    assert len(lottery_cover_array(LotteryCoverParams(0.5, 0.1, 1, 1, 1.0, 0))) == 1


def test_lottery_array_order_matches_enumerator():
    p = LotteryCoverParams(0.5, 0.1, 1, 2, 1.0, 2)
    arr = lottery_cover_array(p)
    assert [arr.menu(i) for i in range(len(arr))] == list(enumerate_lottery_cover(p))


def test_rounded_lotteries_live_in_the_cover():
    p = LotteryCoverParams(0.1, 0.2, 3, 1, 1.0, 1)
    grid = set(p.allocation_grid())
    rng = np.random.default_rng(2)
    for _ in range(200):
        menu = LotteryMenu((LotteryEntry((rng.uniform(),), rng.uniform()),))
        for e in round_lottery_menu(menu, p).entries:
            assert all(x in grid for x in e.phi)
            assert abs(e.price / p.alpha - round(e.price / p.alpha)) < 1e-9


lottery_pair = st.tuples(
    st.integers(1, 2),
    st.integers(1, 2),
    st.sampled_from([(0.01, 0.05, 40), (0.02, 0.1, 20), (0.005, 0.05, 60)]),
    st.randoms(use_true_random=False),
)


@given(lottery_pair)
def test_lottery_rounding_bound_and_levels(case):
    m, ell, (alpha, delta, K), rnd = case
    p = LotteryCoverParams(alpha, delta, K, m, 1.0, ell)
    menu = LotteryMenu(tuple(LotteryEntry(tuple(rnd.random() for _ in range(m)), rnd.random() * m) for _ in range(ell)))
    val = ItemValuation(tuple(rnd.random() for _ in range(m)), 1.0)
    rounded = round_lottery_menu(menu, p)
    c0, r0 = best_response_lottery(menu, val)
    c1, r1 = best_response_lottery(rounded, val)
    bound = r0 * (1 - delta) * (1 - alpha) ** K - (2 * K + 1) * alpha - m * (1 - delta) ** K
    assert r1 >= bound
    if c0.j and p.level_of(r0) > 0:
        # the chosen entry survives; the buyer never moves to a cheaper level
        assert c1.j > 0
        lvl_before = p.level_of(r0)
        lvl_after = p.level_of(menu.entries[_origin(menu, rounded, p, c1.j) - 1].price)
        assert lvl_after >= lvl_before


def _origin(menu, rounded, p, j):
    """Index in the original menu of the j-th surviving entry."""
    survivors = [i for i, e in enumerate(menu.entries, start=1) if p.level_of(e.price) > 0]
    return survivors[j - 1]


def test_naive_half_power_rounding_fails_where_level_rounding_does_not():
    menu = LotteryMenu.from_rows([((0,), 0), ((0.26,), 0.24), ((0.95,), 0.52)])
    buyer = ItemValuation((0.6,), 1)
    assert revenue(menu, buyer) == 0.52
    down_down = LotteryMenu.from_rows([((0.25,), 0.125), ((0.5,), 0.5)])
    up_down = LotteryMenu.from_rows([((0.5,), 0.125), ((1.0,), 0.5)])
    up_up = LotteryMenu.from_rows([((0.5,), 0.25), ((1.0,), 1.0)])
    for naive in (down_down, up_down, up_up):
        choice, rev = best_response_lottery(naive, buyer)
        assert choice.j == 1 and rev <= 0.25
    for alpha, delta, K in [(0.01, 0.05, 40), (0.005, 0.02, 100), (0.05, 0.1, 10)]:
        p = LotteryCoverParams(alpha, delta, K, 1, 1.0, 2)
        r = revenue(round_lottery_menu(menu, p), buyer)
        assert r >= 0.52 * (1 - delta) * (1 - alpha) ** K - (2 * K + 1) * alpha - (1 - delta) ** K
