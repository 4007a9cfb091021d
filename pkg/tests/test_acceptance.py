"""Acceptance checks, one test per criterion; each records a PASS/FAIL line."""

import copy
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from menu_forge.cover import LotteryCoverParams, TariffCoverParams, round_lottery_menu, round_tariff_menu, tariff_cover_array
from menu_forge.dispersion_lab import BoundedDensity, DispersionParams, draw_unit_valuations, lottery_dispersion_failure, tariff_dispersion_experiment
from menu_forge.distributional import erm_over_cover, sample_complexity_tariff, tariff_erm_params
from menu_forge.experts import (
    ExpertState,
    auer_full_info_bound,
    default_bandit_params,
    exp3_select,
    exp3_step,
    run_bandit,
    run_full_information,
)
from menu_forge.harness import run_experiment
from menu_forge.limited_types import (
    ParameterSpace,
    TypeSet,
    barycentric_spanner,
    build_indicator_set,
    corner_loss_bound_check,
    corner_loss_slack,
    extreme_point_set,
    prepare_limited,
    run_limited_bandit,
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
)

from oracles import lottery_best, tariff_best, tariff_grid_optimum


def sorted_uniform_types(rng, V, K):
    return [UnitValuation((0.0, *np.sort(rng.uniform(0, 1, K))), 1.0) for _ in range(V)]


def iid_stream(K, seed, dens=None):
    rng = np.random.default_rng(seed)
    dens = dens or BoundedDensity.uniform()
    while True:
        yield from draw_unit_valuations(dens, 1024, K, 1.0, rng)


# 1 ---------------------------------------------------------------------------


def test_example_one_exactness(verdict):
    buyer = ItemValuation((0.6,), 1.0)
    original = LotteryMenu.from_rows([((0,), 0), ((0.26,), 0.24), ((0.95,), 0.52)])
    # rounding down both, rounding allocations up and prices down, rounding both up
    naive = [
        LotteryMenu.from_rows([((0,), 0), ((0.25,), 0.125), ((0.5,), 0.5)]),
        LotteryMenu.from_rows([((0,), 0), ((0.5,), 0.125), ((1.0,), 0.5)]),
        LotteryMenu.from_rows([((0,), 0), ((0.5,), 0.25), ((1.0,), 1.0)]),
    ]
    expected = [0.125, 0.125, 0.25]
    timings = []
    for _ in range(50):
        t0 = time.perf_counter()
        main = best_response_lottery(original, buyer)
        rest = [best_response_lottery(m, buyer) for m in naive]
        timings.append(time.perf_counter() - t0)
    ok = main[0].j == 2 and main[1] == 0.52
    ok &= all(c.j == 1 and r == e for (c, r), e in zip(rest, expected))
    elapsed = min(timings)
    ok &= elapsed < 1e-3
    verdict(1, ok, f"index {main[0].j} revenue {main[1]}; naive revenues {[r for _, r in rest]}; {elapsed * 1e6:.0f} us for all four")
    assert ok


# 2 ---------------------------------------------------------------------------


def test_tariff_discretization_guarantee(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    violations = down = 0
    worst = math.inf
    for i in range(10_000):
        ell = int(rng.integers(1, 4))
        K = int(rng.integers(1, 6))
        alpha = float(rng.choice([0.2, 0.1, 0.05]))
        if i % 2:
            tariffs = tuple((rng.uniform(0, 1), rng.uniform(0, 1)) for _ in range(ell))
        else:
            # cheaper per-unit fees so multi-unit purchases are common
            tariffs = tuple((rng.uniform(0, 0.5), rng.uniform(0, 1 / K)) for _ in range(ell))
        menu = TariffMenu(tariffs)
        val = UnitValuation((0.0, *np.sort(rng.uniform(0, 1, K))), 1.0)
        c0, r0 = best_response_tariff(menu, val)
        c1, r1 = best_response_tariff(round_tariff_menu(menu, alpha), val)
        slack = r1 - (r0 - 2 * K * alpha * ell)
        worst = min(worst, slack)
        violations += slack < 0
        units = lambda c: 0 if c is NO_PURCHASE else c.k
        down += units(c1) < units(c0)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and down == 0 and elapsed < 10
    verdict(2, ok, f"{violations} violations, {down} unit down-switches, min slack {worst:.4f}, {elapsed:.1f} s")
    assert ok


# 3 ---------------------------------------------------------------------------


def test_lottery_discretization_guarantee(verdict):
    rng = np.random.default_rng(77)
    settings = [(0.01, 0.05, 40), (0.02, 0.1, 20), (0.005, 0.05, 60), (0.05, 0.2, 8)]
    t0 = time.perf_counter()
    violations = 0
    worst = math.inf
    for i in range(10_000):
        m = int(rng.integers(1, 3))
        ell = int(rng.integers(1, 3))
        alpha, delta, K = settings[i % len(settings)]
        params = LotteryCoverParams(alpha, delta, K, m, 1.0, ell)
        menu = LotteryMenu(tuple(LotteryEntry(tuple(rng.uniform(0, 1, m)), rng.uniform(0, m)) for _ in range(ell)))
        val = ItemValuation(tuple(rng.uniform(0, 1, m)), 1.0)
        r0 = best_response_lottery(menu, val)[1]
        r1 = best_response_lottery(round_lottery_menu(menu, params), val)[1]
        bound = r0 * (1 - delta) * (1 - alpha) ** K - (2 * K + 1) * alpha - m * (1 - delta) ** K
        worst = min(worst, r1 - bound)
        violations += r1 < bound
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 30
    verdict(3, ok, f"{violations} violations, min slack {worst:.4f}, {elapsed:.1f} s")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_best_response_oracle_equivalence(verdict):
    rng = np.random.default_rng(4)
    mismatches = 0
    for i in range(10_000):
        coarse = i % 2 == 0  # grid prices and values provoke exact ties
        snap = (lambda x: np.round(x, 1)) if coarse else (lambda x: x)
        if i % 4 < 2:
            ell, K = int(rng.integers(1, 4)), int(rng.integers(1, 6))
            tariffs = [tuple(snap(rng.uniform(0, 1, 2))) for _ in range(ell)]
            vals = (0.0, *np.sort(snap(rng.uniform(0, 1, K))))
            choice, rev = best_response_tariff(TariffMenu(tuple(tariffs)), UnitValuation(vals, 1.0))
            label, pay = tariff_best(tariffs, vals)
            got = None if choice is NO_PURCHASE else (choice.j, choice.k)
        else:
            ell, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            rows = [(tuple(snap(rng.uniform(0, 1, m))), float(snap(rng.uniform(0, m)))) for _ in range(ell)]
            vals = tuple(snap(rng.uniform(0, 1, m)))
            choice, rev = best_response_lottery(LotteryMenu.from_rows(rows, skip_null=False), ItemValuation(vals, 1.0))
            label, pay = lottery_best(rows, vals)
            got = choice.j
        mismatches += got != label or rev != pay
    ok = mismatches == 0
    verdict(4, ok, f"{mismatches} mismatches in 10000 instances")
    assert ok


# 5 ---------------------------------------------------------------------------


def test_full_information_regret(verdict):
    t0 = time.perf_counter()
    T = 4096
    beta = 1 / math.sqrt(T)
    cover = tariff_cover_array(TariffCoverParams(beta, 1.0, 3, 1))
    gaps = []
    for seed in range(30):
        trace = run_full_information(cover, iid_stream(3, 1000 + seed), T, seed=seed, beta=beta)
        bound = auer_full_info_bound(trace.best_cum[-1], beta, 1.0, len(cover))
        gaps.append(trace.cum_revenue[-1] - bound)
    gaps = np.array(gaps)
    se = gaps.std(ddof=1) / math.sqrt(len(gaps))
    holds = gaps.mean() >= -3 * se

    per_round = []
    for T2 in (2**10, 2**12, 2**14):
        a = 1 / math.sqrt(T2)
        cov = tariff_cover_array(TariffCoverParams(a, 1.0, 3, 1))
        regrets = [run_full_information(cov, iid_stream(3, 5000 + s), T2, seed=s, beta=a).final_regret for s in range(3)]
        per_round.append(float(np.mean(regrets)) / T2)
    decreasing = per_round[0] > per_round[1] > per_round[2]
    elapsed = time.perf_counter() - t0
    ok = holds and decreasing and elapsed < 120
    verdict(
        5,
        ok,
        f"mean(realized - bound) = {gaps.mean():.1f} (SE {se:.1f}, n={len(cover)}); regret/T {[round(x, 4) for x in per_round]}; {elapsed:.0f} s",
    )
    assert ok


# 6 ---------------------------------------------------------------------------


def test_bandit_regret_and_unbiasedness(verdict):
    t0 = time.perf_counter()
    per_round = []
    for T in (2**10, 2**12, 2**14):
        p = default_bandit_params(T, 1)
        cover = tariff_cover_array(TariffCoverParams(p["alpha"], 1.0, 3, 1))
        regrets = [run_bandit(cover, iid_stream(3, 7000 + s), T, seed=s).final_regret for s in range(30)]
        per_round.append(float(np.mean(regrets)) / T)
    decreasing = per_round[0] > per_round[1] > per_round[2]

    # simulated gains: E[g_bar_k] = (gamma / n) g_k under the current distribution
    gains = np.array([0.8, 0.1, 0.5, 0.3])
    base = ExpertState(np.array([3.0, 0.0, 1.5, 2.0]), 0.3, 1.0, gamma=0.3)
    rng = np.random.default_rng(66)
    draws = 100_000
    est = np.zeros((draws, 4))
    for i in range(draws):
        k = exp3_select(base, rng)
        est[i, k] = exp3_step(copy.deepcopy(base), gains[k], k)
    se = est.std(axis=0, ddof=1) / math.sqrt(draws)
    z = np.abs(est.mean(axis=0) - base.gamma / 4 * gains) / se
    unbiased = bool(np.all(z <= 3))
    elapsed = time.perf_counter() - t0
    ok = decreasing and unbiased and elapsed < 300
    verdict(6, ok, f"regret/T {[round(x, 4) for x in per_round]}; max z of estimator bias {z.max():.2f}; {elapsed:.0f} s")
    assert ok


# 7 ---------------------------------------------------------------------------


def test_limited_type_estimators_and_regret(verdict):
    t0 = time.perf_counter()
    types = sorted_uniform_types(np.random.default_rng(0), 3, 2)
    model = prepare_limited(types, 1, 0.01)
    rng = np.random.default_rng(17)
    L = 60
    block = rng.integers(0, 3, L)
    draws = 10_000
    F = np.empty((draws, model.spanner.size))
    U = np.empty((draws, model.n))
    for i in range(draws):
        F[i] = model.sample_f_hat(block, rng)
        U[i] = model.u_hat(F[i])
    f_exact = model.exact_f(block)
    se_f = F.std(axis=0, ddof=1) * L / math.sqrt(draws)
    f_ok = bool(np.all(np.abs(F.mean(axis=0) * L - f_exact) <= 3 * se_f + 1e-12))
    se_u = U.std(axis=0, ddof=1) / math.sqrt(draws)
    u_ok = bool(np.all(np.abs(U.mean(axis=0) - model.exact_u(block)) <= 3 * se_u + 1e-12))
    bound = 1 * 2 * 3 * 1.0
    range_ok = float(np.abs(U).max()) <= bound

    scaled = []
    for T in (2**12, 2**14, 2**16):
        regrets = [run_limited_bandit(types, 1, T, 0.01, seed=s, model=model).trace.final_regret for s in range(8)]
        scaled.append(float(np.mean(regrets)) / T**0.75)
    decreasing = scaled[0] > scaled[1] > scaled[2]
    elapsed = time.perf_counter() - t0
    ok = f_ok and u_ok and range_ok and decreasing and elapsed < 600
    verdict(
        7,
        ok,
        f"f unbiased {f_ok}, u unbiased {u_ok}, max|u_hat| {np.abs(U).max():.3f} <= {bound}; regret/T^0.75 {[round(x, 3) for x in scaled]}; {elapsed:.0f} s",
    )
    assert ok


# 8 ---------------------------------------------------------------------------


def test_corner_loss_bound(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    eps = 0.02
    violations = 0
    worst = math.inf
    for _ in range(50):
        V = int(rng.integers(1, 4))
        K = int(rng.integers(1, 3))
        types = sorted_uniform_types(rng, V, K)
        T = int(rng.integers(5, 40))
        seq = rng.integers(0, V, T)
        corner, grid = corner_loss_bound_check(types, 1, eps, seq, pitch=eps / 4)
        space = ParameterSpace.for_types(TypeSet(tuple(types)), 1)
        slack = corner - (grid - corner_loss_slack(space, eps, T))
        assert corner_loss_slack(space, eps, T) == pytest.approx(2 * K * eps * T)
        worst = min(worst, slack)
        violations += slack < 0
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 300
    verdict(8, ok, f"{violations} violations over 50 instances, min slack {worst:.4f}, {elapsed:.0f} s")
    assert ok


# 9 ---------------------------------------------------------------------------


def test_spanner_coefficients(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    sets = 0
    for _ in range(25):
        V = int(rng.integers(1, 5))
        K = int(rng.integers(1, 3))
        ext = extreme_point_set(sorted_uniform_types(rng, V, K), 1, 0.01, seed=int(rng.integers(1 << 30)))
        ind = build_indicator_set(list(dict.fromkeys(ext.mappings)))
        X = np.array([i.vector for i in ind], dtype=float)
        sp = barycentric_spanner(ind, C=2)
        worst = max(worst, float(np.abs(sp.coefficients(X)).max()))
        sets += 1
    bounded = worst <= 2 + 1e-9
    exact = True
    for V in range(1, 9):
        E = np.eye(V)
        lam = barycentric_spanner(E, C=2).coefficients(E)
        exact &= bool(np.all((lam == 0) | (lam == 1)))
    ok = bounded and exact
    verdict(9, ok, f"max |coefficient| {worst:.6f} over {sets} indicator sets; standard-basis coefficients exactly 0/1: {exact}")
    assert ok


# 10 --------------------------------------------------------------------------


def test_dispersion_contrast(verdict):
    t0 = time.perf_counter()
    rows = tariff_dispersion_experiment(DispersionParams(w=0.1, trials=400), 1000, 1, 2, BoundedDensity.uniform(), seed=10)
    means = [mean for _, mean, _ in rows]
    ratios = [a / b for a, b in zip(means, means[1:]) if b > 0]
    linear = len(ratios) >= 4 and all(1.4 <= r <= 2.6 for r in ratios[:4])
    lot = lottery_dispersion_failure(1.0, 1.0, [1e-1, 1e-2, 1e-3], BoundedDensity.uniform(), 20_000, seed=11)
    floor_ok = all(r.estimate >= r.floor - 3 * r.standard_error for r in lot)
    elapsed = time.perf_counter() - t0
    ok = linear and floor_ok and elapsed < 120
    verdict(
        10,
        ok,
        f"split ratios {[round(r, 2) for r in ratios]}; lottery estimates {[round(r.estimate, 3) for r in lot]} vs floor {lot[0].floor:.3f}; {elapsed:.0f} s",
    )
    assert ok


# 11 --------------------------------------------------------------------------


def test_distributional_erm(verdict):
    t0 = time.perf_counter()
    eps, delta = 0.1, 0.1
    N = sample_complexity_tariff(eps, delta, 1.0, 2, 1)
    types = [UnitValuation((0, 0.3, 0.5), 1), UnitValuation((0, 0.6, 0.7), 1), UnitValuation((0, 0.2, 0.9), 1)]
    freq = np.array([0.5, 0.3, 0.2])
    params = tariff_erm_params(eps, 1.0, 2, 1)
    cover = tariff_cover_array(params)
    exact = freq @ np.array([cover.revenues(v) for v in types])
    best_cover = float(exact.max())
    dense = tariff_grid_optimum([v.values for v in types], freq, 0.01)
    rng = np.random.default_rng(111)
    wins = gap_ok = 0
    for _ in range(200):
        sample = [types[i] for i in rng.choice(3, size=N, p=freq)]
        res = erm_over_cover(sample, cover)
        true = float(exact[res.index])
        wins += true >= best_cover - eps
        gap_ok += true >= dense - eps - 2 * 2 * params.alpha * 1
    rate = wins / 200
    elapsed = time.perf_counter() - t0
    ok = rate >= (1 - delta) - 0.05 and elapsed < 300
    verdict(11, ok, f"N={N}, success {rate:.3f} (need >= {1 - delta - 0.05:.2f}), end-to-end gap held {gap_ok}/200; {elapsed:.0f} s")
    assert ok


# 12 --------------------------------------------------------------------------


def test_reproducibility(verdict, tmp_path):
    configs = {
        "wm": {"learner": "wm", "T": 500, "K": 2},
        "exp3": {"learner": "exp3", "T": 500, "K": 2, "adversary": {"kind": "iid", "density": {"name": "triangular_down"}}},
        "semibandit": {"learner": "semibandit", "T": 300, "K": 2},
        "lottery": {"learner": "exp3", "T": 300, "family": "lottery", "m": 2, "alpha": 0.3},
        "limited": {"learner": "limited", "T": 800, "K": 2, "types": [{"values": [0, 0.3, 0.5], "H": 1}, {"values": [0, 0.6, 0.7], "H": 1}]},
        "erm": {"learner": "erm", "K": 2, "N": 200, "epsilon": 0.2},
    }
    same = {}
    for name, raw in configs.items():
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}_{rep}.out"
            assert run_experiment(dict(raw, seed=12, output=str(out))) == 0
            outs.append(out.read_bytes())
        same[name] = outs[0] == outs[1]
    cli = [subprocess.run([sys.executable, "-m", "menu_forge", "bandit", "-T", "200", "--seed", "5"], capture_output=True, check=True).stdout for _ in range(2)]
    same["cli"] = cli[0] == cli[1]
    ok = all(same.values())
    verdict(12, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
