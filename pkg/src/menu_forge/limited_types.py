"""Learning against a known, finite set of buyer types.

Menus are points ``x`` of a box-shaped parameter space.  For every buyer
type, the indifference between two menu options is a hyperplane in that
space; cells of the resulting arrangement fix every type's choice, and
revenue is linear on each cell.  The learners only need one menu per cell
corner (the extended extreme points), plus a small set of exploration menus
chosen via a barycentric spanner of "which types buy this option" indicator
vectors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linprog

from .cover import check_cap
from .experts import ExpertState, RegretTrace, make_rng, sample_index, wm_update_full
from .mechanisms import (
    Choice,
    DemandKind,
    ItemValuation,
    LotteryChoice,
    LotteryEntry,
    LotteryMenu,
    LotteryMenuArray,
    Menu,
    NoPurchase,
    TariffMenu,
    TariffMenuArray,
    UnitValuation,
    Valuation,
    best_response,
    tariff_options,
)

GEOM_TOL = 1e-9


class BlockTooShort(ValueError):
    pass


# ---------------------------------------------------------------------------
# Types and parameter space


@dataclass(frozen=True)
class TypeSet:
    valuations: tuple[Valuation, ...]

    def __post_init__(self) -> None:
        vals = tuple(self.valuations)
        object.__setattr__(self, "valuations", vals)
        if not vals:
            raise ValueError("a type set needs at least one valuation")
        kinds = {type(v) for v in vals}
        if len(kinds) != 1:
            raise ValueError("type set mixes tariff and lottery buyers")
        if len({v.H for v in vals}) != 1:
            raise ValueError("all types must share H")
        dims = {v.K for v in vals} if self.family == "tariff" else {(v.m, v.demand_kind) for v in vals}
        if len(dims) != 1:
            raise ValueError("all types must share K (or m and demand kind)")

    @property
    def V(self) -> int:
        return len(self.valuations)

    @property
    def family(self) -> str:
        return "tariff" if isinstance(self.valuations[0], UnitValuation) else "lottery"

    @property
    def H(self) -> float:
        return self.valuations[0].H

    def __getitem__(self, i: int) -> Valuation:
        return self.valuations[i]

    def __len__(self) -> int:
        return self.V


def as_type_set(types) -> TypeSet:
    return types if isinstance(types, TypeSet) else TypeSet(tuple(types))


@dataclass(frozen=True)
class ParameterSpace:
    """Flat coordinates for menus of one family.

    Tariffs: ``(p1_1, p2_1, p1_2, p2_2, ...)`` in ``[0, H]``.
    Lotteries: ``(phi_1[0..m-1], price_1, phi_2[...], price_2, ...)`` with
    allocations in ``[0, 1]`` and prices in ``[0, mH]``.
    """

    family: str
    ell: int
    H: float
    K: int = 0
    m: int = 0
    unit_demand: bool = False

    @classmethod
    def for_types(cls, types: TypeSet, ell: int) -> "ParameterSpace":
        v = types[0]
        if types.family == "tariff":
            return cls("tariff", ell, types.H, K=v.K)
        return cls("lottery", ell, types.H, m=v.m, unit_demand=v.demand_kind is DemandKind.UNIT_DEMAND)

    @property
    def d(self) -> int:
        return 2 * self.ell if self.family == "tariff" else self.ell * (self.m + 1)

    @property
    def lower(self) -> NDArray[np.float64]:
        return np.zeros(self.d)

    @property
    def upper(self) -> NDArray[np.float64]:
        if self.family == "tariff":
            return np.full(self.d, self.H)
        block = np.r_[np.ones(self.m), self.m * self.H]
        return np.tile(block, self.ell)

    @property
    def options(self) -> list[Choice]:
        if self.family == "tariff":
            return tariff_options(self.ell, self.K)
        return [LotteryChoice(j) for j in range(self.ell + 1)]

    @property
    def n_options(self) -> int:
        """Size of the option set used by the block-count formula."""
        return self.ell * (self.K + 1) if self.family == "tariff" else self.ell + 1

    @property
    def revenue_range(self) -> float:
        """Bound B on |estimated revenue| used to scale the block learner."""
        if self.family == "tariff":
            return self.ell * self.K * self.H
        return self.m * self.H * (self.ell + 1)

    def extra_constraints(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Feasibility beyond the box (unit-demand lotteries: allocations sum to at most 1)."""
        if not (self.family == "lottery" and self.unit_demand):
            return np.zeros((0, self.d)), np.zeros(0)
        rows = []
        for j in range(self.ell):
            a = np.zeros(self.d)
            a[j * (self.m + 1) : j * (self.m + 1) + self.m] = 1.0
            rows.append(a)
        return np.array(rows), np.ones(self.ell)

    def feasible(self, X: NDArray[np.float64], tol: float = GEOM_TOL) -> NDArray[np.bool_]:
        X = np.atleast_2d(X)
        ok = np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=1)
        A, b = self.extra_constraints()
        if len(b):
            ok &= np.all(X @ A.T <= b + tol, axis=1)
        return ok

    def menu(self, x: NDArray[np.float64]) -> Menu:
        x = np.asarray(x, dtype=np.float64)
        if self.family == "tariff":
            return TariffMenu(tuple(map(tuple, x.reshape(self.ell, 2))))
        rows = x.reshape(self.ell, self.m + 1)
        return LotteryMenu(tuple(LotteryEntry(tuple(r[:-1]), r[-1]) for r in rows))

    def vector(self, menu: Menu) -> NDArray[np.float64]:
        if isinstance(menu, TariffMenu):
            return np.asarray(menu.tariffs, dtype=np.float64).reshape(-1)
        return np.asarray([list(e.phi) + [e.price] for e in menu.entries], dtype=np.float64).reshape(-1)

    def menu_array(self, X: NDArray[np.float64]):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        if self.family == "tariff":
            return TariffMenuArray(X.reshape(n, self.ell, 2), self.K)
        rows = X.reshape(n, self.ell, self.m + 1)
        return LotteryMenuArray(rows[:, :, :-1], rows[:, :, -1])

    def utility_forms(self, val: Valuation) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Rows ``(a, c)`` with utility of option o at ``x`` equal to ``a[o] @ x + c[o]``."""
        opts = self.options
        A = np.zeros((len(opts), self.d))
        c = np.zeros(len(opts))
        for o, opt in enumerate(opts):
            if self.family == "tariff":
                if isinstance(opt, NoPurchase):
                    continue
                A[o, 2 * (opt.j - 1)] = -1.0
                A[o, 2 * (opt.j - 1) + 1] = -float(opt.k)
                c[o] = val.values[opt.k]
            else:
                if opt.j == 0:
                    continue
                base = (opt.j - 1) * (self.m + 1)
                A[o, base : base + self.m] = val.item_values
                A[o, base + self.m] = -1.0
        return A, c


# ---------------------------------------------------------------------------
# Hyperplanes


@dataclass(frozen=True)
class Hyperplane:
    """``normal @ x == offset``; ``provenance`` lists every source merged into it."""

    normal: tuple[float, ...]
    offset: float
    provenance: tuple[tuple, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.provenance)

    @property
    def is_box(self) -> bool:
        return all(p[0] in ("box", "feasibility") for p in self.provenance)


def _canonical(normal: NDArray[np.float64], offset: float) -> tuple[tuple[float, ...], float]:
    scale = np.linalg.norm(normal)
    n, b = normal / scale, offset / scale
    lead = n[np.flatnonzero(np.abs(n) > 1e-12)[0]]
    if lead < 0:
        n, b = -n, -b
    return tuple(float(x) for x in n), float(b)


def build_hyperplanes(types, ell: int, include_box: bool = True) -> list[Hyperplane]:
    """Indifference hyperplanes of every type and option pair, plus the box facets.

    Hyperplanes equal up to scaling are merged; their provenance records
    each (type, option pair) or box facet that produced them.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    types = as_type_set(types)
    space = ParameterSpace.for_types(types, ell)
    opts = space.options
    merged: dict[tuple, list] = {}
    order: list[tuple] = []

    def add(normal: NDArray[np.float64], offset: float, prov: tuple) -> None:
        if np.all(np.abs(normal) <= 1e-15):
            return
        n, b = _canonical(normal, offset)
        key = (tuple(round(x, 12) for x in n), round(b, 12))
        if key not in merged:
            merged[key] = [n, b, []]
            order.append(key)
        merged[key][2].append(prov)

    for i, val in enumerate(types.valuations):
        A, c = space.utility_forms(val)
        for a, b in itertools.combinations(range(len(opts)), 2):
            add(A[a] - A[b], c[b] - c[a], ("type", i, opts[a], opts[b]))
    if include_box:
        lo, hi = space.lower, space.upper
        for j in range(space.d):
            e = np.zeros(space.d)
            e[j] = 1.0
            add(e, lo[j], ("box", j, "lower"))
            add(e, hi[j], ("box", j, "upper"))
        Af, bf = space.extra_constraints()
        for r in range(len(bf)):
            add(Af[r], bf[r], ("feasibility", r))
    return [Hyperplane(merged[k][0], merged[k][1], tuple(merged[k][2])) for k in order]


# ---------------------------------------------------------------------------
# Mappings and regions


@dataclass(frozen=True)
class Mapping:
    assignment: tuple[Choice, ...]

    def __len__(self) -> int:
        return len(self.assignment)


def mapping_of_menu(menu: Menu, types) -> Mapping:
    types = as_type_set(types)
    return Mapping(tuple(best_response(menu, v)[0] for v in types.valuations))


def _codes(space: ParameterSpace, types: TypeSet, X: NDArray[np.float64]) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
    """Chosen option columns and revenues, shape ``(V, n)``, for menus ``X``."""
    arr = space.menu_array(X)
    codes = np.empty((types.V, len(arr)), dtype=np.intp)
    revs = np.empty((types.V, len(arr)))
    for i, v in enumerate(types.valuations):
        revs[i], codes[i] = arr.evaluate(v)
    return codes, revs


@dataclass
class Region:
    """Menus on which every type makes the choice in ``mapping``.

    ``A @ x <= b`` describes the closure (box included); the set itself may be
    half-open because ties resolve in the seller's favor.
    """

    mapping: Mapping
    A: NDArray[np.float64]
    b: NDArray[np.float64]
    interior_point: NDArray[np.float64] | None = None

    @property
    def inequalities(self) -> list[tuple[NDArray[np.float64], float]]:
        return [(self.A[r], float(self.b[r])) for r in range(len(self.b))]

    def contains(self, x: NDArray[np.float64], tol: float = GEOM_TOL) -> bool:
        return bool(np.all(self.A @ x <= self.b + tol))

    def slack(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.min(self.b - np.atleast_2d(X) @ self.A.T, axis=1)

    def chebyshev_center(self) -> tuple[NDArray[np.float64], float] | None:
        """Center and radius of the largest inscribed ball, by linear programming."""
        norms = np.linalg.norm(self.A, axis=1)
        d = self.A.shape[1]
        res = linprog(
            np.r_[np.zeros(d), -1.0],
            A_ub=np.c_[self.A, norms],
            b_ub=self.b,
            bounds=[(None, None)] * d + [(0, None)],
            method="highs",
        )
        if res.status != 0:
            return None
        return res.x[:d], float(res.x[d])

    def sample(self, n: int, rng: np.random.Generator, burn: int = 50, thin: int = 5) -> NDArray[np.float64]:
        """Approximately uniform interior points by hit-and-run from the Chebyshev center."""
        cc = self.chebyshev_center()
        if cc is None or cc[1] <= 1e-12:
            raise ValueError("region has empty interior")
        x = cc[0].copy()
        out = np.empty((n, x.size))
        for step in range(burn + n * thin):
            u = rng.standard_normal(x.size)
            u /= np.linalg.norm(u)
            au = self.A @ u
            room = self.b - self.A @ x
            hi = np.min(room[au > 1e-15] / au[au > 1e-15], initial=np.inf)
            lo = np.max(room[au < -1e-15] / au[au < -1e-15], initial=-np.inf)
            x = x + rng.uniform(lo, hi) * (1 - 1e-9) * u
            k = step - burn
            if k >= 0 and k % thin == thin - 1:
                out[k // thin] = x
        return out


def region_for(mapping: Mapping, space: ParameterSpace, types: TypeSet) -> Region:
    opts = space.options
    idx = {o: k for k, o in enumerate(opts)}
    rows, rhs = [], []
    for val, choice in zip(types.valuations, mapping.assignment):
        A, c = space.utility_forms(val)
        o = idx[choice]
        for other in range(len(opts)):
            if other == o:
                continue
            diff = A[other] - A[o]
            if np.all(diff == 0) and c[o] - c[other] >= 0:
                continue
            rows.append(diff)
            rhs.append(c[o] - c[other])
    for j in range(space.d):
        e = np.zeros(space.d)
        e[j] = 1.0
        rows += [e, -e]
        rhs += [space.upper[j], -space.lower[j]]
    Af, bf = space.extra_constraints()
    rows += list(Af)
    rhs += list(bf)
    return Region(mapping, np.array(rows), np.array(rhs, dtype=np.float64))


def certify_region(region: Region, space: ParameterSpace, rng: np.random.Generator, draws: int = 10_000) -> NDArray[np.float64] | None:
    """An interior point of the region: rejection sampling first, then linear programming."""
    X = rng.uniform(space.lower, space.upper, size=(draws, space.d))
    ok = region.slack(X) > 1e-12
    if ok.any():
        return X[np.argmax(ok)]
    cc = region.chebyshev_center()
    if cc is not None and cc[1] > 1e-12:
        return cc[0]
    return None


# ---------------------------------------------------------------------------
# Extreme points


@dataclass
class ExtremePointSet:
    space: ParameterSpace
    types: TypeSet
    hyperplanes: list[Hyperplane]
    vertices: NDArray[np.float64]
    points: NDArray[np.float64]
    vertex_of: NDArray[np.intp]
    mappings: list[Mapping]
    regions: dict[Mapping, Region] = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return self.points.shape[0]

    def menus(self) -> list[Menu]:
        return [self.space.menu(x) for x in self.points]

    def pairs(self) -> list[tuple[Menu, Region]]:
        return [(self.space.menu(x), self.regions[mu]) for x, mu in zip(self.points, self.mappings)]

    def menu_array(self):
        return self.space.menu_array(self.points)


def _unique_rows(X: NDArray[np.float64], tol: float = GEOM_TOL) -> NDArray[np.intp]:
    """Indices of the first occurrence of each row, rows equal within ``tol`` merged."""
    if len(X) == 0:
        return np.zeros(0, dtype=np.intp)
    keys = np.round(X / tol).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def arrangement_vertices(hyperplanes: Sequence[Hyperplane], space: ParameterSpace, cap: int | None = None) -> NDArray[np.float64]:
    """All feasible points where ``d`` hyperplanes with independent normals meet."""
    N = np.array([h.normal for h in hyperplanes], dtype=np.float64)
    b = np.array([h.offset for h in hyperplanes], dtype=np.float64)
    d = space.d
    check_cap(math.comb(len(hyperplanes), d), "hyperplane subsets", cap)
    found = []
    combos = itertools.combinations(range(len(hyperplanes)), d)
    while True:
        chunk = np.array(list(itertools.islice(combos, 100_000)), dtype=np.intp)
        if chunk.size == 0:
            break
        M = N[chunk]
        ok = np.abs(np.linalg.det(M)) > 1e-10
        if not ok.any():
            continue
        X = np.linalg.solve(M[ok], b[chunk[ok]][..., None])[..., 0]
        found.append(X[space.feasible(X)])
    if not found:
        return np.zeros((0, d))
    X = np.concatenate(found)
    X = np.clip(X, space.lower, space.upper)
    return X[_unique_rows(X)]


def extreme_point_set(types, ell: int, eps: float, seed: int = 0, samples: int | None = None, cap: int | None = None) -> ExtremePointSet:
    """The extended extreme points: each vertex, plus for each cell touching it a menu
    inside that cell at L1 distance at most ``eps`` from the vertex."""
    types = as_type_set(types)
    space = ParameterSpace.for_types(types, ell)
    hps = build_hyperplanes(types, ell)
    verts = arrangement_vertices(hps, space, cap)
    rng = make_rng(seed)
    N = np.array([h.normal for h in hps])
    b = np.array([h.offset for h in hps])
    d = space.d
    n_samples = samples or min(4096, 256 * 2**d)
    regions: dict[Mapping, Region] = {}
    pts: list[NDArray[np.float64]] = []
    owners: list[int] = []
    maps: list[Mapping] = []
    opts = space.options

    def mapping_from(col: NDArray[np.intp]) -> Mapping:
        return Mapping(tuple(opts[c] for c in col))

    for vi, x in enumerate(verts):
        dist = np.abs(N @ x - b)
        far = dist[dist > GEOM_TOL]
        r = min(eps, 0.5 * float(far.min())) if far.size else eps
        u = rng.standard_normal((n_samples, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        S = x + u * (r * rng.uniform(0.25, 1.0, size=(n_samples, 1)))
        S = S[space.feasible(S, tol=0.0)]
        vcode, _ = _codes(space, types, x[None, :])
        groups: dict[tuple, list[int]] = {tuple(vcode[:, 0]): []}
        if len(S):
            codes, _ = _codes(space, types, S)
            for s, col in enumerate(codes.T):
                groups.setdefault(tuple(col), []).append(s)
        # the vertex itself belongs to R (its own cell under the tie rule), then one
        # point per adjacent cell
        reps = [(x, tuple(vcode[:, 0]))]
        reps += [(_step_into(space, types, x, S[m[:100]], np.array(k), eps), k) for k, m in groups.items() if m]
        for rep, key in reps:
            mu = mapping_from(np.array(key))
            if mu not in regions:
                regions[mu] = region_for(mu, space, types)
            pts.append(rep)
            owners.append(vi)
            maps.append(mu)
    P = np.array(pts) if pts else np.zeros((0, d))
    keep = _unique_rows(P)
    for mu, reg in regions.items():
        for k in keep:
            if maps[k] == mu and not np.array_equal(P[k], verts[owners[k]]):
                reg.interior_point = P[k]
                break
    return ExtremePointSet(
        space=space,
        types=types,
        hyperplanes=hps,
        vertices=verts,
        points=P[keep],
        vertex_of=np.asarray(owners, dtype=np.intp)[keep],
        mappings=[maps[k] for k in keep],
        regions=regions,
    )


def _step_into(space: ParameterSpace, types: TypeSet, x, members, key, eps: float) -> NDArray[np.float64]:
    """Move from vertex ``x`` toward the mean of ``members`` by L1 distance ``eps``,
    shortening the step until the point is certified to lie in the cell ``key``."""
    c = members.mean(axis=0)
    direction = c - x
    n1 = float(np.abs(direction).sum())
    cands = [eps / n1 * 0.5**h for h in range(60)] if n1 > 0 else []
    X = np.array([x + t * direction for t in cands] + [c, members[0]])
    ok = space.feasible(X, tol=0.0)
    codes, _ = _codes(space, types, X)
    ok &= np.all(codes == key[:, None], axis=0)
    return X[int(np.argmax(ok))] if ok.any() else members[0]


def enumerate_extreme_points(types, ell: int, eps: float, seed: int = 0) -> list[tuple[Menu, Region]]:
    return extreme_point_set(types, ell, eps, seed).pairs()


def sequence_revenues(space: ParameterSpace, types: TypeSet, X: NDArray[np.float64], sequence: Sequence[int]) -> NDArray[np.float64]:
    """Total revenue of each menu in ``X`` over a sequence of type indices."""
    counts = np.bincount(np.asarray(sequence, dtype=np.intp), minlength=types.V).astype(np.float64)
    total = np.zeros(len(X))
    for start in range(0, len(X), 200_000):
        _, revs = _codes(space, types, X[start : start + 200_000])
        total[start : start + 200_000] = counts @ revs
    return total


def dense_grid(space: ParameterSpace, pitch: float) -> NDArray[np.float64]:
    axes = [np.linspace(lo, hi, int(math.ceil((hi - lo) / pitch - 1e-9)) + 1) for lo, hi in zip(space.lower, space.upper)]
    check_cap(math.prod(len(a) for a in axes), "dense grid")
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, space.d)
    return G[space.feasible(G, tol=0.0)]


def corner_loss_bound_check(types, ell: int, eps: float, sequence: Sequence[int], points: ExtremePointSet | None = None, pitch: float | None = None) -> tuple[float, float]:
    """Best revenue over the extended extreme points vs. a dense-grid stand-in for the optimum."""
    types = as_type_set(types)
    ext = points or extreme_point_set(types, ell, eps)
    best_corner = float(sequence_revenues(ext.space, types, ext.points, sequence).max())
    grid = dense_grid(ext.space, pitch or eps / 4)
    best_grid = float(sequence_revenues(ext.space, types, grid, sequence).max())
    return best_corner, best_grid


def corner_loss_slack(space: ParameterSpace, eps: float, T: int) -> float:
    return 2 * space.K * eps * T if space.family == "tariff" else eps * T


# ---------------------------------------------------------------------------
# Indicators and barycentric spanner


@dataclass(frozen=True)
class Indicator:
    vector: tuple[int, ...]
    mapping: Mapping
    option: Choice


def build_indicator_set(regions, V: int | None = None) -> list[Indicator]:
    """For each mapping and each option it uses, the 0/1 vector of types choosing it."""
    out: list[Indicator] = []
    seen: set[tuple[int, ...]] = set()
    for reg in regions:
        mu = reg.mapping if isinstance(reg, Region) else reg
        for opt in dict.fromkeys(mu.assignment):
            vec = tuple(int(c == opt) for c in mu.assignment)
            if vec not in seen:
                seen.add(vec)
                out.append(Indicator(vec, mu, opt))
    return out


@dataclass
class SpannerBasis:
    vectors: NDArray[np.float64]
    indices: list[int]
    approximation_C: float
    _Q: NDArray[np.float64] = field(repr=False)
    _B_inv: NDArray[np.float64] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.indices)

    def coefficients(self, vectors) -> NDArray[np.float64]:
        """Coefficients expressing each vector (rows) in the basis; vectors must lie in its span."""
        Y = np.atleast_2d(np.asarray(vectors, dtype=np.float64)) @ self._Q
        return Y @ self._B_inv.T


def barycentric_spanner(vectors, C: float = 2.0) -> SpannerBasis:
    """Determinant-swap construction of a C-approximate barycentric spanner."""
    if C < 1:
        raise ValueError("C must be at least 1")
    X = np.asarray([getattr(v, "vector", v) for v in vectors], dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a nonempty set of vectors")
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(s > 1e-9 * max(s[0], 1.0)))
    if r == 0:
        raise ValueError("all vectors are zero")
    Q = Vt[:r].T
    Y = X @ Q  # coordinates inside the span
    B = np.eye(r)
    chosen = [-1] * r
    for i in range(r):
        dets = [abs(np.linalg.det(np.column_stack([Y[k] if c == i else B[:, c] for c in range(r)]))) for k in range(len(Y))]
        k = int(np.argmax(dets))
        B[:, i] = Y[k]
        chosen[i] = k
    while True:
        lam = np.linalg.solve(B, Y.T)
        i, k = np.unravel_index(np.argmax(np.abs(lam)), lam.shape)
        if abs(lam[i, k]) <= C:
            break
        B[:, i] = Y[k]
        chosen[i] = int(k)
    return SpannerBasis(X[chosen], chosen, C, Q, np.linalg.inv(B))


# ---------------------------------------------------------------------------
# Block-structured bandit learner


@dataclass
class LimitedModel:
    """Everything the block learner precomputes from the type set."""

    ext: ExtremePointSet
    codes: NDArray[np.intp]  # (V, n) option chosen by each type at each extreme point
    revs: NDArray[np.float64]  # (V, n) revenue from each type at each extreme point
    indicators: list[Indicator]
    spanner: SpannerBasis
    explore_point: NDArray[np.intp]  # extreme point played to explore spanner vector i
    explore_option: NDArray[np.intp]  # option whose purchase is recorded at that point
    estimator: NDArray[np.float64]  # (n, r): u_hat = estimator @ f_hat

    @property
    def n(self) -> int:
        return self.revs.shape[1]

    @property
    def V(self) -> int:
        return self.revs.shape[0]

    @property
    def bound(self) -> float:
        return self.ext.space.revenue_range * self.V

    def sample_f_hat(self, block_types: Sequence[int], rng: np.random.Generator) -> NDArray[np.float64]:
        """Explore each spanner vector once, in random order at random distinct slots."""
        L, r = len(block_types), self.spanner.size
        slots = rng.choice(L, size=r, replace=False)
        perm = rng.permutation(r)
        f = np.zeros(r)
        for slot, s in zip(slots, perm):
            f[s] = float(self.codes[block_types[slot], self.explore_point[s]] == self.explore_option[s])
        return f

    def u_hat(self, f_hat: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.estimator @ f_hat

    def exact_u(self, block_types: Sequence[int]) -> NDArray[np.float64]:
        """Average per-round revenue of every extreme point over the block."""
        return self.revs[np.asarray(block_types)].mean(axis=0)

    def exact_f(self, block_types: Sequence[int]) -> NDArray[np.float64]:
        """Number of block rounds whose buyer belongs to each spanner vector's type set."""
        return self.spanner.vectors[:, np.asarray(block_types)].sum(axis=1)


def prepare_limited(types, ell: int, eps: float, C: float = 2.0, seed: int = 0) -> LimitedModel:
    types = as_type_set(types)
    ext = extreme_point_set(types, ell, eps, seed=seed)
    codes, revs = _codes(ext.space, types, ext.points)
    # first extreme point realising each indicator vector gives its exploration recipe
    recipe: dict[tuple[int, ...], tuple[int, int]] = {}
    for p in range(codes.shape[1]):
        col = codes[:, p]
        for o in dict.fromkeys(col.tolist()):
            recipe.setdefault(tuple(int(c == o) for c in col), (p, o))
    indicators = build_indicator_set(dict.fromkeys(ext.mappings))
    spanner = barycentric_spanner(indicators, C)
    explore = [recipe[tuple(int(x) for x in spanner.vectors[i])] for i in range(spanner.size)]
    option_prices = ext.space.menu_array(ext.points).option_prices
    est = np.zeros((codes.shape[1], spanner.size))
    for p in range(codes.shape[1]):
        col = codes[:, p]
        for o in dict.fromkeys(col.tolist()):
            vec = (col == o).astype(np.float64)
            est[p] += option_prices[p, o] * spanner.coefficients(vec)[0]
    return LimitedModel(
        ext=ext,
        codes=codes,
        revs=revs,
        indicators=indicators,
        spanner=spanner,
        explore_point=np.array([e[0] for e in explore], dtype=np.intp),
        explore_option=np.array([e[1] for e in explore], dtype=np.intp),
        estimator=est,
    )


def block_count(T: int, n_options: int, V: int) -> int:
    z = (T**2 * n_options**2 * V * math.log(n_options * V)) ** (1.0 / 3.0)
    return max(1, int(math.floor(z + 0.5)))


@dataclass
class LimitedResult:
    trace: RegretTrace
    model: LimitedModel
    Z: int
    block_length: int
    beta: float
    max_abs_u_hat: float

    def summary(self) -> dict:
        return {
            "extreme_points": self.model.n,
            "indicators": len(self.model.indicators),
            "spanner_size": self.model.spanner.size,
            "Z": self.Z,
            "block_length": self.block_length,
            "beta": self.beta,
            "max_abs_u_hat": self.max_abs_u_hat,
        }


def run_limited_bandit(
    types,
    ell: int,
    T: int,
    eps: float,
    seed,
    type_sequence: Sequence[int] | None = None,
    C: float = 2.0,
    beta: float | None = None,
    model: LimitedModel | None = None,
) -> LimitedResult:
    """Explore/exploit in blocks; exploit by weighted majority fed with estimated revenues.

    Without ``type_sequence``, buyer types arrive i.i.d. uniformly.
    """
    types = as_type_set(types)
    model = model or prepare_limited(types, ell, eps, C, seed=0)
    space = model.ext.space
    rng_types, rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0]), make_rng(np.random.SeedSequence(seed).spawn(2)[1])
    if type_sequence is None:
        type_sequence = rng_types.integers(0, types.V, size=T)
    seq = np.asarray(type_sequence, dtype=np.intp)[:T]
    if len(seq) < T:
        raise ValueError(f"type sequence has {len(seq)} rounds, need {T}")
    Z = block_count(T, space.n_options, types.V)
    if T < Z * types.V:
        raise BlockTooShort(f"T={T} is shorter than Z*V = {Z}*{types.V}")
    L = T // Z
    B = model.bound
    if beta is None:
        # minimises (beta/2)*OPT + B*ln(n)/beta with OPT at most Z blocks of full revenue
        top = space.H * (space.m if space.family == "lottery" else 1)
        beta = min(1.0, math.sqrt(2 * B * math.log(max(model.n, 2)) / (Z * top)))
    state = ExpertState.fresh(model.n, beta, B, gain_floor=-B)
    played = np.empty(T, dtype=np.intp)
    max_abs = 0.0
    for tau in range(Z):
        t0 = tau * L
        cdf = np.cumsum(state.probabilities())
        block = seq[t0 : t0 + L]
        draws = np.minimum(np.searchsorted(cdf, rng.random(L) * cdf[-1], side="right"), model.n - 1)
        slots = rng.choice(L, size=model.spanner.size, replace=False)
        perm = rng.permutation(model.spanner.size)
        f = np.zeros(model.spanner.size)
        for slot, s in zip(slots, perm):
            draws[slot] = model.explore_point[s]
            f[s] = float(model.codes[block[slot], model.explore_point[s]] == model.explore_option[s])
        played[t0 : t0 + L] = draws
        u = model.u_hat(f)
        max_abs = max(max_abs, float(np.abs(u).max()))
        wm_update_full(state, u)
    tail = T - Z * L
    if tail:
        played[Z * L :] = [sample_index(state.probabilities(), rng) for _ in range(tail)]
    trace = _trace_from(model.revs, seq, played, B, [model.ext.space.options[model.codes[seq[t], played[t]]] for t in range(T)])
    return LimitedResult(trace, model, Z, L, beta, max_abs)


def _trace_from(revs: NDArray[np.float64], seq: NDArray[np.intp], played: NDArray[np.intp], cap: float, choices: list) -> RegretTrace:
    per_round = revs[seq]  # (T, n)
    totals = np.cumsum(per_round, axis=0)
    return RegretTrace(
        experts=played,
        revenues=per_round[np.arange(len(seq)), played],
        best_cum=totals.max(axis=1),
        best_expert=int(np.argmax(totals[-1])) if len(seq) else 0,
        payoff_cap=cap,
        choices=choices,
    )
