"""Caching on a square torus: replication densities, power-of-4 rounding,
canonical placement, link-load evaluation and scaling-slope experiments."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .popularity import PowerLaw

__all__ = [
    "GridSpec",
    "DensitySolution",
    "DensityError",
    "solve_density",
    "density_cost",
    "round_density",
    "PlacementGrid",
    "PlacementError",
    "canonical_placement",
    "LinkLoad",
    "evaluate_link_load",
    "ScalingFit",
    "loglog_fit",
    "scaling_experiment",
    "REGIMES",
]


class DensityError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    k: int
    n_catalog: int
    m_cache: float
    pop: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pop, dtype=float)
        object.__setattr__(self, "pop", p)
        if p.size != self.n_catalog:
            raise ValueError("popularity length differs from the catalog size")
        if np.any(np.diff(p) > 1e-15):
            raise ValueError("popularity must be sorted non-increasing")
        if not self.m_cache < self.n_catalog <= self.m_cache * self.k:
            raise ValueError("need M < N <= M K")

    @property
    def side(self) -> int:
        s = math.isqrt(self.k)
        if s * s != self.k:
            raise ValueError("K must be a perfect square")
        return s

    @classmethod
    def zipf(cls, tau: float, k: int, n: int, m: float) -> "GridSpec":
        return cls(k, n, m, PowerLaw(tau, n).pmf())


@dataclass
class DensitySolution:
    d: np.ndarray
    l: int
    r: int
    cost: float
    c: float


def density_cost(d, pop) -> float:
    """``C = sum (1/sqrt(d_n) - 1) p_n``."""
    d = np.asarray(d, dtype=float)
    return math.fsum((1.0 / np.sqrt(d) - 1.0) * np.asarray(pop, dtype=float))


def _fill(c: float, q: np.ndarray, k: int) -> np.ndarray:
    return np.clip(c * q, 1.0 / k, 1.0)


def solve_density(spec: GridSpec) -> DensitySolution:
    """Minimize ``sum p_n / sqrt(d_n)`` over ``1/K <= d_n <= 1``, ``sum d_n <= M``.

    The optimum is ``d_n = clip(c p_n^(2/3), 1/K, 1)``: ones on ``n < l``,
    the floor on ``n >= r`` (1-based) and the power law in between. The
    multiplier ``c`` is located by binary search over the sorted
    breakpoints ``p_n^(-2/3)`` and ``p_n^(-2/3)/K``, which fixes ``(l, r)``;
    ``c`` is then recomputed in closed form from the partition.
    """
    p, k, m, n = spec.pop, spec.k, float(spec.m_cache), spec.n_catalog
    q = p ** (2.0 / 3.0)
    if n <= m:
        d = np.ones(n)
        return DensitySolution(d, n + 1, n + 1, density_cost(d, p), math.inf)
    pos = q > 0
    bps = np.unique(np.concatenate((1.0 / q[pos], 1.0 / (k * q[pos]))))
    total = lambda c: _fill(c, q, k).sum()  # noqa: E731
    if total(bps[0]) > m + 1e-12:
        # even the smallest breakpoint overshoots: everything sits on the floor
        if n / k > m + 1e-12:
            raise DensityError("no feasible density: N/K exceeds M")
        lo_c, hi_c = 0.0, bps[0]
    else:
        lo, hi = 0, bps.size - 1
        if total(bps[hi]) <= m:
            d = _fill(bps[hi], q, k)
            l = int(np.sum(d >= 1.0)) + 1
            return DensitySolution(d, l, l, density_cost(d, p), float(bps[hi]))
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if total(bps[mid]) <= m:
                lo = mid
            else:
                hi = mid
        lo_c, hi_c = bps[lo], bps[hi]
    # inside (lo_c, hi_c) each coordinate is either clamped or proportional
    probe = 0.5 * (lo_c + hi_c)
    raw = probe * q
    top = raw >= 1.0
    floor = raw <= 1.0 / k
    mid = ~top & ~floor
    l = int(top.sum()) + 1
    r = n + 1 - int(floor.sum())
    qs = float(q[mid].sum())
    if qs <= 0:
        raise DensityError("degenerate partition with an empty middle set")
    c = (m - (l - 1) - (n - r + 1) / k) / qs
    d = np.where(top, 1.0, np.where(floor, 1.0 / k, c * q))
    if mid.any() and (d[mid].max() > 1.0 + 1e-9 or d[mid].min() < 1.0 / k - 1e-12):
        raise DensityError("partition search produced inconsistent densities")
    return DensitySolution(d, l, r, density_cost(d, p), float(c))


def round_density(d, k: int) -> np.ndarray:
    """Round down to powers of 4: ``max{4^-i <= d_n, i = 0..log4 K}``.

    Values within 1e-9 relative below a power count as that power, so
    solver output such as 0.2499999999 is not demoted a whole level.
    """
    nu = round(math.log(k, 4))
    if 4 ** nu != k:
        raise ValueError("K must be a power of 4")
    d = np.asarray(d, dtype=float)
    if np.any(d > 1.0 + 1e-12):
        raise ValueError("densities above 1")
    with np.errstate(divide="ignore"):
        i = np.ceil(-np.log(d) / math.log(4.0) - 1e-9)
    i = np.maximum(i, 0)
    if np.any(i > nu):
        warnings.warn(f"{int(np.sum(i > nu))} densities below 1/K clamped to 1/K", RuntimeWarning)
        i = np.minimum(i, nu)
    return 4.0 ** (-i)


@dataclass
class PlacementGrid:
    side: int
    replicas: list  # replicas[n] is a sorted int array of node ids (row * side + col)

    @property
    def k(self) -> int:
        return self.side * self.side

    def loads(self) -> np.ndarray:
        load = np.zeros(self.k, dtype=int)
        for nodes in self.replicas:
            load[nodes] += 1
        return load

    def node_contents(self) -> list[list[int]]:
        out = [[] for _ in range(self.k)]
        for n, nodes in enumerate(self.replicas):
            for v in nodes:
                out[v].append(n)
        return out


def canonical_placement(d_round, spec: GridSpec) -> PlacementGrid:
    """Diagonal subgrid tiling of power-of-4 densities.

    Content classes are handled from dense to sparse. A content of density
    ``4^-i`` is placed in the aligned ``2^i x 2^i`` subgrid, scanning
    diagonals ``(row, col) = ((j + t) mod s, t)`` for ``j = 0, 1, ...`` and
    taking the first node whose load is below the running maximum (or the
    first node if all loads are equal). The choice is then tiled over the
    torus.
    """
    side = spec.side
    d = np.asarray(d_round, dtype=float)
    if d.size != spec.n_catalog:
        raise ValueError("density vector length differs from the catalog size")
    level = np.rint(-np.log(d) / math.log(4.0)).astype(int)
    if not np.allclose(4.0 ** (-level), d):
        raise ValueError("densities must be powers of 4")
    if np.any(2 ** level > side):
        raise ValueError("density below 1/K")
    if d.sum() > spec.m_cache + 1e-9:
        raise ValueError("rounded densities exceed the cache budget")
    load = np.zeros((side, side), dtype=int)
    replicas: list = [None] * d.size
    for n in sorted(range(d.size), key=lambda j: (level[j], j)):
        s = 2 ** int(level[n])
        # every earlier class has a period dividing s, so the s x s block
        # repeats across the torus
        block = load[:s, :s]
        peak = block.max()
        t = np.arange(s)
        pick = None
        for j in range(s):
            rows = (j + t) % s
            open_ = np.flatnonzero(block[rows, t] < peak)
            if open_.size:
                pick = (int(rows[open_[0]]), int(open_[0]))
                break
        if pick is None:
            pick = (0, 0)
        rr = np.arange(pick[0], side, s)
        cc = np.arange(pick[1], side, s)
        load[np.ix_(rr, cc)] += 1
        replicas[n] = np.sort((rr[:, None] * side + cc[None, :]).ravel())
    if load.max() > spec.m_cache:
        raise PlacementError(f"node load {load.max()} exceeds capacity {spec.m_cache}")
    return PlacementGrid(side, replicas)


@dataclass
class LinkLoad:
    max_load: float
    avg_load: float
    avg_hops: float
    links: np.ndarray  # (side, side, 2): load on the right and down link of each node


def _torus_offset(a: np.ndarray, b: np.ndarray, side: int) -> np.ndarray:
    """Signed shortest step from a to b; half-way ties go in the + direction."""
    delta = (b - a) % side
    return np.where(delta <= side // 2, delta, delta - side)


def evaluate_link_load(pl: PlacementGrid, pop) -> LinkLoad:
    """Unit request rate per node, split by ``pop``; nearest replica in
    toroidal Manhattan distance (ties to the smallest node id), routed
    along the row first and then along the column.

    Links are undirected; ``links[r, c, 0]`` joins (r, c) and (r, c+1),
    ``links[r, c, 1]`` joins (r, c) and (r+1, c).
    """
    side = pl.side
    p = np.asarray(pop, dtype=float)
    links = np.zeros((side, side, 2))
    nodes = np.arange(side * side)
    src_r, src_c = nodes // side, nodes % side
    hops = 0.0
    half = side // 2
    for n, reps in enumerate(pl.replicas):
        if reps is None or len(reps) == 0:
            raise PlacementError(f"content {n} is not placed")
        if p[n] == 0 or len(reps) == pl.k:
            continue
        rr, rc = reps // side, reps % side
        dr = _torus_offset(src_r[:, None], rr[None, :], side)
        dc = _torus_offset(src_c[:, None], rc[None, :], side)
        dist = np.abs(dr) + np.abs(dc)
        best = np.argmin(dist, axis=1)  # replicas are sorted, so ties go to the smallest id
        dr, dc = dr[nodes, best], dc[nodes, best]
        hops += p[n] * dist[nodes, best].sum()
        steps = np.arange(1, half + 1)
        # horizontal leg along the source row
        take = steps[None, :] <= np.abs(dc)[:, None]
        sgn = np.sign(dc)[:, None]
        col = np.where(sgn > 0, src_c[:, None] + steps - 1, src_c[:, None] - steps) % side
        row = np.broadcast_to(src_r[:, None], col.shape)
        np.add.at(links[:, :, 0], (row[take], col[take]), p[n])
        # vertical leg along the destination column
        dest_c = (src_c + dc) % side
        take = steps[None, :] <= np.abs(dr)[:, None]
        sgn = np.sign(dr)[:, None]
        row = np.where(sgn > 0, src_r[:, None] + steps - 1, src_r[:, None] - steps) % side
        col = np.broadcast_to(dest_c[:, None], row.shape)
        np.add.at(links[:, :, 1], (row[take], col[take]), p[n])
    n_links = 2 * pl.k
    return LinkLoad(float(links.max()), float(links.sum() / n_links), float(hops / pl.k), links)


@dataclass
class ScalingFit:
    regime: str
    tau: float
    drivers: np.ndarray
    costs: np.ndarray
    slope: float
    intercept: float
    r2: float
    rows: list


def loglog_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: slope, intercept, R^2."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    a = np.vstack((lx, np.ones_like(lx))).T
    coef, *_ = np.linalg.lstsq(a, ly, rcond=None)
    pred = a @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


REGIMES = ("k-then-n", "n-theta-k", "scaling-m")


def _grid_for(regime: str, size: int, m: float, m_factor: float, k: int | None):
    if regime == "k-then-n":
        # K far beyond any density the solution needs
        kk = k or 4 ** math.ceil(math.log(float(size) ** 3, 4))
        return kk, size, m
    if regime == "n-theta-k":
        # size is K; N sits at a fixed fraction of M K
        return size, max(int(m * size * m_factor), int(m) + 1), m
    if regime == "scaling-m":
        kk = k or 4096
        if m_factor < 1:
            raise ValueError("scaling-m needs m_factor >= 1 so that N <= M K")
        return kk, size, float(math.ceil(size / kk) * m_factor)
    raise ValueError(f"unknown regime {regime!r}")


def scaling_experiment(regime: str, tau: float, sizes, m: float = 2.0,
                       m_factor: float = 0.5, k: int | None = None) -> ScalingFit:
    """Fit ``log C`` against the log of the driver (N, or K for ``n-theta-k``)."""
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 3:
        raise ValueError("need at least 3 sizes")
    rows, costs = [], []
    for s in sizes:
        kk, n, mm = _grid_for(regime, s, m, m_factor, k)
        sol = solve_density(GridSpec.zipf(tau, kk, n, mm))
        rows.append({"K": kk, "N": n, "M": mm, "C": sol.cost, "l": sol.l, "r": sol.r})
        costs.append(sol.cost)
    drivers = np.array(sizes, dtype=float)
    slope, icpt, r2 = loglog_fit(drivers, costs)
    return ScalingFit(regime, tau, drivers, np.array(costs), slope, icpt, r2, rows)
