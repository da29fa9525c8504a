"""Online caching with routing on bipartite networks: the routing LP solved by
inspection, its dual supergradient, projected supergradient ascent (BSCA),
the static hindsight benchmark and reactive LRU-style baselines.

Utilities are content-independent: ``util[c, l]`` is the gain of serving a
request from location ``l`` at cache ``c`` (0 when ``c`` is unreachable).
The MBS has utility 0 and is implicit. Requests carry 1-based content ids
and 0-based locations, as in :class:`~cachekit.traces.Trace`.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .online import RegretTrace, project_capped_simplex
from .traces import Trace

__all__ = [
    "BipartiteCaching",
    "Routing",
    "route_by_inspection",
    "request_utility",
    "bsca_step",
    "step_size",
    "run_bsca",
    "StaticSolution",
    "best_static_bipartite",
    "mlru_baseline",
    "lazy_lru_baseline",
    "bsca_regret_bound",
    "varying_step_bound",
    "scenario_network",
]


@dataclass
class BipartiteCaching:
    util: np.ndarray
    capacity: np.ndarray
    n_files: int

    def __post_init__(self):
        self.util = np.atleast_2d(np.asarray(self.util, dtype=float))
        self.capacity = np.broadcast_to(np.asarray(self.capacity, dtype=int),
                                        (self.util.shape[0],)).copy()
        if np.any(self.util < 0):
            raise ValueError("utilities must be nonnegative")

    @property
    def n_caches(self) -> int:
        return self.util.shape[0]

    @property
    def n_locations(self) -> int:
        return self.util.shape[1]

    @property
    def degree(self) -> int:
        """Largest number of caches reachable from one location."""
        return int((self.util > 0).sum(axis=0).max())

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(min(2.0 * b, self.n_files) for b in self.capacity))

    @property
    def lipschitz(self) -> float:
        return float(self.util.max()) * math.sqrt(self.degree)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.n_caches, self.n_files))


@dataclass
class Routing:
    f: np.ndarray
    utility: float
    alpha: float
    beta: np.ndarray


def route_by_inspection(y_col, d) -> Routing:
    """Fill the request from the best caches down, ``f_v = min(rest, y_v)``.

    ``y_col[c]`` is cache c's fraction of the requested file, ``d[c]`` its
    utility (0 for unreachable). The duals come from complementary
    slackness: ``alpha`` is the utility of the cache where the fill reaches 1
    (0 if it never does) and ``beta_v = max(d_v - alpha, 0)`` on reachable
    caches.
    """
    y_col = np.asarray(y_col, dtype=float)
    d = np.asarray(d, dtype=float)
    f = np.zeros_like(d)
    rest = 1.0
    alpha = 0.0
    for c in np.argsort(-d, kind="stable"):
        if d[c] <= 0:
            break
        take = min(rest, y_col[c])
        f[c] = take
        rest -= take
        if rest <= 1e-15:
            alpha = float(d[c])
            rest = 0.0
            break
    beta = np.where(d > 0, np.maximum(d - alpha, 0.0), 0.0)
    return Routing(f, float(np.dot(d, f)), alpha, beta)


def request_utility(y_col, d) -> float:
    return route_by_inspection(y_col, d).utility


def _project_rows(y: np.ndarray, rows, capacity) -> None:
    for c in rows:
        row = y[c]
        if row.min() >= 0.0 and row.max() <= 1.0 and row.sum() <= capacity[c]:
            continue
        y[c] = project_capped_simplex(row, capacity[c])


def bsca_step(y, request: int, location: int, net: BipartiteCaching, eta: float,
              prefetch_costs=None, y_prev=None) -> np.ndarray:
    """One supergradient step for a request (1-based content, 0-based location).

    With ``prefetch_costs`` (``N x C``) and the previous state ``y_prev``,
    the cost ``c[n, v]`` is subtracted on caches whose share of the file
    grew in the last update.
    """
    y = np.array(y, dtype=float)
    n = request - 1
    d = net.util[:, location]
    g = route_by_inspection(y[:, n], d).beta
    if prefetch_costs is not None and y_prev is not None:
        grew = y[:, n] - np.asarray(y_prev)[:, n] > 0
        g = g - np.where(grew, np.asarray(prefetch_costs)[n], 0.0)
    touched = np.flatnonzero(g != 0)
    y[touched, n] += eta * g[touched]
    _project_rows(y, touched, net.capacity)
    return y


def step_size(net: BipartiteCaching, horizon: int) -> float:
    """Horizon-tuned step ``Delta / (K sqrt(T))``."""
    return net.diameter / (net.lipschitz * math.sqrt(horizon))


def bsca_regret_bound(net: BipartiteCaching, horizon: int) -> float:
    """``d_(1) sqrt(2 deg V_c B T)`` with ``B = max_v B_v``."""
    return float(net.util.max()) * math.sqrt(2 * net.degree * net.n_caches
                                             * int(net.capacity.max()) * horizon)


def varying_step_bound(net: BipartiteCaching, horizon: int) -> float:
    """Bound for ``eta_t = 1/sqrt(t)``: ``Delta^2 sqrt(T)/2 + (sqrt(T) - 1/2) K^2``."""
    rt = math.sqrt(horizon)
    return net.diameter ** 2 * rt / 2 + (rt - 0.5) * net.lipschitz ** 2


def _requests(trace) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trace, Trace):
        return trace.contents, trace.locations
    r, loc = trace
    return np.asarray(r, dtype=np.int64), np.asarray(loc, dtype=np.int64)


def _slot_utilities(net: BipartiteCaching, y: np.ndarray, r, loc) -> np.ndarray:
    return np.array([request_utility(y[:, n - 1], net.util[:, l]) for n, l in zip(r, loc)])


def run_bsca(trace, net: BipartiteCaching, eta="horizon", prefetch_costs=None,
             hindsight: "StaticSolution | None" = None, doubling: bool = False) -> RegretTrace:
    """Route at the current state, collect the utility, then take a step.

    ``eta`` is a number, ``"horizon"`` (tuned to the trace length),
    ``"sqrt"`` for ``1/sqrt(t)`` or, with ``doubling=True``, the horizon rule
    restarted on windows of doubling length.
    """
    r, loc = _requests(trace)
    t_len = r.size
    y = net.zeros()
    y_prev = y.copy()
    u = np.empty(t_len)
    window_start, window = 0, 1
    for t in range(t_len):
        n, l = int(r[t]), int(loc[t])
        u[t] = request_utility(y[:, n - 1], net.util[:, l])
        if doubling:
            if t - window_start >= window:
                window_start, window = t, 2 * window
            step = step_size(net, window)
        elif eta == "horizon":
            step = step_size(net, t_len)
        elif eta == "sqrt":
            step = 1.0 / math.sqrt(t + 1)
        else:
            step = float(eta)
        new = bsca_step(y, n, l, net, step, prefetch_costs, y_prev)
        y_prev, y = y, new
    if hindsight is None:
        hindsight = best_static_bipartite((r, loc), net)
    hs = np.cumsum(_slot_utilities(net, hindsight.y, r, loc))
    return RegretTrace(u, hs, hindsight.y)


@dataclass
class StaticSolution:
    y: np.ndarray
    utility: float
    converged: bool
    iterations: int


def _aggregate(net: BipartiteCaching, r, loc) -> np.ndarray:
    cnt = np.zeros((net.n_locations, net.n_files))
    np.add.at(cnt, (loc, r - 1), 1.0)
    return cnt


def _objective(net: BipartiteCaching, cnt: np.ndarray):
    """Return ``y -> (sum cnt[l, n] J_{n,l}(y), supergradient)``, vectorized over files."""
    parts = []
    for l in range(net.n_locations):
        d = net.util[:, l]
        order = np.array([c for c in np.argsort(-d, kind="stable") if d[c] > 0], dtype=int)
        if order.size and cnt[l].any():
            parts.append((order, d[order], cnt[l]))

    def evaluate(y: np.ndarray):
        total = 0.0
        grad = np.zeros_like(y)
        for order, ds, w in parts:
            ys = y[order]
            reach = np.cumsum(ys, axis=0)
            before = reach - ys
            f = np.clip(np.minimum(ys, 1.0 - before), 0.0, None)
            total += float(np.dot(w, ds @ f))
            filled = reach >= 1.0 - 1e-15
            # marginal cache: first position where the fill completes
            first = np.argmax(filled, axis=0)
            alpha = np.where(filled[first, np.arange(y.shape[1])], ds[first], 0.0)
            grad[order] += np.maximum(ds[:, None] - alpha[None, :], 0.0) * w[None, :]
        return total, grad

    return evaluate


def best_static_bipartite(trace, net: BipartiteCaching, iterations: int = 50_000,
                          tol: float = 1e-4) -> StaticSolution:
    """Best fixed fractional placement for the whole trace.

    Projected supergradient ascent on the time-averaged objective with
    ``eta_k = Delta / (K sqrt(k))``, keeping the best iterate. Reported as
    not converged if the last tenth of the budget still improved the best
    value by more than ``tol`` relative.
    """
    r, loc = _requests(trace)
    t_len = max(r.size, 1)
    cnt = _aggregate(net, r, loc) / t_len
    y = net.zeros()
    best_y, best_val = y.copy(), 0.0
    # Lipschitz constant of the averaged objective: the supergradient at 0
    # dominates every other one entrywise
    evaluate = _objective(net, cnt)
    _, g0 = evaluate(y)
    scale = net.diameter / max(float(np.linalg.norm(g0)), 1e-300)
    checkpoint, val_at_checkpoint = int(0.9 * iterations), None
    for k in range(1, iterations + 1):
        val, g = evaluate(y)
        if val > best_val:
            best_val, best_y = val, y.copy()
        if k == checkpoint:
            val_at_checkpoint = best_val
        y = y + scale / math.sqrt(k) * g
        _project_rows(y, range(net.n_caches), net.capacity)
    val, _ = evaluate(y)
    if val > best_val:
        best_val, best_y = val, y
    converged = val_at_checkpoint is None or best_val - val_at_checkpoint <= tol * max(best_val, 1e-12)
    return StaticSolution(best_y, best_val * r.size, bool(converged), iterations)


def _lru_baseline(trace, net: BipartiteCaching, lazy: bool) -> np.ndarray:
    r, loc = _requests(trace)
    caches = [OrderedDict() for _ in range(net.n_caches)]
    u = np.zeros(r.size)
    orders = []
    for l in range(net.n_locations):
        d = net.util[:, l]
        orders.append([c for c in np.argsort(-d, kind="stable") if d[c] > 0])
    for t in range(r.size):
        n, order = int(r[t]), orders[int(loc[t])]
        if not order:
            continue
        holder = next((c for c in order if n in caches[c]), None)
        if holder is not None:
            u[t] = net.util[holder, loc[t]]
            if not (lazy and any(n in caches[c] for c in order if c != holder)):
                caches[holder].move_to_end(n)
            continue
        target = caches[order[0]]
        if net.capacity[order[0]] <= 0:
            continue
        if len(target) >= net.capacity[order[0]]:
            target.popitem(last=False)
        target[n] = True
    return u


def _baseline_trace(trace, net: BipartiteCaching, lazy: bool,
                    hindsight: StaticSolution | None) -> RegretTrace:
    r, loc = _requests(trace)
    u = _lru_baseline((r, loc), net, lazy)
    if hindsight is None:
        hindsight = best_static_bipartite((r, loc), net)
    hs = np.cumsum(_slot_utilities(net, hindsight.y, r, loc))
    return RegretTrace(u, hs, hindsight.y)


def mlru_baseline(trace, net: BipartiteCaching, hindsight: StaticSolution | None = None) -> RegretTrace:
    """Serve from the best reachable holder and refresh it there; on a miss
    insert at the best reachable cache with LRU eviction."""
    return _baseline_trace(trace, net, False, hindsight)


def lazy_lru_baseline(trace, net: BipartiteCaching, hindsight: StaticSolution | None = None) -> RegretTrace:
    """Like :func:`mlru_baseline`, but the routed cache is updated only when
    no other reachable cache holds the file."""
    return _baseline_trace(trace, net, True, hindsight)


SCENARIO_LINKS = ((0, 2), (0, 1, 2), (0, 1), (1, 2))  # caches reachable per location


def scenario_network(n_files: int = 100, capacity: int = 10, d=(1.0, 2.0, 100.0),
                     links=SCENARIO_LINKS) -> BipartiteCaching:
    """Three caches with utilities ``d`` serving four locations."""
    util = np.zeros((len(d), len(links)))
    for l, cs in enumerate(links):
        for c in cs:
            util[c, l] = d[c]
    return BipartiteCaching(util, capacity, n_files)
