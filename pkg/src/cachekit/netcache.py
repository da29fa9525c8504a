"""Offline placement in caching networks: femtocaching greedy, hierarchical
local search, two-layer hierarchical greedy and exhaustive oracles.

File indices are 0-based throughout this module and in the JSON formats.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BipartiteNet",
    "TreeNet",
    "PlacementError",
    "load_network",
    "dump_placement",
    "femto_objective",
    "femto_greedy",
    "exhaustive_placement_opt",
    "tree_routing_savings",
    "tree_served_requests",
    "hierarchical_local_search",
    "hierarchical_greedy",
    "leaf_fill",
    "random_bipartite",
    "random_tree",
]

ENUM_LIMIT = 10**6


class PlacementError(ValueError):
    pass


# ---------------------------------------------------------------- bipartite


@dataclass
class BipartiteNet:
    """Users, small caches and their delays; cache id 0 is the MBS.

    ``delay[c, u]`` is the delay from the c-th small cache (in ``cache_ids``
    order) to user u, ``inf`` when not connected; ``mbs_delay[u]`` is the
    MBS delay.
    """

    users: tuple
    cache_ids: tuple
    capacity: np.ndarray
    delay: np.ndarray
    mbs_delay: np.ndarray

    def __post_init__(self):
        self.capacity = np.asarray(self.capacity, dtype=int)
        self.delay = np.asarray(self.delay, dtype=float)
        self.mbs_delay = np.asarray(self.mbs_delay, dtype=float)
        if self.delay.shape != (len(self.cache_ids), len(self.users)):
            raise ValueError("delay matrix shape does not match caches x users")
        if 0 in self.cache_ids:
            raise ValueError("cache id 0 is reserved for the MBS")
        if not np.all(np.isfinite(self.mbs_delay)):
            raise ValueError("every user must reach the MBS")
        linked = np.isfinite(self.delay)
        if np.any(self.delay[linked] > np.broadcast_to(self.mbs_delay, self.delay.shape)[linked]):
            raise ValueError("an SBS is slower than the MBS for some user")

    @property
    def savings(self) -> np.ndarray:
        """``d0_u - d_vu`` on links, 0 elsewhere."""
        s = self.mbs_delay[None, :] - self.delay
        return np.where(np.isfinite(s), s, 0.0)

    @property
    def connected(self) -> np.ndarray:
        return np.isfinite(self.delay)

    @classmethod
    def from_dict(cls, spec: dict) -> tuple["BipartiteNet", np.ndarray]:
        """Parse ``{users, caches:[{id,capacity}], edges:[[u,v,delay]], demand:[[u,n,rate]]}``."""
        try:
            users = tuple(spec["users"])
            caches = sorted((c for c in spec["caches"] if c["id"] != 0), key=lambda c: c["id"])
            cache_ids = tuple(int(c["id"]) for c in caches)
            cap = [int(c["capacity"]) for c in caches]
            uix = {u: i for i, u in enumerate(users)}
            cix = {c: i for i, c in enumerate(cache_ids)}
            delay = np.full((len(cache_ids), len(users)), np.inf)
            mbs = np.full(len(users), np.inf)
            for u, v, d in spec["edges"]:
                if v == 0:
                    mbs[uix[u]] = float(d)
                else:
                    delay[cix[v], uix[u]] = float(d)
            demand = spec.get("demand", [])
            n_files = int(spec.get("n_files", 1 + max((int(r[1]) for r in demand), default=-1)))
            lam = np.zeros((len(users), n_files))
            for u, n, rate in demand:
                if rate < 0:
                    raise ValueError("negative demand")
                lam[uix[u], int(n)] += float(rate)
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed network description: {exc!r}") from exc
        return cls(users, cache_ids, np.array(cap), delay, mbs), lam

    def to_dict(self, lam: np.ndarray | None = None) -> dict:
        edges = [[u, 0, float(self.mbs_delay[j])] for j, u in enumerate(self.users)]
        for i, c in enumerate(self.cache_ids):
            for j, u in enumerate(self.users):
                if np.isfinite(self.delay[i, j]):
                    edges.append([u, c, float(self.delay[i, j])])
        out = {"users": list(self.users),
               "caches": [{"id": 0, "capacity": None}]
               + [{"id": c, "capacity": int(b)} for c, b in zip(self.cache_ids, self.capacity)],
               "edges": edges}
        if lam is not None:
            out["demand"] = [[u, int(n), float(lam[j, n])]
                             for j, u in enumerate(self.users)
                             for n in range(lam.shape[1]) if lam[j, n] > 0]
            out["n_files"] = int(lam.shape[1])
        return out


def load_network(path) -> tuple[BipartiteNet, np.ndarray]:
    with open(path) as fh:
        return BipartiteNet.from_dict(json.load(fh))


def dump_placement(placement: dict) -> str:
    return json.dumps({str(k): sorted(int(n) for n in v) for k, v in sorted(placement.items())},
                      sort_keys=True)


def _as_matrix(net: BipartiteNet, n_files: int, placement: dict) -> np.ndarray:
    y = np.zeros((len(net.cache_ids), n_files), dtype=bool)
    for i, c in enumerate(net.cache_ids):
        files = list(placement.get(c, ()))
        if len(set(files)) > net.capacity[i]:
            raise PlacementError(f"cache {c} holds {len(set(files))} > {net.capacity[i]} files")
        for n in files:
            if not 0 <= n < n_files:
                raise PlacementError(f"file {n} outside catalog")
            y[i, n] = True
    return y


def _femto_value(sav: np.ndarray, lam: np.ndarray, y: np.ndarray) -> float:
    # best[u, n] = largest saving among caches holding n that u reaches
    best = np.max(np.where(y[:, None, :], sav[:, :, None], 0.0), axis=0, initial=0.0)
    return float(np.sum(lam * best))


def femto_objective(net: BipartiteNet, lam, placement: dict) -> float:
    """Total delay savings ``sum_u (d0_u * demand_u - D_u(y))``."""
    lam = np.asarray(lam, dtype=float)
    y = _as_matrix(net, lam.shape[1], placement)
    return _femto_value(net.savings, lam, y)


def femto_greedy(net: BipartiteNet, lam) -> dict:
    """Greedy over (cache, file) elements of the partition matroid.

    Ties go to the lexicographically smallest (cache id, file id).
    """
    lam = np.asarray(lam, dtype=float)
    sav = net.savings
    nc, nf = len(net.cache_ids), lam.shape[1]
    best = np.zeros_like(lam)
    room = net.capacity.copy()
    y = np.zeros((nc, nf), dtype=bool)
    while np.any(room > 0):
        gain = np.sum(lam[None, :, :] * np.maximum(sav[:, :, None] - best[None, :, :], 0.0), axis=1)
        gain[y] = -1.0
        gain[room <= 0, :] = -1.0
        k = int(np.argmax(gain))
        c, n = divmod(k, nf)
        if gain[c, n] <= 0:
            break
        y[c, n] = True
        room[c] -= 1
        best[:, n] = np.maximum(best[:, n], sav[c])
    return {cid: sorted(np.flatnonzero(y[i]).tolist()) for i, cid in enumerate(net.cache_ids)}


def exhaustive_placement_opt(capacities, n_files: int, objective, node_ids=None,
                             full: bool = True) -> tuple[dict, float]:
    """Enumerate every placement and return the best under ``objective``.

    ``objective`` maps a placement dict to a real. With ``full`` each node
    holds exactly ``min(B, N)`` files, which suffices for monotone
    objectives; otherwise all subsets up to the capacity are tried.
    """
    caps = [int(b) for b in capacities]
    ids = list(node_ids) if node_ids is not None else list(range(len(caps)))
    per_node = []
    for b in caps:
        b = min(b, n_files)
        sizes = [b] if full else range(b + 1)
        per_node.append([c for k in sizes for c in itertools.combinations(range(n_files), k)])
    total = math.prod(len(p) for p in per_node)
    if total > ENUM_LIMIT:
        raise ValueError(f"{total} placements exceed the enumeration limit {ENUM_LIMIT}")
    best_pl, best_val = None, -math.inf
    for combo in itertools.product(*per_node):
        pl = {i: list(c) for i, c in zip(ids, combo)}
        val = objective(pl)
        if val > best_val + 1e-12:
            best_pl, best_val = pl, val
    return best_pl, float(best_val)


def random_bipartite(rng: np.random.Generator, n_users: int, n_caches: int, n_files: int,
                     capacity: int, link_prob: float = 0.6, tau: float | None = None):
    """Random instance; every user reaches at least one SBS."""
    mbs = rng.uniform(5.0, 10.0, n_users)
    delay = np.where(rng.random((n_caches, n_users)) < link_prob,
                     rng.uniform(0.5, 4.0, (n_caches, n_users)), np.inf)
    for u in range(n_users):
        if not np.isfinite(delay[:, u]).any():
            delay[rng.integers(n_caches), u] = rng.uniform(0.5, 4.0)
    if tau is None:
        lam = rng.random((n_users, n_files))
    else:
        lam = np.tile(np.arange(1, n_files + 1) ** -tau, (n_users, 1))
    net = BipartiteNet(tuple(range(1, n_users + 1)), tuple(range(1, n_caches + 1)),
                       np.full(n_caches, capacity), delay, mbs)
    return net, lam


# ---------------------------------------------------------------- trees


@dataclass
class TreeNet:
    """Root, one parent (node 0) and leaves ``1..V``.

    ``d0`` is the root-to-parent cost, ``d[u]`` parent-to-leaf and
    ``dprime[u, v]`` the cost of serving leaf u from leaf v. ``lam`` is
    ``V x N`` leaf demand.
    """

    lam: np.ndarray
    leaf_capacity: np.ndarray
    parent_capacity: int = 0
    d0: float = 1.0
    d: np.ndarray | float = 1.0
    dprime: np.ndarray | float = 1.0
    sizes: np.ndarray | None = None
    cooperative: bool = True
    _pair: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        v, n = self.lam.shape
        self.leaf_capacity = np.broadcast_to(np.asarray(self.leaf_capacity, dtype=int), (v,)).copy()
        self.d = np.broadcast_to(np.asarray(self.d, dtype=float), (v,)).copy()
        dp = np.asarray(self.dprime, dtype=float)
        self.dprime = np.broadcast_to(dp, (v, v)).copy() if dp.ndim < 2 else dp.copy()
        self.sizes = np.ones(n) if self.sizes is None else np.asarray(self.sizes, dtype=float)
        # saving per unit when u is served by peer v
        pair = self.d0 + self.d[:, None] - self.dprime
        if np.any(pair[~np.eye(v, dtype=bool)] < -1e-12):
            raise ValueError("peer cost exceeds the root cost")
        pair = np.maximum(pair, 0.0)
        np.fill_diagonal(pair, self.d0 + self.d)
        if not self.cooperative:
            pair = np.diag(self.d0 + self.d)
        self._pair = pair

    @property
    def n_leaves(self) -> int:
        return self.lam.shape[0]

    @property
    def n_files(self) -> int:
        return self.lam.shape[1]

    @property
    def symmetric(self) -> bool:
        off = self.dprime[~np.eye(self.n_leaves, dtype=bool)]
        return (np.allclose(self.lam, self.lam[0]) and np.all(self.leaf_capacity == self.leaf_capacity[0])
                and np.allclose(self.d, self.d[0]) and (off.size == 0 or np.allclose(off, off[0])))

    def capacities(self) -> list[int]:
        return [int(self.parent_capacity)] + self.leaf_capacity.tolist()

    def matrix(self, placement: dict) -> np.ndarray:
        """Boolean ``(V+1) x N`` cache matrix; row 0 is the parent."""
        y = np.zeros((self.n_leaves + 1, self.n_files), dtype=bool)
        caps = self.capacities()
        for node, files in placement.items():
            files = set(files)
            if sum(self.sizes[list(files)]) > caps[node] + 1e-9:
                raise PlacementError(f"node {node} over capacity")
            y[node, list(files)] = True
        return y


def _tree_savings(net: TreeNet, y: np.ndarray) -> float:
    leaves = y[1:]
    # best[u, n] over peers v holding n (including u itself)
    best = np.max(np.where(leaves[None, :, :], net._pair[:, :, None], 0.0), axis=1)
    best = np.maximum(best, np.where(y[0][None, :], net.d0, 0.0))
    return float(np.sum(net.sizes[None, :] * net.lam * best))


def tree_routing_savings(net: TreeNet, placement: dict) -> float:
    """Routing cost avoided relative to fetching every request from the root."""
    return _tree_savings(net, net.matrix(placement))


def tree_served_requests(net: TreeNet, placement: dict) -> float:
    """Requests served inside the tree (at the parent or the requesting leaf)."""
    y = net.matrix(placement)
    hit = y[1:] | y[0][None, :]
    return float(np.sum(net.lam * hit))


def _local_weight(net: TreeNet, y: np.ndarray, u: int, n: int) -> float:
    """Per-leaf utility of holding n at leaf u under the symmetric rule."""
    others = np.delete(y[1:, n], u)
    lam = net.lam[u, n] * net.sizes[n]
    v = net.n_leaves
    dp = float(net.dprime[u, (u + 1) % v]) if v > 1 else net.d0 + net.d[u]
    if others.any() and net.cooperative:
        return dp * lam
    if y[0, n]:
        return net.d[u] * lam
    d2 = v * (net.d0 + net.d[u]) - (v - 1) * dp if net.cooperative else v * (net.d0 + net.d[u])
    return d2 * lam


def hierarchical_local_search(net: TreeNet, max_iters: int | None = None, seed=None,
                              rule: str = "local", initial: dict | None = None) -> dict:
    """Randomized swap local search over leaf caches (and the parent if it has room).

    ``rule="local"`` accepts a swap when the leaf's own utility weight of
    the new file beats the weakest cached file; ``rule="generalized"``
    accepts when total routing savings strictly increase.
    """
    if rule not in ("local", "generalized"):
        raise ValueError(f"unknown rule {rule!r}")
    rng = np.random.default_rng(seed)
    n_files, v = net.n_files, net.n_leaves
    if max_iters is None:
        max_iters = 50 * n_files * (v + 1)
    y = np.zeros((v + 1, n_files), dtype=bool)
    if initial is not None:
        y = net.matrix(initial)
    else:
        for u in range(1, v + 1):
            y[u, rng.choice(n_files, min(net.leaf_capacity[u - 1], n_files), replace=False)] = True
        if net.parent_capacity > 0:
            y[0, rng.choice(n_files, min(net.parent_capacity, n_files), replace=False)] = True
    nodes = [u for u in range(1, v + 1)] + ([0] if net.parent_capacity > 0 else [])

    def try_swap(node: int, n: int) -> bool:
        cached = np.flatnonzero(y[node])
        cap = net.capacities()[node]
        if cached.size < min(cap, n_files):
            if rule == "generalized" or node == 0:
                before = _tree_savings(net, y)
                y[node, n] = True
                if _tree_savings(net, y) > before + 1e-12:
                    return True
                y[node, n] = False
                return False
            y[node, n] = True
            return True
        if cached.size == 0:
            return False
        if rule == "local" and node != 0:
            u = node - 1
            w_new = _local_weight(net, y, u, n)
            weights = [_local_weight(net, y, u, m) for m in cached]
            j = int(np.argmin(weights))
            if w_new > weights[j] + 1e-12:
                y[node, cached[j]] = False
                y[node, n] = True
                return True
            return False
        before = _tree_savings(net, y)
        best_gain, best_m = 1e-12, -1
        for m in cached:
            y[node, m] = False
            y[node, n] = True
            gain = _tree_savings(net, y) - before
            y[node, n] = False
            y[node, m] = True
            if gain > best_gain:
                best_gain, best_m = gain, m
        if best_m < 0:
            return False
        y[node, best_m] = False
        y[node, n] = True
        return True

    stale = 0
    for _ in range(max_iters):
        node = nodes[rng.integers(len(nodes))]
        free = np.flatnonzero(~y[node])
        if free.size == 0:
            stale += 1
        elif try_swap(node, int(free[rng.integers(free.size)])):
            stale = 0
        else:
            stale += 1
        if stale >= len(nodes) * n_files:
            # confirm with a full deterministic pass before stopping
            if not any(try_swap(nd, int(n)) for nd in nodes for n in np.flatnonzero(~y[nd])):
                break
            stale = 0
    return {node: np.flatnonzero(y[node]).tolist() for node in range(v + 1)}


def leaf_fill(net: TreeNet, parent_files) -> dict:
    """Each leaf caches its top-``B_v`` files among those not at the parent."""
    at_parent = np.zeros(net.n_files, dtype=bool)
    at_parent[list(parent_files)] = True
    out = {0: sorted(int(n) for n in parent_files)}
    for u in range(net.n_leaves):
        score = np.where(at_parent, -np.inf, net.lam[u])
        order = np.argsort(-score, kind="stable")
        k = min(int(net.leaf_capacity[u]), int((~at_parent).sum()))
        out[u + 1] = sorted(order[:k].tolist())
    return out


def _h(net: TreeNet, parent_files) -> float:
    return tree_served_requests(net, leaf_fill(net, parent_files))


def hierarchical_greedy(net: TreeNet) -> dict:
    """Greedy parent placement by marginal served requests, then leaf top-B fill."""
    chosen: list[int] = []
    current = _h(net, chosen)
    for _ in range(min(net.parent_capacity, net.n_files)):
        best_gain, best_n = -math.inf, -1
        for n in range(net.n_files):
            if n in chosen:
                continue
            gain = _h(net, chosen + [n]) - current
            if gain > best_gain:
                best_gain, best_n = gain, n
        chosen.append(best_n)
        current += best_gain
    return leaf_fill(net, chosen)


def random_tree(rng: np.random.Generator, n_leaves: int, n_files: int, leaf_capacity: int,
                parent_capacity: int = 0, symmetric: bool = True) -> TreeNet:
    d0 = float(rng.uniform(1.0, 5.0))
    if symmetric:
        d = float(rng.uniform(0.5, 3.0))
        dprime = float(rng.uniform(0.1, d0 + d))
        lam = np.tile(rng.random(n_files), (n_leaves, 1))
    else:
        d = rng.uniform(0.5, 3.0, n_leaves)
        dprime = rng.uniform(0.1, 1.0, (n_leaves, n_leaves)) * (d0 + d[:, None])
        lam = rng.random((n_leaves, n_files))
    return TreeNet(lam, leaf_capacity, parent_capacity, d0, d, dprime)
