"""Single-cache eviction policies, the Belady oracle, Che's approximation,
King's exact LRU stationary law and TTL caches."""

from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .popularity import as_pmf
from .traces import Trace

__all__ = [
    "Policy",
    "SimReport",
    "TTLConfig",
    "CUMResult",
    "make_cache",
    "simulate",
    "belady",
    "adversarial_trace",
    "che_characteristic_time",
    "lru_hit_prob_che",
    "lru_exact_stationary",
    "ttl_hit_prob",
    "ttl_timer",
    "ttl_cum_solve",
    "ttl_simulate",
]

MODELS = ("I1", "I2")


# ---------------------------------------------------------------- reports


@dataclass
class SimReport:
    hits: int
    misses: int
    hit_series: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def to_dict(self) -> dict:
        out = {"hits": self.hits, "misses": self.misses, "hit_ratio": self.hit_ratio}
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class Policy:
    """Eviction policy selector.

    ``kind`` is one of ``lru``, ``lfu``, ``fifo``, ``random``, ``qlru``,
    ``lru_k``, ``belady``. ``q`` is the q-LRU admission probability and
    ``k`` the number of LRU-k layers.
    """

    kind: str
    q: float = 1.0
    k: int = 2

    KINDS = ("lru", "lfu", "fifo", "random", "qlru", "lru_k", "belady")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown policy {self.kind!r}")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @classmethod
    def parse(cls, text: str) -> "Policy":
        """``lru``, ``qlru:0.1``, ``lru_k:3`` and so on."""
        name, _, arg = text.strip().lower().replace("-", "_").partition(":")
        if name == "qlru":
            return cls("qlru", q=float(arg) if arg else 0.1)
        if name == "lru_k":
            return cls("lru_k", k=int(arg) if arg else 2)
        return cls(name)


def _check_model(model: str) -> str:
    model = model.upper()
    if model not in MODELS:
        raise ValueError(f"eviction model must be one of {MODELS}")
    return model


# ---------------------------------------------------------------- online caches


class _Cache:
    """Online cache. ``access(n)`` serves one request and reports a hit."""

    def __init__(self, m: int, model: str = "I1", rng: random.Random | None = None):
        if m < 1:
            raise ValueError("cache size must be at least 1")
        self.m = m
        self.model = _check_model(model)
        self.rng = rng or random.Random(0)

    def access(self, n: int) -> bool:
        raise NotImplementedError

    def contents(self) -> set[int]:
        raise NotImplementedError

    def __contains__(self, n: int) -> bool:
        return n in self.contents()

    def __len__(self) -> int:
        return len(self.contents())


class LRUCache(_Cache):
    def __init__(self, m, model="I1", rng=None, initial: Iterable[int] = ()):
        super().__init__(m, model, rng)
        self.od: OrderedDict[int, None] = OrderedDict((n, None) for n in initial)
        if len(self.od) > m:
            raise ValueError("initial contents exceed the cache size")

    def access(self, n):
        od = self.od
        if n in od:
            od.move_to_end(n)
            return True
        if len(od) >= self.m:
            od.popitem(last=False)
        od[n] = None
        return False

    def contents(self):
        return set(self.od)

    def __contains__(self, n):
        return n in self.od


class QLRUCache(LRUCache):
    """LRU whose misses are admitted with probability ``q`` (under either model).

    The coin only gates admissions that would evict; free slots are filled.
    """

    def __init__(self, m, model="I1", rng=None, initial=(), q: float = 1.0):
        super().__init__(m, model, rng, initial)
        self.q = q

    def access(self, n):
        od = self.od
        if n in od:
            od.move_to_end(n)
            return True
        if len(od) < self.m:
            od[n] = None
            return False
        if self.q < 1.0 and self.rng.random() >= self.q:
            return False
        if len(od) >= self.m:
            od.popitem(last=False)
        od[n] = None
        return False


class FIFOCache(_Cache):
    def __init__(self, m, model="I1", rng=None, initial=()):
        super().__init__(m, model, rng)
        self.queue = deque(initial)
        self.members = set(self.queue)
        if len(self.members) > m:
            raise ValueError("initial contents exceed the cache size")

    def access(self, n):
        if n in self.members:
            return True
        if len(self.queue) >= self.m:
            self.members.discard(self.queue.popleft())
        self.queue.append(n)
        self.members.add(n)
        return False

    def contents(self):
        return set(self.members)

    def __contains__(self, n):
        return n in self.members


class RandomCache(_Cache):
    """Uniform random eviction. Under I1 the arriving item is one of the
    ``M + 1`` candidates, so it is declined with probability ``1/(M+1)``."""

    def __init__(self, m, model="I1", rng=None, initial=()):
        super().__init__(m, model, rng)
        self.items = list(initial)
        self.pos = {n: i for i, n in enumerate(self.items)}
        if len(self.items) > m:
            raise ValueError("initial contents exceed the cache size")

    def access(self, n):
        if n in self.pos:
            return True
        if len(self.items) < self.m:
            self.pos[n] = len(self.items)
            self.items.append(n)
            return False
        span = self.m + 1 if self.model == "I1" else self.m
        i = self.rng.randrange(span)
        if i == self.m:
            return False
        del self.pos[self.items[i]]
        self.items[i] = n
        self.pos[n] = i
        return False

    def contents(self):
        return set(self.items)

    def __contains__(self, n):
        return n in self.pos


class LFUCache(_Cache):
    """LFU with counts over the whole history; ties go to the least recently used.

    Under I1 an arriving item whose count is below every cached count is
    declined, which is what lets LFU settle on the top-M set under IRM.
    """

    def __init__(self, m, model="I1", rng=None, initial=()):
        super().__init__(m, model, rng)
        self.count: dict[int, int] = {}
        self.last: dict[int, int] = {}
        self.cached: set[int] = set()
        self.heap: list[tuple[int, int, int]] = []
        self.clock = 0
        for n in initial:
            self.clock += 1
            self._admit(n)
        if len(self.cached) > m:
            raise ValueError("initial contents exceed the cache size")

    def _admit(self, n):
        self.cached.add(n)
        self.last[n] = self.clock
        heapq.heappush(self.heap, (self.count.get(n, 0), self.clock, n))

    def _min(self):
        heap, cached, count, last = self.heap, self.cached, self.count, self.last
        while True:
            c, t, n = heap[0]
            if n in cached and count.get(n, 0) == c and last[n] == t:
                return c, t, n
            heapq.heappop(heap)

    def access(self, n):
        self.clock += 1
        c = self.count.get(n, 0) + 1
        self.count[n] = c
        if n in self.cached:
            self.last[n] = self.clock
            heapq.heappush(self.heap, (c, self.clock, n))
            if len(self.heap) > 4 * self.m + 64:
                self._compact()
            return True
        if len(self.cached) < self.m:
            self._admit(n)
            return False
        cmin, _, victim = self._min()
        if self.model == "I1" and c < cmin:
            return False
        heapq.heappop(self.heap)
        self.cached.discard(victim)
        self._admit(n)
        return False

    def _compact(self):
        self.heap = [(self.count.get(n, 0), self.last[n], n) for n in self.cached]
        heapq.heapify(self.heap)

    def contents(self):
        return set(self.cached)

    def __contains__(self, n):
        return n in self.cached


class LRUKCache(_Cache):
    """``k`` chained LRU layers splitting the capacity as evenly as possible.

    Misses enter layer 1; a hit promotes the item one layer deeper, and the
    overflow of a layer is demoted to the head of the layer above. Items
    leave the cache only from the tail of layer 1, which may borrow the
    slots deeper layers leave unused.
    """

    def __init__(self, m, model="I1", rng=None, initial=(), k: int = 2):
        super().__init__(m, model, rng)
        if k > m:
            raise ValueError("LRU-k needs at least one slot per layer")
        self.k = k
        self.caps = [m // k + (1 if i < m % k else 0) for i in range(k)]
        self.layers: list[OrderedDict[int, None]] = [OrderedDict() for _ in range(k)]
        self.where: dict[int, int] = {}
        for n in initial:
            self.access(n)

    def _push(self, layer: int, n: int):
        od = self.layers[layer]
        od[n] = None
        self.where[n] = layer
        cap = self.caps[layer] if layer else self.m - sum(len(x) for x in self.layers[1:])
        while len(od) > cap:
            old, _ = od.popitem(last=False)
            if layer == 0:
                del self.where[old]
            else:
                self._push(layer - 1, old)

    def access(self, n):
        layer = self.where.get(n)
        if layer is None:
            self._push(0, n)
            return False
        del self.layers[layer][n]
        self._push(min(layer + 1, self.k - 1), n)
        return True

    def contents(self):
        return set(self.where)

    def __contains__(self, n):
        return n in self.where


def make_cache(policy: Policy | str, m: int, model: str = "I1", seed=None,
               initial: Iterable[int] = ()) -> _Cache:
    pol = Policy.parse(policy) if isinstance(policy, str) else policy
    rng = random.Random(seed)
    initial = list(initial)
    if pol.kind == "lru":
        return LRUCache(m, model, rng, initial)
    if pol.kind == "qlru":
        return QLRUCache(m, model, rng, initial, q=pol.q)
    if pol.kind == "fifo":
        return FIFOCache(m, model, rng, initial)
    if pol.kind == "random":
        return RandomCache(m, model, rng, initial)
    if pol.kind == "lfu":
        return LFUCache(m, model, rng, initial)
    if pol.kind == "lru_k":
        return LRUKCache(m, model, rng, initial, k=pol.k)
    raise ValueError(f"{pol.kind} is not an online policy")


def _requests(trace) -> list[int]:
    if isinstance(trace, Trace):
        return trace.contents.tolist()
    return [int(x) for x in np.asarray(trace).ravel()]


def simulate(policy: Policy | str, trace, m: int, seed=None, model: str = "I1",
             initial: Iterable[int] = (), record: bool = False) -> SimReport:
    """Replay ``trace`` through a cache of size ``m`` and count hits."""
    pol = Policy.parse(policy) if isinstance(policy, str) else policy
    if pol.kind == "belady":
        return belady(trace, m, model, initial=initial, record=record)
    reqs = _requests(trace)
    cache = make_cache(pol, m, model, seed, initial)
    access = cache.access
    if record:
        series = np.fromiter((access(n) for n in reqs), dtype=bool, count=len(reqs))
        hits = int(series.sum())
    else:
        series = None
        hits = 0
        for n in reqs:
            if access(n):
                hits += 1
    return SimReport(hits, len(reqs) - hits, series)


def belady(trace, m: int, model: str = "I1", initial: Iterable[int] = (),
           record: bool = False) -> SimReport:
    """Offline optimum: evict the item requested furthest in the future.

    Items never requested again share an infinite distance; ties evict the
    smallest id. Under I1 the arriving item competes with the cached ones.
    """
    model = _check_model(model)
    reqs = _requests(trace)
    t_len = len(reqs)
    never = t_len + 1
    nxt = [never] * t_len
    seen: dict[int, int] = {}
    for t in range(t_len - 1, -1, -1):
        nxt[t] = seen.get(reqs[t], never)
        seen[reqs[t]] = t
    first_use = seen  # next use of each content as of time 0

    cached: dict[int, int] = {}
    heap: list[tuple[int, int]] = []  # (-next_use, id)
    for n in initial:
        cached[n] = first_use.get(n, never)
        heapq.heappush(heap, (-cached[n], n))
    if len(cached) > m:
        raise ValueError("initial contents exceed the cache size")

    hits = 0
    series = np.zeros(t_len, dtype=bool) if record else None
    for t, n in enumerate(reqs):
        nu = nxt[t]
        if n in cached:
            hits += 1
            if record:
                series[t] = True
            cached[n] = nu
            heapq.heappush(heap, (-nu, n))
            continue
        if len(cached) < m:
            cached[n] = nu
            heapq.heappush(heap, (-nu, n))
            continue
        while True:
            key, victim = heap[0]
            if cached.get(victim) == -key:
                break
            heapq.heappop(heap)
        far = -key
        if model == "I1" and (nu > far or (nu == far and n < victim)):
            continue  # decline the arriving item
        heapq.heappop(heap)
        del cached[victim]
        cached[n] = nu
        heapq.heappush(heap, (-nu, n))
    return SimReport(hits, t_len - hits, series)


def adversarial_trace(policy: Policy | str, m: int, length: int, model: str = "I1",
                      seed=None) -> list[int]:
    """Request sequence over ``M + 1`` items that always asks for an item the
    (deterministic) online policy does not hold. Every request is a miss
    after the cache fills."""
    cache = make_cache(policy, m, model, seed)
    universe = range(1, m + 2)
    out = []
    for _ in range(length):
        n = next(x for x in universe if x not in cache)
        cache.access(n)
        out.append(n)
    return out


# ---------------------------------------------------------------- LRU analysis


def che_characteristic_time(pop, lam: float, m: int, tol: float = 1e-10) -> float:
    """Root ``t`` of ``sum(1 - exp(-lam p_n t)) = m`` by bisection."""
    p = as_pmf(pop)
    p = p[p > 0]
    if lam <= 0:
        raise ValueError("request rate must be positive")
    if not 0 < m < p.size:
        raise ValueError(f"cache size must satisfy 0 < m < {p.size}")
    rate = lam * p

    def occ(t):
        return float(-np.expm1(-rate * t).sum())

    lo, hi = 0.0, 1.0 / rate.max()
    while occ(hi) < m:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # float resolution reached
            break
        if occ(mid) < m:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lru_hit_prob_che(pop, lam: float, m: int) -> float:
    p = as_pmf(pop)
    t = che_characteristic_time(p, lam, m)
    return float(np.dot(p, -np.expm1(-lam * p * t)))


def lru_exact_stationary(pop, m: int, return_states: bool = False):
    """Exact stationary LRU hit probability under IRM (King's sum over orderings).

    Each ordered state ``sigma`` (most recent first) has probability
    ``prod_k p_sigma(k) / (1 - p_sigma(1) - ... - p_sigma(k-1))``.
    """
    p = as_pmf(pop)
    n = p.size
    if n > 8 or m > 4:
        raise ValueError("exact LRU enumeration limited to N <= 8 and M <= 4")
    if not 1 <= m <= n:
        raise ValueError("cache size must satisfy 1 <= m <= N")
    pi: dict[frozenset, float] = {}
    for sigma in itertools.permutations(range(n), m):
        prob, used = 1.0, 0.0
        for j in sigma:
            rest = 1.0 - used
            if rest <= 0:
                prob = 0.0
                break
            prob *= p[j] / rest
            used += p[j]
        key = frozenset(sigma)
        pi[key] = pi.get(key, 0.0) + prob
    hit = math.fsum(v * sum(p[j] for j in key) for key, v in pi.items())
    return (hit, pi) if return_states else hit


# ---------------------------------------------------------------- TTL


@dataclass
class TTLConfig:
    timers: np.ndarray
    reset: bool = True

    def __post_init__(self):
        self.timers = np.asarray(self.timers, dtype=float)
        if np.any(self.timers < 0) or not np.all(np.isfinite(self.timers)):
            raise ValueError("timers must be finite and nonnegative")


def ttl_hit_prob(reset: bool, lambda_n, timer):
    """Stationary hit probability of a TTL cache under Poisson requests."""
    x = np.asarray(lambda_n, dtype=float) * np.asarray(timer, dtype=float)
    if np.any(x < 0):
        raise ValueError("rates and timers must be nonnegative")
    out = -np.expm1(-x) if reset else x / (1.0 + x)
    return float(out) if np.ndim(out) == 0 else out


def ttl_timer(reset: bool, lambda_n, h):
    """Timer that yields stationary hit probability ``h`` (inverse of ttl_hit_prob)."""
    lam = np.asarray(lambda_n, dtype=float)
    h = np.asarray(h, dtype=float)
    if reset:
        return -np.log1p(-h) / lam
    return h / (lam * (1.0 - h))


@dataclass
class CUMResult:
    config: TTLConfig
    hit_probs: np.ndarray
    mu: float
    iterations: int
    residual: float
    converged: bool


def ttl_cum_solve(pop, lam: float, m: float, alpha: float, reset: bool = True,
                  steps: int = 100_000, step_rule: Callable[[int], float] | None = None,
                  weights=None, mu0: float | None = None, tol: float = 1e-4,
                  eps: float = 1e-9) -> CUMResult:
    """Dual subgradient solution of the alpha-fair cache utility problem.

    The per-content utility is ``w_n h^(1-alpha)/(1-alpha)``; with the
    default unit weights the optimum is symmetric (every ``h_n = M/N``).

    Without ``mu0`` the multiplier starts where the budget binds if no
    ``h_n`` were capped. The default step ``alpha mu0 / (2 M sqrt(t))`` is
    half the inverse slope of ``sum(h)`` at that point, so it suits any
    scale of ``w``, ``M`` and ``alpha``.
    """
    p = as_pmf(pop)
    if np.any(p <= 0):
        raise ValueError("CUM needs strictly positive popularities")
    if alpha <= 0 or abs(alpha - 1.0) < 1e-12:
        raise ValueError("alpha must be positive and different from 1")
    if not 0 < m < p.size:
        raise ValueError("cache size must satisfy 0 < m < N")
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    rate = lam * p
    hmax = 1.0 - eps

    def hits(mu):
        if mu <= 0:
            return np.full_like(p, hmax)
        return np.minimum((w / mu) ** (1.0 / alpha), hmax)

    if mu0 is None:
        mu0 = float(np.sum(w ** (1.0 / alpha)) / m) ** alpha
    if step_rule is None:
        scale = alpha * mu0 / (2.0 * m)
        step_rule = lambda t: scale / math.sqrt(t)  # noqa: E731
    mu = float(mu0)
    h = hits(mu)
    resid = float(h.sum() - m)
    it = 0
    for it in range(1, steps + 1):
        if abs(resid) < tol:
            break
        mu = max(0.0, mu + step_rule(it) * resid)
        if mu > 1e9:
            raise ArithmeticError("dual multiplier diverged")
        h = hits(mu)
        resid = float(h.sum() - m)
    timers = ttl_timer(reset, rate, h)
    return CUMResult(TTLConfig(timers, reset), h, mu, it, resid, abs(resid) < tol)


def ttl_simulate(cfg: TTLConfig, trace: Trace, m_soft: int | None = None,
                 record: bool = False) -> SimReport:
    """Event-driven TTL cache over a timestamped trace.

    A request hits iff its content's timer has not expired. A miss starts
    the timer; a hit restarts it only for reset caches. The occupancy
    constraint is soft: its time average (and maximum) are reported.
    """
    times = trace.times
    reqs = trace.contents
    timers = cfg.timers
    expiry: dict[int, float] = {}
    heap: list[tuple[float, int]] = []
    alive = 0
    area = 0.0
    peak = 0
    last_t = float(times[0]) if len(times) else 0.0
    start = last_t
    hits = 0
    series = np.zeros(len(reqs), dtype=bool) if record else None
    occ = np.zeros(len(reqs), dtype=np.int64) if record else None
    for i in range(len(reqs)):
        t = float(times[i])
        n = int(reqs[i])
        while heap and heap[0][0] <= t:
            e, k = heapq.heappop(heap)
            if expiry.get(k) == e:
                area += alive * (e - last_t)
                last_t = e
                alive -= 1
                del expiry[k]
        area += alive * (t - last_t)
        last_t = t
        if n in expiry:
            hits += 1
            if record:
                series[i] = True
            if cfg.reset:
                e = t + timers[n - 1]
                expiry[n] = e
                heapq.heappush(heap, (e, n))
        else:
            tm = timers[n - 1]
            if tm > 0:
                e = t + tm
                expiry[n] = e
                heapq.heappush(heap, (e, n))
                alive += 1
                peak = max(peak, alive)
        if record:
            occ[i] = alive
    span = last_t - start
    extra = {"mean_occupancy": area / span if span > 0 else float(alive),
             "peak_occupancy": peak}
    if m_soft is not None:
        extra["m_soft"] = m_soft
        extra["overflow"] = bool(peak > m_soft)
    rep = SimReport(hits, len(reqs) - hits, series, extra)
    if record:
        rep.extra["occupancy"] = occ
    return rep
