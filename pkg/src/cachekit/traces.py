"""Request-sequence generators (IRM, Poisson IRM, rectangular SNM, SBM),
CSV trace IO and the Bayesian SNM popularity classifier."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from .popularity import as_pmf

__all__ = [
    "Trace",
    "TraceFormatError",
    "SNMConfig",
    "SBMConfig",
    "Shots",
    "gen_irm",
    "gen_poisson_irm",
    "gen_located_irm",
    "gen_replacement_irm",
    "sample_shots",
    "gen_snm",
    "alive_count",
    "snm_posterior_mean",
    "snm_classify",
    "sbm_kernel",
    "gen_sbm",
    "read_trace",
    "write_trace",
]


@dataclass
class Trace:
    """Time-ordered requests. Content ids are positive integers."""

    times: np.ndarray
    contents: np.ndarray
    locations: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.contents = np.asarray(self.contents, dtype=np.int64)
        if self.locations is None:
            self.locations = np.zeros(self.contents.size, dtype=np.int64)
        else:
            self.locations = np.asarray(self.locations, dtype=np.int64)
        if not (self.times.size == self.contents.size == self.locations.size):
            raise ValueError("times, contents and locations differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("trace times must be nondecreasing")

    @classmethod
    def from_sequence(cls, contents: Sequence[int], **meta) -> "Trace":
        c = np.asarray(contents, dtype=np.int64)
        return cls(np.arange(1, c.size + 1, dtype=float), c, meta=dict(meta))

    def __len__(self) -> int:
        return int(self.contents.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.contents, other.contents)
                and np.array_equal(self.locations, other.locations))

    @property
    def n_catalog(self) -> int:
        return int(self.contents.max()) if len(self) else 0

    def counts(self, n_catalog: int | None = None) -> np.ndarray:
        """Per-content request counts, index ``i`` holding content ``i + 1``."""
        n = self.n_catalog if n_catalog is None else n_catalog
        return np.bincount(self.contents, minlength=n + 1)[1:]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _draw(pop: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(pop)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right") + 1


def gen_irm(pop, length: int, seed=None) -> Trace:
    """i.i.d. requests from ``pop``; times are slot indices ``1..length``."""
    p = as_pmf(pop)
    if length < 0:
        raise ValueError("trace length must be nonnegative")
    c = _draw(p, length, _rng(seed))
    return Trace(np.arange(1, length + 1, dtype=float), c,
                 meta={"generator": "irm", "seed": seed, "length": length})


def gen_poisson_irm(pop, rate: float, horizon: float, seed=None) -> Trace:
    """Poisson(rate) arrivals on ``[0, horizon)`` with i.i.d. marks from ``pop``."""
    p = as_pmf(pop)
    if rate <= 0 or horizon < 0:
        raise ValueError("rate must be positive and horizon nonnegative")
    rng = _rng(seed)
    chunks, t, chunk = [], 0.0, max(16, int(rate * horizon * 1.1) + 16)
    while t < horizon:
        arr = t + np.cumsum(rng.exponential(1.0 / rate, chunk))
        chunks.append(arr)
        t = arr[-1]
    times = np.concatenate(chunks) if chunks else np.empty(0)
    times = times[times < horizon]
    c = _draw(p, times.size, rng)
    return Trace(times, c, meta={"generator": "poisson_irm", "seed": seed,
                                 "rate": rate, "horizon": horizon})


def gen_located_irm(pop, length: int, n_locations: int, seed=None) -> Trace:
    """IRM requests, each stamped with a location drawn uniformly from ``0..L-1``.

    ``pop`` is either a global pmf or an ``N x L`` matrix of local
    popularities (e.g. from :func:`gen_sbm`), in which case column ``l`` is
    used for requests at location ``l``.
    """
    rng = _rng(seed)
    loc = rng.integers(0, n_locations, size=length)
    p = np.asarray(pop, dtype=float)
    if p.ndim == 1:
        c = _draw(as_pmf(p), length, rng)
    else:
        if p.shape[1] != n_locations:
            raise ValueError("local popularity matrix has wrong number of columns")
        c = np.empty(length, dtype=np.int64)
        for l in range(n_locations):
            mask = loc == l
            c[mask] = _draw(as_pmf(p[:, l] / p[:, l].sum()), int(mask.sum()), rng)
    return Trace(np.arange(1, length + 1, dtype=float), c, loc,
                 meta={"generator": "located_irm", "seed": seed})


def gen_replacement_irm(pop, length: int, replace_prob: float, seed=None) -> Trace:
    """IRM over popularity ranks whose occupants churn.

    Rank ``j`` is held by a content id; before each request, with
    probability ``replace_prob`` a uniformly chosen rank gets a fresh id
    that has never been requested. Requests pick a rank from ``pop``.
    """
    p = as_pmf(pop)
    if not 0 <= replace_prob <= 1:
        raise ValueError("replace_prob must lie in [0, 1]")
    rng = _rng(seed)
    ranks = _draw(p, length, rng) - 1
    swap = rng.random(length) < replace_prob
    which = rng.integers(0, p.size, size=length)
    owner = np.arange(1, p.size + 1, dtype=np.int64)
    next_id = p.size + 1
    out = np.empty(length, dtype=np.int64)
    for t in range(length):
        if swap[t]:
            owner[which[t]] = next_id
            next_id += 1
        out[t] = owner[ranks[t]]
    return Trace(np.arange(1, length + 1, dtype=float), out,
                 meta={"generator": "replacement_irm", "seed": seed,
                       "replace_prob": replace_prob})


# ---------------------------------------------------------------- SNM


@dataclass(frozen=True)
class SNMConfig:
    nu: float
    duration: float
    tau: float
    mean_popularity: float
    horizon: float

    def __post_init__(self):
        if min(self.nu, self.duration, self.mean_popularity, self.horizon) <= 0:
            raise ValueError("nu, duration, mean_popularity and horizon must be positive")
        if not 0 <= self.tau < 1:
            raise ValueError("SNM height exponent tau must lie in [0, 1)")

    @property
    def pareto_alpha(self) -> float:
        return math.inf if self.tau == 0 else 1.0 / self.tau

    @property
    def pareto_xmin(self) -> float:
        return self.mean_popularity * (1.0 - self.tau)


@dataclass
class Shots:
    arrival: np.ndarray
    height: np.ndarray
    duration: float

    def __len__(self) -> int:
        return int(self.arrival.size)


def sample_shots(cfg: SNMConfig, rng: np.random.Generator) -> Shots:
    """Shot arrivals on ``[-T, horizon)`` so the process is stationary from 0."""
    start = -cfg.duration
    span = cfg.horizon - start
    n = rng.poisson(cfg.nu * span)
    arrival = np.sort(start + span * rng.random(n))
    u = 1.0 - rng.random(n)  # uniform on (0, 1]
    height = u ** (-cfg.tau) * (1.0 - cfg.tau) * cfg.mean_popularity
    return Shots(arrival, height, cfg.duration)


def gen_snm(cfg: SNMConfig, seed=None, max_requests: int | None = None,
            return_shots: bool = False):
    """Rectangular shot-noise trace on ``[0, horizon)``.

    Content ``i`` is the ``i``-th shot in arrival order (1-based). With
    ``max_requests`` the merged trace is truncated to its first requests.
    """
    rng = _rng(seed)
    shots = sample_shots(cfg, rng)
    lo = np.maximum(shots.arrival, 0.0)
    hi = np.minimum(shots.arrival + cfg.duration, cfg.horizon)
    live = np.clip(hi - lo, 0.0, None)
    k = rng.poisson(shots.height * live)
    ids = np.repeat(np.arange(1, len(shots) + 1), k)
    times = np.repeat(lo, k) + rng.random(ids.size) * np.repeat(live, k)
    order = np.lexsort((ids, times))
    times, ids = times[order], ids[order]
    if max_requests is not None:
        times, ids = times[:max_requests], ids[:max_requests]
    trace = Trace(times, ids, meta={"generator": "snm", "seed": seed, "nu": cfg.nu,
                                    "duration": cfg.duration, "tau": cfg.tau,
                                    "mean_popularity": cfg.mean_popularity,
                                    "horizon": cfg.horizon})
    return (trace, shots) if return_shots else trace


def alive_count(shots: Shots, t) -> np.ndarray:
    """Number of shots alive at each instant in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = np.sort(shots.arrival)
    return np.searchsorted(a, t, side="right") - np.searchsorted(a, t - shots.duration, side="left")


def _log_post(p, k, a, alpha):
    # log of Poisson likelihood times Pareto density, up to constants
    return k * math.log(p * a) - p * a - (alpha + 1.0) * math.log(p)


def snm_posterior_mean(k: int, age: float, cfg: SNMConfig, tail_mass: float = 1e-9,
                       rtol: float = 1e-6) -> float:
    """``E[p | K = k, age]`` under the Pareto height prior of ``cfg``."""
    if age <= 0:
        raise ValueError("content age must be positive")
    if cfg.tau == 0:
        return cfg.mean_popularity
    alpha, xmin = cfg.pareto_alpha, cfg.pareto_xmin
    upper = xmin * tail_mass ** (-cfg.tau)
    mode = max(xmin, (k - alpha - 1.0) / age)
    # the likelihood bulk can be tiny next to the prior range; integrate it
    # separately so quadrature cannot step over it
    bulk = mode + 40.0 * math.sqrt(k + 1.0) / age
    upper = max(upper, bulk)
    shift = _log_post(mode, k, age, alpha)

    def dens(p, power):
        return p ** power * math.exp(_log_post(p, k, age, alpha) - shift)

    head = [xmin, mode, bulk] if xmin < mode else [xmin, bulk]

    def total(power):
        s = sum(integrate.quad(dens, a, b, args=(power,), epsrel=rtol, epsabs=0.0, limit=200)[0]
                for a, b in zip(head, head[1:]))
        if upper > bulk:  # tail beyond the bulk is negligible next to s
            s += integrate.quad(dens, bulk, upper, args=(power,), epsrel=rtol,
                                epsabs=rtol * 1e-3 * s, limit=200)[0]
        return s

    num, den = total(1), total(0)
    if not (den > 0 and math.isfinite(num)):
        raise ArithmeticError(f"posterior quadrature failed for k={k}, age={age}")
    return num / den


def snm_classify(observations, cfg: SNMConfig, gamma: float,
                 estimator: str = "posterior") -> np.ndarray:
    """Ids of the ``ceil(gamma * N_alive)`` contents with largest estimated popularity.

    ``observations`` maps content id to ``(K, age)``, or is a sequence of
    pairs indexed from 0. ``estimator="frequency"`` ranks by ``K/age`` instead.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if isinstance(observations, Mapping):
        ids = np.array(list(observations.keys()))
        obs = list(observations.values())
    else:
        obs = list(observations)
        ids = np.arange(len(obs))
    if not obs:
        return ids[:0]
    score = np.empty(len(obs))
    cache: dict[tuple[int, float], float] = {}
    for i, (k, a) in enumerate(obs):
        if estimator == "frequency":
            if a <= 0:
                raise ValueError("content age must be positive")
            score[i] = k / a
        else:
            key = (int(k), float(a))
            if key not in cache:
                cache[key] = snm_posterior_mean(int(k), float(a), cfg)
            score[i] = cache[key]
    size = math.ceil(gamma * len(obs))
    order = np.lexsort((ids, -score))
    return np.sort(ids[order[:size]])


# ---------------------------------------------------------------- SBM


@dataclass(frozen=True)
class SBMConfig:
    locations: int
    global_pop: np.ndarray

    def __post_init__(self):
        if self.locations < 1:
            raise ValueError("need at least one location")


def sbm_kernel(x, y):
    """``5 (1 - 2 d)^4`` with ``d`` the distance on the unit circle."""
    d = np.abs(np.asarray(x) - np.asarray(y))
    d = np.minimum(d, 1.0 - d)
    return 5.0 * (1.0 - 2.0 * d) ** 4


def gen_sbm(cfg: SBMConfig, seed=None, kernel=sbm_kernel, return_features: bool = False):
    """Local popularity matrix ``P[n, l]`` whose row averages equal the global pmf."""
    p0 = as_pmf(cfg.global_pop)
    rng = _rng(seed)
    x = rng.random(p0.size)
    y = rng.random(cfg.locations)
    k = kernel(x[:, None], y[None, :])
    s = k.sum(axis=1, keepdims=True)
    flat = s[:, 0] <= 0
    k[flat] = 1.0
    s[flat] = cfg.locations
    p = cfg.locations * p0[:, None] * k / s
    return (p, x, y) if return_features else p


# ---------------------------------------------------------------- IO


class TraceFormatError(ValueError):
    pass


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() and abs(t) < 2**53 else repr(float(t))


def write_trace(trace: Trace, path, header_lines=()) -> None:
    """Write CSV with optional leading ``#`` comment lines.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(trace, path, header_lines)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(trace, fh, header_lines)


def _write_rows(trace: Trace, fh, header_lines) -> None:
    for line in header_lines:
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "content_id", "location_id"])
    for t, c, l in zip(trace.times, trace.contents, trace.locations):
        w.writerow([_fmt_time(t), int(c), int(l)])


def read_trace(path) -> Trace:
    """Read ``time,content_id[,location_id]`` CSV; a header row is optional."""
    times, contents, locs = [], [], []
    with open(path, newline="") as fh:
        first = True
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            if first:
                first = False
                if not _is_number(row[0]):
                    continue
            if len(row) not in (2, 3):
                raise TraceFormatError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(row)}")
            try:
                t = float(row[0])
                c = int(row[1])
                l = int(row[2]) if len(row) == 3 and row[2].strip() else 0
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
            if c < 1 or l < 0 or not math.isfinite(t) or t < 0:
                raise TraceFormatError(f"{path}:{lineno}: invalid value in {row}")
            if times and t < times[-1]:
                raise TraceFormatError(f"{path}:{lineno}: time {t} precedes {times[-1]}")
            times.append(t)
            contents.append(c)
            locs.append(l)
    return Trace(np.array(times, dtype=float), np.array(contents, dtype=np.int64),
                 np.array(locs, dtype=np.int64), meta={"source": str(Path(path))})


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
