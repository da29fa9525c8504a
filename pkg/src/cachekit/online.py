"""No-regret caching: capped-simplex projection, online gradient ascent,
hindsight benchmark and regret bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eviction import simulate
from .traces import Trace

__all__ = [
    "ProjectionError",
    "project_capped_simplex",
    "project_capped_simplex_general",
    "diameter",
    "oga_step",
    "RegretTrace",
    "run_oga",
    "run_policy_regret",
    "best_static_hindsight",
    "oga_regret_bound",
    "regret_lower_bound",
    "adversarial_periodic_trace",
]

FEAS_EPS = 1e-12


class ProjectionError(ValueError):
    pass


def _finish(y: np.ndarray, m: float) -> np.ndarray:
    np.clip(y, 0.0, 1.0, out=y)
    s = y.sum()
    if s > m + FEAS_EPS:  # rounding residue; shave it off the interior
        inner = (y > 0) & (y < 1)
        if inner.any():
            y[inner] -= (s - m) / inner.sum()
            np.clip(y, 0.0, 1.0, out=y)
    return y


def project_capped_simplex(z, m: float, check: bool = True) -> np.ndarray:
    """Euclidean projection onto ``{0 <= y <= 1, sum(y) <= m}``.

    Sorts once, then runs the three-set water-filling loop: entries pinned
    at 1 (at most the top one), interior entries shifted by a common
    ``rho/2``, and entries clipped at 0. Prefix sums make each pass
    O(log N). Inputs with more than one entry above 1 break the
    at-most-one-overflow premise and are routed to
    :func:`project_capped_simplex_general` (or rejected if ``check`` is off).
    """
    z = np.asarray(z, dtype=float)
    if m < 0:
        raise ProjectionError("capacity must be nonnegative")
    clipped = np.clip(z, 0.0, 1.0)
    if clipped.sum() <= m:
        return clipped
    if np.count_nonzero(z > 1.0) > 1:
        if not check:
            raise ProjectionError("more than one coordinate exceeds 1")
        return project_capped_simplex_general(z, m)

    order = np.argsort(-z, kind="stable")
    zs = z[order]
    neg = -zs  # ascending copy for searchsorted
    csum = np.concatenate(([0.0], np.cumsum(zs)))
    n = zs.size

    def fill(a: int) -> tuple[float, int]:
        # M1 = first a entries, M2 = [a, b), M3 = [b, n)
        b = n
        while True:
            half_rho = (csum[b] - csum[a] + a - m) / (b - a)
            # entries whose shifted value is negative move to M3
            nb = max(a + 1, int(np.searchsorted(neg, -half_rho, side="left")))
            nb = min(nb, b)
            if nb == b:
                return half_rho, b
            b = nb

    half_rho, b = fill(0)
    a = 0
    if zs[0] - half_rho > 1.0:
        a = 1
        half_rho, b = fill(1)
    ys = np.zeros(n)
    ys[:a] = 1.0
    ys[a:b] = zs[a:b] - half_rho
    y = np.empty(n)
    y[order] = ys
    return _finish(y, m)


def project_capped_simplex_general(z, m: float) -> np.ndarray:
    """Projection for arbitrary ``z`` via the breakpoints of
    ``theta -> sum(clip(z - theta, 0, 1))``."""
    z = np.asarray(z, dtype=float)
    clipped = np.clip(z, 0.0, 1.0)
    if clipped.sum() <= m:
        return clipped
    bps = np.unique(np.concatenate((z, z - 1.0)))
    # phi is nonincreasing in theta and piecewise linear between breakpoints
    lo, hi = 0, bps.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if np.clip(z - bps[mid], 0.0, 1.0).sum() > m:
            lo = mid
        else:
            hi = mid
    t0, t1 = bps[lo], bps[hi]
    f0 = np.clip(z - t0, 0.0, 1.0).sum()
    f1 = np.clip(z - t1, 0.0, 1.0).sum()
    theta = t0 if f0 == f1 else t0 + (f0 - m) * (t1 - t0) / (f0 - f1)
    theta = max(theta, 0.0)
    return _finish(np.clip(z - theta, 0.0, 1.0), m)


def diameter(n: int, m: float) -> float:
    """Euclidean diameter of ``{0 <= y <= 1, sum(y) <= m}`` in ``n`` coordinates.

    Two disjoint ``m``-sets are furthest apart while they fit, so the
    squared diameter is ``min(2m, n)``.
    """
    return math.sqrt(min(2.0 * m, float(n)))


def oga_step(y, request: int, w, eta: float, m: float) -> np.ndarray:
    """One gradient-ascent step on the requested coordinate (1-based id), then projection."""
    z = np.array(y, dtype=float)
    z[request - 1] += eta * np.asarray(w, dtype=float)[request - 1]
    return project_capped_simplex(z, m)


@dataclass
class RegretTrace:
    """Per-slot accounting against a fixed comparator.

    ``hindsight_cum[t]`` is the utility the final best static configuration
    collects over the first ``t + 1`` slots, so ``regret[-1]`` is the
    terminal static regret.
    """

    u_policy: np.ndarray
    hindsight_cum: np.ndarray
    comparator: np.ndarray

    @property
    def policy_cum(self) -> np.ndarray:
        return np.cumsum(self.u_policy)

    @property
    def regret(self) -> np.ndarray:
        return self.hindsight_cum - self.policy_cum

    @property
    def hindsight_utility(self) -> float:
        return float(self.hindsight_cum[-1]) if self.hindsight_cum.size else 0.0

    @property
    def policy_utility(self) -> float:
        return float(self.u_policy.sum())

    @property
    def final_regret(self) -> float:
        return self.hindsight_utility - self.policy_utility

    def rows(self):
        pc = self.policy_cum
        for t in range(self.u_policy.size):
            yield t + 1, float(self.u_policy[t]), float(self.hindsight_cum[t]), float(self.hindsight_cum[t] - pc[t])


def _contents(trace) -> np.ndarray:
    if isinstance(trace, Trace):
        return trace.contents
    return np.asarray(trace, dtype=np.int64)


def _weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.ones(n)
    w = np.broadcast_to(np.asarray(w, dtype=float), (n,)).copy()
    if np.any(w <= 0):
        raise ValueError("utility weights must be positive")
    return w


def best_static_hindsight(trace, w=None, m: int = 1, n_catalog: int | None = None):
    """Best fixed integral cache for the whole trace: top-``m`` of ``w * counts``.

    Returns ``(y, utility)``; ties favour the smaller content id.
    """
    r = _contents(trace)
    n = int(n_catalog or (r.max() if r.size else 0))
    w = _weights(w, n)
    score = w * np.bincount(r, minlength=n + 1)[1:]
    y = np.zeros(n)
    y[np.argsort(-score, kind="stable")[:min(m, n)]] = 1.0
    return y, float(np.dot(y, score))


def _hindsight_series(r: np.ndarray, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.cumsum(w[r - 1] * y[r - 1])


def oga_regret_bound(n: int, m: float, w_max: float, t: int) -> float:
    """``diam * L * sqrt(T)``, the guarantee of the horizon-tuned step."""
    return diameter(n, m) * w_max * math.sqrt(t)


def run_oga(trace, w=None, m: int = 1, eta="horizon", n_catalog: int | None = None,
            y0=None) -> RegretTrace:
    """Online gradient ascent on the fractional cache.

    ``eta`` is a fixed step, ``"horizon"`` for ``diam/(L sqrt(T))`` or
    ``"sqrt"`` for ``1/sqrt(t)``. Utility of slot t is ``w_n y_t[n]`` with
    ``y_t`` the state before the update.
    """
    r = _contents(trace)
    n = int(n_catalog or r.max())
    w = _weights(w, n)
    t_len = r.size
    if eta == "horizon":
        step = lambda t: diameter(n, m) / (w.max() * math.sqrt(t_len))  # noqa: E731
    elif eta == "sqrt":
        step = lambda t: 1.0 / math.sqrt(t)  # noqa: E731
    else:
        fixed = float(eta)
        step = lambda t: fixed  # noqa: E731
    y = np.zeros(n) if y0 is None else np.array(y0, dtype=float)
    u = np.empty(t_len)
    total = y.sum()
    for t in range(t_len):
        i = r[t] - 1
        u[t] = w[i] * y[i]
        inc = step(t + 1) * w[i]
        new = min(1.0, y[i] + inc)
        # fast path: the step stays inside the box and the budget
        if y[i] + inc <= 1.0 and total + inc <= m:
            y[i] = new
            total += inc
            continue
        y[i] += inc
        y = project_capped_simplex(y, m)
        total = y.sum()
    ystar, _ = best_static_hindsight(r, w, m, n)
    return RegretTrace(u, _hindsight_series(r, w, ystar), ystar)


def run_policy_regret(policy, trace, m: int, w=None, n_catalog: int | None = None,
                      model: str = "I1", seed=None) -> RegretTrace:
    """Regret of an eviction policy; a hit on content n earns ``w_n``."""
    r = _contents(trace)
    n = int(n_catalog or r.max())
    w = _weights(w, n)
    rep = simulate(policy, r, m, seed=seed, model=model, record=True)
    u = w[r - 1] * rep.hit_series
    ystar, _ = best_static_hindsight(r, w, m, n)
    return RegretTrace(u, _hindsight_series(r, w, ystar), ystar)


def adversarial_periodic_trace(m: int, t: int) -> Trace:
    """``1, 2, ..., m+1, 1, 2, ...`` truncated to ``t`` requests."""
    if t < 1 or m < 1:
        raise ValueError("need m >= 1 and t >= 1")
    return Trace.from_sequence(np.arange(t) % (m + 1) + 1, generator="periodic", m=m)


def _covariance(w: np.ndarray) -> np.ndarray:
    s = float(np.sum(1.0 / w))
    cov = -np.full((w.size, w.size), 1.0 / s)
    cov[np.diag_indices(w.size)] += w
    return cov / s


def regret_lower_bound(w, m: int, n: int, t: int, mode: str = "mc",
                       mc_samples: int = 100_000, seed=None) -> float:
    """Asymptotic regret lower bound for any online caching policy.

    ``mc``: Monte-Carlo mean of the sum of the ``m`` largest entries of a
    centred Gaussian with the i.i.d.-adversary covariance, times ``sqrt(T)``.
    ``pairing``: the bound from pairing the top ``2m`` weights (needs ``m < n/2``).
    ``closed``: ``w sqrt(gamma/pi) sqrt(M T)`` for equal weights.
    """
    if m <= 0:
        return 0.0
    wv = _weights(w, n)
    if mode == "closed":
        if not np.allclose(wv, wv[0]):
            raise ValueError("closed form needs equal weights")
        return float(wv[0] * math.sqrt((m / n) / math.pi) * math.sqrt(m * t))
    if mode == "pairing":
        if not m < n / 2:
            raise ValueError("pairing bound needs m < n/2")
        top = np.sort(wv)[::-1][:2 * m]
        pairs = top[:m] + top[::-1][:m]  # largest with smallest balances the sums
        return float(np.sqrt(pairs).sum() / math.sqrt(2 * math.pi * np.sum(1.0 / wv)) * math.sqrt(t))
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    cov = _covariance(wv)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    root = vecs * np.sqrt(vals)
    rng = np.random.default_rng(seed)
    acc, done, batch = 0.0, 0, 10_000
    while done < mc_samples:
        k = min(batch, mc_samples - done)
        zs = rng.standard_normal((k, wv.size)) @ root.T
        acc += np.sort(zs, axis=1)[:, -m:].sum()
        done += k
    return float(acc / mc_samples * math.sqrt(t))
