"""Power-law popularity: harmonic numbers, hit-probability bounds, MLE fitting
and catalog-size estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PowerLaw",
    "FitResult",
    "CatalogEstimate",
    "ZipfMLE",
    "as_pmf",
    "harmonic",
    "harmonic_approx",
    "harmonic_bounds",
    "max_hit_probability",
    "max_hit_approx",
    "top_m",
    "log_likelihood",
    "fit_zipf_mle",
    "estimate_catalog",
]

TAU_BRACKET = (0.0, 5.0)
MLE_TOL = 1e-5
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def as_pmf(probs, atol: float = 1e-9) -> np.ndarray:
    """Validate ``probs`` as a probability vector and return a float array."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("popularity vector must be a nonempty 1-d array")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("popularity entries must be finite and nonnegative")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"popularity vector sums to {p.sum():.12g}, not 1")
    return p


def _powers(tau: float, n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=float) ** (-tau)


def harmonic(tau: float, n: int) -> float:
    """Generalized harmonic number ``sum_{j=1}^n j**-tau``.

    Summed with ``math.fsum`` so the result is correctly rounded even for
    ``n`` in the tens of millions.
    """
    if n < 0 or tau < 0:
        raise ValueError("harmonic needs n >= 0 and tau >= 0")
    if n == 0:
        return 0.0
    return math.fsum(_powers(tau, int(n)))


def harmonic_approx(tau: float, n: int) -> float:
    if n < 1:
        raise ValueError("harmonic_approx needs n >= 1")
    if abs(tau - 1.0) < 1e-9:
        return math.log(n)
    if tau < 1.0:
        return n ** (1.0 - tau) / (1.0 - tau)
    return 1.0 / (tau - 1.0)


def harmonic_bounds(tau: float, n: int) -> tuple[float, float]:
    """Integral bracket ``lo <= harmonic(tau, n) <= hi``.

    For ``tau == 1`` the bracket is ``[log(n+1), log(n) + 1]``.
    """
    if n < 1:
        raise ValueError("harmonic_bounds needs n >= 1")
    if abs(tau - 1.0) < 1e-12:
        return math.log(n + 1.0), math.log(n) + 1.0
    a = 1.0 - tau
    lo = ((n + 1.0) ** a - 1.0) / a
    hi = (n ** a - 1.0) / a + 1.0
    return lo, hi


@dataclass(frozen=True)
class PowerLaw:
    tau: float
    n_catalog: int

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.n_catalog < 1:
            raise ValueError("catalog size must be positive")

    def pmf(self) -> np.ndarray:
        w = _powers(self.tau, self.n_catalog)
        return w / math.fsum(w)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` content ids (1-based) i.i.d. from the pmf."""
        cdf = np.cumsum(self.pmf())
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(size), side="right") + 1


def top_m(pop, m: int) -> np.ndarray:
    """Indices (0-based) of the ``m`` most popular contents, ties to smallest index."""
    p = np.asarray(pop, dtype=float)
    order = np.argsort(-p, kind="stable")
    return np.sort(order[:m])


def max_hit_probability(pop, m: int) -> float:
    p = np.asarray(pop, dtype=float)
    if m < 0 or m > p.size:
        raise ValueError(f"cache size {m} outside [0, {p.size}]")
    return math.fsum(p[top_m(p, m)])


def max_hit_approx(tau: float, gamma: float, n: int) -> float:
    """Closed-form approximation of the top-``gamma*n`` mass of a power law."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if abs(tau - 1.0) < 1e-9:
        return math.log(gamma * n) / math.log(n)
    if tau < 1.0:
        return gamma ** (1.0 - tau)
    return 1.0


# ---------------------------------------------------------------- MLE


@dataclass(frozen=True)
class FitResult:
    tau_mle: float
    log_likelihood: float
    mode: str
    at_bound: bool = False

    def to_dict(self) -> dict:
        return {"tau_mle": self.tau_mle, "log_likelihood": self.log_likelihood,
                "mode": self.mode, "at_bound": self.at_bound}


def log_likelihood(tau: float, freqs, log_n: np.ndarray | None = None) -> float:
    """Average log-likelihood of labelled frequencies under PowerLaw(tau, len(freqs))."""
    f = np.asarray(freqs, dtype=float)
    if log_n is None:
        log_n = np.log(np.arange(1, f.size + 1, dtype=float))
    h = math.fsum(np.exp(-tau * log_n))
    return -tau * float(np.dot(f, log_n)) - math.log(h)


def _golden_max(fun, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def _parse_mode(mode: str, head: int | None) -> tuple[str, int | None]:
    if mode.startswith("ranked-head"):
        if "(" in mode:
            head = int(mode[mode.index("(") + 1:mode.rindex(")")])
        if head is None or head < 1:
            raise ValueError("ranked-head mode needs a positive head size")
        return "ranked-head", head
    if mode not in ("labeled", "ranked"):
        raise ValueError(f"unknown fit mode {mode!r}")
    return mode, None


def fit_zipf_mle(freqs, mode: str = "labeled", head: int | None = None,
                 bracket: tuple[float, float] = TAU_BRACKET,
                 tol: float = MLE_TOL) -> FitResult:
    """Maximum-likelihood power-law exponent from empirical frequencies.

    ``labeled`` takes position n as the content label; ``ranked`` sorts the
    frequencies first; ``ranked-head`` (or ``ranked-head(h)``) keeps the top
    ``head`` ranks, renormalized, with catalog size ``head``.
    """
    f = np.asarray(freqs, dtype=float)
    if f.size == 0:
        raise ValueError("empty frequency vector")
    if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-6:
        raise ValueError("frequencies must be nonnegative and sum to 1")
    mode, head = _parse_mode(mode, head)
    if mode != "labeled":
        f = np.sort(f)[::-1]
    if mode == "ranked-head":
        f = f[:head]
        f = f / f.sum()
    log_n = np.log(np.arange(1, f.size + 1, dtype=float))
    fun = lambda t: log_likelihood(t, f, log_n)  # noqa: E731
    tau = _golden_max(fun, bracket[0], bracket[1], tol)
    at_bound = tau - bracket[0] < 2 * tol or bracket[1] - tau < 2 * tol
    if at_bound:
        tau = bracket[0] if tau - bracket[0] < 2 * tol else bracket[1]
    label = f"ranked-head({head})" if mode == "ranked-head" else mode
    return FitResult(float(tau), fun(tau), label, bool(at_bound))


def counts_to_freqs(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    if c.sum() <= 0:
        raise ValueError("counts sum to zero")
    return c / c.sum()


class ZipfMLE:
    """Estimator wrapper around :func:`fit_zipf_mle`.

    ``fit`` takes per-content request counts (or a 1-d array of requested
    ids when ``from_samples=True``); the fitted exponent lands in ``tau_``.
    """

    def __init__(self, mode: str = "labeled", head: int | None = None,
                 from_samples: bool = False):
        self.mode = mode
        self.head = head
        self.from_samples = from_samples

    def get_params(self, deep: bool = True) -> dict:
        return {"mode": self.mode, "head": self.head,
                "from_samples": self.from_samples}

    def set_params(self, **params) -> "ZipfMLE":
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"invalid parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, X, y=None) -> "ZipfMLE":
        x = np.asarray(X)
        if self.from_samples:
            x = np.bincount(x.astype(int))[1:]
        self.result_ = fit_zipf_mle(counts_to_freqs(x), self.mode, self.head)
        self.tau_ = self.result_.tau_mle
        self.n_catalog_ = int(x.size if self.mode != "ranked-head" else self.head)
        return self

    def predict(self, X=None) -> np.ndarray:
        """Fitted pmf over the catalog seen in ``fit``."""
        if not hasattr(self, "tau_"):
            raise RuntimeError("ZipfMLE is not fitted")
        return PowerLaw(self.tau_, self.n_catalog_).pmf()

    def score(self, X, y=None) -> float:
        f = counts_to_freqs(X)
        return log_likelihood(self.tau_, f)


# ---------------------------------------------------------------- catalog


@dataclass(frozen=True)
class CatalogEstimate:
    visible: int
    expected_unseen: float
    estimated_total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "estimated_total", self.visible + self.expected_unseen)

    def to_dict(self) -> dict:
        return {"visible": self.visible, "expected_unseen": self.expected_unseen,
                "estimated_total": self.estimated_total}


def estimate_catalog(counts, total_requests: int | None = None,
                     probs=None) -> CatalogEstimate:
    """Expected number of never-requested contents, added to the visible catalog.

    By default the per-content probabilities are the empirical frequencies
    ``count / K``; pass ``probs`` (aligned with ``counts``) to use a model.
    """
    c = np.asarray(counts, dtype=float)
    if c.size == 0:
        raise ValueError("empty counts")
    k = int(c.sum()) if total_requests is None else int(total_requests)
    if k <= 0:
        raise ValueError("total request count must be positive")
    seen = c > 0
    p = c / k if probs is None else np.asarray(probs, dtype=float)
    e0 = math.fsum((1.0 - p[seen]) ** k)
    return CatalogEstimate(int(seen.sum()), float(e0))
