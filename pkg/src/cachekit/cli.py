"""Command-line experiment harness.

Every artifact starts with a provenance header (toolkit version, config
hash, seed) and is byte-identical when rerun with the same arguments.
Exit codes: 0 ok, 1 configuration error, 2 runtime error, 3 failed check.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bsca import (BipartiteCaching, best_static_bipartite, lazy_lru_baseline,
                   mlru_baseline, run_bsca, scenario_network)
from .eviction import Policy, che_characteristic_time, lru_hit_prob_che, simulate, ttl_cum_solve
from .gridlaws import scaling_experiment
from .netcache import (BipartiteNet, TreeNet, dump_placement, femto_greedy, femto_objective,
                       hierarchical_greedy, hierarchical_local_search, tree_routing_savings,
                       tree_served_requests)
from .online import best_static_hindsight, run_oga
from .popularity import PowerLaw, counts_to_freqs, estimate_catalog, fit_zipf_mle
from .traces import (SBMConfig, SNMConfig, TraceFormatError, gen_irm, gen_located_irm,
                     gen_poisson_irm, gen_replacement_irm, gen_sbm, gen_snm, read_trace,
                     write_trace)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class CheckFailed(click.ClickException):
    exit_code = EXIT_CHECK


# ---------------------------------------------------------------- plumbing


def config_hash(command: str, params: dict) -> str:
    blob = json.dumps({"command": command, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


class Run:
    """Resolved global options plus the output writer for one command."""

    def __init__(self, command: str, params: dict, seed, out, jobs: int, force: bool):
        self.command = command
        self.params = {k: v for k, v in params.items() if k not in ("out", "force", "jobs")}
        self.seed = seed
        self.out = out
        self.jobs = jobs
        self.force = force
        self.hash = config_hash(command, {**self.params, "seed": seed})

    def header(self) -> list[str]:
        return [f"cachekit {__version__}", f"command {self.command}",
                f"config {self.hash}", f"seed {self.seed}"]

    def need_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"{self.command} is stochastic: --seed is required")
        return int(self.seed)

    def _open(self, path: str | None):
        if path is None or path == "-":
            return None
        p = Path(path)
        if p.exists() and not self.force:
            raise ConfigError(f"{p} exists; pass --force to overwrite")
        return p

    def _write(self, text: str, path: str | None = None) -> None:
        target = self._open(path if path is not None else self.out)
        if target is None:
            click.echo(text, nl=False)
        else:
            target.write_text(text)

    def table(self, rows: list[dict], columns: list[str] | None = None, path: str | None = None) -> None:
        columns = columns or (list(rows[0]) if rows else [])
        buf = io.StringIO()
        for line in self.header():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
        self._write(buf.getvalue(), path)

    def json(self, result, path: str | None = None) -> None:
        doc = {"provenance": {"version": __version__, "command": self.command,
                              "config": self.hash, "seed": self.seed},
               "result": _jsonable(result)}
        self._write(json.dumps(doc, sort_keys=True, indent=2) + "\n", path)


def _common(fn):
    fn = click.option("--force", is_flag=True, default=None, help="Overwrite existing outputs.")(fn)
    fn = click.option("--jobs", type=int, default=None, help="Parallel repetitions.")(fn)
    fn = click.option("--out", type=str, default=None, help="Output path (default stdout).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Random seed.")(fn)
    return fn


def _run(ctx: click.Context, name: str, params: dict) -> Run:
    g = ctx.find_root().obj or {}
    seed = params.pop("seed", None)
    out = params.pop("out", None)
    jobs = params.pop("jobs", None)
    force = params.pop("force", None)
    seed = seed if seed is not None else g.get("seed")
    out = out if out is not None else g.get("out")
    jobs = jobs if jobs is not None else g.get("jobs") or 1
    force = bool(force if force is not None else g.get("force"))
    if jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return Run(name, params, seed, out, jobs, force)


def _load_trace(path: str):
    try:
        return read_trace(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"trace not found: {path}") from exc
    except TraceFormatError as exc:
        raise ConfigError(str(exc)) from exc


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _pmap(fn, args: list, jobs: int) -> list:
    """Map in order; results merge by index whatever the worker count."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, args))


# ---------------------------------------------------------------- group


@click.group()
@click.version_option(__version__, prog_name="cachekit")
@click.option("--seed", type=int, default=None, help="Random seed for stochastic commands.")
@click.option("--out", type=str, default=None, help="Output path (default stdout).")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel repetitions.")
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@click.pass_context
def cli(ctx, seed, out, jobs, force):
    """Caching models and algorithms toolkit."""
    ctx.obj = {"seed": seed, "out": out, "jobs": jobs, "force": force}


@cli.command("generate-trace")
@click.option("--model", type=click.Choice(["irm", "poisson", "snm", "located", "sbm", "replacement"]),
              default="irm", show_default=True)
@click.option("--tau", type=float, default=0.8, show_default=True)
@click.option("--n", "n_catalog", type=int, default=1000, show_default=True)
@click.option("--length", type=int, default=10_000, show_default=True)
@click.option("--rate", type=float, default=1.0, show_default=True, help="Poisson rate.")
@click.option("--horizon", type=float, default=1000.0, show_default=True)
@click.option("--locations", type=int, default=4, show_default=True)
@click.option("--shot-rate", type=float, default=10.0, show_default=True)
@click.option("--shot-duration", type=float, default=100.0, show_default=True)
@click.option("--mean-popularity", type=float, default=0.05, show_default=True)
@click.option("--replace-prob", type=float, default=0.01, show_default=True)
@_common
@click.pass_context
def generate_trace(ctx, **kw):
    """Synthesize a request trace as CSV (time, content_id, location_id)."""
    run = _run(ctx, "generate-trace", kw)
    seed = run.need_seed()
    pop = PowerLaw(kw["tau"], kw["n_catalog"]).pmf() if kw["model"] != "snm" else None
    model = kw["model"]
    if model == "irm":
        tr = gen_irm(pop, kw["length"], seed)
    elif model == "poisson":
        tr = gen_poisson_irm(pop, kw["rate"], kw["horizon"], seed)
    elif model == "located":
        tr = gen_located_irm(pop, kw["length"], kw["locations"], seed)
    elif model == "sbm":
        local = gen_sbm(SBMConfig(kw["locations"], pop), seed)
        tr = gen_located_irm(local, kw["length"], kw["locations"], seed + 1)
    elif model == "replacement":
        tr = gen_replacement_irm(pop, kw["length"], kw["replace_prob"], seed)
    else:
        cfg = SNMConfig(kw["shot_rate"], kw["shot_duration"], kw["tau"] if kw["tau"] < 1 else 0.8,
                        kw["mean_popularity"], kw["horizon"])
        tr = gen_snm(cfg, seed, max_requests=kw["length"])
    buf = io.StringIO()
    write_trace(tr, buf, run.header())
    run._write(buf.getvalue())


@cli.command("fit-zipf")
@click.option("--trace", "trace_path", required=True)
@click.option("--mode", type=click.Choice(["labeled", "ranked", "ranked-head"]), default="labeled",
              show_default=True)
@click.option("--head", type=int, default=None)
@_common
@click.pass_context
def fit_zipf(ctx, trace_path, mode, head, **kw):
    """Maximum-likelihood power-law exponent of a trace."""
    run = _run(ctx, "fit-zipf", {"trace": trace_path, "mode": mode, "head": head, **kw})
    if mode == "ranked-head" and not head:
        raise ConfigError("--head is required with --mode ranked-head")
    tr = _load_trace(trace_path)
    res = fit_zipf_mle(counts_to_freqs(tr.counts()), mode, head)
    run.json(res.to_dict())


@cli.command("estimate-catalog")
@click.option("--trace", "trace_path", required=True)
@_common
@click.pass_context
def estimate_catalog_cmd(ctx, trace_path, **kw):
    """Visible catalog plus the expected number of unseen contents."""
    run = _run(ctx, "estimate-catalog", {"trace": trace_path, **kw})
    tr = _load_trace(trace_path)
    run.json(estimate_catalog(tr.counts()).to_dict())


@cli.command("simulate")
@click.option("--trace", "trace_path", required=True)
@click.option("--policy", default="lru", show_default=True, help="lru, lfu, fifo, random, qlru:q, lru_k:k, belady")
@click.option("--cache", "m", type=int, required=True)
@click.option("--model", type=click.Choice(["I1", "I2"], case_sensitive=False), default="I1",
              show_default=True)
@_common
@click.pass_context
def simulate_cmd(ctx, trace_path, policy, m, model, **kw):
    """Replay a trace through an eviction policy."""
    run = _run(ctx, "simulate", {"trace": trace_path, "policy": policy, "cache": m, "model": model, **kw})
    try:
        pol = Policy.parse(policy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if pol.kind in ("random", "qlru"):
        run.need_seed()
    tr = _load_trace(trace_path)
    model = model.upper()
    rep = simulate(pol, tr, m, seed=run.seed, model=model)
    run.json({"policy": policy, "cache": m, "model": model, **rep.to_dict()})


@cli.command("che")
@click.option("--tau", type=float, required=True)
@click.option("--n", "n_catalog", type=int, required=True)
@click.option("--cache", "m", type=int, default=None, help="Cache size (or give --gamma).")
@click.option("--gamma", type=float, default=None, help="Cache size as a fraction of --n.")
@click.option("--rate", type=float, default=1.0, show_default=True)
@_common
@click.pass_context
def che_cmd(ctx, tau, n_catalog, m, gamma, rate, **kw):
    """Che's approximation of the LRU hit probability under IRM."""
    run = _run(ctx, "che", {"tau": tau, "n": n_catalog, "cache": m, "gamma": gamma, "rate": rate, **kw})
    if (m is None) == (gamma is None):
        raise ConfigError("give exactly one of --cache and --gamma")
    if m is None:
        m = int(round(gamma * n_catalog))
    pop = PowerLaw(tau, n_catalog).pmf()
    run.json({"characteristic_time": che_characteristic_time(pop, rate, m),
              "hit_probability": lru_hit_prob_che(pop, rate, m)})


@cli.command("ttl-cum")
@click.option("--tau", type=float, required=True)
@click.option("--n", "n_catalog", type=int, required=True)
@click.option("--cache", "m", type=float, required=True)
@click.option("--alpha", type=float, default=2.0, show_default=True)
@click.option("--rate", type=float, default=1.0, show_default=True)
@click.option("--reset/--no-reset", default=True, show_default=True)
@_common
@click.pass_context
def ttl_cum_cmd(ctx, tau, n_catalog, m, alpha, rate, reset, **kw):
    """Alpha-fair TTL timers by dual subgradient."""
    run = _run(ctx, "ttl-cum", {"tau": tau, "n": n_catalog, "cache": m, "alpha": alpha,
                                "rate": rate, "reset": reset, **kw})
    res = ttl_cum_solve(PowerLaw(tau, n_catalog).pmf(), rate, m, alpha, reset=reset)
    rows = [{"content": i + 1, "timer": t, "hit_probability": h}
            for i, (t, h) in enumerate(zip(res.config.timers, res.hit_probs))]
    run.table(rows, ["content", "timer", "hit_probability"])


def _read_weights(path: str | None, n: int):
    if path is None:
        return None
    try:
        w = np.loadtxt(path, delimiter=",", comments="#", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read weights {path}: {exc}") from exc
    if w.ndim == 2:
        w = w[:, -1]
    if w.size < n:
        raise ConfigError(f"weights file has {w.size} entries, trace needs {n}")
    return w[:n]


@cli.command("oga")
@click.option("--trace", "trace_path", required=True)
@click.option("--cache", "m", type=int, required=True)
@click.option("--eta", default="horizon", show_default=True, help="Number, 'horizon' or 'sqrt'.")
@click.option("--weights", "weights_path", default=None)
@_common
@click.pass_context
def oga_cmd(ctx, trace_path, m, eta, weights_path, **kw):
    """Online gradient ascent; writes the per-slot regret trace."""
    run = _run(ctx, "oga", {"trace": trace_path, "cache": m, "eta": eta, "weights": weights_path, **kw})
    if eta not in ("horizon", "sqrt"):
        try:
            eta = float(eta)
        except ValueError as exc:
            raise ConfigError(f"invalid --eta {eta!r}") from exc
    tr = _load_trace(trace_path)
    n = tr.n_catalog
    res = run_oga(tr, _read_weights(weights_path, n), m, eta, n_catalog=n)
    rows = [{"slot": s, "u_policy": u, "u_hindsight_cum": h, "regret": r} for s, u, h, r in res.rows()]
    run.table(rows, ["slot", "u_policy", "u_hindsight_cum", "regret"])


@cli.command("femto")
@click.option("--network", "net_path", required=True)
@_common
@click.pass_context
def femto_cmd(ctx, net_path, **kw):
    """Greedy femtocaching placement for a network JSON."""
    run = _run(ctx, "femto", {"network": net_path, **kw})
    try:
        net, lam = BipartiteNet.from_dict(_load_json(net_path))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pl = femto_greedy(net, lam)
    run.json({"placement": json.loads(dump_placement(pl)), "objective": femto_objective(net, lam, pl)})


@cli.command("hier")
@click.option("--tree", "tree_path", required=True)
@click.option("--algo", type=click.Choice(["local", "generalized", "greedy"]), default="local",
              show_default=True)
@click.option("--max-iters", type=int, default=None)
@_common
@click.pass_context
def hier_cmd(ctx, tree_path, algo, max_iters, **kw):
    """Hierarchical placement: local search or two-layer greedy.

    Tree JSON: ``{lam: [[...]], leaf_capacity, parent_capacity, d0, d, dprime}``.
    """
    run = _run(ctx, "hier", {"tree": tree_path, "algo": algo, "max_iters": max_iters, **kw})
    spec = _load_json(tree_path)
    try:
        net = TreeNet(np.array(spec["lam"], dtype=float), spec.get("leaf_capacity", 1),
                      int(spec.get("parent_capacity", 0)), float(spec.get("d0", 1.0)),
                      spec.get("d", 1.0), spec.get("dprime", 1.0),
                      cooperative=bool(spec.get("cooperative", True)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid tree description: {exc}") from exc
    if algo == "greedy":
        pl = hierarchical_greedy(net)
    else:
        pl = hierarchical_local_search(net, max_iters, seed=run.need_seed(), rule=algo)
    run.json({"placement": json.loads(dump_placement(pl)),
              "routing_savings": tree_routing_savings(net, pl),
              "served_requests": tree_served_requests(net, pl)})


def _bsca_net(spec: dict) -> BipartiteCaching:
    """``{caches:[{id,capacity}], locations:L, utility:[[loc, cache_id, d]], n_files}``."""
    try:
        caches = sorted(spec["caches"], key=lambda c: c["id"])
        ids = [c["id"] for c in caches if c["id"] != 0]
        cix = {c: i for i, c in enumerate(ids)}
        util = np.zeros((len(ids), int(spec["locations"])))
        for loc, cid, d in spec["utility"]:
            util[cix[cid], int(loc)] = float(d)
        cap = [int(c["capacity"]) for c in caches if c["id"] != 0]
        return BipartiteCaching(util, cap, int(spec["n_files"]))
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"invalid network description: {exc!r}") from exc


@cli.command("bsca")
@click.option("--trace", "trace_path", required=True, help="Located trace CSV.")
@click.option("--network", "net_path", default=None, help="Network JSON; default is the 3-cache scenario.")
@click.option("--eta", default="horizon", show_default=True, help="Number, 'horizon' or 'sqrt'.")
@click.option("--hindsight-iters", type=int, default=50_000, show_default=True,
              help="Supergradient iterations for the best static placement.")
@_common
@click.pass_context
def bsca_cmd(ctx, trace_path, net_path, eta, hindsight_iters, **kw):
    """Bipartite supergradient caching; writes the per-slot regret trace."""
    run = _run(ctx, "bsca", {"trace": trace_path, "network": net_path, "eta": eta,
                             "hindsight_iters": hindsight_iters, **kw})
    tr = _load_trace(trace_path)
    net = _bsca_net(_load_json(net_path)) if net_path else scenario_network(n_files=tr.n_catalog)
    if eta not in ("horizon", "sqrt"):
        try:
            eta = float(eta)
        except ValueError as exc:
            raise ConfigError(f"invalid --eta {eta!r}") from exc
    if tr.contents.max() > net.n_files or tr.locations.max() >= net.n_locations:
        raise ConfigError("trace refers to files or locations outside the network")
    res = run_bsca(tr, net, eta, hindsight=best_static_bipartite(tr, net, hindsight_iters))
    rows = [{"slot": s, "u_policy": u, "u_hindsight_cum": h, "regret": r} for s, u, h, r in res.rows()]
    run.table(rows, ["slot", "u_policy", "u_hindsight_cum", "regret"])


@cli.command("gridlaws")
@click.option("--tau", type=float, required=True)
@click.option("--regime", type=click.Choice(["k-then-n", "fixedK", "n-theta-k", "scaling-m"]),
              default="k-then-n", show_default=True)
@click.option("--sizes", default="1000,10000,100000,1000000", show_default=True)
@click.option("--m", "m_cache", type=float, default=2.0, show_default=True)
@click.option("--m-factor", type=float, default=None,
              help="N/(M K) for n-theta-k (default 0.5); M multiplier for scaling-m (default 1).")
@_common
@click.pass_context
def gridlaws_cmd(ctx, tau, regime, sizes, m_cache, m_factor, **kw):
    """Solve the density program across sizes and fit the log-log slope."""
    run = _run(ctx, "gridlaws", {"tau": tau, "regime": regime, "sizes": sizes, "m": m_cache,
                                 "m_factor": m_factor, **kw})
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
        if m_factor is None:
            m_factor = 1.0 if regime == "scaling-m" else 0.5
        fit = scaling_experiment("k-then-n" if regime == "fixedK" else regime, tau, size_list,
                                 m_cache, m_factor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    run.table(fit.rows, ["K", "N", "M", "C", "l", "r"])
    if run.out and run.out != "-":
        run.json({"regime": regime, "tau": tau, "slope": fit.slope, "r2": fit.r2},
                 path=str(Path(run.out).with_suffix(".summary.json")))
    else:
        click.echo(f"# slope {fit.slope!r} r2 {fit.r2!r}")


# ---------------------------------------------------------------- repro


def repro_fig_che(taus, n: int, gamma: float, length: int, seed: int) -> list[dict]:
    rows = []
    m = int(round(gamma * n))
    for i, tau in enumerate(taus):
        pop = PowerLaw(tau, n).pmf()
        tr = gen_irm(pop, length, seed + i)
        sim = simulate("lru", tr, m).hit_ratio
        rows.append({"tau": tau, "simulated": sim, "che": lru_hit_prob_che(pop, 1.0, m)})
    return rows


def _oga_scenario(args) -> dict:
    name, seed, n, m, length, eta, tau, dataset = args
    if name == "irm":
        tr = gen_irm(PowerLaw(tau, n).pmf(), length, seed)
    elif name == "snm":
        tr = gen_snm(snm_scenario(n, length), seed, max_requests=length)
    elif name == "replacement":
        tr = gen_replacement_irm(PowerLaw(tau, n).pmf(), length, 0.05, seed)
    else:
        tr = read_trace(dataset)
        tr = type(tr)(tr.times[:length], tr.contents[:length], tr.locations[:length])
    nc = int(tr.contents.max())
    oga = run_oga(tr, None, m, eta, n_catalog=nc)
    _, best = best_static_hindsight(tr, None, m, nc)
    t = len(tr)
    return {"scenario": name, "requests": t, "oga": oga.policy_utility / t,
            "lru": simulate("lru", tr, m).hits / t, "lfu": simulate("lfu", tr, m).hits / t,
            "best_static": best / t}


def snm_scenario(n: int, length: int, duration_frac: float = 0.2, tau: float = 0.8) -> SNMConfig:
    """About ``n`` shots on a unit horizon, sized for roughly ``1.5 * length`` requests."""
    nu = n / (1.0 + duration_frac)
    return SNMConfig(nu, duration_frac, tau, 1.5 * length / (nu * duration_frac), 1.0)


def repro_fig_oga_compare(seed: int, n: int = 10_000, gamma: float = 0.3, length: int = 20_000,
                          eta: float = 0.1, tau: float = 0.8, dataset: str | None = None,
                          jobs: int = 1) -> list[dict]:
    m = int(round(gamma * n))
    names = ["irm", "snm"] + (["dataset"] if dataset else []) + ["replacement"]
    args = [(nm, seed + i, n, m, length, eta, tau, dataset) for i, nm in enumerate(names)]
    return _pmap(_oga_scenario, args, jobs)


def _bsca_rep(args) -> dict:
    seed, length, tau, n, iters = args
    net = scenario_network(n_files=n)
    tr = gen_located_irm(PowerLaw(tau, n).pmf(), length, net.n_locations, seed)
    hs = best_static_bipartite(tr, net, iters)
    b = run_bsca(tr, net, hindsight=hs)
    return {"seed": seed, "bsca": b.policy_utility / length,
            "mlru": mlru_baseline(tr, net, hs).policy_utility / length,
            "lazy_lru": lazy_lru_baseline(tr, net, hs).policy_utility / length,
            "best_static": hs.utility / length, "regret": b.final_regret}


def repro_fig_bsca(seed: int, reps: int = 3, length: int = 50_000, tau: float = 0.8,
                   n: int = 100, jobs: int = 1, hindsight_iters: int = 50_000) -> list[dict]:
    return _pmap(_bsca_rep, [(seed + i, length, tau, n, hindsight_iters) for i in range(reps)], jobs)


GRID_TABLE = ((0.6, 0.5), (1.2, 0.3), (1.7, 0.0))


def repro_table_grid(sizes=(1000, 10_000, 100_000, 1_000_000), m: float = 2.0) -> list[dict]:
    rows = []
    for tau, expected in GRID_TABLE:
        fit = scaling_experiment("k-then-n", tau, sizes, m)
        rows.append({"tau": tau, "regime": "k-then-n", "slope": fit.slope, "r2": fit.r2,
                     "expected": expected})
    return rows


def repro_mle_unlabeled(seed: int, samples: int = 150_000, n: int = 57_000, tau: float = 0.6082,
                        head: int = 1000) -> list[dict]:
    rng = np.random.default_rng(seed)
    ids = PowerLaw(tau, n).sample(samples, rng)
    f = counts_to_freqs(np.bincount(ids, minlength=n + 1)[1:])
    rows = []
    for mode in ("labeled", "ranked", f"ranked-head({head})"):
        fit = fit_zipf_mle(f, mode)
        rows.append({"mode": mode, "tau_mle": fit.tau_mle, "rel_error": abs(fit.tau_mle - tau) / tau})
    return rows


@cli.group("repro")
def repro():
    """Regenerate the data behind a figure or table at desk scale."""


@repro.command("fig-che")
@click.option("--tau", "taus", type=float, multiple=True, default=(0.6, 0.8, 1.0), show_default=True)
@click.option("--n", type=int, default=10_000, show_default=True)
@click.option("--gamma", type=float, default=0.1, show_default=True)
@click.option("--length", type=int, default=1_000_000, show_default=True)
@click.option("--check", is_flag=True, help="Exit 3 unless |simulated - che| <= 0.02.")
@_common
@click.pass_context
def repro_fig_che_cmd(ctx, taus, n, gamma, length, check, **kw):
    run = _run(ctx, "repro fig-che", {"tau": list(taus), "n": n, "gamma": gamma, "length": length, **kw})
    rows = repro_fig_che(taus, n, gamma, length, run.need_seed())
    run.table(rows, ["tau", "simulated", "che"])
    if check and any(abs(r["simulated"] - r["che"]) > 0.02 for r in rows):
        raise CheckFailed("Che approximation off by more than 0.02")


@repro.command("fig-oga-compare")
@click.option("--n", type=int, default=10_000, show_default=True)
@click.option("--gamma", type=float, default=0.3, show_default=True)
@click.option("--length", type=int, default=20_000, show_default=True)
@click.option("--eta", type=float, default=0.1, show_default=True)
@click.option("--tau", type=float, default=0.8, show_default=True)
@click.option("--dataset", default=None, help="Optional trace CSV for the dataset scenario.")
@_common
@click.pass_context
def repro_fig_oga_cmd(ctx, n, gamma, length, eta, tau, dataset, **kw):
    run = _run(ctx, "repro fig-oga-compare", {"n": n, "gamma": gamma, "length": length, "eta": eta,
                                             "tau": tau, "dataset": dataset, **kw})
    if dataset and not Path(dataset).exists():
        raise ConfigError(f"dataset not found: {dataset}")
    rows = repro_fig_oga_compare(run.need_seed(), n, gamma, length, eta, tau, dataset, run.jobs)
    run.table(rows, ["scenario", "requests", "oga", "lru", "lfu", "best_static"])


@repro.command("fig-bsca")
@click.option("--reps", type=int, default=3, show_default=True)
@click.option("--length", type=int, default=50_000, show_default=True)
@click.option("--tau", type=float, default=0.8, show_default=True)
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--hindsight-iters", type=int, default=50_000, show_default=True,
              help="Supergradient iterations for the best static placement.")
@_common
@click.pass_context
def repro_fig_bsca_cmd(ctx, reps, length, tau, n, hindsight_iters, **kw):
    run = _run(ctx, "repro fig-bsca", {"reps": reps, "length": length, "tau": tau, "n": n,
                                       "hindsight_iters": hindsight_iters, **kw})
    rows = repro_fig_bsca(run.need_seed(), reps, length, tau, n, run.jobs, hindsight_iters)
    run.table(rows, ["seed", "bsca", "mlru", "lazy_lru", "best_static", "regret"])


@repro.command("table-grid-const-M")
@click.option("--sizes", default="1000,10000,100000,1000000", show_default=True)
@click.option("--m", "m_cache", type=float, default=2.0, show_default=True)
@_common
@click.pass_context
def repro_table_grid_cmd(ctx, sizes, m_cache, **kw):
    run = _run(ctx, "repro table-grid-const-M", {"sizes": sizes, "m": m_cache, **kw})
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid --sizes: {exc}") from exc
    run.table(repro_table_grid(size_list, m_cache), ["tau", "regime", "slope", "r2", "expected"])


@repro.command("mle-unlabeled")
@click.option("--samples", type=int, default=150_000, show_default=True)
@click.option("--n", type=int, default=57_000, show_default=True)
@click.option("--tau", type=float, default=0.6082, show_default=True)
@click.option("--head", type=int, default=1000, show_default=True)
@_common
@click.pass_context
def repro_mle_cmd(ctx, samples, n, tau, head, **kw):
    run = _run(ctx, "repro mle-unlabeled", {"samples": samples, "n": n, "tau": tau, "head": head, **kw})
    run.table(repro_mle_unlabeled(run.need_seed(), samples, n, tau, head), ["mode", "tau_mle", "rel_error"])


def main(argv=None) -> int:
    """Console entry point with the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="cachekit", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        exc.show()
        if isinstance(exc, (click.UsageError, ConfigError)):
            return EXIT_CONFIG
        return exc.exit_code
    except AssertionError as exc:
        click.echo(f"check failed: {exc}", err=True)
        return EXIT_CHECK
    except Exception as exc:  # noqa: BLE001 - map everything else to a runtime failure
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
