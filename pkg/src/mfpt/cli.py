"""Command-line experiment runner.

An experiment is described by one TOML file::

    experiment = "ring_sweep"
    seed = 0

    [domain]
    kind = "disk"
    R = 1.0

    [[traps]]
    center = [0.5, 0.0]
    radius = 0.05

    [params]
    h = 0.01
    eps = 0.003
    ms = [2, 5, 10]

``mfpt run`` validates every parameter, runs the experiment and writes
``results.json``, one or more CSV tables and ``manifest.txt`` into the output
directory. ``mfpt compare`` reports relative differences between the
``results`` sections of two such files.
"""
from __future__ import annotations

import argparse
import csv
import fnmatch
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import asymptotics as asy
from . import optimize as opt
from .band import build_band, validate_traps
from .errors import ConfigError, MfptError, SchemaMismatch
from .geometry import Disk, Ellipse, EllipseOrbitTrap, Rectangle, RingOrbitTrap, Star, StationaryTrap
from .pointsink import max_cutoff
from .quadrature import build_weights
from .solver import relax_periodic, solve_rotating_frame, solve_stationary

__all__ = ["ExperimentConfig", "Tolerance", "Difference", "load_config", "run", "compare", "main", "EXPERIMENTS"]

REQUIRED = object()


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description."""

    experiment: str
    domain: Any
    traps: tuple
    params: dict
    seed: int = 0
    text: str = ""
    source: str = ""

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "domain": _domain_dict(self.domain),
                "traps": [_trap_dict(t) for t in self.traps], "params": self.params}


def _domain_from(d: dict):
    d = dict(d)
    kind = d.pop("kind", "disk")
    builders = {"disk": (Disk, {"R"}), "ellipse": (Ellipse, {"a", "b"}),
                "star": (Star, {"sigma", "N"}), "rectangle": (Rectangle, {"a0", "b0"})}
    if kind not in builders:
        raise ConfigError(f"unknown domain kind {kind!r}")
    cls, keys = builders[kind]
    extra = set(d) - keys
    if extra:
        raise ConfigError(f"unknown {kind} key(s): {', '.join(sorted(extra))}")
    if kind == "ellipse" and "a" not in d and "b" in d:
        d["a"] = 1.0 / float(d["b"])
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain: {exc}") from exc


def _domain_dict(dom) -> dict:
    kinds = {Disk: "disk", Ellipse: "ellipse", Star: "star", Rectangle: "rectangle"}
    out = {"kind": kinds[type(dom)]}
    for k in {"disk": ("R",), "ellipse": ("a", "b"), "star": ("sigma", "N"),
              "rectangle": ("a0", "b0")}[out["kind"]]:
        out[k] = getattr(dom, k)
    return out


def _trap_from(k: int, t: dict):
    t = dict(t)
    try:
        radius = float(t.pop("radius"))
        if "r0" in t:
            trap = RingOrbitTrap(r0=float(t.pop("r0")), radius=radius, omega=float(t.pop("omega")),
                                 phase=float(t.pop("phase", 0.0)))
        elif "scale" in t:
            trap = EllipseOrbitTrap(scale=float(t.pop("scale")), radius=radius,
                                    omega=float(t.pop("omega")), a=float(t.pop("a")),
                                    b=float(t.pop("b")), phase=float(t.pop("phase", 0.0)))
        else:
            c = t.pop("center")
            if len(c) != 2:
                raise ValueError("center needs two coordinates")
            trap = StationaryTrap(center=tuple(c), radius=radius)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"trap {k}: {exc}") from exc
    if t:
        raise ConfigError(f"trap {k}: unknown key(s) {', '.join(sorted(t))}")
    return trap


def _trap_dict(tr) -> dict:
    if isinstance(tr, StationaryTrap):
        return {"center": list(tr.center), "radius": tr.radius}
    if isinstance(tr, RingOrbitTrap):
        return {"r0": tr.r0, "radius": tr.radius, "omega": tr.omega, "phase": tr.phase}
    return {"scale": tr.scale, "radius": tr.radius, "omega": tr.omega, "a": tr.a, "b": tr.b,
            "phase": tr.phase}


def _check_params(experiment: str, raw: dict) -> dict:
    schema = EXPERIMENTS[experiment].schema
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"{experiment}: unknown parameter(s) {', '.join(sorted(unknown))}")
    out = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"parameter {key!r}: {exc}") from exc
        elif default is REQUIRED:
            raise ConfigError(f"{experiment}: missing parameter {key!r}")
        else:
            out[key] = default
    for key in ("h", "D", "eps", "dr", "dx", "tol"):
        v = out.get(key)
        if isinstance(v, float) and not v > 0:
            raise ConfigError(f"parameter {key!r} must be positive")
    return out


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file.

    Raises
    ------
    ConfigError
        On any malformed entry, including traps outside the domain or
        overlapping each other; the message names the offending trap.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    data = dict(data)
    experiment = data.pop("experiment", None)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    seed = data.pop("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    domain = _domain_from(data.pop("domain", {"kind": "disk"}))
    traps = tuple(_trap_from(k, t) for k, t in enumerate(data.pop("traps", [])))
    params = _check_params(experiment, data.pop("params", {}))
    if data:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(data))}")
    cfg = ExperimentConfig(experiment=experiment, domain=domain, traps=traps, params=params,
                           seed=seed, text=text, source=str(path))
    moving = [t for t in traps if getattr(t, "moving", False)]
    times = np.linspace(0.0, moving[0].period, 33)[:-1] if moving else [0.0]
    try:
        for t in times:
            validate_traps(domain, traps, float(t))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    EXPERIMENTS[experiment].validate(cfg)
    return cfg


# ------------------------------------------------------------- converters

def _float(x):
    if isinstance(x, bool):
        raise TypeError("expected a number")
    return float(x)


def _int(x):
    if isinstance(x, bool) or int(x) != x:
        raise TypeError("expected an integer")
    return int(x)


def _str(choices):
    def conv(x):
        if x not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return x
    return conv


def _list(conv):
    def inner(x):
        if not isinstance(x, (list, tuple)):
            x = [x]
        if len(x) == 0:
            raise ValueError("empty list")
        return [conv(v) for v in x]
    return inner


def _pair(x):
    if len(x) != 2:
        raise ValueError("expected [low, high]")
    lo, hi = _float(x[0]), _float(x[1])
    if hi < lo:
        raise ValueError("expected low <= high")
    return [lo, hi]


def _bool(x):
    if not isinstance(x, bool):
        raise TypeError("expected true or false")
    return x


# ------------------------------------------------------------ bookkeeping

class OperationFailed(Exception):
    def __init__(self, name: str, cause: BaseException):
        super().__init__(f"{name} failed: {type(cause).__name__}: {cause}")
        self.name = name
        self.cause = cause


@dataclass
class Outcome:
    """What an experiment produced, before serialisation."""

    results: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    operations: list = field(default_factory=list)

    def call(self, name: str, fn: Callable, *args, **kwargs):
        """Run one library operation, recording its name for the manifest."""
        if name not in self.operations:
            self.operations.append(name)
        try:
            return fn(*args, **kwargs)
        except OperationFailed:
            raise
        except Exception as exc:  # noqa: BLE001
            raise OperationFailed(name, exc) from exc

    def note(self, name: str):
        """Record an operation invoked indirectly, e.g. inside an objective."""
        if name not in self.operations:
            self.operations.append(name)

    def table(self, name: str, header: list, rows: list):
        self.tables[name] = (header, rows)


@dataclass(frozen=True)
class Experiment:
    runner: Callable
    schema: dict
    validate: Callable = lambda cfg: None


COMMON = {"D": (_float, 1.0), "h": (_float, 0.02), "weights": (_str(("modified", "trivial")), "modified")}
RELAX = {"dt": (_float, None), "tol": (_float, 1e-6),
         "scheme": (_str(("forward_euler", "backward_euler")), "forward_euler"),
         "max_periods": (_int, 200)}
PSO_KEYS = {"n_particles": (_int, 40), "n_iters": (_int, 200), "refine": (_bool, True),
            "clearance": (_float, None)}


def _field_rows(xy, values):
    return [[float(x), float(y), float(u)] for (x, y), u in zip(xy, values)]


def _ring(m, r, eps, phase=0.0):
    ang = phase + 2 * math.pi * np.arange(m) / m
    return tuple(StationaryTrap((r * math.cos(a), r * math.sin(a)), eps) for a in ang)


def _validate_layout(domain, traps, what):
    try:
        validate_traps(domain, traps, 0.0)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ------------------------------------------------------------ experiments

def _run_solve(cfg, out, jobs, dump):
    p = cfg.params
    if not cfg.traps:
        raise ConfigError("solve needs at least one trap")
    if any(getattr(t, "moving", False) for t in cfg.traps):
        sol = out.call("solver.relax_periodic", relax_periodic, cfg.domain, cfg.traps, p["D"], p["h"],
                       p["dt"], p["tol"], p["scheme"], max_periods=p["max_periods"], weights=p["weights"])
        out.results["avg"] = out.call("quadrature.average_periodic", lambda: sol.avg)
        out.diagnostics.update(n_periods=sol.n_periods_run, dt=sol.dt, n_steps=sol.n_steps,
                               residual_history=sol.residual_history)
        out.table("avg_series", ["t", "avg"], [[float(t), float(a)] for t, a in zip(sol.times, sol.avg_series)])
        if dump:
            m = sol.band.kind >= 0
            out.table("field", ["x", "y", "u"], _field_rows(sol.band.xy[m], sol.final[m]))
        return
    f = out.call("solver.solve_stationary", solve_stationary, cfg.domain, cfg.traps, p["D"], p["h"],
                 weights=p["weights"], subgrid=p["subgrid"])
    out.results["avg"] = f.avg
    out.diagnostics["residual"] = f.meta["residual"]
    if f.sink_strengths is not None:
        out.diagnostics["sink_strengths"] = list(f.sink_strengths)
    if dump:
        xy, u = f.domain_values()
        out.table("field", ["x", "y", "u"], _field_rows(xy, u))


def _punctured_exact(r, eps, D):
    return ((eps**2 - r**2) / 4.0 + 0.5 * np.log(r / eps)) / D


def _orders(hs, errs):
    return [float(math.log(errs[i - 1] / errs[i]) / math.log(hs[i - 1] / hs[i]))
            if errs[i] > 0 and errs[i - 1] > 0 else float("nan") for i in range(1, len(hs))]


def fitted_order(hs, errs) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _run_convergence(cfg, out, jobs, dump):
    p = cfg.params
    hs = p["hs"]
    if p["kind"] == "solution":
        rows = []
        for eps in p["eps"]:
            dom = Disk(1.0)

            def err(h, eps=eps):
                f = out.call("solver.solve_stationary", solve_stationary, dom,
                             (StationaryTrap((0.0, 0.0), eps),), p["D"], h, weights=p["weights"])
                xy, u = f.domain_values()
                r = np.hypot(xy[:, 0], xy[:, 1])
                return float(np.max(np.abs(u - _punctured_exact(r, eps, p["D"]))))

            errs = _map(err, hs, jobs)
            orders = _orders(hs, errs)
            out.results[f"eps={eps:g}"] = {"linf": errs, "order": orders,
                                           "fitted_order": fitted_order(hs, errs)}
            for i, h in enumerate(hs):
                rows.append([eps, h, errs[i], orders[i - 1] if i else float("nan")])
        out.table("convergence", ["eps", "h", "linf_error", "order"], rows)
        return
    traps = cfg.traps
    exact = cfg.domain.area - sum(math.pi * t.radius**2 for t in traps)
    rows = []
    for variant in p["variants"]:
        def area(h, variant=variant):
            band = out.call("band.build_band", build_band, cfg.domain, traps, 0.0, h)
            return out.call("quadrature.build_weights", build_weights, band, variant).area

        areas = _map(area, hs, jobs)
        errs = [abs(a - exact) for a in areas]
        orders = _orders(hs, errs)
        out.results[variant] = {"area": areas, "error": errs, "order": orders,
                                "fitted_order": fitted_order(hs, errs)}
        for i, h in enumerate(hs):
            rows.append([variant, h, areas[i], errs[i], orders[i - 1] if i else float("nan")])
    out.results["exact_area"] = exact
    out.table("convergence", ["weights", "h", "area", "abs_error", "order"], rows)


def _validate_convergence(cfg):
    p = cfg.params
    if p["kind"] == "area" and not cfg.traps:
        raise ConfigError("area convergence needs traps")
    if p["kind"] == "solution" and p["eps"] is None:
        raise ConfigError("solution convergence needs 'eps'")
    if p["kind"] == "solution" and not isinstance(cfg.domain, Disk):
        raise ConfigError("solution convergence uses the punctured unit disk")


def _per_m(value, ms, name):
    if value is None:
        return [None] * len(ms)
    if isinstance(value, list) and value and isinstance(value[0], list):
        if len(value) != len(ms):
            raise ConfigError(f"{name} needs one entry per m")
        return value
    if isinstance(value, list) and len(value) == len(ms) and name == "cutoff":
        return value
    return [value] * len(ms)


def _ring_cutoff(domain, m, eps, h, rs):
    # one cutoff for the whole sweep keeps the error smooth in r
    lims = [max_cutoff(domain, _ring(m, r, eps), 0.0, 0, h) for r in rs]
    return min(0.25, min(lims))


def _run_ring_sweep(cfg, out, jobs, dump):
    p = cfg.params
    ranges = _per_m(p["r_range"], p["ms"], "r_range")
    cuts = _per_m(p["cutoff"], p["ms"], "cutoff")
    rows = []
    for m, rng, cut in zip(p["ms"], ranges, cuts):
        key = f"m={m}"
        if p["method"] == "asymptotic":
            rc = out.call("asymptotics.optimal_ring_radius_leading", asy.optimal_ring_radius_leading, m)
            u = out.call("asymptotics.leading_avg", asy.leading_avg, m, rc, p["eps"], p["D"])
            out.results[key] = {"argmin": rc, "min": u}
            continue
        lo, hi = rng if rng is not None else _default_ring_range(m, p["eps"], p["h"])
        grid = opt._grid(lo, hi, p["dr"])
        if cut is None:
            cut = _ring_cutoff(cfg.domain, m, p["eps"], p["h"], grid)
        subgrid = "point" if p["eps"] < p["h"] else "raise"

        def objective(r, m=m, cut=cut, subgrid=subgrid):
            return solve_stationary(cfg.domain, _ring(m, r, p["eps"]), p["D"], p["h"],
                                    weights=p["weights"], subgrid=subgrid,
                                    sink_cutoff=cut if subgrid == "point" else None).avg

        out.note("solver.solve_stationary")
        res = out.call("optimize.sweep_1d", opt.sweep_1d, objective, (lo, hi), p["dr"], jobs=jobs)
        out.results[key] = {"argmin": res.argmin, "min": res.min}
        out.diagnostics[key] = {"cutoff": cut, "r_range": [lo, hi]}
        rows += [[m, r, u] for r, u in res.samples]
    if rows:
        out.table("ring_sweep", ["m", "r", "avg"], rows)


def _default_ring_range(m, eps, h):
    # bracket the leading-order optimum
    rc = asy.optimal_ring_radius_leading(m)
    return round(max(rc - 0.1, 0.05), 3), round(min(rc + 0.1, 1.0 - eps - 6 * h), 3)


def _validate_ring(cfg):
    p = cfg.params
    if not isinstance(cfg.domain, Disk):
        raise ConfigError("ring_sweep runs in a disk")
    if p["method"] == "asymptotic":
        return
    for m, rng in zip(p["ms"], _per_m(p["r_range"], p["ms"], "r_range")):
        lo, hi = rng if rng is not None else _default_ring_range(m, p["eps"], p["h"])
        for r in (lo, hi):
            _validate_layout(cfg.domain, _ring(m, r, p["eps"]), f"ring m={m} at r={r:g}")


def _ellipse(b, a=None):
    return Ellipse(a=1.0 / b if a is None else a, b=b)


def _run_ellipse_two(cfg, out, jobs, dump):
    p = cfg.params
    rows = []
    for b in p["bs"]:
        dom = _ellipse(b)
        lo, hi = p["x_range"] if p["x_range"] is not None else (p["eps"] + 2 * p["h"], dom.a - p["eps"] - 4 * p["h"])

        def objective(x, dom=dom):
            traps = (StationaryTrap((x, 0.0), p["eps"]), StationaryTrap((-x, 0.0), p["eps"]))
            return solve_stationary(dom, traps, p["D"], p["h"], weights=p["weights"]).avg

        out.note("solver.solve_stationary")
        res = out.call("optimize.sweep_1d", opt.sweep_1d, objective, (lo, hi), p["dx"], jobs=jobs)
        out.results[f"b={b:g}"] = {"argmin": res.argmin, "min": res.min}
        if p["asymptotic"]:
            rc, u = out.call("asymptotics.two_trap_ellipse_expansion", asy.two_trap_ellipse_expansion,
                             b, p["eps"], p["D"])
            out.diagnostics[f"b={b:g}"] = {"asymptotic_argmin": rc, "asymptotic_min": u}
        rows += [[b, x, u] for x, u in res.samples]
    out.table("ellipse_two_trap", ["b", "x0", "avg"], rows)


def _validate_ellipse_two(cfg):
    p = cfg.params
    for b in p["bs"]:
        if not 0 < b <= 1:
            raise ConfigError("ellipse_two_trap needs 0 < b <= 1")
        if p["x_range"] is not None:
            dom = _ellipse(b)
            for x in p["x_range"]:
                _validate_layout(dom, (StationaryTrap((x, 0.0), p["eps"]), StationaryTrap((-x, 0.0), p["eps"])),
                                 f"b={b:g}, x0={x:g}")


def _pso_run(out, objective, feasible, bounds, p, seed, x0_step):
    cfg = opt.PsoConfig(bounds=bounds, n_particles=p["n_particles"], n_iters=p["n_iters"], seed=seed)
    res = out.call("optimize.pso", opt.pso, objective, cfg, feasible=feasible)
    x, val = res.x, res.value
    if p["refine"]:
        x, val = out.call("optimize.local_refine", opt.local_refine, objective, x, x0_step, feasible=feasible)
    out.table("pso_trace", ["iteration", "best"], [[i, v] for i, v in enumerate(res.trace)])
    return np.asarray(x, dtype=float), float(val), res


def _clearance(p):
    return p["clearance"] if p["clearance"] is not None else 2 * p["h"]


def _run_ellipse_three(cfg, out, jobs, dump):
    p = cfg.params
    dom = _ellipse(p["b"], p["a"])
    eps = p["eps"]

    def centers(x):
        return np.asarray(x, dtype=float).reshape(3, 2)

    def feasible(x):
        return opt.layout_feasible(dom, centers(x), eps, _clearance(p))

    def objective(x):
        traps = tuple(StationaryTrap(tuple(c), eps) for c in centers(x))
        return solve_stationary(dom, traps, p["D"], p["h"], weights=p["weights"]).avg

    out.note("solver.solve_stationary")
    out.note("optimize.layout_feasible")
    x, val, _ = _pso_run(out, objective, feasible, p["bounds"], p, cfg.seed, 2 * p["h"])
    c = centers(x)
    out.results["centers"] = c.tolist()
    out.results["min"] = val
    tri = 0.5 * abs((c[1, 0] - c[0, 0]) * (c[2, 1] - c[0, 1]) - (c[2, 0] - c[0, 0]) * (c[1, 1] - c[0, 1]))
    out.results["triangle_area"] = float(tri)


def _validate_pso_bounds(cfg, dim):
    b = cfg.params["bounds"]
    if len(b) != dim:
        raise ConfigError(f"bounds needs {dim} [low, high] pairs")


def _run_star(cfg, out, jobs, dump):
    p = cfg.params
    dom = cfg.domain
    m = p["m"] if p["m"] is not None else dom.N
    eps = p["eps"]

    if p["layout"] == "ring":
        def centers(x):
            r, phase = x
            return np.array([t.center for t in _ring(m, r, eps, phase)])
    else:
        def centers(x):
            return np.asarray(x, dtype=float).reshape(m, 2)

    def feasible(x):
        return opt.layout_feasible(dom, centers(x), eps, _clearance(p))

    def objective(x):
        traps = tuple(StationaryTrap(tuple(c), eps) for c in centers(x))
        return solve_stationary(dom, traps, p["D"], p["h"], weights=p["weights"]).avg

    out.note("solver.solve_stationary")
    out.note("optimize.layout_feasible")
    x, val, _ = _pso_run(out, objective, feasible, p["bounds"], p, cfg.seed, 2 * p["h"])
    c = centers(x)
    out.results["centers"] = c.tolist()
    out.results["radii"] = np.hypot(c[:, 0], c[:, 1]).tolist()
    out.results["min"] = val


def _validate_star(cfg):
    if not isinstance(cfg.domain, Star):
        raise ConfigError("star_pso needs a star domain")
    p = cfg.params
    m = p["m"] if p["m"] is not None else cfg.domain.N
    _validate_pso_bounds(cfg, 2 if p["layout"] == "ring" else 2 * m)


def _run_moving(cfg, out, jobs, dump):
    p = cfg.params
    stationary = tuple(t for t in cfg.traps if not getattr(t, "moving", False))
    relax = {"tol": p["tol"], "scheme": p["scheme"], "max_periods": p["max_periods"], "weights": p["weights"]}
    if p["dt"] is not None:
        relax["dt"] = p["dt"]

    def one(omega):
        return opt.optimize_moving_radius(cfg.domain, omega, p["eps"], p["D"], p["h"], p["dr"],
                                          stationary=stationary,
                                          r_range=tuple(p["r_range"]) if p["r_range"] else None,
                                          warm_start=p["warm_start"], **relax)

    out.note("solver.relax_periodic")
    res = out.call("optimize.optimize_moving_radius", _map, one, p["omegas"], jobs)
    rows = []
    for omega, r in zip(p["omegas"], res):
        out.results[f"omega={omega:g}"] = {"argmin": r.argmin, "min": r.min}
        rows += [[omega, x, u] for x, u in r.samples]
    out.table("moving_radius", ["omega", "r", "avg"], rows)
    if len(p["omegas"]) > 1:
        # first frequency whose optimum leaves the centre
        moved = [w for w, r in zip(p["omegas"], res) if r.argmin > 0.0]
        still = [w for w, r in zip(p["omegas"], res) if r.argmin == 0.0]
        out.results["bifurcation_bracket"] = [max(still) if still else None, min(moved) if moved else None]


def _validate_moving(cfg):
    if not isinstance(cfg.domain, (Disk, Ellipse)):
        raise ConfigError("moving_radius needs a disk or an ellipse")
    if any(getattr(t, "moving", False) for t in cfg.traps):
        raise ConfigError("list only the stationary traps; the moving trap is generated")


def _run_rotating(cfg, out, jobs, dump):
    p = cfg.params
    stationary = tuple(cfg.traps)

    def one(omega):
        trap = RingOrbitTrap(r0=p["r0"], radius=p["eps"], omega=omega)
        if p["method"] == "frame":
            f = solve_rotating_frame(cfg.domain, trap, p["D"], p["h"], stationary=stationary,
                                     weights=p["weights"])
            return f.avg, f
        relax = {"tol": p["tol"], "scheme": p["scheme"], "max_periods": p["max_periods"],
                 "weights": p["weights"]}
        sol = relax_periodic(cfg.domain, (trap,) + stationary, p["D"], p["h"], p["dt"], **relax)
        return sol.avg, sol

    name = "solver.solve_rotating_frame" if p["method"] == "frame" else "solver.relax_periodic"
    res = out.call(name, _map, one, p["omegas"], jobs)
    for omega, (avg, obj) in zip(p["omegas"], res):
        out.results[f"omega={omega:g}"] = {"avg": avg}
        if p["method"] == "relaxation":
            out.diagnostics[f"omega={omega:g}"] = {"n_periods": obj.n_periods_run,
                                                   "residual_history": obj.residual_history}
        if dump:
            if p["method"] == "frame":
                xy, u = obj.domain_values()
            else:
                m = obj.band.kind >= 0
                xy, u = obj.band.xy[m], obj.final[m]
            out.table(f"field_omega={omega:g}", ["x", "y", "u"], _field_rows(xy, u))


def _validate_rotating(cfg):
    p = cfg.params
    if not isinstance(cfg.domain, Disk):
        raise ConfigError("rotating_frame needs a disk")
    _validate_layout(cfg.domain, (StationaryTrap((p["r0"], 0.0), p["eps"]),) + tuple(cfg.traps), "orbit")


def _run_asymptotics(cfg, out, jobs, dump):
    p = cfg.params
    rows = []
    ring = {}
    for m in p["ms"]:
        rc = out.call("asymptotics.optimal_ring_radius_leading", asy.optimal_ring_radius_leading, m)
        ring[f"m={m}"] = rc
        rows.append([m, rc])
    out.results["ring_radius"] = ring
    out.table("ring_radius", ["m", "rc"], rows)
    near = {}
    for m in p["near_disk_ms"]:
        c = out.call("asymptotics.near_disk_coefficients", asy.near_disk_coefficients, m, m, p["eps"], p["D"])
        near[f"m={m}"] = {"rc0": c.rc0, "rc1": c.rc1, "u0": c.u0, "u1": c.u1}
    if near:
        out.results["near_disk"] = near
    ell = {}
    for b in p["ellipse_bs"]:
        rc, u = out.call("asymptotics.two_trap_ellipse_expansion", asy.two_trap_ellipse_expansion,
                         b, p["eps"], p["D"])
        ell[f"b={b:g}"] = {"argmin": rc, "min": u}
    if ell:
        out.results["ellipse_two_trap"] = ell
    if p["thin_ellipse_b"] is not None:
        b = p["thin_ellipse_b"]
        x0, u, d = out.call("asymptotics.thin_ellipse_three_trap", asy.thin_ellipse_three_trap, b, p["D"])
        out.results["thin_ellipse"] = {"x0": x0, "min": u, "d_opt": d, "min_scaled": u * b * b * p["D"]}
    thin = {}
    for case in p["thin_rect_cases"]:
        for n in (2, 3):
            r = out.call("asymptotics.case_map", asy.case_map, case, p["thin_rect_b"], p["eps"], p["D"], n)
            thin[f"case={case}/n={n}"] = {"x0": r.x0, "min": r.avg}
    if thin:
        out.results["thin_rect"] = thin


def _run_fast_rotation(cfg, out, jobs, dump):
    p = cfg.params
    rows = []
    for eta, eps in p["cases"]:
        key = f"eta={eta:g},eps={eps:g}"
        r = out.call("asymptotics.fast_rotation_opt_radius", asy.fast_rotation_opt_radius, eta, eps)
        out.results[key] = {"argmin": r}
        rs = np.linspace(p["r_min"], p["r_max"], p["n_samples"])
        u = out.call("asymptotics.fast_rotation_profile", asy.fast_rotation_profile, rs, eta, eps, p["C"])
        rows += [[eta, eps, float(x), float(y)] for x, y in zip(rs, np.atleast_1d(u))]
    out.table("fast_rotation", ["eta", "eps", "r", "profile"], rows)


def _cases(x):
    return [_pair_any(c) for c in x]


def _pair_any(c):
    if len(c) != 2:
        raise ValueError("expected [eta, eps]")
    return [_float(c[0]), _float(c[1])]


def _range_or_ranges(x):
    if isinstance(x, list) and x and isinstance(x[0], list):
        return [_pair(v) for v in x]
    return _pair(x)


def _scalar_or_list(x):
    return [_float(v) for v in x] if isinstance(x, list) else _float(x)


EXPERIMENTS: dict = {
    "solve": Experiment(_run_solve, {**COMMON, **RELAX, "subgrid": (_str(("raise", "point")), "raise")}),
    "convergence": Experiment(_run_convergence, {
        **COMMON, "kind": (_str(("solution", "area")), "solution"),
        "eps": (_list(_float), None), "hs": (_list(_float), [0.04, 0.02, 0.01]),
        "variants": (_list(_str(("modified", "trivial"))), ["modified", "trivial"])}, _validate_convergence),
    "ring_sweep": Experiment(_run_ring_sweep, {
        **COMMON, "method": (_str(("numeric", "asymptotic")), "numeric"),
        "ms": (_list(_int), REQUIRED), "eps": (_float, 0.003), "dr": (_float, 0.005),
        "r_range": (_range_or_ranges, None), "cutoff": (_scalar_or_list, None)}, _validate_ring),
    "ellipse_two_trap": Experiment(_run_ellipse_two, {
        **COMMON, "bs": (_list(_float), REQUIRED), "eps": (_float, 0.05), "dx": (_float, 0.01),
        "x_range": (_pair, None), "asymptotic": (_bool, True)}, _validate_ellipse_two),
    "ellipse_three_trap_pso": Experiment(_run_ellipse_three, {
        **COMMON, **PSO_KEYS, "a": (_float, None), "b": (_float, REQUIRED), "eps": (_float, 0.05),
        "bounds": (_list(_pair), REQUIRED)}, lambda cfg: _validate_pso_bounds(cfg, 6)),
    "star_pso": Experiment(_run_star, {
        **COMMON, **PSO_KEYS, "m": (_int, None), "eps": (_float, 0.05),
        "layout": (_str(("ring", "free")), "ring"), "bounds": (_list(_pair), REQUIRED)}, _validate_star),
    "moving_radius": Experiment(_run_moving, {
        **COMMON, **RELAX, "omegas": (_list(_float), REQUIRED), "eps": (_float, 0.05),
        "dr": (_float, 0.02), "r_range": (_pair, None), "warm_start": (_bool, True)}, _validate_moving),
    "rotating_frame": Experiment(_run_rotating, {
        **COMMON, **RELAX, "method": (_str(("frame", "relaxation")), "frame"),
        "omegas": (_list(_float), REQUIRED), "r0": (_float, REQUIRED), "eps": (_float, 0.05)},
        _validate_rotating),
    "asymptotics": Experiment(_run_asymptotics, {
        "D": (_float, 1.0), "eps": (_float, 0.05), "ms": (_list(_int), list(range(2, 11))),
        "near_disk_ms": (lambda x: _list(_int)(x) if x else [], []),
        "ellipse_bs": (lambda x: _list(_float)(x) if x else [], []),
        "thin_ellipse_b": (_float, None),
        "thin_rect_cases": (lambda x: _list(_str(("I", "II")))(x) if x else [], []),
        "thin_rect_b": (_float, 0.2)}),
    "fast_rotation": Experiment(_run_fast_rotation, {
        "cases": (_cases, REQUIRED), "C": (_float, 1.0), "r_min": (_float, 0.05),
        "r_max": (_float, 0.95), "n_samples": (_int, 91)}),
}


# ----------------------------------------------------------------- output

def _fmt(x: float) -> str:
    return format(x, ".17g")


def _to_json(obj, indent=0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return _fmt(x) if math.isfinite(x) else "null"
    return json.dumps(str(obj))


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return _fmt(float(v)) if math.isfinite(v) else "nan"
    return str(v)


def _write_csv(path: Path, header, rows):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(v) for v in row])


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def run(cfg: ExperimentConfig, out_dir, jobs: int = 1, dump_fields: bool = False) -> Outcome:
    """Run ``cfg`` and write its artifacts into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    outcome = Outcome()
    EXPERIMENTS[cfg.experiment].runner(cfg, outcome, jobs, dump_fields)
    wall = time.perf_counter() - t0
    doc = {"experiment": cfg.experiment, "parameters": cfg.as_dict(), "results": outcome.results,
           "diagnostics": outcome.diagnostics, "operations": outcome.operations}
    (out_dir / "results.json").write_text(_to_json(doc) + "\n", encoding="utf-8", newline="\n")
    written = []
    for name, (header, rows) in outcome.tables.items():
        fname = f"{_safe_name(name)}.csv"
        _write_csv(out_dir / fname, header, rows)
        written.append(fname)
    from . import __version__
    lines = [
        f"experiment: {cfg.experiment}",
        f"config: {cfg.source}",
        f"started: {started.isoformat()}",
        f"finished: {datetime.now(timezone.utc).isoformat()}",
        f"wall_clock_seconds: {wall:.3f}",
        f"jobs: {jobs}",
        f"mfpt: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        "operations:",
        *[f"  - {op}" for op in outcome.operations],
        "files:",
        "  - results.json",
        *[f"  - {f}" for f in written],
        "config_text: |",
        *["  " + ln for ln in cfg.text.splitlines()],
    ]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return outcome


# ---------------------------------------------------------------- compare

def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}/{k}" if prefix else str(k)))
        return out
    if isinstance(obj, list):
        out = {}
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


def _rel(a, b) -> float:
    if a is None or b is None:
        return 0.0 if a is b else math.inf
    a, b = float(a), float(b)
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


@dataclass(frozen=True)
class Tolerance:
    rel: float | None = None
    abs: float | None = None

    @classmethod
    def parse(cls, value) -> "Tolerance":
        if isinstance(value, dict):
            extra = set(value) - {"rel", "abs"}
            if extra:
                raise ValueError(f"unknown tolerance field(s) {', '.join(sorted(extra))}")
            return cls(rel=_float(value["rel"]) if "rel" in value else None,
                       abs=_float(value["abs"]) if "abs" in value else None)
        return cls(rel=_float(value))

    def exceeded(self, abs_diff: float, rel_diff: float) -> bool:
        return ((self.rel is not None and rel_diff > self.rel)
                or (self.abs is not None and abs_diff > self.abs))

    def __str__(self):
        parts = [f"rel<={self.rel:g}" if self.rel is not None else "",
                 f"abs<={self.abs:g}" if self.abs is not None else ""]
        return ",".join(p for p in parts if p) or "-"


@dataclass(frozen=True)
class Difference:
    key: str
    a: Any
    b: Any
    abs_diff: float
    rel_diff: float
    tol: Tolerance | None
    exceeded: bool


def _abs(a, b) -> float:
    if a is None or b is None:
        return 0.0 if a is b else math.inf
    return abs(float(a) - float(b))


def compare(a: dict, b: dict, tolerances: dict | None = None) -> list:
    """Per-key differences between the ``results`` of two documents.

    ``tolerances`` maps key patterns (shell wildcards, first match wins) to
    a relative limit or to a ``{"rel": ..., "abs": ...}`` table; the key
    ``default`` applies to unmatched keys. Keys without a tolerance are
    reported but never flagged.

    Raises
    ------
    SchemaMismatch
        If the experiment ids or the result keys differ.
    """
    if a.get("experiment") != b.get("experiment"):
        raise SchemaMismatch(f"experiment ids differ: {a.get('experiment')!r} vs {b.get('experiment')!r}")
    fa, fb = _flatten(a.get("results", {})), _flatten(b.get("results", {}))
    if set(fa) != set(fb):
        missing = sorted(set(fa) ^ set(fb))
        raise SchemaMismatch(f"result keys differ: {', '.join(missing[:10])}")
    tols = {k: v if isinstance(v, Tolerance) else Tolerance.parse(v) for k, v in (tolerances or {}).items()}
    default = tols.pop("default", None)
    report = []
    for key in sorted(fa):
        tol = next((t for pat, t in tols.items() if fnmatch.fnmatchcase(key, pat)), default)
        da, dr = _abs(fa[key], fb[key]), _rel(fa[key], fb[key])
        report.append(Difference(key, fa[key], fb[key], da, dr, tol,
                                 tol is not None and tol.exceeded(da, dr)))
    return report


# -------------------------------------------------------------------- cli

def _parser():
    ap = argparse.ArgumentParser(prog="mfpt", description="Mean first passage time experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: results/<config stem>)")
    r.add_argument("--jobs", type=int, default=1, help="parallel solver runs for sweeps")
    r.add_argument("--dump-fields", action="store_true", help="write (x, y, u) field tables")
    c = sub.add_parser("compare", help="compare two results.json files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol-file", default=None, help="TOML table of relative tolerances per key pattern")
    return ap


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        if args.jobs < 1:
            print("mfpt: --jobs must be at least 1", file=sys.stderr)
            return 2
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"mfpt: invalid config: {exc}", file=sys.stderr)
            return 2
        out = args.out or str(Path("results") / Path(args.config).stem)
        try:
            outcome = run(cfg, out, args.jobs, args.dump_fields)
        except ConfigError as exc:
            print(f"mfpt: invalid config: {exc}", file=sys.stderr)
            return 2
        except OperationFailed as exc:
            print(f"mfpt: {exc}", file=sys.stderr)
            return 1
        except MfptError as exc:
            print(f"mfpt: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        print(_to_json(outcome.results))
        return 0

    try:
        tols = None
        if args.tol_file:
            with open(args.tol_file, "rb") as fh:
                raw = tomllib.load(fh)
            tols = {k: Tolerance.parse(v) for k, v in raw.get("tolerances", raw).items()}
        report = compare(_load_json(args.a), _load_json(args.b), tols)
    except (SchemaMismatch, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"mfpt: compare: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for d in report:
        flag = "EXCEEDS" if d.exceeded else "ok"
        print(f"{d.key}\t{d.a}\t{d.b}\tabs={d.abs_diff:.3e}\trel={d.rel_diff:.3e}\t"
              f"tol={d.tol if d.tol is not None else '-'}\t{flag}")
    bad = sum(d.exceeded for d in report)
    print(f"{len(report)} keys compared, {bad} exceed tolerance")
    return 1 if bad else 0

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
