"""Trap-layout optimisers driven by the grid solvers."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as sopt

from .errors import MfptError, ObjectiveFailure
from .geometry import Disk, Ellipse, EllipseOrbitTrap, RingOrbitTrap, StationaryTrap

__all__ = [
    "SweepResult",
    "sweep_1d",
    "PsoConfig",
    "PsoResult",
    "pso",
    "local_refine",
    "optimize_moving_radius",
    "layout_feasible",
    "PENALTY",
]

PENALTY = 1.0e6


@dataclass(frozen=True)
class SweepResult:
    """Objective values on a uniform parameter grid."""

    samples: list
    argmin: float
    min: float

    @property
    def params(self) -> np.ndarray:
        return np.array([p for p, _ in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples])


def _grid(lo: float, hi: float, delta: float) -> np.ndarray:
    if not delta > 0:
        raise ValueError("sweep step must be positive")
    if hi < lo:
        raise ValueError("empty sweep range")
    n = int(math.floor((hi - lo) / delta + 1e-9))
    pts = lo + delta * np.arange(n + 1)
    if hi - pts[-1] > 1e-9 * max(1.0, abs(hi)):
        pts = np.append(pts, hi)
    return np.round(pts, 12)


def _argmin(samples):
    # ties go to the smaller parameter
    best = min(samples, key=lambda s: (s[1], s[0]))
    return best[0], best[1]


def sweep_1d(objective: Callable[[float], float], rng: tuple, delta: float, *,
             jobs: int = 1) -> SweepResult:
    """Evaluate ``objective`` on ``lo, lo + delta, ..., hi`` and pick the minimum.

    Raises
    ------
    ObjectiveFailure
        Wrapping the first exception raised by the objective, with the
        offending parameter attached.
    """
    lo, hi = rng
    params = _grid(float(lo), float(hi), float(delta))

    def run(p):
        try:
            return float(objective(float(p)))
        except Exception as exc:  # noqa: BLE001
            raise ObjectiveFailure(float(p), exc) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(run, params))
    else:
        values = [run(p) for p in params]
    samples = sorted(zip(map(float, params), values))
    p, v = _argmin(samples)
    return SweepResult(samples=samples, argmin=p, min=v)


@dataclass(frozen=True)
class PsoConfig:
    """Global-best particle swarm settings.

    The defaults are the usual constriction-factor coefficients.
    """

    bounds: Sequence
    n_particles: int = 40
    n_iters: int = 200
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    seed: int = 0

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 1] < b[:, 0]):
            raise ValueError("bounds must be a sequence of (low, high) pairs")
        return b[:, 0], b[:, 1]


@dataclass
class PsoResult:
    x: np.ndarray
    value: float
    trace: list = field(default_factory=list)
    n_evals: int = 0


def _penalised(objective, feasible):
    def f(x):
        if feasible is not None and not feasible(x):
            return PENALTY
        return float(objective(x))
    return f


def pso(objective: Callable[[np.ndarray], float], cfg: PsoConfig, *,
        feasible: Optional[Callable[[np.ndarray], bool]] = None) -> PsoResult:
    """Minimise ``objective`` over the box ``cfg.bounds``.

    Positions are clipped to the box and velocities to its extent. Points
    rejected by ``feasible`` score :data:`PENALTY` without calling the
    objective. The swarm is seeded from ``cfg.seed`` so runs are
    reproducible.
    """
    lo, hi = cfg.box()
    dim = len(lo)
    span = hi - lo
    rng = np.random.default_rng(cfg.seed)
    f = _penalised(objective, feasible)
    x = lo + rng.random((cfg.n_particles, dim)) * span
    v = (rng.random((cfg.n_particles, dim)) * 2 - 1) * span
    fx = np.array([f(p) for p in x])
    pbest, pval = x.copy(), fx.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    trace = [gval]
    n_evals = cfg.n_particles
    for _ in range(cfg.n_iters):
        r1 = rng.random((cfg.n_particles, dim))
        r2 = rng.random((cfg.n_particles, dim))
        v = cfg.inertia * v + cfg.cognitive * r1 * (pbest - x) + cfg.social * r2 * (gbest - x)
        v = np.clip(v, -span, span)
        x = np.clip(x + v, lo, hi)
        fx = np.array([f(p) for p in x])
        n_evals += cfg.n_particles
        better = fx < pval
        pbest[better], pval[better] = x[better], fx[better]
        g = int(np.argmin(pval))
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        trace.append(gval)
    check = f(gbest)
    if check != gval:
        warnings.warn(f"objective is not deterministic: {check!r} != {gval!r}", RuntimeWarning)
    return PsoResult(x=gbest, value=gval, trace=trace, n_evals=n_evals)


def local_refine(objective: Callable[[np.ndarray], float], x0, step0, *,
                 feasible: Optional[Callable[[np.ndarray], bool]] = None,
                 xatol: float = 1e-4, maxfev: int = 500) -> tuple[np.ndarray, float]:
    """Nelder-Mead descent from ``x0`` with an initial simplex of size ``step0``.

    The returned value never exceeds the value at ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    f = _penalised(objective, feasible)
    steps = np.broadcast_to(np.asarray(step0, dtype=float), x0.shape)
    simplex = np.vstack([x0] + [x0 + np.eye(len(x0))[i] * steps[i] for i in range(len(x0))])
    f0 = f(x0)
    res = sopt.minimize(f, x0, method="Nelder-Mead",
                        options={"initial_simplex": simplex, "xatol": xatol, "fatol": 0.0,
                                 "maxfev": maxfev})
    if res.fun <= f0:
        return np.asarray(res.x), float(res.fun)
    return x0, float(f0)


def layout_feasible(domain, centers, radius: float, clearance: float = 0.0) -> bool:
    """True if traps of ``radius`` at ``centers`` keep ``clearance`` from the boundary and each other."""
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not np.all(domain.contains(c)):
        return False
    gap = np.linalg.norm(domain.project(c)[0] - c, axis=1)
    if np.any(gap < radius + clearance):
        return False
    d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    d[np.diag_indices(len(c))] = np.inf
    return bool(np.all(d > 2 * radius + clearance))


def _moving_trap(domain, r, radius, omega):
    if isinstance(domain, Ellipse) and domain.a != domain.b:
        return EllipseOrbitTrap(scale=r, radius=radius, omega=omega, a=domain.a, b=domain.b)
    return RingOrbitTrap(r0=r, radius=radius, omega=omega)


def _orbit_limit(domain, radius, h):
    if isinstance(domain, Disk):
        return domain.R - radius - 3 * h
    if isinstance(domain, Ellipse):
        # orbit scale r keeps the trap at distance >= radius + 3h from the boundary
        return 1.0 - (radius + 3 * h) / domain.b
    raise TypeError(f"moving-radius sweeps need a disk or an ellipse, got {type(domain).__name__}")


def optimize_moving_radius(domain, omega: float, radius: float, D: float = 1.0, h: float = 0.02,
                           dr: float = 0.02, *, stationary: Sequence = (), r_range: tuple | None = None,
                           warm_start: bool = True, **relax_kwargs) -> SweepResult:
    """Sweep the orbit radius of one moving trap and return the averaged MFPT.

    ``stationary`` traps stay fixed. The radius ``r = 0`` means a trap
    resting at the centre and is solved as a steady problem. Consecutive
    radii reuse the previous periodic state as the initial guess unless
    ``warm_start`` is false; this only changes the number of relaxation
    periods, not the converged result.
    """
    from .solver import relax_periodic, solve_stationary

    stationary = tuple(stationary)
    if r_range is None:
        r_min = 0.0
        for tr in stationary:
            c = float(np.hypot(*tr.center))
            if c == 0.0:
                r_min = max(r_min, tr.radius + radius + 3 * h)
        r_range = (r_min, _orbit_limit(domain, radius, h))
    state = {"v": None}

    def objective(r):
        if r == 0.0:
            return solve_stationary(domain, (StationaryTrap((0.0, 0.0), radius),) + stationary, D, h).avg
        trap = _moving_trap(domain, r, radius, omega)
        v0 = state["v"] if warm_start else None
        try:
            sol = relax_periodic(domain, (trap,) + stationary, D, h, v0=v0, **relax_kwargs)
        except MfptError:
            if v0 is None:
                raise
            sol = relax_periodic(domain, (trap,) + stationary, D, h, **relax_kwargs)
        state["v"] = sol.final
        return sol.avg

    return sweep_1d(objective, r_range, dr)
