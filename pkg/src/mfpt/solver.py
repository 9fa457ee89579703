"""Stationary, rotating-frame and time-periodic MFPT solvers."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .band import (KIND_DEEP, KIND_DIRICHLET, KIND_INTERIOR, Band, BoundaryData, build_band,
                   build_extension_ops, interp_matrix, trap_rows)
from .errors import (DomainNotInvariant, NoConvergence, SingularSystem, StabilityViolation)
from .geometry import Disk, RingOrbitTrap, StationaryTrap, trap_center
from .operators import (LinearSystem, assemble_parabolic, assemble_rotating_elliptic,
                        laplacian_5pt, penalty)
from .pointsink import PointSinks, make_point_sinks
from .quadrature import QuadratureWeights, average_periodic, build_weights, trap_weights

__all__ = [
    "MfptField",
    "PeriodicSolution",
    "solve_linear",
    "solve_stationary",
    "solve_rotating_frame",
    "relax_periodic",
    "step",
    "default_timestep",
    "moving_system",
]


@dataclass(eq=False)
class MfptField:
    """Nodal MFPT values on a band together with their spatial average."""

    band: Band
    values: np.ndarray
    avg: float
    weights: QuadratureWeights
    meta: dict = field(default_factory=dict)
    sinks: Optional[PointSinks] = None
    sink_strengths: Optional[np.ndarray] = None

    def evaluate(self, pts) -> np.ndarray:
        """Interpolate the MFPT at arbitrary points inside the domain."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        u = interp_matrix(self.band, pts) @ self.values
        if self.sinks is not None:
            for j in range(len(self.sinks)):
                u = u + self.sink_strengths[j] * self.sinks.profile(j, pts)
        return u

    def domain_values(self) -> tuple:
        """Points and values where the quadrature weight is positive."""
        m = self.weights.w > 0
        return self.band.xy[m], self.values[m]


@dataclass(eq=False)
class PeriodicSolution:
    """Converged period of a time-relaxation run.

    ``integrals`` and ``areas`` hold the weighted sum of the field and the
    trap-free area at the ``n_steps + 1`` equispaced sample times of the final
    period, in reversed time. ``final`` is the field at the period boundary,
    which equals the MFPT at physical time zero.
    """

    band: Band
    T: float
    dt: float
    n_steps: int
    n_periods_run: int
    residual_history: list
    l2_history: list
    integrals: np.ndarray
    areas: np.ndarray
    final: np.ndarray
    converged: bool
    scheme: str
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def avg(self) -> float:
        return average_periodic(self)

    @property
    def avg_series(self) -> np.ndarray:
        return self.integrals / self.areas


def solve_linear(M, b) -> np.ndarray:
    """Sparse direct solve that reports singular matrices."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            lu = spla.splu(sp.csc_matrix(M))
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularSystem(str(exc)) from exc
    x = lu.solve(np.asarray(b, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite values")
    return x


def _weighted_mean_with_sinks(band, weights, v, sinks, A):
    w = weights.w
    num = float(np.dot(w, v))
    area = float(np.sum(w))
    if sinks is not None and len(sinks):
        vc = interp_matrix(band, sinks.centers) @ v
        for j in range(len(sinks)):
            disk = math.pi * sinks.radii[j] ** 2
            num += A[j] * sinks.integral(j) - vc[j] * disk
            area -= disk
    return num / area


def solve_stationary(domain, traps: Sequence, D: float = 1.0, h: float = 0.01, *,
                     weights: str = "modified", bc: BoundaryData | None = None,
                     subgrid: str = "raise", sink_cutoff: float | None = None,
                     band: Band | None = None) -> MfptField:
    """Steady MFPT for stationary traps.

    Parameters
    ----------
    domain : geometry shape
    traps : sequence of StationaryTrap
    D : float
        Diffusivity.
    h : float
        Grid spacing.
    weights : {"modified", "trivial"}
        Quadrature rule for the average.
    bc : BoundaryData, optional
        Inhomogeneous boundary data, mainly for manufactured solutions.
    subgrid : {"raise", "point"}
        Treatment of traps smaller than the grid spacing, see
        :func:`~mfpt.band.build_band`.
    sink_cutoff : float, optional
        Support radius of the singular correction for point traps. Keeping it
        fixed across a parameter sweep makes the discretisation error vary
        smoothly with the parameter.

    Raises
    ------
    SingularSystem
        If there is no trap, since the pure Neumann problem with unit
        forcing has no steady state.
    """
    traps = tuple(traps)
    if len(traps) == 0:
        raise SingularSystem("no absorbing trap: the steady Neumann problem has no solution")
    if any(getattr(tr, "moving", False) for tr in traps):
        raise ValueError("solve_stationary needs stationary traps")
    t0 = time.perf_counter()
    if band is None:
        band = build_band(domain, traps, 0.0, h, subgrid=subgrid)
    ext = build_extension_ops(band, bc)
    system = assemble_parabolic(band, ext, D)
    qw = build_weights(band, weights)
    sinks = make_point_sinks(band, sink_cutoff) if band.point_traps else None
    if sinks is None:
        v = solve_linear(system.M, -system.rhs_const)
        A = None
        resid = system.M @ v + system.rhs_const
    else:
        v, A, c = _solve_with_sinks(band, ext, system, sinks, D)
        resid = system.M @ v + system.rhs_const + _sink_forcing(band, ext, sinks, D) @ A
    avg = _weighted_mean_with_sinks(band, qw, v, sinks, A)
    meta = {"solver": "splu", "n": band.n, "h": h, "D": D,
            "residual": float(np.max(np.abs(resid))),
            "seconds": time.perf_counter() - t0}
    if sinks is not None:
        meta["flux_defect"] = c
    return MfptField(band=band, values=v, avg=avg, weights=qw, meta=meta, sinks=sinks, sink_strengths=A)


def _sink_forcing(band, ext, sinks, D):
    F = np.column_stack([sinks.laplacian(j, band.xy) for j in range(len(sinks))])
    return D * (ext.Ebar @ sp.csr_matrix(F))


def _solve_with_sinks(band, ext, system, sinks, D):
    p = len(sinks)
    F = _sink_forcing(band, ext, sinks, D)
    P = interp_matrix(band, sinks.centers)
    S = np.zeros((p, p))
    for j in range(p):
        for i in range(p):
            if i != j:
                S[j, i] = sinks.profile(i, sinks.centers[j])
    if band.resolved_traps:
        K = sp.bmat([[system.M, F], [P, sp.csr_matrix(S)]], format="csc")
        rhs = np.concatenate([-system.rhs_const, np.zeros(p)])
        x = solve_linear(K, rhs)
        return x[:band.n], x[band.n:], 0.0
    # Only point traps: the remainder solves a pure Neumann problem whose
    # solvability fixes sum(A) = area / (2 pi D). The discrete operator is
    # not exactly conservative, so impose the flux balance explicitly and
    # absorb the defect in a constant source that vanishes as h -> 0.
    ones = ext.forcing if ext.forcing is not None else np.ones(band.n)
    area = band.domain.area - math.pi * float(np.sum(sinks.radii**2))
    col = sp.csr_matrix(ones[:, None])
    K = sp.bmat([[system.M, F, col],
                 [P, sp.csr_matrix(S), None],
                 [None, sp.csr_matrix(np.ones((1, p))), None]], format="csc")
    rhs = np.concatenate([-system.rhs_const, np.zeros(p), [area / (2.0 * math.pi * D)]])
    x = solve_linear(K, rhs)
    return x[:band.n], x[band.n:band.n + p], float(x[-1])


def solve_rotating_frame(domain, trap: RingOrbitTrap, D: float = 1.0, h: float = 0.01, *,
                         stationary: Sequence = (), upwind: bool | None = None,
                         weights: str = "modified") -> MfptField:
    """MFPT for a trap rotating on a ring, solved in the co-rotating frame.

    The field is returned in the laboratory frame at time zero, when the
    trap sits at ``r0 (cos phase, sin phase)``. Additional stationary traps
    must be centred at the origin so the problem stays rotation invariant.
    """
    if not (isinstance(domain, Disk) or (hasattr(domain, "a") and domain.is_rotation_invariant())):
        raise DomainNotInvariant(f"{type(domain).__name__} is not invariant under rotations")
    for tr in stationary:
        if np.hypot(*tr.center) != 0.0:
            raise DomainNotInvariant("stationary traps must sit at the centre of rotation")
    moving = StationaryTrap(trap_center(trap, 0.0), trap.radius)
    traps = (moving,) + tuple(stationary)
    band = build_band(domain, traps, 0.0, h)
    ext = build_extension_ops(band)
    system = assemble_rotating_elliptic(band, ext, D, trap.omega, upwind)
    v = solve_linear(system.M, -system.rhs_const)
    qw = build_weights(band, weights)
    avg = float(np.dot(qw.w, v) / qw.area)
    meta = {"solver": "splu", "upwind": system.upwind, "omega": trap.omega, "n": band.n}
    return MfptField(band=band, values=v, avg=avg, weights=qw, meta=meta)


def step(system: LinearSystem, v, dt: float, scheme: str = "forward_euler") -> np.ndarray:
    """One time step of ``v_t = M v + rhs``."""
    v = np.asarray(v, dtype=float)
    if scheme == "forward_euler":
        return v + dt * (system.M @ v + system.rhs_const)
    if scheme == "backward_euler":
        n = len(v)
        A = sp.identity(n, format="csr") - dt * system.M
        return solve_linear(A, v + dt * system.rhs_const)
    raise ValueError(f"unknown scheme {scheme!r}")


def default_timestep(h: float, D: float, omega: float, r_max: float, scheme: str) -> float:
    """Largest step allowed by diffusion stability and trap motion.

    Forward Euler uses ``h**2 / (8 D)``, inside the classical ``h**2 / (6 D)``
    bound: the extension rows push the spectral radius of the penalised
    operator slightly past ``12 D / h**2`` for some trap offsets. Both
    schemes keep the trap from moving more than half a grid spacing per step.
    """
    motion = h / (2.0 * abs(omega) * r_max) if omega != 0.0 and r_max > 0.0 else math.inf
    if scheme == "forward_euler":
        return min(h * h / (8.0 * D), motion)
    if math.isinf(motion):
        return h * h / (6.0 * D)
    return motion


def _moving_rows(band, L, D, gamma, center, radius):
    """Replacement rows and forcing for the band points covered by a trap."""
    info = trap_rows(band, center, radius)
    rows = info["rows"]
    n = band.n
    ghost = info["ghost"]
    g_rows = rows[ghost]
    blocks = []
    if len(g_rows):
        k = len(g_rows)
        Pc = sp.csr_matrix((info["cp_w"].ravel(), (np.repeat(np.arange(k), 16), info["cp_cols"].ravel())),
                           shape=(k, n))
        Pm = sp.csr_matrix((info["mirror_w"].ravel(), (np.repeat(np.arange(k), 16), info["mirror_cols"].ravel())),
                           shape=(k, n))
        Eye = sp.csr_matrix((np.ones(k), (np.arange(k), g_rows)), shape=(k, n))
        blocks.append((g_rows, D * (Pc @ L) - gamma * (Eye + Pm), np.ones(k)))
    d_rows = rows[~ghost]
    if len(d_rows):
        k = len(d_rows)
        blocks.append((d_rows, sp.csr_matrix((-gamma * np.ones(k), (np.arange(k), d_rows)), shape=(k, n)),
                       np.zeros(k)))
    return rows, blocks


def moving_system(base: LinearSystem, band: Band, L, traps_at: Sequence) -> LinearSystem:
    """System matrix with moving traps at given positions overlaid on ``base``.

    ``traps_at`` is a sequence of ``(center, radius)`` pairs.
    """
    M = base.M.tolil(copy=True)
    rhs = base.rhs_const.copy()
    for center, radius in traps_at:
        rows, blocks = _moving_rows(band, L, base.D, base.gamma_bar, center, radius)
        for r_idx, R, f in blocks:
            R = R.tolil()
            for a, i in enumerate(r_idx):
                M.rows[i] = R.rows[a]
                M.data[i] = R.data[a]
            rhs[r_idx] = f
    return LinearSystem(M=M.tocsr(), rhs_const=rhs, h=base.h, gamma_bar=base.gamma_bar, D=base.D)


def relax_periodic(domain, traps: Sequence, D: float = 1.0, h: float = 0.02, dt: float | None = None,
                   tol: float = 1e-6, scheme: str = "forward_euler", *, max_periods: int = 200,
                   weights: str = "modified", snapshot_every: int | None = None,
                   v0: np.ndarray | None = None, min_periods: int = 2,
                   period: float | None = None) -> PeriodicSolution:
    """Time-periodic MFPT with moving traps by relaxation in reversed time.

    The reversed-time problem ``v_tau = D lap v + 1`` is integrated from
    ``v0`` (zero by default) with the traps at their positions at physical
    time ``-tau``, period after period, until the period average of the
    spatial mean changes by at most ``tol`` between consecutive periods.

    ``period`` sets the cycle length when every trap is stationary, which
    runs a steady configuration through the periodic machinery.

    Raises
    ------
    StabilityViolation
        If ``dt`` breaks the diffusion or trap-motion limits.
    NoConvergence
        If ``max_periods`` periods do not reach ``tol``.
    """
    traps = tuple(traps)
    moving = [tr for tr in traps if getattr(tr, "moving", False)]
    fixed = tuple(tr for tr in traps if not getattr(tr, "moving", False))
    if not moving:
        if period is None or not period > 0:
            raise ValueError("relax_periodic needs a moving trap or a positive period")
        T, omega, r_max = float(period), 0.0, 0.0
    else:
        periods = {round(tr.period, 12) for tr in moving}
        if len(periods) != 1:
            raise ValueError("all moving traps must share one period")
        T = moving[0].period
        omega = max(abs(tr.omega) for tr in moving)
        r_max = max(tr.orbit_radius for tr in moving)
    dt_max = default_timestep(h, D, omega, r_max, scheme)
    if dt is None:
        dt = dt_max
    else:
        if scheme == "forward_euler" and dt > h * h / (6.0 * D) * (1 + 1e-12):
            raise StabilityViolation(f"dt={dt} exceeds the explicit limit h^2/(6D)={h * h / (6 * D)}")
        if omega * r_max * dt > h * (1 + 1e-12):
            raise StabilityViolation("traps would move more than one grid spacing per step")
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n_steps

    # static geometry: stationary traps plus a check of the moving ones at t=0
    build_band(domain, traps, 0.0, h)
    band = build_band(domain, fixed, 0.0, h)
    ext = build_extension_ops(band)
    base = assemble_parabolic(band, ext, D)
    qw = build_weights(band, weights)
    L = laplacian_5pt(band)
    gamma = penalty(D, h)
    taus = np.arange(n_steps + 1) * dt
    centers = np.array([[trap_center(tr, -tau) for tr in moving] for tau in taus],
                       dtype=float).reshape(n_steps + 1, len(moving), 2)
    radii = np.array([tr.radius for tr in moving], dtype=float)
    for tr in moving:
        build_band(domain, fixed + (StationaryTrap(trap_center(tr, 0.0), tr.radius),), 0.0, h)
        for tau in np.linspace(0.0, T, 17)[:-1]:
            build_band(domain, fixed + (StationaryTrap(trap_center(tr, -tau), tr.radius),), 0.0, h)

    v = np.zeros(band.n) if v0 is None else np.array(v0, dtype=float)
    integrals = np.empty(n_steps + 1)
    areas = np.empty(n_steps + 1)
    history, l2 = [], []
    snapshots = []
    prev_avg = None
    converged = False
    t0 = time.perf_counter()
    interior = qw.w > 0

    if scheme == "forward_euler":
        nb = band.neighbors()
        plain = (band.kind == KIND_INTERIOR) & np.all(nb >= 0, axis=1)
        # interior rows are plain five-point updates, done inline by the kernel
        M = (sp.diags((~plain).astype(float)) @ base.M).tocsr()
        M.eliminate_zeros()
        args = (M.indptr.astype(np.int32), M.indices.astype(np.int32), M.data, base.rhs_const, plain, dt,
                centers, radii, band.xy, band.index, band.origin[0], band.origin[1], h, nb, D, gamma, qw.w, weights == "trivial")
    elif scheme != "backward_euler":
        raise ValueError(f"unknown scheme {scheme!r}")

    for period in range(1, max_periods + 1):
        v_start = v.copy()
        record = snapshot_every is not None
        if scheme == "forward_euler" and not record:
            status = _kernels.fe_period(v, *args, integrals, areas)
            if status != 0:
                raise StabilityViolation("a moving trap stencil left the band")
        else:
            snapshots = []
            for k in range(n_steps + 1):
                sysk = moving_system(base, band, L, [(centers[k, m], radii[m]) for m in range(len(moving))])
                wk = qw.w.copy()
                _carve(band, wk, centers[k], radii, weights)
                integrals[k] = float(np.dot(wk, v))
                areas[k] = float(np.sum(wk))
                if record and k % snapshot_every == 0:
                    snapshots.append((float(taus[k]), v.copy()))
                if k == n_steps:
                    break
                v = step(sysk, v, dt, scheme)
        avg = float(average_periodic(_Samples(integrals, areas)))
        diff = v - v_start
        l2.append(float(math.sqrt(h * h * np.sum(diff[interior] ** 2))))
        if prev_avg is not None:
            history.append(abs(avg - prev_avg))
            if history[-1] <= tol and period >= min_periods:
                converged = True
                break
        prev_avg = avg
    if not converged:
        raise NoConvergence(f"no periodic state within {max_periods} periods (last change {history[-1]:.3g})")
    meta = {"seconds": time.perf_counter() - t0, "dt_rule": "min(h^2/(8D), h/(2 omega r_max))"
            if scheme == "forward_euler" else "h/(2 omega r_max)", "n": band.n, "D": D, "h": h, "tol": tol}
    return PeriodicSolution(band=band, T=T, dt=dt, n_steps=n_steps, n_periods_run=period,
                            residual_history=history, l2_history=l2, integrals=integrals.copy(),
                            areas=areas.copy(), final=v.copy(), converged=True, scheme=scheme,
                            snapshots=snapshots, meta=meta)


@dataclass
class _Samples:
    integrals: np.ndarray
    areas: np.ndarray
    converged: bool = True


def _carve(band, w, centers, radii, variant):
    for c, r in zip(centers, radii):
        idx, wk = trap_weights(band, w, c, r, variant)
        w[idx] = wk
