"""Verification metrics computed from finished trajectories.

Everything here reads a :class:`~isogodunov.scheme.Trajectory` and never
mutates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .fans import FRONT_CLAMP, FRONT_FAN, FRONT_SHOCK
from .gas_model import energy_flux, mechanical_energy, physical_flux
from .scheme import Trajectory


class AuditFailure(RuntimeError):
    """A diagnostic found a property violation."""


@dataclass(frozen=True)
class SnapshotMetrics:
    t: float
    total_mass: float
    total_energy: float
    min_ztilde: float
    max_wtilde: float
    envelope_M_of_t: float
    bound_violation: float
    entropy_production_cum: float


def snapshot_metrics(traj: Trajectory) -> List[SnapshotMetrics]:
    out = []
    for r in traj.records:
        out.append(SnapshotMetrics(
            r.t, r.mass, r.energy, r.min_ztilde, r.max_wtilde, r.M + r.L,
            max(r.bound_excess, 0.0), r.production_cum,
        ))
    return out


@dataclass(frozen=True)
class ConservationReport:
    t: np.ndarray
    mass_drift: np.ndarray
    energy_excess: np.ndarray

    @property
    def final_drift(self) -> float:
        return float(self.mass_drift[-1])

    @property
    def max_excess(self) -> float:
        return float(np.max(self.energy_excess))


def conservation_report(traj: Trajectory) -> ConservationReport:
    """Mass drift |M(t) - M(0)| and energy excess max(0, E(t) - E(0)) per snapshot."""
    t = np.array([r.t for r in traj.records])
    mass = np.array([r.mass for r in traj.records])
    energy = np.array([r.energy for r in traj.records])
    return ConservationReport(t, np.abs(mass - mass[0]), np.maximum(energy - energy[0], 0.0))


@dataclass(frozen=True)
class AttractorReport:
    t_entry: float
    t0: float
    envelope: float
    tol: float
    min_ztilde: np.ndarray
    max_wtilde: np.ndarray
    inside: np.ndarray
    exited_after_entry: bool


def attractor_metric(traj: Trajectory, tol: Optional[float] = None,
                     persistence: int = 10) -> AttractorReport:
    """First time after which the shifted invariants stay inside +-(M_inf + eps).

    The t = 0 snapshot is judged on the initial data itself through M0, since
    cell averaging already smooths sub-cell oscillations away.
    """
    p = traj.params
    if tol is None:
        tol = 10.0 * traj.grid.dx
    env = p.M_infinity + p.epsilon
    zt = np.array([r.min_ztilde for r in traj.records])
    wt = np.array([r.max_wtilde for r in traj.records])
    zt[0] = min(zt[0], -p.M0)
    wt[0] = max(wt[0], p.M0)
    inside = (zt >= -env - tol) & (wt <= env + tol)
    t = np.array([r.t for r in traj.records])
    t_entry = math.inf
    exited = False
    run = 0
    for k, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run == persistence:
            first = k - persistence + 1
            t_entry = float(t[first])
            exited = not bool(np.all(inside[first:]))
            break
    return AttractorReport(t_entry, p.t0, env, tol, zt, wt, inside, exited)


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class TestFunction:
    """phi(x, t) = a(x) b(t) with cubic B-spline bumps a and b."""

    __test__ = False  # keeps pytest from collecting it by name

    x_lo: float
    x_hi: float
    t_lo: float
    t_hi: float


def _bspline(s):
    """Cubic B-spline on [0, 1] (knots at quarters), peak 2/3 scaled to 1."""
    u = 4.0 * np.clip(s, 0.0, 1.0)
    out = np.zeros_like(u)
    k = [(u < 1), (u >= 1) & (u < 2), (u >= 2) & (u < 3), (u >= 3) & (u <= 4)]
    out = np.where(k[0], u**3 / 6.0, out)
    v = u - 1.0
    out = np.where(k[1], (-3 * v**3 + 3 * v**2 + 3 * v + 1) / 6.0, out)
    v = u - 2.0
    out = np.where(k[2], (3 * v**3 - 6 * v**2 + 4) / 6.0, out)
    v = 4.0 - u
    out = np.where(k[3], v**3 / 6.0, out)
    return out * 1.5


def _bump(y, lo, hi):
    return _bspline((np.asarray(y, dtype=float) - lo) / (hi - lo))


def _bump_integral(a, b, lo, hi, n_sub: int = 4):
    """Integral of the bump over [a, b] (arrays), Gauss on knot-aligned pieces."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    knots = lo + (hi - lo) * np.arange(5) / 4.0
    tq, wq = np.polynomial.legendre.leggauss(n_sub)
    total = np.zeros(np.broadcast(a, b).shape)
    for i in range(4):
        pa = np.clip(a, knots[i], knots[i + 1])
        pb = np.clip(b, knots[i], knots[i + 1])
        mid, half = (pa + pb) / 2.0, (pb - pa) / 2.0
        pts = mid[..., None] + half[..., None] * tq
        total = total + half * np.sum(_bump(pts, lo, hi) * wq, axis=-1)
    return total


def default_test_functions(T: float) -> List[TestFunction]:
    xs = [(0.125, 0.375), (0.375, 0.625), (0.625, 0.875), (0.25, 0.75),
          (0.0, 0.5), (0.5, 1.0)]
    ts = [(0.125 * T, 0.625 * T), (0.375 * T, 0.875 * T)]
    return [TestFunction(a, b, c, d) for (a, b) in xs for (c, d) in ts]


@dataclass(frozen=True)
class WeakResiduals:
    mass: np.ndarray
    momentum: np.ndarray
    entropy: np.ndarray

    @property
    def norm(self) -> float:
        return float(max(np.max(np.abs(self.mass)), np.max(np.abs(self.momentum))))

    @property
    def min_entropy(self) -> float:
        return float(np.min(self.entropy))


def weak_residual(traj: Trajectory,
                  test_functions: Optional[Sequence[TestFunction]] = None) -> WeakResiduals:
    """Weak-form integrals of the piecewise-constant space-time solution.

    Cell values of snapshot n are held on [t_n, t_{n+1}). The integrals are
    exact in time (bump differences) and Gauss in space on knot-aligned pieces.
    """
    g = traj.params.gamma
    times = traj.times
    T = float(times[-1])
    if test_functions is None:
        test_functions = default_test_functions(T)
    rho, m = traj.rho[:-1], traj.m[:-1]
    f1, f2 = physical_flux(rho, m, g)
    eta = mechanical_energy(rho, m, g)
    q = energy_flux(rho, m, g)
    nodes = traj.grid.nodes
    out = {"mass": [], "momentum": [], "entropy": []}
    for tf in test_functions:
        ax = _bump_integral(nodes[:-1], nodes[1:], tf.x_lo, tf.x_hi)      # per cell
        a_nodes = _bump(nodes, tf.x_lo, tf.x_hi)
        dax = a_nodes[1:] - a_nodes[:-1]                                   # per cell
        b = _bump(times, tf.t_lo, tf.t_hi)
        db = b[1:] - b[:-1]                                                # per strip
        ib = _bump_integral(times[:-1], times[1:], tf.t_lo, tf.t_hi)      # per strip

        def form(u, flux):
            return float(np.sum(db[:, None] * ax[None, :] * u) +
                         np.sum(ib[:, None] * dax[None, :] * flux))

        out["mass"].append(form(rho, m))
        out["momentum"].append(form(m, f2))
        out["entropy"].append(form(eta, q))
    return WeakResiduals(*(np.array(out[k]) for k in ("mass", "momentum", "entropy")))


# ---------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class ConvergenceRow:
    Nx_coarse: int
    Nx_fine: int
    t: float
    l1_rho: float
    l1_m: float


@dataclass(frozen=True)
class ConvergenceTable:
    rows: List[ConvergenceRow]

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.l1_rho + r.l1_m for r in self.rows])

    @property
    def ratios(self) -> np.ndarray:
        d = self.distances
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[:-1] / d[1:]

    @property
    def orders(self) -> np.ndarray:
        return np.log2(self.ratios)


def restrict(values: np.ndarray, factor: int) -> np.ndarray:
    """Average groups of ``factor`` fine cells onto the coarse grid."""
    return values.reshape(-1, factor).mean(axis=1)


def l1_distance(coarse: Trajectory, fine: Trajectory) -> ConvergenceRow:
    """L1 distances at the latest common time, fine cells restricted to coarse ones."""
    Nc, Nf = coarse.grid.Nx, fine.grid.Nx
    if Nf % Nc:
        raise ValueError("resolutions must nest")
    k = Nf // Nc
    if not math.isclose(coarse.grid.dt, k * fine.grid.dt, rel_tol=1e-12):
        raise ValueError("time steps do not nest; runs need identical parameters")
    n = min(coarse.rho.shape[0] - 1, (fine.rho.shape[0] - 1) // k)
    h = 1.0 / Nc
    d_rho = h * float(np.sum(np.abs(coarse.rho[n] - restrict(fine.rho[k * n], k))))
    d_m = h * float(np.sum(np.abs(coarse.m[n] - restrict(fine.m[k * n], k))))
    return ConvergenceRow(Nc, Nf, float(coarse.times[n]), d_rho, d_m)


def self_convergence(runs: Sequence[Trajectory]) -> ConvergenceTable:
    runs = sorted(runs, key=lambda r: r.grid.Nx)
    return ConvergenceTable([l1_distance(a, b) for a, b in zip(runs[:-1], runs[1:])])


# ---------------------------------------------------------------------------
# entropy audit


@dataclass(frozen=True)
class EntropyAudit:
    shock: np.ndarray
    fan: np.ndarray
    clamp: np.ndarray
    tol: float

    @property
    def min_shock(self) -> float:
        return float(self.shock.min()) if self.shock.size else math.inf

    @property
    def min_fan(self) -> float:
        return float(self.fan.min()) if self.fan.size else math.inf

    @property
    def passed(self) -> bool:
        return self.min_shock >= -self.tol

    def __len__(self) -> int:
        return self.shock.size + self.fan.size + self.clamp.size


def entropy_ledger_audit(traj: Trajectory, tol: float = 1e-10,
                         raise_on_failure: bool = False) -> EntropyAudit:
    """Collect sigma[eta*] - [q*] of every retained front.

    Shocks must dissipate. Fan fronts carry the small signed production of
    the piecewise-constant rarefaction and clamp fronts are non-physical
    near-vacuum cuts; both are reported but not judged.
    """
    kinds, prods = [], []
    for r in traj.records:
        if r.front_kind is None:
            continue
        kinds.append(r.front_kind)
        prods.append(r.front_production)
    if not kinds and any(r.n_shocks or r.n_fan_fronts for r in traj.records):
        raise ValueError("trajectory was run without keep_fronts")
    k = np.concatenate(kinds) if kinds else np.zeros(0, np.int64)
    p = np.concatenate(prods) if prods else np.zeros(0)
    audit = EntropyAudit(p[k == FRONT_SHOCK], p[k == FRONT_FAN], p[k == FRONT_CLAMP], tol)
    if raise_on_failure and not audit.passed:
        raise AuditFailure(f"shock entropy production {audit.min_shock:.3e} below -{tol}")
    return audit


def check_ledger(traj: Trajectory, tol: float = 1e-12) -> List[str]:
    """Problems with the (L_n, M_n) bookkeeping; an empty list means none."""
    p = traj.params
    dt = traj.grid.dt
    bad = []
    recs = traj.records
    for a, b in zip(recs[:-1], recs[1:]):
        if b.L < a.L - tol:
            bad.append(f"L decreased at t={b.t:.6g}")
        if a.L < 0:
            bad.append(f"L negative at t={a.t:.6g}")
        expect = a.M - p.delta * dt if a.M + a.L >= p.M_infinity + p.epsilon else a.M
        if traj.opts.modified and b.M != expect:
            bad.append(f"M update off at t={b.t:.6g}")
    return bad

