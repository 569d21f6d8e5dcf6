"""Modified Godunov time stepper on [0, 1] with reflecting walls.

Cells are [x_{j-1}, x_{j+1}] for odd j with x_j = j dx, so there are ``Nx``
cells of width 2 dx and the Riemann problems sit at the even nodes. Each step

1. solves every node problem exactly (walls through the mirror state),
2. in modified mode replaces rarefactions by piecewise-constant fans and
   constant regions by corrected states,
3. averages the strip at t_{n+1-}, records the entropy ledger and applies
   the invariant cutoff.

Plain-Godunov mode skips step 2's corrections, the cutoff and the ledger and
is then an exact Godunov update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from . import fans
from .fans import CONST, RAR1, RAR2, FRONT_CLAMP, FRONT_FAN, FRONT_SHOCK
from .gas_model import (
    GasState,
    ModelParams,
    Sampler,
    char_speeds,
    energy_hessian,
    flux_correction_V,
    invariants,
    mechanical_energy,
    source_g1_g2,
    theta_of,
    velocity,
    zeta,
)
from .riemann import entropy_production, star_state

BIG = 1e300
MODIFIED = "modified"
PLAIN = "plain-godunov"
_GL_Q = np.polynomial.legendre.leggauss(4)
_GL_TAU = np.polynomial.legendre.leggauss(5)


class SchemeAbort(RuntimeError):
    """Raised when a step violates a hard consistency check."""


@dataclass(frozen=True)
class SchemeOptions:
    mode: str = MODIFIED
    alpha: float = 0.75
    beta_vac: float = 1.2
    beta_rar: float = 0.25
    strict: bool = True
    n_fine: int = 10_000
    bound_C: Optional[float] = None
    budget_C: Optional[float] = None
    keep_fronts: bool = False

    @property
    def modified(self) -> bool:
        return self.mode == MODIFIED


@dataclass(frozen=True)
class Grid:
    Nx: int
    dx: float
    dt: float
    ratio: int
    Nt: int
    T: float

    @property
    def centers(self) -> np.ndarray:
        return (2.0 * np.arange(self.Nx) + 1.0) * self.dx

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.arange(self.Nx + 1) * self.dx

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.Nt + 1) * self.dt


def cfl_ratio(params: ModelParams) -> int:
    speed = max(params.M0, params.M_infinity + params.epsilon)
    speed += params.eta_bar + params.nu * params.rho_bar + params.K
    return 2 * int(math.floor(speed)) + 1


def make_grid(params: ModelParams, T: float, Nx: int) -> Grid:
    if Nx < 2:
        raise ValueError("Nx must be at least 2")
    if T <= 0:
        raise ValueError("T must be positive")
    dx = 1.0 / (2 * Nx)
    ratio = cfl_ratio(params)
    dt = dx / ratio
    Nt = int(math.ceil(T / dt - 1e-9))
    return Grid(Nx, dx, dt, ratio, Nt, T)


@dataclass
class StepLedger:
    n: int
    M: float
    L: float
    I: np.ndarray
    entropy_production: float = 0.0
    jensen_gap: float = 0.0
    quad_remainder: float = 0.0
    production_cum: float = 0.0


def next_M(M: float, L: float, params: ModelParams, dt: float) -> float:
    if M + L >= params.M_infinity + params.epsilon:
        return M - params.delta * dt
    return M


def ledger_update(prev: StepLedger, production: float, jensen: float, remainder: float,
                  I_next: np.ndarray, params: ModelParams, dt: float,
                  tol: float = 1e-12) -> StepLedger:
    """Advance (M_n, L_n) by one step from this step's diagnostics."""
    incr = production + jensen + remainder
    if incr < -tol * max(1.0, abs(prev.L)):
        raise SchemeAbort(f"negative ledger increment {incr:.3e} at step {prev.n}")
    return StepLedger(
        n=prev.n + 1,
        M=next_M(prev.M, prev.L, params, dt),
        L=prev.L + max(incr, 0.0),
        I=I_next,
        entropy_production=production,
        jensen_gap=jensen,
        quad_remainder=remainder,
        production_cum=prev.production_cum + production,
    )


def zeta_prefix_centers(rho, m, params: ModelParams, dx: float) -> np.ndarray:
    """I_j: integral of zeta over [0, x_j] for the piecewise-constant cell function."""
    zc = zeta(rho, m, params) * 2.0 * dx
    return np.cumsum(zc) - 0.5 * zc


def cutoff_arrays(rho, m, I, M: float, L: float, dx: float, beta_vac: float,
                  gamma: float):
    """Clamp cell averages into [-M-L+I, M+L+I]; returns (rho, m, n_vac, n_clamped)."""
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    z, w = invariants(rho, m, gamma)
    lo = -M - L + I
    hi = M + L + I
    zc = np.maximum(z, lo)
    wc = np.minimum(w, hi)
    vac = (rho < dx**beta_vac) | (wc < zc)
    th = theta_of(gamma)
    gap = np.where(vac, 0.0, wc - zc)
    r = (th * gap / 2.0) ** (1.0 / th)
    mm = r * (wc + zc) / 2.0
    r = np.where(vac, 0.0, r)
    mm = np.where(vac, 0.0, mm)
    clamped = (~vac) & ((zc != z) | (wc != w))
    # untouched cells keep their conserved values bit for bit
    keep = (~vac) & (~clamped)
    r = np.where(keep, rho, r)
    mm = np.where(keep, m, mm)
    return r, mm, int(np.count_nonzero(vac & (rho > 0))), int(np.count_nonzero(clamped))


def cutoff(E: GasState, I_j: float, M: float, L: float, dx: float,
           params: ModelParams, beta_vac: float = 1.2) -> GasState:
    r, m, _, _ = cutoff_arrays([E.rho], [E.m], np.array([I_j]), M, L, dx, beta_vac,
                               params.gamma)
    return GasState(float(r[0]), float(m[0]))


# ---------------------------------------------------------------------------
# node problems


@dataclass
class StepContext:
    params: ModelParams
    opts: SchemeOptions
    grid: Grid
    M_next: float = 0.0
    L: float = 0.0
    P_centers: Optional[np.ndarray] = None  # prefix of zeta(u_{n,0}) at centers
    rho_c: Optional[np.ndarray] = None
    m_c: Optional[np.ndarray] = None

    @property
    def gamma(self) -> float:
        return self.params.gamma

    @property
    def h(self) -> float:
        return self.grid.dx ** self.opts.alpha

    @property
    def rho_beta(self) -> float:
        return self.grid.dx ** self.opts.beta_rar


@dataclass
class Strip:
    """Self-similar pieces of every node problem on one time strip."""

    pieces: fans.Pieces
    group: np.ndarray
    node_x: np.ndarray
    Nx: int
    dx: float
    vacuum_snaps: int = 0

    def segments(self, tau: float):
        """Clip the pieces to their half cells at time tau, ordered in x."""
        p = self.pieces
        node = p.owner
        xn = self.node_x[node]
        parts = []
        for side in (0, 1):
            if side == 0:
                ok = node >= 1
                cell = node - 1
                lo, hi = xn - self.dx, xn
            else:
                ok = node <= self.Nx - 1
                cell = node
                lo, hi = xn, xn + self.dx
            xa = np.clip(xn + p.xa * tau, lo, hi)
            xb = np.clip(xn + p.xb * tau, lo, hi)
            sel = ok & (xb > xa)
            parts.append((np.nonzero(sel)[0], cell[sel], xa[sel], xb[sel], side))
        idx = np.concatenate([q[0] for q in parts])
        cell = np.concatenate([q[1] for q in parts])
        xa = np.concatenate([q[2] for q in parts])
        xb = np.concatenate([q[3] for q in parts])
        order = np.lexsort((p.sub[idx], self.group[idx], node[idx], cell))
        idx, cell, xa, xb = idx[order], cell[order], xa[order], xb[order]
        return Segments(
            cell=cell, xa=xa, xb=xb, node_x=xn[idx], kind=p.kind[idx], rho=p.rho[idx],
            m=p.m[idx], inv=p.inv[idx], corrected=p.corrected[idx], tau=tau,
        )


@dataclass
class Segments:
    cell: np.ndarray
    xa: np.ndarray
    xb: np.ndarray
    node_x: np.ndarray
    kind: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    inv: np.ndarray
    corrected: np.ndarray
    tau: float

    @property
    def width(self) -> np.ndarray:
        return self.xb - self.xa

    def base_at(self, y, gamma: float):
        """Uncorrected state at points y (shape (S, k))."""
        kind = self.kind[:, None]
        rho = np.broadcast_to(self.rho[:, None], y.shape).copy()
        m = np.broadcast_to(self.m[:, None], y.shape).copy()
        tau = self.tau if self.tau > 0 else 1.0
        xi = (y - self.node_x[:, None]) / tau
        inv = np.broadcast_to(self.inv[:, None], y.shape)
        r1 = kind == RAR1
        r2 = kind == RAR2
        if np.any(r1):
            a, b = _rar1(xi, inv, gamma)
            rho = np.where(r1, a, rho)
            m = np.where(r1, b, m)
        if np.any(r2):
            a, b = _rar2(xi, inv, gamma)
            rho = np.where(r2, a, rho)
            m = np.where(r2, b, m)
        return rho, m

    def exact_integrals(self, gamma: float):
        """Exact integrals of rho and m over each uncorrected segment."""
        w = self.width
        irho = self.rho * w
        im = self.m * w
        tau = self.tau
        if tau > 0 and np.any(self.kind != CONST):
            th = theta_of(gamma)
            k = 1.0 / th
            c = (th / (1.0 + th)) ** k
            a = (self.xa - self.node_x) / tau
            b = (self.xb - self.node_x) / tau
            inv = self.inv
            da = np.maximum(inv - a, 0.0)
            db = np.maximum(inv - b, 0.0)
            i0 = c * (da ** (k + 1) - db ** (k + 1)) / (k + 1)
            i1 = inv * i0 - c / (1.0 + th) * (da ** (k + 2) - db ** (k + 2)) / (k + 2)
            sel = self.kind == RAR1
            irho = np.where(sel, tau * i0, irho)
            im = np.where(sel, tau * i1, im)
            ea = np.maximum(a - inv, 0.0)
            eb = np.maximum(b - inv, 0.0)
            j0 = c * (eb ** (k + 1) - ea ** (k + 1)) / (k + 1)
            j1 = inv * j0 + c / (1.0 + th) * (eb ** (k + 2) - ea ** (k + 2)) / (k + 2)
            sel = self.kind == RAR2
            irho = np.where(sel, tau * j0, irho)
            im = np.where(sel, tau * j1, im)
        return irho, im


def _rar1(xi, w, gamma):
    th = theta_of(gamma)
    base = np.maximum(th * (w - xi) / (1.0 + th), 0.0)
    rho = base ** (1.0 / th)
    return rho, rho * (th * w + xi) / (1.0 + th)


def _rar2(xi, z, gamma):
    th = theta_of(gamma)
    base = np.maximum(th * (xi - z) / (1.0 + th), 0.0)
    rho = base ** (1.0 / th)
    return rho, rho * (th * z + xi) / (1.0 + th)


def _lambda1(rho, v, gamma):
    return v - rho ** theta_of(gamma)


def _family(buf: fans.PieceBuffer, owners, rU, mU, rE, mE, shock, rar, vac,
            zbar, wbar, ctx: StepContext):
    """Pieces of a 1-family wave from upwind state U (left) to end state E.

    Returns the head and tail speeds of the wave for every owner; owners with
    no wave get (-BIG, -BIG).
    """
    g = ctx.gamma
    th = theta_of(g)
    modified = ctx.opts.modified
    n = owners.size
    head = np.full(n, -BIG)
    tail = np.full(n, -BIG)
    vU = velocity(rU, mU)
    vE = velocity(rE, mE)
    zU, wU = invariants(rU, mU, g)
    zE, _ = invariants(rE, mE, g)
    lamU = vU - rU**th

    # shocks
    i = np.nonzero(shock)[0]
    if i.size:
        s = (mE[i] - mU[i]) / (rE[i] - rU[i])
        head[i] = tail[i] = s
        buf.front(owners[i], s, rU[i], mU[i], rE[i], mE[i], FRONT_SHOCK)

    # rarefactions to a non-vacuum state
    i = np.nonzero(rar)[0]
    if i.size:
        if modified:
            fr = fans.fan_core(zU[i], zE[i], wU[i], ctx.h, g)
            fans.add_fan(buf, fr, owners[i], wU[i], g, 0.0, True)
            head[i], tail[i] = fr.head, fr.tail
        else:
            lamE = vE[i] - rE[i] ** th
            buf.seg(owners[i], 0.0, lamU[i], lamE, RAR1, 0.0, 0.0, wU[i], False)
            head[i], tail[i] = lamU[i], lamE

    # rarefactions into vacuum
    i = np.nonzero(vac)[0]
    if i.size:
        if not modified:
            buf.seg(owners[i], 0.0, lamU[i], wU[i], RAR1, 0.0, 0.0, wU[i], False)
            head[i], tail[i] = lamU[i], wU[i]
        else:
            _to_vacuum(buf, owners[i], rU[i], mU[i], zU[i], wU[i], lamU[i],
                       zbar[i], wbar[i], ctx, head, tail, i)
    return head, tail


def _to_vacuum(buf, owners, rU, mU, zU, wU, lamU, zbar, wbar, ctx, head, tail, pos):
    """Near-vacuum rarefactions with the z-bar / w-bar clamps."""
    g = ctx.gamma
    th = theta_of(g)
    h = ctx.h
    rb = ctx.rho_beta
    z1 = wU - 2.0 * rb**th / th
    big = rU > rb
    full = big & (wU - z1 <= h)
    split = big & ~full
    z2 = np.minimum(np.maximum(z1, zbar), wU)
    full |= split & (z2 >= wU - 1e-14 * (1.0 + np.abs(wU)))
    split &= ~full
    small = ~big
    exact = small & (zU >= zbar)
    clamp = small & ~exact

    j = np.nonzero(full)[0]
    if j.size:
        fr = fans.fan_core(zU[j], wU[j], wU[j], h, g)
        fans.add_fan(buf, fr, owners[j], wU[j], g, 0.0, True)
        head[pos[j]], tail[pos[j]] = fr.head, fr.tail

    j = np.nonzero(split)[0]
    if j.size:
        fr = fans.fan_core(zU[j], z2[j], wU[j], h, g)
        fans.add_fan(buf, fr, owners[j], wU[j], g, 0.0, True)
        r2, v2 = fans.rho_v(z2[j], wU[j], g)
        lam2 = v2 - r2**th
        buf.seg(owners[j], 1e6, fr.tail, lam2, CONST, r2, r2 * v2, 0.0, True)
        buf.seg(owners[j], 1e6 + 1, lam2, wU[j], RAR1, 0.0, 0.0, wU[j], False)
        head[pos[j]], tail[pos[j]] = fr.head, wU[j]

    j = np.nonzero(exact)[0]
    if j.size:
        buf.seg(owners[j], 0.0, lamU[j], wU[j], RAR1, 0.0, 0.0, wU[j], False)
        head[pos[j]], tail[pos[j]] = lamU[j], wU[j]

    j = np.nonzero(clamp)[0]
    if j.size:
        z3 = zbar[j]
        w3 = np.minimum(wU[j], wbar[j])
        gone = w3 <= z3
        r3, v3 = fans.rho_v(z3, np.maximum(w3, z3), g)
        r3 = np.where(gone, 0.0, r3)
        v3 = np.where(gone, 0.0, v3)
        lam3 = np.where(gone, lamU[j], v3 - r3**th)
        start = np.maximum(lam3, lamU[j])
        end = np.where(gone, lamU[j], np.maximum(w3, start))
        buf.seg(owners[j], 1.0, lamU[j], start, CONST, r3, r3 * v3, 0.0, False)
        buf.seg(owners[j], 2.0, start, end, RAR1, 0.0, 0.0, w3, False)
        # state just right of the clamp front
        rr, mr = _rar1(lamU[j], w3, g)
        use_const = (lam3 >= lamU[j]) | gone
        rr = np.where(use_const, r3, rr)
        mr = np.where(use_const, r3 * v3, mr)
        buf.front(owners[j], lamU[j], rU[j], mU[j], rr, mr, FRONT_CLAMP)
        head[pos[j]], tail[pos[j]] = lamU[j], end


def build_strip(rho_c, m_c, ctx: StepContext) -> Strip:
    """All node problems for cell states (rho_c, m_c)."""
    g = ctx.gamma
    Nx = ctx.grid.Nx
    dx = ctx.grid.dx
    params = ctx.params
    modified = ctx.opts.modified
    rho_c = np.asarray(rho_c, dtype=float)
    m_c = np.asarray(m_c, dtype=float)
    rL = np.concatenate([[rho_c[0]], rho_c])
    mL = np.concatenate([[-m_c[0]], m_c])
    rR = np.concatenate([rho_c, [rho_c[-1]]])
    mR = np.concatenate([m_c, [-m_c[-1]]])
    nodes = np.arange(Nx + 1)
    wall = (nodes == 0) | (nodes == Nx)

    vL, vR = velocity(rL, mL), velocity(rR, mR)
    rs, vs, vac = star_state(rL, vL, rR, vR, g)
    vs = np.where(wall & ~vac, 0.0, vs)
    same = (rL == rR) & (mL == mR)
    rs = np.where(same, rL, rs)
    vs = np.where(same, vL, vs)
    vac = np.where(same, rL == 0, vac)
    ms = rs * vs
    nv = ~vac
    tol = 1e-12
    shock1 = nv & (rs > rL * (1 + tol))
    rar1 = nv & (rs < rL * (1 - tol))
    shock2 = nv & (rs > rR * (1 + tol))
    rar2 = nv & (rs < rR * (1 - tol))
    vac1 = vac & (rL > 0)
    vac2 = vac & (rR > 0)
    rmid = np.where(vac, 0.0, rs)
    mmid = np.where(vac, 0.0, ms)

    # clamp levels for near-vacuum rarefactions, in each family's own frame
    zbar1 = wbar1 = zbar2 = wbar2 = np.zeros(Nx + 1)
    if modified and np.any(vac1 | vac2):
        P = ctx.P_centers
        Vc = flux_correction_V(rho_c, m_c, params)
        eta = mechanical_energy(rho_c, m_c, g)
        ref = P - Vc * ctx.grid.dt
        lo_z = -ctx.M_next - ctx.L + ref + dx * (eta + params.K)
        hi_w = ctx.M_next + ctx.L + ref - dx * params.nu * rho_c
        hi_w2 = ctx.M_next + ctx.L + ref - dx * (eta + params.K)
        lo_z2 = -ctx.M_next - ctx.L + ref + dx * params.nu * rho_c
        left = np.clip(nodes - 1, 0, Nx - 1)
        right = np.clip(nodes, 0, Nx - 1)
        zbar1, wbar1 = lo_z[left], hi_w[left]
        # mirrored frame: z' = -w, w' = -z
        zbar2, wbar2 = -hi_w2[right], -lo_z2[right]

    buf1 = fans.PieceBuffer()
    h1, t1 = _family(buf1, nodes, rL, mL, rmid, mmid, shock1, rar1, vac1,
                     zbar1, wbar1, ctx)
    buf2 = fans.PieceBuffer()
    h2m, t2m = _family(buf2, nodes, rR, -mR, rmid, -mmid, shock2, rar2, vac2,
                       zbar2, wbar2, ctx)
    h2 = np.where(t2m <= -BIG, BIG, -t2m)
    t2 = np.where(h2m <= -BIG, BIG, -h2m)

    out = fans.PieceBuffer()
    out.seg(nodes, 0.0, -BIG, h1, CONST, rL, mL, 0.0, modified)
    out.seg(nodes, 0.0, t1, h2, CONST, rmid, mmid, 0.0, modified)
    out.seg(nodes, 0.0, t2, BIG, CONST, rR, mR, 0.0, modified)
    base = out.build()
    p1 = buf1.build()
    p2 = fans.mirror_pieces(buf2.build())
    groups = [np.zeros(base.owner.size, np.int64), np.full(p1.owner.size, 1),
              np.full(p2.owner.size, 5)]
    grp_base = np.array([0] * (Nx + 1) + [3] * (Nx + 1) + [6] * (Nx + 1))
    groups[0] = grp_base
    allp = _concat_pieces([base, p1, p2])
    group = np.concatenate(groups)

    # drop the ghost halves of the wall problems from the front list
    fx = allp.f_xi
    fo = allp.f_owner
    keep = ((fo > 0) & (fo < Nx)) | ((fo == 0) & (fx >= 0)) | ((fo == Nx) & (fx <= 0))
    allp.f_owner, allp.f_xi = fo[keep], fx[keep]
    allp.f_left, allp.f_right = allp.f_left[keep], allp.f_right[keep]
    allp.f_kind = allp.f_kind[keep]

    finite = np.concatenate([allp.xa, allp.xb])
    finite = finite[np.abs(finite) < BIG / 2]
    if finite.size:
        smax = float(np.max(np.abs(finite)))
        if smax * ctx.grid.dt > dx * (1 + 1e-9):
            raise SchemeAbort(f"CFL violated: wave speed {smax:.6g} exceeds "
                              f"dx/dt = {dx / ctx.grid.dt:.6g}")
    return Strip(allp, group, 2.0 * dx * nodes.astype(float), Nx, dx)


def _concat_pieces(parts: List[fans.Pieces]) -> fans.Pieces:
    names = ["owner", "sub", "xa", "xb", "kind", "rho", "m", "inv", "corrected",
             "f_owner", "f_xi", "f_left", "f_right", "f_kind"]
    vals = {n: np.concatenate([getattr(p, n) for p in parts]) for n in names}
    return fans.Pieces(**vals)


# ---------------------------------------------------------------------------
# corrected states and strip evaluation


def correction_rates(rho, m, zeta0, params: ModelParams):
    """Time coefficients of the corrected invariants in a constant region.

    They equal g_{1,2} + lambda_{1,2} zeta(u_{n,0}) with the attractor drift
    -+delta removed, i.e. V(u) + lambda (zeta(u_{n,0}) - zeta(u)).
    """
    g1, g2 = source_g1_g2(rho, m, params)
    l1, l2 = char_speeds(rho, m, params.gamma)
    c1 = g1 + params.delta + l1 * zeta0
    c2 = g2 - params.delta + l2 * zeta0
    return c1, c2


def _zw_to_state(z, w, gamma):
    bad = w < z
    th = theta_of(gamma)
    gap = np.where(bad, 0.0, w - z)
    rho = (th * gap / 2.0) ** (1.0 / th)
    return rho, rho * (w + z) / 2.0, bad


@dataclass
class StripEval:
    y: np.ndarray           # quadrature points (S, Q)
    wq: np.ndarray          # quadrature weights in x (S, Q)
    rho: np.ndarray         # final states at points
    m: np.ndarray
    z: np.ndarray
    w: np.ndarray
    seg: Segments
    cell_rho: np.ndarray    # cell averages E
    cell_m: np.ndarray
    zeta_prefix: np.ndarray  # integral of zeta(u) over [0, y] at the points
    vacuum_snaps: int


def evaluate(strip: Strip, tau: float, ctx: StepContext, rho_c, m_c, rule=None) -> StripEval:
    """Final states of the strip at time t_n + tau and the cell averages.

    `rule` is an optional (nodes, weights) pair on [-1, 1] replacing the
    default Gauss rule, for both the outer and the nested integrals.
    """
    g = ctx.gamma
    params = ctx.params
    dx = ctx.grid.dx
    Nx = ctx.grid.Nx
    seg = strip.segments(tau)
    t_q, w_q = _GL_Q if rule is None else rule
    width = seg.width
    y = seg.xa[:, None] + width[:, None] * (t_q[None, :] + 1.0) / 2.0
    wq = width[:, None] * w_q[None, :] / 2.0
    rho0 = rho_c[seg.cell]
    m0 = m_c[seg.cell]
    zeta0 = zeta(rho0, m0, params)
    rb, mb = seg.base_at(y, g)
    corr = seg.corrected & (seg.kind == CONST)
    snaps = 0
    if ctx.opts.modified and np.any(corr):
        zk, wk = invariants(seg.rho, seg.m, g)
        c1, c2 = correction_rates(seg.rho, seg.m, zeta0, params)
        zeta_k = zeta(seg.rho, seg.m, params)
        # stage 1: running integral of zeta along the uncorrected pieces
        integ1 = (zeta(rb, mb, params) - zeta0[:, None])
        tot1 = np.sum(integ1 * wq, axis=1)
        pre1 = np.cumsum(tot1) - tot1
        D1_total = float(np.sum(tot1))
        slope1 = zeta_k - zeta0

        def stage1(pts):
            d = pre1[:, None] + slope1[:, None] * (pts - seg.xa[:, None]) - pts * D1_total
            z1 = zk[:, None] + d + c1[:, None] * tau
            w1 = wk[:, None] + d + c2[:, None] * tau
            r, mm, _ = _zw_to_state(z1, w1, g)
            return r, mm

        # stage 2: running integral along the stage-1 states
        def integrand2(pts):
            r1, m1 = stage1(pts)
            rbb, mbb = seg.base_at(pts, g)
            r1 = np.where(corr[:, None], r1, rbb)
            m1 = np.where(corr[:, None], m1, mbb)
            return zeta(r1, m1, params) - zeta0[:, None]

        f2 = integrand2(y)
        tot2 = np.sum(f2 * wq, axis=1)
        pre2 = np.cumsum(tot2) - tot2
        D2_total = float(np.sum(tot2))
        Q = t_q.size
        part = np.zeros_like(y)
        for q in range(Q):
            yq = y[:, q:q + 1]
            inner = seg.xa[:, None] + (yq - seg.xa[:, None]) * (t_q[None, :] + 1.0) / 2.0
            iw = (yq - seg.xa[:, None]) * w_q[None, :] / 2.0
            part[:, q] = np.sum(integrand2(inner) * iw, axis=1)
        D2 = pre2[:, None] + part
        Dhat = D2 - y * D2_total
        z2 = zk[:, None] + Dhat + c1[:, None] * tau
        w2 = wk[:, None] + Dhat + c2[:, None] * tau
        rc, mc, bad = _zw_to_state(z2, w2, g)
        snaps = int(np.count_nonzero(bad & corr[:, None] & (seg.rho[:, None] > 0)))
        rho = np.where(corr[:, None], rc, rb)
        m = np.where(corr[:, None], mc, mb)
        D_raw = D2
    else:
        rho, m = rb, mb
        D_raw = None

    z, w = invariants(rho, m, g)
    # cell averages: exact on uncorrected pieces, Gauss on corrected ones
    irho, im = seg.exact_integrals(g)
    if ctx.opts.modified:
        irho = np.where(corr, np.sum(rho * wq, axis=1), irho)
        im = np.where(corr, np.sum(m * wq, axis=1), im)
    cell_rho = np.bincount(seg.cell, weights=irho, minlength=Nx) / (2.0 * dx)
    cell_m = np.bincount(seg.cell, weights=im, minlength=Nx) / (2.0 * dx)

    # prefix of zeta(u_{n,0}) at the points, plus the strip's change
    cz = zeta(rho_c, m_c, params) * 2.0 * dx
    left_cells = np.cumsum(cz) - cz
    Pn = left_cells[seg.cell][:, None] + (y - 2.0 * dx * seg.cell[:, None]) * zeta0[:, None]
    if D_raw is None:
        zf = zeta(rho, m, params) - zeta0[:, None]
        tot = np.sum(zf * wq, axis=1)
        D_raw = (np.cumsum(tot) - tot)[:, None]  # coarse; only used for diagnostics
    return StripEval(y, wq, rho, m, z, w, seg, cell_rho, cell_m, Pn + D_raw, snaps)


def cell_average(ev: StripEval, j: int) -> GasState:
    """Average of the strip's final state over cell j."""
    return GasState(float(ev.cell_rho[j]), float(ev.cell_m[j]))


def quad_remainder(ev: StripEval, gamma: float, dx: float) -> float:
    """Sum over cells of (1/2dx) int int R_j(y) dy dx via the exact Hessian."""
    E_r = ev.cell_rho[ev.seg.cell][:, None]
    E_m = ev.cell_m[ev.seg.cell][:, None]
    d_r = ev.rho - E_r
    d_m = ev.m - E_m
    s_nodes, s_w = _GL_TAU
    s = (s_nodes + 1.0) / 2.0
    sw = s_w / 2.0
    R = np.zeros_like(d_r)
    for sk, wk in zip(s, sw):
        H = energy_hessian(E_r + sk * d_r, E_m + sk * d_m, gamma)
        quad = H[..., 0, 0] * d_r**2 + 2.0 * H[..., 0, 1] * d_r * d_m + H[..., 1, 1] * d_m**2
        R += wk * (1.0 - sk) * quad
    x_right = 2.0 * dx * (ev.seg.cell + 1.0)
    return float(np.sum(R * (x_right[:, None] - ev.y) * ev.wq) / (2.0 * dx))


def front_production(strip: Strip, gamma: float):
    """sigma [eta*] - [q*] for every recorded front (per unit time) and kinds."""
    p = strip.pieces
    if p.f_xi.size == 0:
        return np.zeros(0), np.zeros(0, np.int64)
    e = entropy_production(p.f_xi, p.f_left[:, 0], p.f_left[:, 1], p.f_right[:, 0],
                           p.f_right[:, 1], gamma)
    return np.asarray(e, dtype=float), p.f_kind


# ---------------------------------------------------------------------------
# public single-problem helpers


def build_rarefaction_fan(u_minus: GasState, z_plus: float, dx: float, gamma: float,
                          alpha: float = 0.75):
    """Fan approximating the 1-rarefaction from ``u_minus`` to invariant ``z_plus``.

    Returns ``(states, speeds)``: p states and p - 1 front speeds.
    """
    z_m, w_m = invariants(u_minus.rho, u_minus.m, gamma)
    z_m, w_m = float(z_m), float(w_m)
    if z_plus < z_m:
        raise ValueError("z_plus must not be below z(u_minus)")
    if z_plus == z_m:
        return [u_minus], []
    fr = fans.fan_core(np.array([z_m]), np.array([z_plus]), np.array([w_m]),
                       dx**alpha, gamma)
    rho, v = fans.rho_v(fr.z_states, np.full(fr.z_states.size, w_m), gamma)
    states = [GasState(float(r), float(r * vv)) for r, vv in zip(rho, v)]
    return states, [float(s) for s in fr.speeds]


@dataclass
class CorrectedRegion:
    """Two-stage corrected state on an isolated constant region.

    The region starts at ``anchor_x`` where the running zeta integral is
    ``prefix``; ``zeta0`` is zeta of the data the region replaced.
    """

    base: GasState
    anchor_x: float
    anchor_t: float
    zeta0: float
    params: ModelParams
    prefix: float = 0.0

    def _rates(self):
        return correction_rates(self.base.rho, self.base.m, self.zeta0, self.params)

    def stage1(self, x, t):
        g = self.params.gamma
        zk, wk = invariants(self.base.rho, self.base.m, g)
        c1, c2 = self._rates()
        x = np.asarray(x, dtype=float)
        zk_ = float(zeta(self.base.rho, self.base.m, self.params))
        d = self.prefix + (zk_ - self.zeta0) * (x - self.anchor_x)
        tau = t - self.anchor_t
        return zk + d + c1 * tau, wk + d + c2 * tau

    def stage2(self, x, t, npts: int = 8):
        g = self.params.gamma
        zk, wk = invariants(self.base.rho, self.base.m, g)
        c1, c2 = self._rates()
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tq, wq = np.polynomial.legendre.leggauss(npts)
        out_z, out_w = [], []
        for xx in x:
            pts = self.anchor_x + (xx - self.anchor_x) * (tq + 1.0) / 2.0
            z1, w1 = self.stage1(pts, t)
            r1, m1, _ = _zw_to_state(z1, w1, g)
            f = zeta(r1, m1, self.params) - self.zeta0
            d = self.prefix + float(np.sum(f * wq)) * (xx - self.anchor_x) / 2.0
            tau = t - self.anchor_t
            out_z.append(zk + d + c1 * tau)
            out_w.append(wk + d + c2 * tau)
        return np.array(out_z), np.array(out_w)

    def state(self, x, t) -> GasState:
        z, w = self.stage2([x], t)
        r, m, _ = _zw_to_state(z, w, self.params.gamma)
        return GasState(float(r[0]), float(m[0]))


def build_corrected_state(base: GasState, anchor_x: float, anchor_t: float,
                          zeta0: float, params: ModelParams,
                          prefix: float = 0.0) -> CorrectedRegion:
    return CorrectedRegion(base, anchor_x, anchor_t, zeta0, params, prefix)


# ---------------------------------------------------------------------------
# stepping


@dataclass
class StepRecord:
    t: float
    mass: float
    energy: float
    L: float
    M: float
    I_end: float
    min_ztilde: float
    max_wtilde: float
    production_cum: float
    production: float = 0.0
    jensen: float = 0.0
    remainder: float = 0.0
    bound_excess: float = 0.0
    budget_residual: float = 0.0
    wall_momentum: float = 0.0
    min_shock_production: float = math.inf
    min_fan_production: float = math.inf
    n_shocks: int = 0
    n_fan_fronts: int = 0
    n_vacuum_cutoffs: int = 0
    n_clamped: int = 0
    n_snaps: int = 0
    front_kind: Optional[np.ndarray] = None
    front_production: Optional[np.ndarray] = None


@dataclass
class SchemeState:
    n: int
    t: float
    rho: np.ndarray
    m: np.ndarray
    ledger: StepLedger


class Scheme:
    """One simulation: parameters, grid, options and the current state."""

    def __init__(self, u0: Sampler, params: ModelParams, grid: Grid,
                 opts: SchemeOptions = SchemeOptions()):
        self.u0 = u0
        self.params = params
        self.grid = grid
        self.opts = opts
        self.bound_C = opts.bound_C
        self.budget_C = opts.budget_C
        self.records: List[StepRecord] = []
        self.state = self._initial_state()

    # -- initial data
    def _initial_state(self) -> SchemeState:
        g = self.params.gamma
        Nx, dx = self.grid.Nx, self.grid.dx
        sub = max(64, int(math.ceil(self.opts.n_fine / Nx)))
        y = ((np.arange(Nx)[:, None] * sub + np.arange(sub)[None, :] + 0.5)
             / (Nx * sub))
        r, m = (np.asarray(a, dtype=float).reshape(Nx, sub) for a in self.u0(y.ravel()))
        E_r, E_m = r.mean(axis=1), m.mean(axis=1)
        I = zeta_prefix_centers(E_r, E_m, self.params, dx)
        jensen = float(np.mean(mechanical_energy(r, m, g)) -
                       np.sum(mechanical_energy(E_r, E_m, g)) * 2.0 * dx)
        if self.opts.modified:
            fake_seg = _FineCells(y, r, m, E_r, E_m, dx)
            rem = quad_remainder(fake_seg, g, dx)
            L0 = max(jensen, 0.0) + rem
            M0 = self.params.M0
            rho, mom, nvac, ncl = cutoff_arrays(E_r, E_m, I, M0, L0, dx,
                                                self.opts.beta_vac, g)
        else:
            rem, L0, M0 = 0.0, 0.0, self.params.M0
            rho, mom, nvac, ncl = E_r, E_m, 0, 0
        led = StepLedger(0, M0, L0, I, 0.0, jensen, rem, 0.0)
        st = SchemeState(0, 0.0, rho, mom, led)
        self.records.append(self._record(st, E_r, E_m, StepRecord(
            0.0, 0, 0, 0, 0, 0, 0, 0, 0, jensen=jensen, remainder=rem,
            n_vacuum_cutoffs=nvac, n_clamped=ncl)))
        return st

    def _record(self, st: SchemeState, E_r, E_m, rec: StepRecord) -> StepRecord:
        g = self.params.gamma
        dx = self.grid.dx
        z, w = invariants(st.rho, st.m, g)
        I = st.ledger.I
        rec.t = st.t
        rec.mass = float(np.sum(st.rho) * 2.0 * dx)
        rec.energy = float(np.sum(mechanical_energy(st.rho, st.m, g)) * 2.0 * dx)
        rec.L = st.ledger.L
        rec.M = st.ledger.M
        rec.I_end = float(np.sum(zeta(E_r, E_m, self.params)) * 2.0 * dx)
        rec.min_ztilde = float(np.min(z - self.params.epsilon_prime * I))
        rec.max_wtilde = float(np.max(w - self.params.epsilon_prime * I))
        rec.production_cum = st.ledger.production_cum
        return rec

    # -- one step
    def context(self) -> StepContext:
        st = self.state
        led = st.ledger
        M1 = next_M(led.M, led.L, self.params, self.grid.dt) if self.opts.modified else led.M
        dx = self.grid.dx
        cz = zeta(st.rho, st.m, self.params) * 2.0 * dx
        return StepContext(self.params, self.opts, self.grid, M1, led.L,
                           np.cumsum(cz) - 0.5 * cz, st.rho, st.m)

    def advance(self) -> SchemeState:
        st = self.state
        g = self.params.gamma
        dx, dt = self.grid.dx, self.grid.dt
        ctx = self.context()
        strip = build_strip(st.rho, st.m, ctx)
        ev = evaluate(strip, dt, ctx, st.rho, st.m)
        prod, kinds = front_production(strip, g)
        production = float(np.sum(prod)) * dt
        E_r, E_m = ev.cell_rho, ev.cell_m
        I_next = zeta_prefix_centers(E_r, E_m, self.params, dx)
        rec = StepRecord(0, 0, 0, 0, 0, 0, 0, 0, 0)
        shocks = prod[kinds == FRONT_SHOCK]
        fanp = prod[kinds == FRONT_FAN]
        rec.n_shocks, rec.n_fan_fronts = int(shocks.size), int(fanp.size)
        if shocks.size:
            rec.min_shock_production = float(shocks.min())
        if fanp.size:
            rec.min_fan_production = float(fanp.min())
        rec.production = production
        rec.n_snaps = ev.vacuum_snaps
        if self.opts.keep_fronts:
            rec.front_kind, rec.front_production = kinds.copy(), prod.copy()

        eta_pts = mechanical_energy(ev.rho, ev.m, g)
        energy_strip = float(np.sum(eta_pts * ev.wq))
        if self.opts.modified:
            jensen = energy_strip - float(np.sum(mechanical_energy(E_r, E_m, g))) * 2.0 * dx
            rem = quad_remainder(ev, g, dx)
            self._check_bounds(ev, ctx, production, rec)
            zeta_strip = float(np.sum(zeta(ev.rho, ev.m, self.params) * ev.wq))
            zeta_prev = float(np.sum(zeta(st.rho, st.m, self.params)) * 2.0 * dx)
            rec.budget_residual = zeta_strip - zeta_prev + production
            self._check_budget(rec.budget_residual)
            led = ledger_update(st.ledger, production, jensen, rem, I_next, self.params, dt)
            rho, mom, nvac, ncl = cutoff_arrays(E_r, E_m, I_next, led.M, led.L, dx,
                                                self.opts.beta_vac, g)
            rec.jensen, rec.remainder = jensen, rem
            rec.n_vacuum_cutoffs, rec.n_clamped = nvac, ncl
        else:
            led = StepLedger(st.ledger.n + 1, st.ledger.M, 0.0, I_next, production,
                             0.0, 0.0, st.ledger.production_cum + production)
            rho, mom = E_r, E_m
        rec.wall_momentum = self._wall_trace(ev)
        new = SchemeState(st.n + 1, (st.n + 1) * dt, rho, mom, led)
        self.state = new
        rec = self._record(new, E_r, E_m, rec)
        if self.opts.modified and self.opts.strict:
            if rec.I_end >= -self.params.mu + 10.0 * dx:
                raise SchemeAbort(f"boundary integral I = {rec.I_end:.6g} is not below "
                                  f"-mu + 10 dx at step {new.n}")
        self.records.append(rec)
        return new

    def _wall_trace(self, ev: StripEval) -> float:
        seg = ev.seg
        if seg.cell.size == 0:
            return 0.0
        out = 0.0
        for k, x_wall in ((0, 0.0), (-1, 1.0)):
            # extrapolate the end piece's quadrature values to the wall
            yk, mk = ev.y[k], ev.m[k]
            diff = yk[:, None] - yk[None, :]
            np.fill_diagonal(diff, 1.0)
            num = x_wall - yk
            basis = np.array([np.prod(np.delete(num, i)) for i in range(yk.size)])
            basis /= np.prod(diff, axis=1)
            out = max(out, abs(float(np.dot(basis, mk))))
        return out

    def _check_bounds(self, ev: StripEval, ctx: StepContext, production: float,
                      rec: StepRecord):
        sq = math.sqrt(self.grid.dx)
        lo = -ctx.M_next - ctx.L + ev.zeta_prefix
        hi = ctx.M_next + ctx.L + ev.zeta_prefix + production
        live = ev.rho > 0
        exc = np.maximum(lo - ev.z, ev.w - hi)
        exc = float(np.max(np.where(live, exc, -np.inf))) if np.any(live) else -np.inf
        rec.bound_excess = exc
        if self.bound_C is None:
            self.bound_C = max(1.0, 10.0 * max(exc, 0.0) / sq)
        if self.opts.strict and exc > self.bound_C * sq:
            raise SchemeAbort(f"invariant bound exceeded by {exc:.3e} at step "
                              f"{self.state.n}")

    def _check_budget(self, r: float):
        scale = self.grid.dx ** 1.5
        if self.budget_C is None:
            self.budget_C = max(1.0, 10.0 * abs(r) / scale)
        if self.opts.strict and abs(r) > self.budget_C * scale:
            raise SchemeAbort(f"zeta budget residual {r:.3e} exceeds "
                              f"{self.budget_C * scale:.3e} at step {self.state.n}")


@dataclass
class _FineCells:
    """Adapter so the initial Jensen remainder reuses :func:`quad_remainder`."""

    y: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    cell_rho: np.ndarray
    cell_m: np.ndarray
    dx: float
    wq: np.ndarray = field(init=False)
    seg: "_CellIndex" = field(init=False)

    def __post_init__(self):
        Nx, sub = self.y.shape
        self.wq = np.full(self.y.shape, 2.0 * self.dx / sub)
        self.seg = _CellIndex(np.arange(Nx))


@dataclass
class _CellIndex:
    cell: np.ndarray


@dataclass
class Trajectory:
    params: ModelParams
    grid: Grid
    opts: SchemeOptions
    times: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    I: np.ndarray
    records: List[StepRecord]
    bound_C: Optional[float] = None
    budget_C: Optional[float] = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.centers


def run(u0: Sampler, T: float, params: ModelParams, grid: Grid,
        opts: SchemeOptions = SchemeOptions(),
        on_step: Optional[Callable[[Scheme], None]] = None) -> Trajectory:
    """Iterate the scheme to T, calling ``on_step`` after the initial state and each step."""
    sch = Scheme(u0, params, grid, opts)
    # a horizon shorter than one step keeps the initial snapshot only
    steps = int(math.ceil(T / grid.dt - 1e-9)) if T >= grid.dt else 0
    rho = [sch.state.rho.copy()]
    m = [sch.state.m.copy()]
    I = [sch.state.ledger.I.copy()]
    if on_step:
        on_step(sch)
    for _ in range(steps):
        sch.advance()
        rho.append(sch.state.rho.copy())
        m.append(sch.state.m.copy())
        I.append(sch.state.ledger.I.copy())
        if on_step:
            on_step(sch)
    times = np.arange(len(rho)) * grid.dt
    return Trajectory(params, grid, opts, times, np.array(rho), np.array(m), np.array(I),
                      sch.records, sch.bound_C, sch.budget_C)


@dataclass(frozen=True)
class Piece:
    """One region of a node problem at time tau, positions relative to the node."""

    x_left: float
    x_right: float
    kind: int
    rho: float
    m: float
    invariant: float
    corrected: bool


def step_interior(uL: GasState, uR: GasState, ctx: StepContext, tau: float) -> List[Piece]:
    """Regions of one interior node problem at time tau, clipped to the two half cells."""
    rho_c = np.array([uL.rho, uR.rho])
    m_c = np.array([uL.m, uR.m])
    return _node_pieces(rho_c, m_c, ctx, tau, node=1, hi=ctx.grid.dx)


def step_boundary_right(u_cell: GasState, ctx: StepContext, tau: float) -> List[Piece]:
    """Regions of the right-wall problem at time tau (x <= 0 relative to the wall)."""
    rho_c = np.array([u_cell.rho])
    m_c = np.array([u_cell.m])
    return _node_pieces(rho_c, m_c, ctx, tau, node=1, hi=0.0)


def _node_pieces(rho_c, m_c, ctx: StepContext, tau: float, node: int, hi: float):
    grid = replace(ctx.grid, Nx=rho_c.size)
    dx = grid.dx
    cz = zeta(rho_c, m_c, ctx.params) * 2.0 * dx
    local = replace(ctx, grid=grid, P_centers=np.cumsum(cz) - 0.5 * cz, rho_c=rho_c, m_c=m_c)
    strip = build_strip(rho_c, m_c, local)
    p = strip.pieces
    sel = np.nonzero(p.owner == node)[0]
    sel = sel[np.lexsort((p.sub[sel], strip.group[sel]))]
    rows = []
    for i in sel:
        a = min(max(p.xa[i] * tau, -dx), hi)
        b = min(max(p.xb[i] * tau, -dx), hi)
        if b > a:
            rows.append(Piece(float(a), float(b), int(p.kind[i]), float(p.rho[i]), float(p.m[i]),
                              float(p.inv[i]), bool(p.corrected[i])))
    return rows
