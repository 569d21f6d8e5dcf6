"""Exact self-similar Riemann solutions for isentropic gas, with vacuum.

The vectorized core :func:`star_state` solves many interface problems at once
and is what the time stepper uses. The object layer (:class:`Wave`,
:class:`WaveFan`) is for inspection, sampling and testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .gas_model import (
    DomainError,
    GasState,
    energy_flux,
    invariants,
    mechanical_energy,
    physical_flux,
    pressure,
    theta_of,
)

VACUUM_SNAP = 1e-14


def wave_speed_S(rho, rho0, gamma: float):
    """Shock-speed magnitude between densities rho0 (reference) and rho."""
    rho = np.asarray(rho, dtype=float)
    rho0 = np.asarray(rho0, dtype=float)
    if np.any((rho0 == 0) & (rho > 0)):
        raise DomainError("S(rho, 0) is singular for rho > 0")
    th = theta_of(gamma)
    same = np.isclose(rho, rho0, rtol=1e-13, atol=0.0)
    r0 = np.where(rho0 > 0, rho0, 1.0)
    diff = np.where(same, 1.0, rho - rho0)
    val = rho * (pressure(rho, gamma) - pressure(rho0, gamma)) / (r0 * diff)
    out = np.sqrt(np.maximum(val, 0.0))
    return np.where(same, rho0**th, out)


def _branch(rho, rk, ck, gamma, th):
    """Velocity jump function of one family and its derivative in rho."""
    rk_safe = np.where(rk > 0, rk, 1.0)
    shock = rho > rk
    rar_f = (rho**th - ck) / th
    rar_d = np.where(rho > 0, rho ** (th - 1.0), np.inf)
    dp = (rho**gamma - rk_safe**gamma) / gamma
    dr = rho - rk_safe
    a = np.where(shock, dp * dr / (rho * rk_safe), 1.0)
    sq = np.sqrt(np.maximum(a, 1e-300))
    da = (rho ** (gamma - 1.0) * dr + dp) / (rho * rk_safe) - dp * dr / (rho**2 * rk_safe)
    f = np.where(shock, sq, rar_f)
    d = np.where(shock, da / (2.0 * sq), rar_d)
    return f, d


def star_state(rhoL, vL, rhoR, vR, gamma: float, tol: float = 1e-14, maxit: int = 200):
    """Intermediate state of the interior Riemann problem, vectorized.

    Returns ``(rho_star, v_star, vacuum)`` where ``vacuum`` marks problems whose
    solution contains a vacuum region (then ``rho_star`` is 0 and ``v_star``
    is meaningless).
    """
    rhoL = np.atleast_1d(np.asarray(rhoL, dtype=float)).copy()
    rhoR = np.atleast_1d(np.asarray(rhoR, dtype=float)).copy()
    vL = np.atleast_1d(np.asarray(vL, dtype=float)).copy()
    vR = np.atleast_1d(np.asarray(vR, dtype=float)).copy()
    rhoL[rhoL < VACUUM_SNAP] = 0.0
    rhoR[rhoR < VACUUM_SNAP] = 0.0
    th = theta_of(gamma)
    cL = rhoL**th
    cR = rhoR**th
    wL = vL + cL / th
    zR = vR - cR / th
    vac = (rhoL == 0) | (rhoR == 0) | (wL <= zR)
    rho_s = np.zeros_like(rhoL)
    v_s = np.zeros_like(rhoL)
    act = ~vac
    if np.any(act):
        rl, rr, ul, ur = rhoL[act], rhoR[act], vL[act], vR[act]
        cl, cr = cL[act], cR[act]
        du = ur - ul
        guess = (th * (wL[act] - zR[act]) / 2.0) ** (1.0 / th)
        lo = np.zeros_like(rl)
        hi = np.maximum(guess, np.maximum(rl, rr))

        def g(r):
            fl, dl = _branch(r, rl, cl, gamma, th)
            fr, dr = _branch(r, rr, cr, gamma, th)
            return fl + fr + du, dl + dr

        gh, _ = g(hi)
        for _ in range(200):
            bad = gh < 0
            if not np.any(bad):
                break
            hi = np.where(bad, 2.0 * hi, hi)
            gh, _ = g(hi)
        r = np.clip(guess, lo, hi)
        r = np.where(r <= 0, 0.5 * hi, r)
        # safeguarded Newton on a shrinking set of unconverged problems
        idx = np.arange(r.size)
        sub = (rl, rr, cl, cr, du)
        for _ in range(maxit):
            a_rl, a_rr, a_cl, a_cr, a_du = (q[idx] for q in sub)
            ri, li, hii = r[idx], lo[idx], hi[idx]
            fl, dl = _branch(ri, a_rl, a_cl, gamma, th)
            fr, dr = _branch(ri, a_rr, a_cr, gamma, th)
            gv = fl + fr + a_du
            neg = gv < 0
            li = np.where(neg, ri, li)
            hii = np.where(neg, hii, ri)
            step = gv / (dl + dr)
            rn = ri - step
            done = (np.abs(step) <= tol * ri) | (gv == 0) | (hii - li <= tol * hii)
            outside = ~((rn >= li) & (rn <= hii)) | ~np.isfinite(rn)
            rn = np.where(outside & ~done, 0.5 * (li + hii), rn)
            r[idx], lo[idx], hi[idx] = rn, li, hii
            idx = idx[~done]
            if idx.size == 0:
                break
        fl, _ = _branch(r, rl, cl, gamma, th)
        fr, _ = _branch(r, rr, cr, gamma, th)
        rho_s[act] = r
        v_s[act] = 0.5 * (ul + ur) + 0.5 * (fr - fl)
    return rho_s, v_s, vac


SHOCK1 = "shock-1"
SHOCK2 = "shock-2"
RAR1 = "rarefaction-1"
RAR2 = "rarefaction-2"
VACUUM = "vacuum"


@dataclass(frozen=True)
class Wave:
    kind: str
    speed_left: float
    speed_right: float
    left_state: GasState
    right_state: GasState


@dataclass(frozen=True)
class WaveFan:
    waves: List[Wave]
    left_state: GasState
    right_state: GasState
    gamma: float = field(default=5.0 / 3.0)
    wall: str = ""

    def speeds(self):
        return [(w.speed_left, w.speed_right) for w in self.waves]


def rarefaction1_state(xi, w, gamma: float):
    """State inside a 1-rarefaction with invariant w at ray xi."""
    th = theta_of(gamma)
    xi = np.asarray(xi, dtype=float)
    base = np.maximum(th * (w - xi) / (1.0 + th), 0.0)
    rho = base ** (1.0 / th)
    v = (th * w + xi) / (1.0 + th)
    return rho, rho * v


def rarefaction2_state(xi, z, gamma: float):
    th = theta_of(gamma)
    xi = np.asarray(xi, dtype=float)
    base = np.maximum(th * (xi - z) / (1.0 + th), 0.0)
    rho = base ** (1.0 / th)
    v = (th * z + xi) / (1.0 + th)
    return rho, rho * v


def _state(rho, v) -> GasState:
    rho = float(rho)
    return GasState(rho, rho * float(v) if rho > 0 else 0.0)


def solve_interior(uL: GasState, uR: GasState, gamma: float) -> WaveFan:
    th = theta_of(gamma)
    rl = uL.rho if uL.rho >= VACUUM_SNAP else 0.0
    rr = uR.rho if uR.rho >= VACUUM_SNAP else 0.0
    vl, vr = (uL.v if rl > 0 else 0.0), (uR.v if rr > 0 else 0.0)
    left, right = _state(rl, vl), _state(rr, vr)
    if rl == rr and vl == vr:
        return WaveFan([], left, right, gamma)
    rs, vs, vac = star_state(rl, vl, rr, vr, gamma)
    rs, vs, vac = float(rs[0]), float(vs[0]), bool(vac[0])
    waves: List[Wave] = []
    vacuum = GasState(0.0, 0.0)
    if vac:
        if rl == 0 and rr == 0:
            return WaveFan([], left, right, gamma)
        if rl > 0:
            wl = vl + rl**th / th
            waves.append(Wave(RAR1, vl - rl**th, wl, left, vacuum))
            edge_l = wl
        if rr > 0:
            zr = vr - rr**th / th
            edge_r = zr
        if rl > 0 and rr > 0:
            waves.append(Wave(VACUUM, edge_l, edge_r, vacuum, vacuum))
        if rr > 0:
            waves.append(Wave(RAR2, zr, vr + rr**th, vacuum, right))
        return WaveFan(waves, left, right, gamma)
    star = _state(rs, vs)
    if rs > rl:
        s = (star.m - left.m) / (rs - rl)
        waves.append(Wave(SHOCK1, s, s, left, star))
    elif rs < rl:
        waves.append(Wave(RAR1, vl - rl**th, vs - rs**th, left, star))
    if rs > rr:
        s = (right.m - star.m) / (rr - rs)
        waves.append(Wave(SHOCK2, s, s, star, right))
    elif rs < rr:
        waves.append(Wave(RAR2, vs + rs**th, vr + rr**th, star, right))
    return WaveFan(waves, left, right, gamma)


def _wall_from_mirror(u: GasState, gamma: float) -> WaveFan:
    """Right-wall problem: the mirrored interior problem restricted to xi <= 0."""
    th = theta_of(gamma)
    rho = u.rho if u.rho >= VACUUM_SNAP else 0.0
    v = u.v if rho > 0 else 0.0
    left = _state(rho, v)
    vacuum = GasState(0.0, 0.0)
    if rho == 0:
        return WaveFan([], vacuum, vacuum, gamma, wall="right")
    if v == 0:
        return WaveFan([], left, left, gamma, wall="right")
    w = v + rho**th / th
    if v > 0:
        rs, _, _ = star_state(rho, v, rho, -v, gamma)
        plus = GasState(float(rs[0]), 0.0)
        if plus.rho <= rho:
            # compression below round-off: the tie with v = 0
            return WaveFan([], left, left, gamma, wall="right")
        s = -left.m / (plus.rho - rho)
        return WaveFan([Wave(SHOCK1, s, s, left, plus)], left, plus, gamma, wall="right")
    if w > 0:
        plus = GasState((th * w) ** (1.0 / th), 0.0)
        wave = Wave(RAR1, v - rho**th, -plus.rho**th, left, plus)
        return WaveFan([wave], left, plus, gamma, wall="right")
    waves = [Wave(RAR1, v - rho**th, w, left, vacuum)]
    if w < 0:
        waves.append(Wave(VACUUM, w, 0.0, vacuum, vacuum))
    return WaveFan(waves, left, vacuum, gamma, wall="right")


def solve_wall_right(u_minus: GasState, gamma: float) -> WaveFan:
    return _wall_from_mirror(u_minus, gamma)


def _mirror_wave(wv: Wave) -> Wave:
    kind = {SHOCK1: SHOCK2, SHOCK2: SHOCK1, RAR1: RAR2, RAR2: RAR1}.get(wv.kind, wv.kind)
    return Wave(kind, -wv.speed_right, -wv.speed_left,
                wv.right_state.mirror(), wv.left_state.mirror())


def solve_wall_left(u_plus: GasState, gamma: float) -> WaveFan:
    fan = _wall_from_mirror(u_plus.mirror(), gamma)
    waves = [_mirror_wave(wv) for wv in reversed(fan.waves)]
    return WaveFan(waves, fan.right_state.mirror(), fan.left_state.mirror(), gamma, wall="left")


def sample(fan: WaveFan, xi: float) -> GasState:
    g = fan.gamma
    if fan.wall == "right" and xi > 0:
        xi = 0.0
    if fan.wall == "left" and xi < 0:
        xi = 0.0
    state = fan.left_state
    for wv in fan.waves:
        if xi < wv.speed_left:
            return state
        if xi <= wv.speed_right:
            if wv.kind == RAR1:
                wl = invariants(wv.left_state.rho, wv.left_state.m, g)[1]
                r, m = rarefaction1_state(xi, float(wl), g)
                return GasState(float(r), float(m))
            if wv.kind == RAR2:
                zr = invariants(wv.right_state.rho, wv.right_state.m, g)[0]
                r, m = rarefaction2_state(xi, float(zr), g)
                return GasState(float(r), float(m))
            if wv.kind == VACUUM:
                return GasState(0.0, 0.0)
        state = wv.right_state
    return fan.right_state


def rh_residual(wv: Wave, gamma: float) -> float:
    """Largest Rankine-Hugoniot residual of a shock, relative to flux scale."""
    a, b = wv.left_state, wv.right_state
    fa = physical_flux(a.rho, a.m, gamma)
    fb = physical_flux(b.rho, b.m, gamma)
    s = wv.speed_left
    r1 = float(fb[0] - fa[0] - s * (b.rho - a.rho))
    r2 = float(fb[1] - fa[1] - s * (b.m - a.m))
    scale = 1.0 + abs(float(fa[1])) + abs(float(fb[1]))
    return max(abs(r1), abs(r2)) / scale


def entropy_production(speed, rhoL, mL, rhoR, mR, gamma: float):
    """sigma [eta*] - [q*] across a front; nonnegative for admissible shocks."""
    d_eta = mechanical_energy(rhoR, mR, gamma) - mechanical_energy(rhoL, mL, gamma)
    d_q = energy_flux(rhoR, mR, gamma) - energy_flux(rhoL, mL, gamma)
    return speed * d_eta - d_q


def wave_entropy(wv: Wave, gamma: float) -> float:
    return float(entropy_production(wv.speed_left, wv.left_state.rho, wv.left_state.m,
                                    wv.right_state.rho, wv.right_state.m, gamma))
