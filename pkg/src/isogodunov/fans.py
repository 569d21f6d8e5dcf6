"""Wave-piece construction shared by the time stepper.

Everything here is written in the frame of a 1-family wave with the upwind
state on the left. 2-family waves are built in the mirrored frame
(x -> -x, m -> -m) and mapped back with :func:`mirror_pieces`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .gas_model import conserved, theta_of
from .riemann import wave_speed_S

CONST, RAR1, RAR2 = 0, 1, 2
FRONT_SHOCK, FRONT_FAN, FRONT_CLAMP = 1, 2, 3


class FanOrderError(RuntimeError):
    """Fan front speeds failed to increase strictly."""


def rho_v(z, w, gamma):
    th = theta_of(gamma)
    rho = (th * np.maximum(w - z, 0.0) / 2.0) ** (1.0 / th)
    return rho, (w + z) / 2.0


@dataclass
class Pieces:
    """Flat arrays of segments and fronts in one frame.

    ``owner`` indexes the wave (and hence the node) a row belongs to; ``sub``
    orders rows of one wave from left to right.
    """

    owner: np.ndarray
    sub: np.ndarray
    xa: np.ndarray
    xb: np.ndarray
    kind: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    inv: np.ndarray
    corrected: np.ndarray
    f_owner: np.ndarray
    f_xi: np.ndarray
    f_left: np.ndarray  # shape (n, 2): rho, m
    f_right: np.ndarray
    f_kind: np.ndarray

    @staticmethod
    def empty() -> "Pieces":
        e = np.zeros(0)
        ei = np.zeros(0, dtype=np.int64)
        return Pieces(ei, e, e, e, ei, e, e, e, np.zeros(0, bool), ei, e,
                      np.zeros((0, 2)), np.zeros((0, 2)), ei)


def _col(a, n, dtype):
    # build() concatenates, so a fresh copy is not needed here
    if np.ndim(a) == 0:
        return np.full(n, a, dtype=dtype)
    return np.asarray(a, dtype=dtype)


@dataclass
class PieceBuffer:
    segs: List[tuple] = field(default_factory=list)
    fronts: List[tuple] = field(default_factory=list)

    def seg(self, owner, sub, xa, xb, kind, rho, m, inv, corrected):
        n = np.size(owner)
        if n == 0:
            return
        b = lambda a, dt=float: _col(a, n, dt)
        self.segs.append((b(owner, np.int64), b(sub), b(xa), b(xb), b(kind, np.int64),
                          b(rho), b(m), b(inv), b(corrected, bool)))

    def front(self, owner, xi, rl, ml, rr, mr, kind):
        n = np.size(owner)
        if n == 0:
            return
        b = lambda a, dt=float: _col(a, n, dt)
        self.fronts.append((b(owner, np.int64), b(xi), np.stack([b(rl), b(ml)], 1),
                            np.stack([b(rr), b(mr)], 1), b(kind, np.int64)))

    def build(self) -> Pieces:
        p = Pieces.empty()
        if self.segs:
            cols = [np.concatenate(c) for c in zip(*self.segs)]
            p.owner, p.sub, p.xa, p.xb, p.kind, p.rho, p.m, p.inv, p.corrected = cols
        if self.fronts:
            cols = [np.concatenate(c) for c in zip(*self.fronts)]
            p.f_owner, p.f_xi, p.f_left, p.f_right, p.f_kind = cols
        return p


def mirror_pieces(p: Pieces) -> Pieces:
    kind = np.where(p.kind == RAR1, RAR2, np.where(p.kind == RAR2, RAR1, p.kind))
    inv = np.where(p.kind == CONST, p.inv, -p.inv)
    fl = p.f_right * np.array([1.0, -1.0])
    fr = p.f_left * np.array([1.0, -1.0])
    return Pieces(p.owner, -p.sub, -p.xb, -p.xa, kind, p.rho, -p.m, inv, p.corrected,
                  p.f_owner, -p.f_xi, fl, fr, p.f_kind)


@dataclass
class FanResult:
    counts: np.ndarray      # p per rarefaction
    z_states: np.ndarray    # flat, all p states
    state_owner: np.ndarray
    state_index: np.ndarray
    speeds: np.ndarray      # flat, p-1 per rarefaction
    speed_owner: np.ndarray
    head: np.ndarray
    tail: np.ndarray


def fan_core(zA, zB, w, h: float, gamma: float) -> FanResult:
    """Piecewise-constant 1-rarefaction fans from z = zA to z = zB at fixed w.

    The intermediate levels are zA + (i-1) h and fronts travel at
    v(z_i, w) - S(rho(z_{i+1}, w), rho(z_i, w)).
    """
    zA = np.asarray(zA, dtype=float)
    zB = np.asarray(zB, dtype=float)
    w = np.asarray(w, dtype=float)
    n = zA.size
    if n == 0:
        e, ei = np.zeros(0), np.zeros(0, dtype=np.int64)
        return FanResult(ei, e, ei, ei, e, ei, e, e)
    p = np.maximum(np.floor((zB - zA) / h).astype(np.int64) + 1, 2)
    owner = np.repeat(np.arange(n), p)
    start = np.cumsum(p) - p
    idx = np.arange(owner.size) - start[owner]
    last = idx == p[owner] - 1
    z = np.where(last, zB[owner], zA[owner] + idx * h)
    ww = w[owner]
    rho, v = rho_v(z, ww, gamma)
    keep = ~last
    i_left = np.nonzero(keep)[0]
    rl, vl = rho[i_left], v[i_left]
    rr = rho[i_left + 1]
    speeds = vl - wave_speed_S(rr, rl, gamma)
    s_owner = owner[i_left]
    if speeds.size > 1:
        same = s_owner[1:] == s_owner[:-1]
        if np.any(same & (np.diff(speeds) <= 0)):
            raise FanOrderError("rarefaction fan speeds are not strictly increasing")
    s_start = np.cumsum(p - 1) - (p - 1)
    head = speeds[s_start]
    tail = speeds[s_start + p - 2]
    return FanResult(p, z, owner, idx, speeds, s_owner, head, tail)


def add_fan(buf: PieceBuffer, fan: FanResult, owners, w, gamma, sub0: float,
            corrected: bool = True):
    """Emit the interior constant states of a fan and all of its fronts."""
    if fan.counts.size == 0:
        return
    owners = np.asarray(owners)
    w = np.asarray(w, dtype=float)
    rho, v = rho_v(fan.z_states, w[fan.state_owner], gamma)
    m = rho * v
    s_start = np.cumsum(fan.counts - 1) - (fan.counts - 1)
    interior = (fan.state_index > 0) & (fan.state_index < fan.counts[fan.state_owner] - 1)
    ii = np.nonzero(interior)[0]
    o = fan.state_owner[ii]
    k = fan.state_index[ii]
    xa = fan.speeds[s_start[o] + k - 1]
    xb = fan.speeds[s_start[o] + k]
    buf.seg(owners[o], sub0 + k, xa, xb, CONST, rho[ii], m[ii], 0.0, corrected)
    st_start = np.cumsum(fan.counts) - fan.counts
    j = np.arange(fan.speeds.size) - s_start[fan.speed_owner]
    left = st_start[fan.speed_owner] + j
    buf.front(owners[fan.speed_owner], fan.speeds, rho[left], m[left],
              rho[left + 1], m[left + 1], FRONT_FAN)


def rar1_head_tail(zA, w, zB, gamma):
    """Characteristic speeds at the two ends of an exact 1-rarefaction."""
    th = theta_of(gamma)
    rA, vA = rho_v(zA, w, gamma)
    rB, vB = rho_v(zB, w, gamma)
    return vA - rA**th, vB - rB**th


def state_from_zw(z, w, gamma):
    rho, m = conserved(np.asarray(z, float), np.maximum(np.asarray(w, float), z), gamma)
    return rho, m
