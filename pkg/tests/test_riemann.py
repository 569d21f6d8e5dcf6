import numpy as np
import pytest
from hypothesis import given, strategies as st

from isogodunov.gas_model import DomainError, GasState, invariants
from isogodunov.riemann import (
    RAR1,
    RAR2,
    SHOCK1,
    SHOCK2,
    VACUUM,
    rh_residual,
    sample,
    solve_interior,
    solve_wall_left,
    solve_wall_right,
    star_state,
    wave_entropy,
    wave_speed_S,
)

G = 5.0 / 3.0

# frozen from a 40-digit mpmath evaluation of the Hugoniot condition
RHO_WALL_SHOCK = 2.2848954041612183
SIGMA_WALL_SHOCK = -0.77827346627704806
ENTROPY_WALL_SHOCK = 0.31316215125661475


def state(rho, v):
    return GasState(rho, rho * v)


def test_S_equal_densities():
    assert float(wave_speed_S(8.0, 8.0, G)) == pytest.approx(2.0, rel=1e-14)
    assert float(wave_speed_S(1.0, 1.0, G)) == pytest.approx(1.0, rel=1e-15)


def test_S_distinct_densities():
    # sqrt(2 * 0.6 * (2**(5/3) - 1)); the commonly quoted 1.655 is a slip
    assert float(wave_speed_S(2.0, 1.0, G)) == pytest.approx(1.6154759437155599, rel=1e-14)


def test_S_continuous_at_coincidence():
    for h in (1e-3, 1e-5, 1e-7):
        assert float(wave_speed_S(1.0 + h, 1.0, G)) == pytest.approx(1.0, abs=2 * h)


def test_S_vacuum_reference_rejected():
    with pytest.raises(DomainError):
        wave_speed_S(1.0, 0.0, G)


def test_wall_case1_shock():
    fan = solve_wall_right(state(1.0, 1.0), G)
    assert [w.kind for w in fan.waves] == [SHOCK1]
    sh = fan.waves[0]
    assert fan.right_state.rho == pytest.approx(RHO_WALL_SHOCK, rel=1e-12)
    assert fan.right_state.m == 0.0
    assert sh.speed_left == pytest.approx(SIGMA_WALL_SHOCK, rel=1e-12)
    assert rh_residual(sh, G) <= 1e-9
    assert wave_entropy(sh, G) == pytest.approx(ENTROPY_WALL_SHOCK, rel=1e-10)


def test_wall_case2_rarefaction():
    fan = solve_wall_right(state(1.0, -1.0), G)
    assert [w.kind for w in fan.waves] == [RAR1]
    assert fan.right_state.rho == pytest.approx(8.0 / 27.0, rel=1e-14)
    assert fan.right_state.m == 0.0
    lo, hi = fan.waves[0].speed_left, fan.waves[0].speed_right
    assert (lo, hi) == pytest.approx((-2.0, -2.0 / 3.0), rel=1e-14)


def test_wall_case3_vacuum_at_wall():
    fan = solve_wall_right(state(1.0, -4.0), G)
    assert fan.waves[0].kind == RAR1
    assert fan.right_state == GasState(0.0, 0.0)
    assert sample(fan, 0.0) == GasState(0.0, 0.0)


def test_wall_case4_vacuum():
    fan = solve_wall_right(GasState(0.0, 0.0), G)
    assert fan.waves == []
    assert sample(fan, -1.0) == GasState(0.0, 0.0)


def test_wall_tie_is_constant():
    u = state(0.7, 0.0)
    fan = solve_wall_right(u, G)
    assert fan.waves == [] and sample(fan, 0.0) == u


def test_wall_left_is_mirror():
    left = solve_wall_left(state(1.0, 1.0), G)
    right = solve_wall_right(state(1.0, -1.0), G)
    assert [w.kind for w in left.waves] == [RAR2]
    assert left.waves[0].speed_left == pytest.approx(-right.waves[0].speed_right)
    assert left.left_state.rho == pytest.approx(8.0 / 27.0, rel=1e-14)

    left = solve_wall_left(state(1.0, -1.0), G)
    assert [w.kind for w in left.waves] == [SHOCK2]
    assert left.waves[0].speed_left == pytest.approx(-SIGMA_WALL_SHOCK, rel=1e-12)
    assert solve_wall_left(GasState(0.0, 0.0), G).waves == []


def test_interior_equal_states():
    u = state(1.3, 0.4)
    fan = solve_interior(u, u, G)
    assert fan.waves == []
    assert sample(fan, 0.3) == u


def test_interior_vacuum_edge_speed():
    fan = solve_interior(state(1.0, 0.0), GasState(0.0, 0.0), G)
    assert [w.kind for w in fan.waves] == [RAR1]
    assert fan.waves[0].speed_right == pytest.approx(3.0, rel=1e-15)
    assert sample(fan, 3.5) == GasState(0.0, 0.0)


def test_interior_symmetric_collision():
    fan = solve_interior(state(1.0, 1.0), state(1.0, -1.0), G)
    assert [w.kind for w in fan.waves] == [SHOCK1, SHOCK2]
    a, b = fan.waves
    assert a.right_state.rho == pytest.approx(RHO_WALL_SHOCK, rel=1e-12)
    assert b.left_state.rho == a.right_state.rho
    assert a.speed_left == pytest.approx(-b.speed_left, rel=1e-14)
    mid = sample(fan, 0.0)
    assert mid.rho == pytest.approx(RHO_WALL_SHOCK, rel=1e-12)
    assert mid.m == pytest.approx(0.0, abs=1e-12)


def test_interior_separating_vacuum():
    fan = solve_interior(state(1.0, -4.0), state(1.0, 4.0), G)
    assert [w.kind for w in fan.waves] == [RAR1, VACUUM, RAR2]
    assert sample(fan, 0.0) == GasState(0.0, 0.0)


def test_sample_limits():
    uL, uR = state(2.0, 0.3), state(0.5, -0.2)
    fan = solve_interior(uL, uR, G)
    assert sample(fan, -1e6) == uL
    assert sample(fan, 1e6) == uR


rhos = st.floats(1e-3, 50.0)
vels = st.floats(-10.0, 10.0)


@given(rhos, vels)
def test_reflection_oracle(rho, v):
    u = state(rho, v)
    wall = solve_wall_right(u, G)
    full = solve_interior(u, u.mirror(), G)
    speeds = [s for wv in full.waves for s in (wv.speed_left, wv.speed_right)]
    xis = np.concatenate([np.linspace(-12.0, 0.0, 41), np.array(speeds) - 1e-9])
    for xi in xis[xis <= 0]:
        a, b = sample(wall, xi), sample(full, xi)
        scale = 1.0 + b.rho
        assert abs(a.rho - b.rho) <= 1e-8 * scale
        assert abs(a.m - b.m) <= 1e-8 * scale * (1.0 + abs(v))


@given(rhos, vels)
def test_wall_trace(rho, v):
    u = state(rho, v)
    fan = solve_wall_right(u, G)
    m = sample(fan, 0.0).m
    z, w = invariants(rho, u.m, G)
    if w > 0:
        assert abs(m) <= 1e-9
    else:
        assert m == 0.0


@given(rhos, vels, rhos, vels)
def test_interior_waves_admissible(rl, vl, rr, vr):
    fan = solve_interior(state(rl, vl), state(rr, vr), G)
    prev = -np.inf
    for k, wv in enumerate(fan.waves):
        assert wv.speed_left <= wv.speed_right
        assert wv.speed_left >= prev - 1e-12
        prev = wv.speed_right
        if k:
            assert fan.waves[k - 1].right_state == wv.left_state
        if wv.kind in (SHOCK1, SHOCK2):
            assert wv.speed_left == wv.speed_right
            assert rh_residual(wv, G) <= 1e-9
            assert wave_entropy(wv, G) >= -1e-10


@given(rhos, vels)
def test_wall_shock_admissible(rho, v):
    fan = solve_wall_right(state(rho, v), G)
    for wv in fan.waves:
        if wv.kind == SHOCK1:
            assert rh_residual(wv, G) <= 1e-9
            assert wave_entropy(wv, G) >= -1e-10


@given(rhos, st.floats(-10.0, 0.0))
def test_rarefaction_monotone(rho, v):
    fan = solve_wall_right(state(rho, v), G)
    rar = [wv for wv in fan.waves if wv.kind == RAR1]
    if not rar:
        return
    wv = rar[0]
    w0 = invariants(rho, rho * v, G)[1]
    xis = np.linspace(wv.speed_left, wv.speed_right, 30)
    zs = []
    for xi in xis:
        s = sample(fan, xi)
        z, w = invariants(s.rho, s.m, G)
        if s.rho > 0:
            assert abs(w - w0) <= 1e-12 * max(1.0, abs(w0))
            zs.append(float(z))
    assert np.all(np.diff(zs) >= -1e-12)


@given(rhos, vels)
def test_wall_lemma_bounds(rho, v):
    u = state(rho, v)
    z0, w0 = invariants(rho, u.m, G)
    fan = solve_wall_right(u, G)
    lo = min(-w0, z0)
    hi = max(w0, 0.0)
    for xi in np.linspace(-15.0, 0.0, 61):
        s = sample(fan, xi)
        z, w = invariants(s.rho, s.m, G)
        assert s.rho >= 0
        assert z >= lo - 1e-12 * (1 + abs(lo))
        assert w <= hi + 1e-12 * (1 + abs(hi))


def test_star_state_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    rl, rr = rng.uniform(0.1, 3, 50), rng.uniform(0.1, 3, 50)
    vl, vr = rng.uniform(-2, 2, 50), rng.uniform(-2, 2, 50)
    rs, vs, vac = star_state(rl, vl, rr, vr, G)
    for k in range(0, 50, 7):
        r1, v1, _ = star_state(rl[k], vl[k], rr[k], vr[k], G)
        assert float(r1[0]) == pytest.approx(rs[k], rel=1e-12)
        assert float(v1[0]) == pytest.approx(vs[k], rel=1e-12, abs=1e-12)
