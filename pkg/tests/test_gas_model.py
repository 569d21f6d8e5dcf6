import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isogodunov.gas_model import (
    DomainError,
    GasState,
    RiemannPair,
    char_speeds,
    derive_params,
    energy_flux,
    energy_hessian,
    flux_correction_V,
    from_riemann,
    invariants,
    mechanical_energy,
    physical_flux,
    pressure,
    source_g1_g2,
    to_riemann,
    zeta,
)

G = 5.0 / 3.0


def const_data(rho=1.0, m=0.0):
    return lambda x: (np.full_like(x, rho), np.full_like(x, m))


@pytest.fixture(scope="module")
def unit_params():
    return derive_params(const_data(), G, 0.1, mu=0.01)


def test_pressure_examples():
    assert pressure(0.0, G) == 0.0
    assert pressure(1.0, G) == pytest.approx(0.6, rel=1e-15)
    assert pressure(8.0, G) == pytest.approx(19.2, rel=1e-14)


def test_pressure_rejects_negative_density():
    with pytest.raises(DomainError):
        pressure(-1e-3, G)


def test_negative_density_state_rejected():
    with pytest.raises(DomainError):
        GasState(-1.0, 0.0)


def _pair(u):
    p = to_riemann(u, G)
    return p.z, p.w


def test_to_riemann_examples():
    assert _pair(GasState(1.0, 1.0)) == pytest.approx((-2.0, 4.0), rel=1e-15)
    assert to_riemann(GasState(0.0, 0.0), G) == RiemannPair(0.0, 0.0)
    assert _pair(GasState(1.0, -1.0)) == pytest.approx((-4.0, 2.0), rel=1e-15)


def test_from_riemann_examples():
    u = from_riemann(RiemannPair(-2.0, 4.0), G)
    assert u.rho == pytest.approx(1.0, rel=1e-14) and u.m == pytest.approx(1.0, rel=1e-14)
    assert from_riemann(RiemannPair(0.0, 0.0), G) == GasState(0.0, 0.0)
    # (theta * 8 / 2)**3 with theta = 1/3
    u = from_riemann(RiemannPair(-4.0, 4.0), G)
    assert u.rho == pytest.approx((4.0 / 3.0) ** 3, rel=1e-14)
    assert u.rho == pytest.approx(2.3703703703703703, rel=1e-14)
    assert u.m == 0.0


def test_from_riemann_rejects_crossed_invariants():
    with pytest.raises(DomainError):
        from_riemann(RiemannPair(1.0, 0.0), G)


def test_energy_examples():
    assert mechanical_energy(1.0, 0.0, G) == pytest.approx(0.9, rel=1e-15)
    assert mechanical_energy(0.0, 0.0, G) == 0.0
    assert mechanical_energy(1.0, 2.0, G) == pytest.approx(2.9, rel=1e-15)
    assert energy_flux(1.0, 0.0, G) == 0.0
    assert energy_flux(1.0, 1.0, G) == pytest.approx(2.0, rel=1e-15)
    assert energy_flux(0.0, 0.0, G) == 0.0


def test_derive_params_constant_data(unit_params):
    p = unit_params
    assert p.rho_bar == pytest.approx(1.0, rel=1e-14)
    assert p.eta_bar == pytest.approx(0.91, rel=1e-14)
    assert p.nu == pytest.approx(1.365, rel=1e-14)
    assert p.K == pytest.approx(0.455, rel=1e-14)
    # independent rational evaluation: 4.79224537037037 + 8.19
    assert p.M_infinity == pytest.approx(12.98224537037037, rel=1e-13)
    assert p.delta == pytest.approx(0.455 * 0.1 / 6.0, rel=1e-14)
    assert p.M0 == pytest.approx(3.01, abs=1e-5)
    assert p.t0 == 0.0
    assert p.epsilon_prime == 1.0


def test_zeta_and_V_examples(unit_params):
    p = unit_params
    assert zeta(0.0, 0.0, p) == pytest.approx(p.K, rel=1e-15)
    assert zeta(1.0, 0.0, p) == pytest.approx(-0.01, abs=1e-14)
    assert zeta(1.0, 2.0, p) == pytest.approx(1.99, abs=1e-14)
    assert flux_correction_V(1.0, 0.0, p) == 0.0
    assert flux_correction_V(1.0, 1.0, p) == pytest.approx(0.635, abs=1e-14)
    assert flux_correction_V(0.0, 0.0, p) == 0.0


def test_char_speed_examples():
    assert tuple(map(float, char_speeds(1.0, 0.0, G))) == (-1.0, 1.0)
    assert tuple(map(float, char_speeds(0.0, 0.0, G))) == (0.0, 0.0)
    assert tuple(map(float, char_speeds(1.0, 1.0, G))) == (0.0, 2.0)


def test_source_examples(unit_params):
    p = unit_params
    g1, g2 = source_g1_g2(0.0, 0.0, p)
    assert (float(g1), float(g2)) == (-p.delta, p.delta)
    g1, g2 = source_g1_g2(1.0, 0.0, p)
    assert float(g1) == pytest.approx(-0.01 - p.delta, abs=1e-14)
    assert float(g2) == pytest.approx(0.01 + p.delta, abs=1e-14)


def test_source_vacuum_limit(unit_params):
    # along z = w = v0 the density vanishes and only -K lambda_1 - delta is left
    p = unit_params
    v0 = 0.7
    for gap in (1e-3, 1e-5, 1e-7):
        rho = (p.theta * gap / 2.0) ** (1.0 / p.theta)
        g1, _ = source_g1_g2(rho, rho * v0, p)
        assert float(g1) == pytest.approx(-p.K * v0 - p.delta, abs=5 * rho**p.theta)


def test_derive_params_rejects_bad_inputs():
    with pytest.raises(DomainError):
        derive_params(const_data(0.0), G, 0.1)
    with pytest.raises(DomainError):
        derive_params(const_data(), 1.9, 0.1)
    with pytest.raises(DomainError):
        derive_params(const_data(), 1.0, 0.1)


log_density = st.floats(-6.0, 3.0).map(lambda e: 10.0**e)
velocities = st.floats(-20.0, 20.0)
gammas = st.sampled_from([1.2, 1.4, 5.0 / 3.0])


@given(log_density, velocities, gammas)
def test_roundtrip(rho, v, g):
    u = GasState(rho, rho * v)
    back = from_riemann(to_riemann(u, g), g)
    assert back.rho == pytest.approx(rho, rel=1e-10)
    assert back.m == pytest.approx(u.m, rel=1e-10, abs=1e-10 * rho)


def test_roundtrip_bulk():
    rng = np.random.default_rng(0)
    for g in (1.2, 1.4, 5.0 / 3.0):
        rho = 10.0 ** rng.uniform(-6, 3, 10_000)
        m = rho * rng.uniform(-20, 20, 10_000)
        z, w = invariants(rho, m, g)
        from isogodunov.gas_model import conserved
        r2, m2 = conserved(z, w, g)
        assert np.max(np.abs(r2 - rho) / rho) <= 1e-10
        assert np.max(np.abs(m2 - m) / np.maximum(np.abs(m), rho)) <= 1e-10


@given(log_density, velocities, gammas)
def test_ordering_and_sign_laws(rho, v, g):
    z, w = invariants(rho, rho * v, g)
    assert w >= z
    if v >= 0:
        assert abs(w) >= abs(z) and w >= 0
    if v <= 0:
        assert abs(w) <= abs(z) and z <= 0


@given(velocities, gammas)
def test_vacuum_invariants_coincide(v, g):
    z, w = invariants(0.0, 0.0, g)
    assert w - z == 0.0


@given(log_density, velocities, gammas)
def test_lambda_reexpression(rho, v, g):
    # keep the magnitudes where 1e-12 is meaningful in absolute terms
    rho = min(rho, 50.0)
    th = (g - 1.0) / 2.0
    z, w = invariants(rho, rho * v, g)
    l1, l2 = char_speeds(rho, rho * v, g)
    assert abs(float(l1) - (z + (3.0 - g) / (g - 1.0) * rho**th)) <= 1e-12 * max(1.0, abs(z))
    assert abs(float(l2) - (w - (3.0 - g) / (g - 1.0) * rho**th)) <= 1e-12 * max(1.0, abs(w))


@given(st.floats(0.01, 10.0), st.floats(-3.0, 3.0), st.floats(0.0, 1.0),
       st.floats(1.05, 5.0 / 3.0), st.floats(1e-4, 1.0))
def test_K_positive(rho0, v0, amp, g, mu):
    def u0(x):
        rho = rho0 * (1.0 + amp * np.sin(2 * np.pi * x) ** 2)
        return rho, rho * v0 * np.cos(np.pi * x)

    p = derive_params(u0, g, 0.1, mu=mu, n_fine=500)
    assert p.K > 0
    assert p.K == pytest.approx(p.eta_bar * (2 * g - 2) / (g + 1), rel=1e-12)
    assert p.delta > 0 and p.M_infinity > 0


@given(log_density, velocities, gammas)
def test_hessian_positive_definite(rho, v, g):
    rho = min(max(rho, 1e-3), 1e2)
    H = energy_hessian(rho, rho * v, g)
    ev = np.linalg.eigvalsh(H)
    assert ev[0] > 0


def _grad(f, rho, m, h):
    dr = (f(rho + h, m) - f(rho - h, m)) / (2 * h)
    dm = (f(rho, m + h) - f(rho, m - h)) / (2 * h)
    return dr, dm


def test_entropy_pair_consistency_under_refinement():
    # along a smooth profile, d/dx q(u) must equal grad(eta) . d/dx f(u)
    g = G
    eta = lambda r, m: mechanical_energy(r, m, g)
    q = lambda r, m: energy_flux(r, m, g)
    errs = []
    for n in (50, 100, 200, 400):
        x = np.linspace(0.0, 1.0, n + 1)
        h = x[1] - x[0]
        rho = 1.0 + 0.3 * np.sin(2 * np.pi * x)
        m = 0.5 * np.cos(2 * np.pi * x) * rho
        f1, f2 = physical_flux(rho, m, g)
        dq = np.gradient(q(rho, m), h, edge_order=2)
        df1 = np.gradient(f1, h, edge_order=2)
        df2 = np.gradient(f2, h, edge_order=2)
        er, em = _grad(eta, rho, m, 1e-5)
        errs.append(np.max(np.abs(dq - (er * df1 + em * df2))))
    errs = np.array(errs)
    assert np.all(errs[1:] < errs[:-1])
    assert errs[-1] < 1e-3
    assert math.log2(errs[-2] / errs[-1]) > 1.5
