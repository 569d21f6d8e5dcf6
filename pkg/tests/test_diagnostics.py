import math

import numpy as np
import pytest

from isogodunov.diagnostics import (
    AuditFailure,
    TestFunction,
    attractor_metric,
    check_ledger,
    conservation_report,
    default_test_functions,
    entropy_ledger_audit,
    l1_distance,
    restrict,
    self_convergence,
    snapshot_metrics,
    weak_residual,
)
from isogodunov.gas_model import derive_params, params_from_constants
from isogodunov.scheme import PLAIN, SchemeOptions, make_grid, run

G = 5.0 / 3.0


def const_data(rho=1.0, v=0.0):
    return lambda x: (np.full_like(x, rho), np.full_like(x, rho * v))


def simulate(u0, Nx, steps, opts=SchemeOptions(), params=None):
    p = params or derive_params(u0, G, 0.1, mu=0.01)
    g0 = make_grid(p, 1.0, Nx)
    T = steps * g0.dt
    return run(u0, T, p, make_grid(p, T, Nx), opts)


@pytest.fixture(scope="module")
def constant_run():
    return simulate(const_data(), 10, 30, SchemeOptions(keep_fronts=True))


def test_conservation_constant(constant_run):
    rep = conservation_report(constant_run)
    assert rep.final_drift <= 1e-13
    assert rep.max_excess <= 1e-13


def test_conservation_vacuum():
    p = params_from_constants(G, 0.1, 1.0, 0.9, 0.01, 3.01)
    traj = simulate(const_data(0.0), 8, 5, SchemeOptions(strict=False), params=p)
    rep = conservation_report(traj)
    assert np.all(rep.mass_drift == 0.0)


def test_snapshot_metrics_signs(constant_run):
    for s in snapshot_metrics(constant_run):
        assert s.total_mass >= 0 and s.total_energy >= 0
        assert s.entropy_production_cum >= 0


def test_attractor_constant_enters_at_start(constant_run):
    rep = attractor_metric(constant_run)
    assert rep.t_entry == 0.0
    assert not rep.exited_after_entry
    assert constant_run.params.M0 == pytest.approx(3.01, abs=1e-5)
    assert constant_run.params.M_infinity == pytest.approx(12.98224537037037, rel=1e-13)


def test_attractor_never_entered_is_infinite(constant_run):
    rep = attractor_metric(constant_run, persistence=10**6)
    assert rep.t_entry == math.inf


def test_weak_residual_constant(constant_run):
    res = weak_residual(constant_run)
    assert len(res.mass) == 12
    assert res.norm <= 1e-12
    assert np.max(np.abs(res.entropy)) <= 1e-12


def test_test_functions_vanish_outside_support():
    tfs = default_test_functions(1.0)
    assert len(tfs) == 12
    for tf in tfs:
        assert 0.0 <= tf.x_lo < tf.x_hi <= 1.0
        assert 0.0 < tf.t_lo < tf.t_hi < 1.0


def test_weak_residual_stationary_shock():
    rl, rr = 1.0, 2.0
    pl, pr = rl**G / G, rr**G / G
    mflux = math.sqrt((pr - pl) / (1.0 / rl - 1.0 / rr))
    Nx = 40

    def u0(x):
        return np.where(x < 0.5, rl, rr), np.full_like(x, mflux)

    traj = simulate(u0, Nx, 20, SchemeOptions(mode=PLAIN))
    T = traj.times[-1]
    tfs = [TestFunction(0.3, 0.7, 0.1 * T, 0.9 * T), TestFunction(0.4, 0.6, 0.2 * T, 0.8 * T)]
    assert weak_residual(traj, tfs).norm <= 1e-6


def test_weak_residual_decreases_under_refinement():
    u0 = lambda x: (1.0 + 0.2 * np.sin(2 * np.pi * x), np.zeros_like(x))
    p = derive_params(u0, G, 0.1)
    T = 0.05
    norms = [weak_residual(run(u0, T, p, make_grid(p, T, Nx))).norm for Nx in (10, 20, 40)]
    assert norms[0] > norms[1] > norms[2]


def test_self_convergence_identical_and_constant(constant_run):
    row = l1_distance(constant_run, constant_run)
    assert row.l1_rho == 0.0 and row.l1_m == 0.0
    p = constant_run.params
    runs = [run(const_data(), 0.01, p, make_grid(p, 0.01, Nx)) for Nx in (5, 10)]
    assert np.all(self_convergence(runs).distances <= 1e-10)


def test_l1_distance_needs_nested_grids(constant_run):
    p = constant_run.params
    other = run(const_data(), 0.01, p, make_grid(p, 0.01, 7))
    with pytest.raises(ValueError):
        l1_distance(other, constant_run)


def test_restrict_averages_groups():
    assert np.array_equal(restrict(np.array([1.0, 3.0, 5.0, 7.0]), 2), np.array([2.0, 6.0]))


def test_entropy_audit_constant_is_empty(constant_run):
    audit = entropy_ledger_audit(constant_run)
    assert len(audit) == 0 and audit.passed


def test_entropy_audit_shock_positive():
    traj = simulate(const_data(1.0, 0.5), 10, 5, SchemeOptions(keep_fronts=True))
    audit = entropy_ledger_audit(traj, raise_on_failure=True)
    assert audit.shock.size > 0
    assert audit.min_shock > 0


def test_entropy_audit_rarefaction_fans_small():
    traj = simulate(const_data(1.0, -0.5), 10, 5, SchemeOptions(keep_fronts=True))
    audit = entropy_ledger_audit(traj)
    assert audit.fan.size > 0
    # fronts of a piecewise-constant fan carry O(dx^(3 alpha)) production
    assert np.max(np.abs(audit.fan)) <= 10 * traj.grid.dx ** (3 * 0.75)


def test_entropy_audit_needs_fronts():
    traj = simulate(const_data(1.0, 0.5), 10, 2)
    with pytest.raises(ValueError):
        entropy_ledger_audit(traj)


def test_entropy_audit_raises_on_negative_shock():
    traj = simulate(const_data(1.0, 0.5), 10, 2, SchemeOptions(keep_fronts=True))
    rec = traj.records[-1]
    rec.front_production = rec.front_production - 1.0
    with pytest.raises(AuditFailure):
        entropy_ledger_audit(traj, raise_on_failure=True)


def test_check_ledger_clean_and_detects_tampering(constant_run):
    assert check_ledger(constant_run) == []
    traj = simulate(const_data(1.0, 0.5), 10, 3)
    assert check_ledger(traj) == []
    traj.records[2].L = traj.records[1].L - 1.0
    assert any("L decreased" in s for s in check_ledger(traj))
