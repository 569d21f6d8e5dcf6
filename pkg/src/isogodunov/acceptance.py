"""The eleven acceptance criteria as callable checks.

Each ``criterion_<k>`` returns a :class:`CriterionResult`. Simulation runs are
cached per process so criteria that share runs (conservation and energy, for
example) pay for them once.
"""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import diagnostics as diag
from .cli_io import RunConfig, presets, simulate
from .gas_model import GasState, derive_params, from_riemann, invariants, to_riemann
from .riemann import (
    SHOCK1,
    SHOCK2,
    rh_residual,
    sample,
    solve_interior,
    solve_wall_right,
    wave_entropy,
)
from .scheme import PLAIN, SchemeOptions, Trajectory, make_grid, run


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


@lru_cache(maxsize=None)
def cached_run(init: str, Nx: int, T: float, mode: str = "modified",
               keep_fronts: bool = False) -> Trajectory:
    cfg = RunConfig(init=init, Nx=Nx, T=T, mode=mode)
    return simulate(cfg, write=False, keep_fronts=keep_fronts).trajectory


def _timed(number: int, name: str, fn: Callable[[], tuple],
           limit: Optional[float] = None) -> CriterionResult:
    t = time.perf_counter()
    passed, detail = fn()
    sec = time.perf_counter() - t
    if limit is not None:
        passed = passed and sec < limit
        detail += f"; runtime limit {limit:.0f}s"
    return CriterionResult(number, name, bool(passed), detail, sec)


def _random_states(rng, n, rho_max=4.0, v_max=5.0):
    rho = rng.uniform(0.0, rho_max, n)
    rho[rng.random(n) < 0.05] = 0.0
    v = rng.uniform(-v_max, v_max, n)
    return rho, np.where(rho > 0, rho * v, 0.0)


# ---------------------------------------------------------------------------


def criterion_1(n: int = 10_000, seed: int = 1) -> CriterionResult:
    def check():
        rng = np.random.default_rng(seed)
        gammas = rng.choice([1.2, 1.4, 5.0 / 3.0], n)
        rho = 10.0 ** rng.uniform(-6.0, 3.0, n)
        rho[rng.random(n) < 0.05] = 0.0
        v = rng.uniform(-20.0, 20.0, n)
        m = rho * v
        fails = 0
        for r, mm, vv, g in zip(rho, m, v, gammas):
            u = GasState(float(r), float(mm))
            p = to_riemann(u, g)
            back = from_riemann(p, g)
            if p.w < p.z or (r == 0) != (p.w - p.z == 0.0):
                fails += 1
            if vv >= 0 and r > 0 and (abs(p.w) < abs(p.z) or p.w < 0):
                fails += 1
            if vv <= 0 and r > 0 and (abs(p.w) > abs(p.z) or p.z > 0):
                fails += 1
            scale = max(abs(mm), r)
            if abs(back.rho - r) > 1e-10 * r or abs(back.m - mm) > 1e-10 * scale:
                fails += 1
        return fails == 0, f"{n} random states, {fails} failures"
    return _timed(1, "state algebra", check, 5.0)


def criterion_2(n: int = 1000, seed: int = 2, gamma: float = 5.0 / 3.0) -> CriterionResult:
    def check():
        rng = np.random.default_rng(seed)
        rho, m = _random_states(rng, n)
        worst_mirror = worst_rh = 0.0
        min_ent = math.inf
        for r, mm in zip(rho, m):
            u = GasState(float(r), float(mm))
            wall = solve_wall_right(u, gamma)
            inter = solve_interior(u, u.mirror(), gamma)
            smax = max([abs(s) for pair in inter.speeds() for s in pair], default=1.0)
            for xi in np.linspace(-1.1 * smax - 1.0, 0.0, 41):
                a, b = sample(wall, float(xi)), sample(inter, float(xi))
                d = max(abs(a.rho - b.rho), abs(a.m - b.m))
                worst_mirror = max(worst_mirror, d / (1.0 + a.rho + abs(a.m)))
            for fan in (wall, inter):
                for wv in fan.waves:
                    if wv.kind in (SHOCK1, SHOCK2):
                        worst_rh = max(worst_rh, rh_residual(wv, gamma))
                        min_ent = min(min_ent, wave_entropy(wv, gamma))
        ok = worst_mirror <= 1e-8 and worst_rh <= 1e-9 and min_ent >= -1e-10
        return ok, (f"mirror gap {worst_mirror:.1e}, RH residual {worst_rh:.1e}, "
                    f"min shock entropy {min_ent:.3e}")
    return _timed(2, "Riemann oracle", check, 30.0)


def criterion_3(n: int = 1000, seed: int = 3, gamma: float = 5.0 / 3.0) -> CriterionResult:
    def check():
        rng = np.random.default_rng(seed)
        rho, m = _random_states(rng, n)
        worst = 0.0
        for r, mm in zip(rho, m):
            u = GasState(float(r), float(mm))
            z0, w0 = (float(a) for a in invariants(u.rho, u.m, gamma))
            fan = solve_wall_right(u, gamma)
            smax = max([abs(s) for pair in fan.speeds() for s in pair], default=1.0)
            for xi in np.linspace(-1.1 * smax - 1.0, 0.0, 61):
                s = sample(fan, float(xi))
                z, w = (float(a) for a in invariants(s.rho, s.m, gamma))
                worst = max(worst, min(-w0, z0) - z, w - max(w0, 0.0), -s.rho)
        return worst <= 1e-10, f"largest bound excess {worst:.2e} over {n} wall problems"
    return _timed(3, "wall lemma bounds", check)


def criterion_4() -> CriterionResult:
    def check():
        drifts, plain = [], []
        for Nx in (25, 50, 100):
            drifts.append(diag.conservation_report(cached_run("wall-shock", Nx, 1.0)).final_drift)
            if Nx < 100:
                # exact-flux round-off per step does not depend on Nx
                tr = cached_run("wall-shock", Nx, 1.0, PLAIN)
                plain.append(diag.conservation_report(tr).final_drift / tr.grid.Nt)
        ratios = [drifts[i] / drifts[i + 1] for i in range(2)]
        ok = min(ratios) >= 1.5 and max(plain) <= 1e-12
        return ok, (f"drift {', '.join(f'{d:.2e}' for d in drifts)}, ratios "
                    f"{', '.join(f'{r:.2f}' for r in ratios)}; plain drift per step "
                    f"{max(plain):.1e}")
    return _timed(4, "mass conservation", check, 120.0)


def criterion_5() -> CriterionResult:
    def check():
        rows = []
        ok = True
        for Nx in (25, 50, 100):
            tr = cached_run("wall-shock", Nx, 1.0)
            ex = diag.conservation_report(tr).max_excess
            tol = tr.grid.dx
            ok &= ex <= tol
            rows.append(f"Nx={Nx} excess {ex:.1e} <= {tol:.1e}")
        return ok, "; ".join(rows)
    return _timed(5, "energy inequality", check)


def criterion_6() -> CriterionResult:
    def check():
        rows = []
        ok = True
        for name in ("sine", "wall-shock", "wall-rarefaction"):
            tr = cached_run(name, 50, 1.0)
            slack = tr.bound_C * math.sqrt(tr.grid.dx)
            worst = max(r.bound_excess for r in tr.records[1:])
            problems = diag.check_ledger(tr)
            ok &= worst <= slack and not problems
            rows.append(f"{name} worst {worst:.1e}/{slack:.2f}, ledger issues {len(problems)}")
        return ok, "; ".join(rows)
    return _timed(6, "discrete invariant bounds", check)


def _crit7_runs():
    runs = {
        "constant": cached_run("constant", 50, 0.5),
        "sine": cached_run("sine", 50, 1.0),
        "riemann": cached_run("riemann", 50, 0.25),
        "large-oscillation": cached_run("large-oscillation", 100, 0.02),
        "near-vacuum": cached_run("near-vacuum", 50, 0.5),
        "wall-shock": cached_run("wall-shock", 50, 1.0),
        "wall-rarefaction": cached_run("wall-rarefaction", 50, 1.0),
    }
    assert set(runs) == {p.name for p in presets()}
    return runs


def criterion_7() -> CriterionResult:
    def check():
        ok = True
        worst = -math.inf
        for name, tr in _crit7_runs().items():
            lim = -tr.params.mu + 10.0 * tr.grid.dx
            m = max(r.I_end for r in tr.records)
            ok &= m < lim
            worst = max(worst, m + tr.params.mu)
        return ok, f"largest I_2Nx + mu over all presets {worst:.2e} (allowed < 10 dx = 0.1)"
    return _timed(7, "boundary compatibility", check)


LARGE_OSC_CFG = RunConfig(init="large-oscillation", Nx=100, T=0.02, snap_every=20)


def criterion_8() -> CriterionResult:
    def check():
        tr = cached_run(LARGE_OSC_CFG.init, LARGE_OSC_CFG.Nx, LARGE_OSC_CFG.T)
        p = tr.params
        rep = diag.attractor_metric(tr)
        ok = (p.M0 > p.M_infinity + p.epsilon and rep.t_entry <= 1.2 * p.t0
              and not rep.exited_after_entry)
        return ok, (f"M0 {p.M0:.2f} > M_inf+eps {p.M_infinity + p.epsilon:.2f}; "
                    f"t_entry {rep.t_entry:.3g} vs 1.2 t0 {1.2 * p.t0:.3g}; "
                    f"exited afterwards: {rep.exited_after_entry}")
    return _timed(8, "attractor decay", check, 300.0)


def stationary_shock_run(Nx: int = 50, T: float = 0.02) -> Trajectory:
    """Plain-Godunov run of a shock at rest at x = 1/2."""
    g = 5.0 / 3.0
    rl, rr = 1.0, 2.0
    pl, pr = rl**g / g, rr**g / g
    flux = math.sqrt((pr - pl) / (1.0 / rl - 1.0 / rr))

    def u0(x):
        x = np.asarray(x, dtype=float)
        rho = np.where(x < 0.5, rl, rr)
        return rho, np.full_like(x, flux)

    params = derive_params(u0, g, 0.1)
    grid = make_grid(params, T, Nx)
    return run(u0, T, params, grid, SchemeOptions(mode=PLAIN))


def criterion_9() -> CriterionResult:
    def check():
        norms = [diag.weak_residual(cached_run("sine", Nx, 0.25)).norm for Nx in (25, 50, 100)]
        mono = norms[0] > norms[1] > norms[2]
        tr = stationary_shock_run()
        T = float(tr.times[-1])
        tfs = [diag.TestFunction(a, b, c * T, d * T)
               for (a, b) in ((0.3, 0.7), (0.35, 0.6), (0.4, 0.65))
               for (c, d) in ((0.0, 1.0), (0.2, 0.8), (0.1, 0.6), (0.4, 0.9))]
        shock = diag.weak_residual(tr, tfs).norm
        ok = mono and shock <= 1e-6
        return ok, (f"sine residuals {', '.join(f'{v:.2e}' for v in norms)}; "
                    f"stationary shock {shock:.1e}")
    return _timed(9, "weak-form residuals", check)


def criterion_10() -> CriterionResult:
    def check():
        table = diag.self_convergence([cached_run("riemann", Nx, 0.25) for Nx in (25, 50, 100)])
        d = table.distances
        ratios = table.ratios
        ok = bool(np.all(ratios >= 1.3))
        return ok, (f"L1 distances {', '.join(f'{v:.2e}' for v in d)}, ratios "
                    f"{', '.join(f'{r:.2f}' for r in ratios)}")
    return _timed(10, "self-convergence", check)


def criterion_11() -> CriterionResult:
    def check():
        with tempfile.TemporaryDirectory() as tmp:
            dirs = [Path(tmp) / "a", Path(tmp) / "b"]
            for d in dirs:
                simulate(replace(LARGE_OSC_CFG, out_dir=str(d)))
            names = sorted(p.name for p in dirs[0].iterdir())
            same = names == sorted(p.name for p in dirs[1].iterdir())
            data = [n for n in names if n != "config.txt"]
            _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], data, shallow=False)
            # the config echo differs only in its out= line
            echoes = [[ln for ln in (d / "config.txt").read_text().splitlines()
                       if not ln.startswith("out=")] for d in dirs]
            if echoes[0] != echoes[1]:
                mismatch = list(mismatch) + ["config.txt"]
            ok = same and not mismatch and not errors
            return ok, f"{len(names)} files compared, {len(mismatch) + len(errors)} differ"
    return _timed(11, "determinism", check)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


def run_all(only: Optional[Sequence[int]] = None,
            echo: Optional[Callable[[str], None]] = None) -> List[CriterionResult]:
    out = []
    for k, fn in enumerate(CRITERIA, 1):
        if only and k not in only:
            continue
        res = fn()
        if echo:
            echo(res.line())
        out.append(res)
    return out
