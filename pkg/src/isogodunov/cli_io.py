"""Configuration, initial-data presets, file output and the command line."""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .diagnostics import AuditFailure, ConvergenceTable, self_convergence
from .gas_model import DomainError, ModelParams, Sampler, derive_params, invariants, theta_of
from .scheme import MODIFIED, PLAIN, SchemeAbort, SchemeOptions, StepRecord, Trajectory, make_grid, run

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """A configuration value violates a stated constraint."""


# ---------------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class InitPreset:
    name: str
    sampler: Sampler
    description: str


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _constant(x):
    return _ones(x), 0.0 * _ones(x)


def _sine(x):
    x = np.asarray(x, dtype=float)
    return 1.0 + 0.2 * np.sin(2.0 * np.pi * x), 0.0 * x


def _riemann(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0.5, 1.0, 0.5), 0.0 * x


def _large_oscillation(x):
    # a narrow velocity spike: its kinetic energy stays small while |v| is
    # large, which pushes M0 above M_inf + eps
    x = np.asarray(x, dtype=float)
    return _ones(x), 40.0 * np.exp(-(((x - 0.505) / 0.001) ** 2))


def _near_vacuum(x):
    x = np.asarray(x, dtype=float)
    rho = np.where(np.abs(x - 0.5) <= 0.05, 0.0, 1.0)
    return rho, 0.0 * x


def _wall_shock(x):
    return _ones(x), 0.5 * _ones(x)


def _wall_rarefaction(x):
    return _ones(x), -0.5 * _ones(x)


_PRESETS = [
    InitPreset("constant", _constant, "rho = 1, m = 0"),
    InitPreset("sine", _sine, "rho = 1 + 0.2 sin(2 pi x), m = 0"),
    InitPreset("riemann", _riemann, "rho = 1 | 0.5 split at x = 0.5, m = 0"),
    InitPreset("large-oscillation", _large_oscillation,
               "rho = 1, v = 40 exp(-((x - 0.505)/0.001)^2); M0 > M_inf + eps"),
    InitPreset("near-vacuum", _near_vacuum, "rho = 0 on [0.45, 0.55], 1 elsewhere"),
    InitPreset("wall-shock", _wall_shock, "rho = 1, v = 0.5 (compression at x = 1)"),
    InitPreset("wall-rarefaction", _wall_rarefaction, "rho = 1, v = -0.5 (expansion at x = 1)"),
]


def presets() -> List[InitPreset]:
    return list(_PRESETS)


def preset(name: str) -> InitPreset:
    for p in _PRESETS:
        if p.name == name:
            return p
    raise KeyError(name)


def load_data_file(path: str) -> Sampler:
    """Sampler interpolating a CSV with header x,rho,m."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except ValueError as exc:
        raise ConfigError(f"cannot parse init file {path}: {exc}") from exc
    names = data.dtype.names or ()
    if not {"x", "rho", "m"} <= set(names):
        raise ConfigError(f"init file {path} needs columns x,rho,m")
    order = np.argsort(data["x"])
    xs, rs, ms = data["x"][order], data["rho"][order], data["m"][order]
    if np.any(rs < 0):
        raise ConfigError("init file has negative density")

    def sampler(x):
        x = np.asarray(x, dtype=float)
        r = np.interp(x, xs, rs)
        m = np.where(r > 0, np.interp(x, xs, ms), 0.0)
        return r, m

    return sampler


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    gamma: float = 5.0 / 3.0
    epsilon: float = 0.1
    mu: Optional[float] = None
    Nx: int = 50
    T: float = 1.0
    init: str = "sine"
    mode: str = MODIFIED
    out_dir: str = "out"
    seed: int = 0
    alpha: float = 0.75
    beta_vac: float = 1.2
    beta_rar: float = 0.25
    snap_every: int = 0

    def sampler(self) -> Sampler:
        try:
            return preset(self.init).sampler
        except KeyError:
            return load_data_file(self.init)

    def scheme_options(self, **extra) -> SchemeOptions:
        return SchemeOptions(mode=self.mode, alpha=self.alpha, beta_vac=self.beta_vac,
                             beta_rar=self.beta_rar, **extra)


# file key -> (field, parser)
_KEYS: Dict[str, tuple] = {
    "gamma": ("gamma", float),
    "epsilon": ("epsilon", float),
    "mu": ("mu", lambda s: None if s.strip().lower() in ("", "auto", "none") else float(s)),
    "nx": ("Nx", int),
    "tfinal": ("T", float),
    "init": ("init", str),
    "mode": ("mode", str),
    "out": ("out_dir", str),
    "seed": ("seed", int),
    "alpha": ("alpha", float),
    "beta_vac": ("beta_vac", float),
    "beta_rar": ("beta_rar", float),
    "snap_every": ("snap_every", int),
}
_FIELD_TO_KEY = {v[0]: k for k, v in _KEYS.items()}


def validate(cfg: RunConfig) -> RunConfig:
    g = cfg.gamma
    if not (1.0 < g <= 5.0 / 3.0 + 1e-15):
        raise ConfigError(f"gamma={g} violates 1 < gamma <= 5/3")
    if cfg.epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if cfg.mu is not None and cfg.mu <= 0:
        raise ConfigError("mu must be positive")
    if cfg.Nx < 2:
        raise ConfigError("Nx must be at least 2")
    if not cfg.T > 0:
        raise ConfigError("T must be positive")
    if cfg.mode not in (MODIFIED, PLAIN):
        raise ConfigError(f"mode must be {MODIFIED} or {PLAIN}")
    if cfg.snap_every < 0:
        raise ConfigError("snap_every must be nonnegative")
    a, bv, br = cfg.alpha, cfg.beta_vac, cfg.beta_rar
    th = theta_of(g)
    checks = [
        (0.5 < a < 1.0, "1/2 < alpha < 1"),
        (1.0 < bv < 1.0 / (2.0 * th), "1 < beta_vac < 1/(2 theta)"),
        (br > 0, "beta_rar > 0"),
        (br < a, "beta_rar < alpha"),
        (0.5 + br / 2.0 < a, "1/2 + beta_rar/2 < alpha"),
        (br < 2.0 / (g + 5.0), "beta_rar < 2/(gamma + 5)"),
        ((9.0 - 3.0 * g) * br / 2.0 < a, "(9 - 3 gamma) beta_rar / 2 < alpha"),
    ]
    for ok, name in checks:
        if not ok:
            raise ConfigError(f"constraint violated: {name}")
    if cfg.init not in [p.name for p in _PRESETS] and not os.path.isfile(cfg.init):
        raise ConfigError(f"unknown preset or missing file: {cfg.init}")
    return cfg


def parse_config_text(text: str) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.lower().replace("-", "_")
        if k not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {k!r}")
        out[k] = v
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None,
                echo: bool = False) -> RunConfig:
    """Defaults, then the key=value file, then ``overrides`` (flag values)."""
    values: Dict[str, object] = {}
    if path is not None:
        text = Path(path).read_text()
        for k, v in parse_config_text(text).items():
            fname, conv = _KEYS[k]
            try:
                values[fname] = conv(v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        fname = _KEYS[k][0] if k in _KEYS else k
        values[fname] = v
    cfg = validate(RunConfig(**values))
    if echo:
        write_config_echo(cfg)
    return cfg


def format_config(cfg: RunConfig) -> str:
    rows = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            s = "auto"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        rows.append((_FIELD_TO_KEY[f.name], s))
    return "".join(f"{k}={v}\n" for k, v in sorted(rows))


def write_config_echo(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.txt"
    path.write_text(format_config(cfg))
    return path


# ---------------------------------------------------------------------------
# output files


def fmt(v: float) -> str:
    return format(float(v) + 0.0, ".17g")


SNAPSHOT_HEADER = "x,rho,m,v,z,w,ztilde,wtilde"
LEDGER_HEADER = "t,mass,energy,Ln,Mn,I_2Nx,min_ztilde,max_wtilde,entropy_prod_cum"


def snapshot_rows(x, rho, m, I, gamma: float, epsilon_prime: float = 1.0) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    v = np.where(rho > 0, m / np.where(rho > 0, rho, 1.0), 0.0)
    z, w = invariants(rho, m, gamma)
    return np.column_stack([x, rho, m, v, z, w, z - epsilon_prime * I, w - epsilon_prime * I])


def write_snapshot(out_dir, step: int, x, rho, m, I, gamma: float,
                   epsilon_prime: float = 1.0) -> Path:
    rows = snapshot_rows(x, rho, m, I, gamma, epsilon_prime)
    path = Path(out_dir) / f"snap_{step:06d}.csv"
    lines = [SNAPSHOT_HEADER] + [",".join(fmt(v) for v in r) for r in rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def ledger_row(r: StepRecord) -> str:
    vals = [r.t, r.mass, r.energy, r.L, r.M, r.I_end, r.min_ztilde, r.max_wtilde,
            r.production_cum]
    return ",".join(fmt(v) for v in vals)


def write_ledger(path, records: Sequence[StepRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(LEDGER_HEADER + "\n")
        for r in records:
            fh.write(ledger_row(r) + "\n")
    return path


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class RunResult:
    config: RunConfig
    params: ModelParams
    trajectory: Trajectory
    files: List[Path]


def _snap_stride(cfg: RunConfig, Nt: int) -> int:
    if cfg.snap_every > 0:
        return cfg.snap_every
    return max(1, math.ceil(Nt / 100))


def simulate(cfg: RunConfig, write: bool = True, keep_fronts: bool = False) -> RunResult:
    """Run one configuration, optionally writing snapshots, ledger and config echo."""
    u0 = cfg.sampler()
    params = derive_params(u0, cfg.gamma, cfg.epsilon, cfg.mu)
    grid = make_grid(params, cfg.T, cfg.Nx)
    opts = cfg.scheme_options(keep_fronts=keep_fronts)
    files: List[Path] = []
    if not write:
        return RunResult(cfg, params, run(u0, cfg.T, params, grid, opts), files)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files.append(write_config_echo(cfg))
    stride = _snap_stride(cfg, grid.Nt)
    x = grid.centers

    def sink(sch):
        st = sch.state
        if st.n % stride == 0 or st.n == grid.Nt:
            files.append(write_snapshot(out, st.n, x, st.rho, st.m, st.ledger.I,
                                        params.gamma, params.epsilon_prime))

    traj = run(u0, cfg.T, params, grid, opts, on_step=sink)
    files.append(write_ledger(out / "ledger.csv", traj.records))
    return RunResult(cfg, params, traj, files)


def _sweep_worker(cfg: RunConfig) -> Trajectory:
    return simulate(cfg, write=False).trajectory


def sweep(cfg: RunConfig, resolutions: Sequence[int],
          workers: Optional[int] = None) -> ConvergenceTable:
    """Run ``cfg`` at each resolution and write the L1 self-convergence report."""
    res = sorted(set(int(n) for n in resolutions))
    if len(res) < 2:
        raise ConfigError("a sweep needs at least two resolutions")
    for n in res:
        validate(replace(cfg, Nx=n))
    cfgs = [replace(cfg, Nx=n) for n in res]
    workers = workers or min(len(cfgs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            trajs = list(ex.map(_sweep_worker, cfgs))
    else:
        trajs = [_sweep_worker(c) for c in cfgs]
    table = self_convergence(trajs)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ratios = list(table.ratios)
    with open(out / "sweep_report.csv", "w", newline="\n") as fh:
        fh.write("Nx_coarse,Nx_fine,t,l1_rho,l1_m,ratio_to_next,order\n")
        for i, r in enumerate(table.rows):
            ratio = ratios[i] if i < len(ratios) else math.nan
            order = math.log2(ratio) if ratio > 0 else math.nan
            fh.write(",".join([str(r.Nx_coarse), str(r.Nx_fine), fmt(r.t), fmt(r.l1_rho),
                               fmt(r.l1_m), fmt(ratio), fmt(order)]) + "\n")
    return table


# ---------------------------------------------------------------------------
# command line


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--nx", type=int)
    p.add_argument("--tfinal", type=float)
    p.add_argument("--init")
    p.add_argument("--mode", choices=[MODIFIED, PLAIN])
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta-vac", dest="beta_vac", type=float)
    p.add_argument("--beta-rar", dest="beta_rar", type=float)
    p.add_argument("--snap-every", dest="snap_every", type=int)


def _overrides(ns) -> Dict[str, object]:
    return {k: getattr(ns, k) for k in _KEYS if hasattr(ns, k)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isogodunov",
                                 description="Modified Godunov solver for isentropic gas.")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run one simulation")
    _add_run_flags(p)
    p = sub.add_parser("sweep", help="refinement study")
    _add_run_flags(p)
    p.add_argument("--resolutions", default="25,50,100",
                   help="comma-separated Nx values (default 25,50,100)")
    p.add_argument("--workers", type=int)
    sub.add_parser("presets", help="list initial-data presets")
    p = sub.add_parser("check", help="run the acceptance suite")
    p.add_argument("--only", help="comma-separated criterion numbers")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.verb == "presets":
            for p in presets():
                print(f"{p.name:18s} {p.description}")
            return EXIT_OK
        if ns.verb == "check":
            from .acceptance import run_all
            only = [int(s) for s in ns.only.split(",")] if ns.only else None
            results = run_all(only=only, echo=print)
            return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL
        cfg = load_config(ns.config, _overrides(ns))
        if ns.verb == "run":
            res = simulate(cfg)
            last = res.trajectory.records[-1]
            print(f"steps={res.trajectory.grid.Nt} dt={fmt(res.trajectory.grid.dt)} "
                  f"mass={fmt(last.mass)} energy={fmt(last.energy)} L={fmt(last.L)} "
                  f"out={cfg.out_dir}")
            return EXIT_OK
        res_list = [int(s) for s in ns.resolutions.split(",") if s.strip()]
        table = sweep(cfg, res_list, ns.workers)
        for r in table.rows:
            print(f"{r.Nx_coarse}->{r.Nx_fine}: L1 rho={r.l1_rho:.6e} m={r.l1_m:.6e}")
        return EXIT_OK
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SchemeAbort, AuditFailure) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
