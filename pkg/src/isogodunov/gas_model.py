"""State algebra for the isentropic gas with pressure law p = rho**gamma / gamma.

Every function works on scalars and on numpy arrays. Vacuum (rho = 0) is
handled by defining the velocity there as 0, so all closed-form quantities
extend continuously.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

GAMMA_MAX = 5.0 / 3.0


class DomainError(ValueError):
    """Raised when an input lies outside the physical state space."""


@dataclass(frozen=True)
class GasState:
    rho: float
    m: float

    def __post_init__(self):
        if self.rho < 0:
            raise DomainError(f"negative density {self.rho}")

    @property
    def v(self) -> float:
        return self.m / self.rho if self.rho > 0 else 0.0

    def mirror(self) -> "GasState":
        return GasState(self.rho, -self.m)


@dataclass(frozen=True)
class RiemannPair:
    z: float
    w: float


def check_gamma(gamma: float) -> None:
    if not (1.0 < gamma <= GAMMA_MAX + 1e-15):
        raise DomainError(f"gamma={gamma} outside (1, 5/3]")


def theta_of(gamma: float) -> float:
    return 0.5 * (gamma - 1.0)


def velocity(rho, m):
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    out = np.zeros(np.broadcast_shapes(rho.shape, m.shape))
    np.divide(m, rho, out=out, where=rho > 0)
    return out


def pressure(rho, gamma: float):
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise DomainError("negative density")
    return r**gamma / gamma


def sound_speed(rho, gamma: float):
    return np.asarray(rho, dtype=float) ** theta_of(gamma)


def invariants(rho, m, gamma: float):
    """Riemann invariants (z, w) of conserved arrays."""
    th = theta_of(gamma)
    v = velocity(rho, m)
    c = np.asarray(rho, dtype=float) ** th / th
    return v - c, v + c


def conserved(z, w, gamma: float):
    """Inverse of :func:`invariants`; requires w >= z."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < z):
        raise DomainError("w < z is not a physical state")
    th = theta_of(gamma)
    rho = (th * (w - z) / 2.0) ** (1.0 / th)
    return rho, rho * (w + z) / 2.0


def to_riemann(u: GasState, gamma: float) -> RiemannPair:
    z, w = invariants(u.rho, u.m, gamma)
    return RiemannPair(float(z), float(w))


def from_riemann(p: RiemannPair, gamma: float) -> GasState:
    rho, m = conserved(p.z, p.w, gamma)
    return GasState(float(rho), float(m))


def mechanical_energy(rho, m, gamma: float):
    rho = np.asarray(rho, dtype=float)
    v = velocity(rho, m)
    return 0.5 * np.asarray(m, dtype=float) * v + rho**gamma / (gamma * (gamma - 1.0))


def energy_flux(rho, m, gamma: float):
    rho = np.asarray(rho, dtype=float)
    v = velocity(rho, m)
    return rho * v * (0.5 * v * v + rho ** (gamma - 1.0) / (gamma - 1.0))


def energy_hessian(rho, m, gamma: float):
    """Hessian of the mechanical energy in (rho, m); shape (..., 2, 2)."""
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    safe = np.where(rho > 0, rho, 1.0)
    v = np.where(rho > 0, m / safe, 0.0)
    h11 = np.where(rho > 0, v * v / safe + safe ** (gamma - 2.0), 0.0)
    h12 = np.where(rho > 0, -v / safe, 0.0)
    h22 = np.where(rho > 0, 1.0 / safe, 0.0)
    out = np.empty(rho.shape + (2, 2))
    out[..., 0, 0] = h11
    out[..., 0, 1] = h12
    out[..., 1, 0] = h12
    out[..., 1, 1] = h22
    return out


def char_speeds(rho, m, gamma: float):
    v = velocity(rho, m)
    c = sound_speed(rho, gamma)
    return v - c, v + c


def physical_flux(rho, m, gamma: float):
    rho = np.asarray(rho, dtype=float)
    v = velocity(rho, m)
    return rho * v, rho * v * v + rho**gamma / gamma


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    epsilon: float
    mu: float
    rho_bar: float
    eta_bar: float
    nu: float
    K: float
    M_infinity: float
    delta: float
    M0: float
    t0: float
    epsilon_prime: float = 1.0

    @property
    def theta(self) -> float:
        return theta_of(self.gamma)

    @property
    def envelope(self) -> float:
        """M_infinity + epsilon, the attractor half-width."""
        return self.M_infinity + self.epsilon


def zeta(rho, m, params: ModelParams):
    rho = np.asarray(rho, dtype=float)
    return mechanical_energy(rho, m, params.gamma) - params.nu * rho + params.K


def flux_correction_V(rho, m, params: ModelParams):
    return energy_flux(rho, m, params.gamma) - params.nu * np.asarray(m, dtype=float)


def source_g1_g2(rho, m, params: ModelParams):
    g = params.gamma
    th = params.theta
    rho = np.asarray(rho, dtype=float)
    v = velocity(rho, m)
    lam1, lam2 = char_speeds(rho, m, g)
    a = rho ** (g + th) / (g * (g - 1.0))
    b = rho**g * v / g
    c = rho ** (th + 1.0) * v * v / 2.0
    d = params.nu * rho ** (th + 1.0)
    g1 = -params.K * lam1 + a + b + c - d - params.delta
    g2 = -params.K * lam2 - a + b - c + d + params.delta
    return g1, g2


def m_infinity(gamma: float, nu: float, K: float, rho_bar: float, eta_bar: float) -> float:
    r = 3.0 * gamma - 1.0
    base = 2.0 * gamma**2 * (gamma - 1.0) / r
    first = 4.0 / r * base ** ((gamma + 1.0) / (2.0 * (gamma - 1.0)))
    first *= nu ** (r / (2.0 * (gamma - 1.0))) / K
    return first + 2.0 * (nu * rho_bar + eta_bar + K) / (gamma - 1.0)


Sampler = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def fine_grid(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def derive_params(
    u0: Sampler,
    gamma: float,
    epsilon: float,
    mu: float | None = None,
    n_fine: int = 10_000,
    epsilon_prime: float = 1.0,
) -> ModelParams:
    """Derive every model constant from initial data sampled on a midpoint grid.

    ``u0`` maps an array of positions in (0, 1) to ``(rho, m)`` arrays.
    ``mu=None`` selects 1% of the initial mechanical energy.
    """
    check_gamma(gamma)
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    x = fine_grid(n_fine)
    rho, m = (np.asarray(a, dtype=float) for a in u0(x))
    if np.any(rho < 0):
        raise DomainError("initial density must be nonnegative")
    rho_bar = float(np.mean(rho))
    if rho_bar <= 0:
        raise DomainError("mean initial density must be positive")
    energy0 = float(np.mean(mechanical_energy(rho, m, gamma)))
    if mu is None:
        mu = 0.01 * energy0
    if mu <= 0:
        raise DomainError("mu must be positive")
    eta_bar = energy0 + mu
    nu = (3.0 * gamma - 1.0) / (gamma + 1.0) * eta_bar / rho_bar
    K = rho_bar * nu - eta_bar
    M_inf = m_infinity(gamma, nu, K, rho_bar, eta_bar)
    delta = theta_of(gamma) * K * epsilon / 2.0

    zt = mechanical_energy(rho, m, gamma) - nu * rho + K
    h = 1.0 / n_fine
    prefix = np.cumsum(zt) * h - 0.5 * zt * h
    z, w = invariants(rho, m, gamma)
    M0 = float(max(np.max(prefix - z), np.max(w - prefix)))
    t0 = max((M0 - M_inf - epsilon) / delta, 0.0)
    return ModelParams(
        gamma=gamma, epsilon=epsilon, mu=mu, rho_bar=rho_bar, eta_bar=eta_bar,
        nu=nu, K=K, M_infinity=M_inf, delta=delta, M0=M0, t0=t0,
        epsilon_prime=epsilon_prime,
    )


def params_from_constants(gamma: float, epsilon: float, rho_bar: float,
                          energy0: float, mu: float, M0: float) -> ModelParams:
    """Build parameters from already-integrated moments (used by tests)."""
    eta_bar = energy0 + mu
    nu = (3.0 * gamma - 1.0) / (gamma + 1.0) * eta_bar / rho_bar
    K = rho_bar * nu - eta_bar
    M_inf = m_infinity(gamma, nu, K, rho_bar, eta_bar)
    delta = theta_of(gamma) * K * epsilon / 2.0
    t0 = max((M0 - M_inf - epsilon) / delta, 0.0)
    return ModelParams(gamma, epsilon, mu, rho_bar, eta_bar, nu, K, M_inf, delta, M0, t0)
