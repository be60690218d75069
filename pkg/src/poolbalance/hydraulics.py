"""Open-channel hydraulics for a single prismatic pool.

Trapezoidal cross-section geometry, Manning friction, and the steady
gradually-varied-flow (backwater) profile that the rest of the package
linearizes and simulates around. Everything is SI: meters, seconds, m^3/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TranscriticalError

GRAVITY = 9.81


@dataclass(frozen=True)
class PoolParams:
    """Geometry and roughness of one pool (the reach between two gates).

    length:    pool length in m
    w_bed:     bottom width in m
    s_side:    side slope, horizontal run per unit rise (0 = rectangular)
    s0:        bed slope (positive, falling downstream)
    n_manning: Manning roughness coefficient in s/m^(1/3)
    h_ref:     reference downstream water level (depth over the bed) in m
    """

    length: float
    w_bed: float
    s_side: float
    s0: float
    n_manning: float
    h_ref: float

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ConfigError(f"pool length must be positive, got {self.length}")
        if self.w_bed <= 0:
            raise ConfigError(f"bed width must be positive, got {self.w_bed}")
        if self.s_side < 0:
            raise ConfigError(f"side slope must be >= 0, got {self.s_side}")
        if self.s0 <= 0:
            raise ConfigError(f"bed slope must be positive, got {self.s0}")
        if self.n_manning <= 0:
            raise ConfigError(f"Manning coefficient must be positive, got {self.n_manning}")
        if self.h_ref <= 0:
            raise ConfigError(f"reference level must be positive, got {self.h_ref}")


def area(p: PoolParams, h):
    """Wetted cross-section area at depth h."""
    return h * (p.w_bed + p.s_side * h)


def top_width(p: PoolParams, h):
    """Free-surface width at depth h."""
    return p.w_bed + 2.0 * p.s_side * h


def wetted_perimeter(p: PoolParams, h):
    return p.w_bed + 2.0 * h * np.sqrt(1.0 + p.s_side**2)


def level_from_area(p: PoolParams, a):
    """Invert area(h); analytic for the trapezoid (positive quadratic root)."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ConfigError("negative wetted area")
    if p.s_side == 0.0:
        h = a / p.w_bed
    else:
        h = (-p.w_bed + np.sqrt(p.w_bed**2 + 4.0 * p.s_side * a)) / (2.0 * p.s_side)
    return h if h.ndim else float(h)


def pressure_coefficient(p: PoolParams, a):
    """d/dA of the hydrostatic pressure force term: equals A / w(h(A))."""
    return a / top_width(p, level_from_area(p, a))


def pressure_coefficient_derivative(p: PoolParams, a):
    """d/dA of pressure_coefficient: 1/w - 2*s_side*A/w^3."""
    w = top_width(p, level_from_area(p, a))
    return 1.0 / w - 2.0 * p.s_side * a / w**3


def friction_slope(p: PoolParams, a, q):
    """Manning friction slope n^2 Q^2 / (A^2 R^(4/3)), R = A/P."""
    h = level_from_area(p, a)
    r = a / wetted_perimeter(p, h)
    return (p.n_manning**2) * q * q / (a * a * r ** (4.0 / 3.0))


def friction_slope_gradients(p: PoolParams, a, q):
    """(dSf/dA, dSf/dQ) at constant-x cross section.

    dSf/dQ = 2 Sf / Q (zero at Q = 0); dSf/dA combines the direct A^-2 factor
    with the hydraulic-radius change dR/dA = (P - A dP/dA)/P^2,
    dP/dA = 2 sqrt(1+s^2) / w.
    """
    h = level_from_area(p, a)
    per = wetted_perimeter(p, h)
    r = a / per
    sf = (p.n_manning**2) * q * q / (a * a * r ** (4.0 / 3.0))
    dp_da = 2.0 * np.sqrt(1.0 + p.s_side**2) / top_width(p, h)
    dr_da = (per - a * dp_da) / per**2
    dsf_da = sf * (-2.0 / a - (4.0 / 3.0) * dr_da / r)
    dsf_dq = np.where(q == 0.0, 0.0, 2.0 * sf / np.where(q == 0.0, 1.0, q))
    return dsf_da, dsf_dq


def subcritical_margin(p: PoolParams, a, q):
    """g A / w - (Q/A)^2; must stay positive for the model to be valid."""
    w = top_width(p, level_from_area(p, a))
    return GRAVITY * a / w - (q / a) ** 2


@dataclass(frozen=True)
class SteadyProfile:
    """Steady-flow solution of one pool at constant discharge q0.

    x runs from 0 (upstream gate) to length (downstream gate), ascending.
    a0[i] is the steady wetted area at x[i].
    """

    params: PoolParams
    q0: float
    x: np.ndarray
    a0: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def volume(self) -> float:
        """Stored water volume, trapezoid rule."""
        return float(np.trapezoid(self.a0, self.x))

    def levels(self) -> np.ndarray:
        return level_from_area(self.params, self.a0)

    def a0_gradient(self) -> np.ndarray:
        """dA0/dx from the backwater equation itself (exact, no differencing)."""
        return _backwater_rhs(self.params, self.a0, self.q0)


def _backwater_rhs(p: PoolParams, a, q0: float):
    sf = friction_slope(p, a, q0)
    margin = subcritical_margin(p, a, q0)
    if np.any(margin <= 0):
        raise TranscriticalError(
            f"steady profile reached the critical state (q0={q0}, min margin {np.min(margin):.3e})"
        )
    return GRAVITY * a * (p.s0 - sf) / margin


def solve_steady_profile(
    p: PoolParams, q0: float, grid_points: int = 100, h_ds: float | None = None
) -> SteadyProfile:
    """Integrate the backwater ODE upstream from the downstream boundary level.

    dA0/dx = g A0 (s0 - Sf) / (g A0 / w - (q0/A0)^2), A0(length) = area(h_ds),
    fixed-step classical RK4 with grid_points cells. h_ds defaults to the
    pool's reference level. Raises TranscriticalError if the flow leaves the
    subcritical regime anywhere along the pool.
    """
    if q0 < 0:
        raise ConfigError(f"steady discharge must be >= 0, got {q0}")
    if grid_points < 4:
        raise ConfigError("need at least 4 grid cells")
    if h_ds is None:
        h_ds = p.h_ref
    if h_ds <= 0:
        raise TranscriticalError(f"downstream level must be positive, got {h_ds}")

    m = int(grid_points)
    x = np.linspace(0.0, p.length, m + 1)
    dx = p.length / m
    a = np.empty(m + 1)
    a[m] = area(p, h_ds)

    # March upstream: step -dx from x[i+1] to x[i].
    for i in range(m - 1, -1, -1):
        ai = a[i + 1]
        k1 = _backwater_rhs(p, ai, q0)
        k2 = _backwater_rhs(p, ai - 0.5 * dx * k1, q0)
        k3 = _backwater_rhs(p, ai - 0.5 * dx * k2, q0)
        k4 = _backwater_rhs(p, ai - dx * k3, q0)
        a[i] = ai - (dx / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if a[i] <= 0:
            raise TranscriticalError(f"steady profile dried out at x={x[i]:.1f} m")

    _backwater_rhs(p, a, q0)  # final subcriticality sweep over the whole profile
    return SteadyProfile(params=p, q0=q0, x=x, a0=a)
