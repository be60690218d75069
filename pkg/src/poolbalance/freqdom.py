"""Frequency-domain pool models.

Linearizes the shallow-water equations about a steady profile into
d/dt u + B(x) d/dx u = C(x) u with u = (area, discharge) deviations, then
solves the spatial two-point problem per frequency with piecewise-constant
matrix exponentials to get the boundary-flow-to-downstream-level responses

    level(L) = G_in * q_in + G_out * q_out        (per pool, s = i omega)

G_in and G_out each contain a single integrator; its residue defines the pool
storage capacity c (m^2): s G_in -> 1/c and s G_out -> -1/c as s -> 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BoundarySingularityError, ConfigError, NumericalError
from .hydraulics import (
    GRAVITY,
    PoolParams,
    SteadyProfile,
    friction_slope,
    friction_slope_gradients,
    level_from_area,
    pressure_coefficient,
    pressure_coefficient_derivative,
    top_width,
)


@dataclass(frozen=True)
class FrequencyGrid:
    """Shared logarithmic frequency grid (rad/s, ascending)."""

    omega: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or len(w) < 8:
            raise ConfigError("frequency grid needs at least 8 ascending points")
        if np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ConfigError("frequencies must be positive and strictly ascending")

    @property
    def n(self) -> int:
        return len(self.omega)


def default_grid(w_min: float = 1e-6, w_max: float = 1e-1, points: int = 240) -> FrequencyGrid:
    return FrequencyGrid(omega=np.logspace(np.log10(w_min), np.log10(w_max), points))


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex response samples on a grid, plus the integrator residue if known."""

    grid: FrequencyGrid
    values: np.ndarray
    integrator_gain: float | None = None


@dataclass(frozen=True)
class PoolLinearModel:
    """Spatially varying coefficients of the linearized pool dynamics."""

    profile: SteadyProfile
    b: np.ndarray  # (nodes, 2, 2), coefficient of d/dx
    c: np.ndarray  # (nodes, 2, 2), zero-order coefficient


@dataclass(frozen=True)
class PoolFrequencyResponse:
    params: PoolParams
    grid: FrequencyGrid
    g_in: FrequencyResponse
    g_out: FrequencyResponse
    capacity: float  # c, in m^2


def linearize_pool(profile: SteadyProfile) -> PoolLinearModel:
    """Analytic B(x), C(x) of the linearized dynamics along the steady profile.

    The mass row is exact bookkeeping: B[0] = (0, 1), C[0] = 0. The momentum
    row carries the convective Jacobian, the hydrostatic coefficient A/w and
    its area derivative, and both friction-slope gradients, evaluated on the
    steady state; the zero-order terms use dA0/dx from the backwater equation.
    """
    p = profile.params
    a0 = profile.a0
    q0 = profile.q0
    v0 = q0 / a0
    da0 = profile.a0_gradient()

    pc = pressure_coefficient(p, a0)
    dpc = pressure_coefficient_derivative(p, a0)
    sf = friction_slope(p, a0, q0)
    dsf_da, dsf_dq = friction_slope_gradients(p, a0, q0)

    n = len(a0)
    b = np.zeros((n, 2, 2))
    c = np.zeros((n, 2, 2))
    b[:, 0, 1] = 1.0
    b[:, 1, 0] = GRAVITY * pc - v0**2
    b[:, 1, 1] = 2.0 * v0
    c[:, 1, 0] = (
        GRAVITY * (p.s0 - sf)
        - GRAVITY * a0 * dsf_da
        - (GRAVITY * dpc + 2.0 * q0**2 / a0**3) * da0
    )
    c[:, 1, 1] = -GRAVITY * a0 * dsf_dq + (2.0 * q0 / a0**2) * da0
    return PoolLinearModel(profile=profile, b=b, c=c)


def _expm_2x2(z: np.ndarray) -> np.ndarray:
    """Closed-form matrix exponential of stacked 2x2 complex matrices."""
    tau = 0.5 * (z[..., 0, 0] + z[..., 1, 1])
    d00 = z[..., 0, 0] - tau
    d01 = z[..., 0, 1]
    d10 = z[..., 1, 0]
    delta_sq = d00 * d00 + d01 * d10
    delta = np.sqrt(delta_sq)
    small = np.abs(delta) < 1e-8
    safe = np.where(small, 1.0, delta)
    ch = np.where(small, 1.0 + delta_sq / 2.0, np.cosh(safe))
    shc = np.where(small, 1.0 + delta_sq / 6.0, np.sinh(safe) / safe)
    scale = np.exp(tau)
    out = np.empty_like(z)
    out[..., 0, 0] = scale * (ch + shc * d00)
    out[..., 0, 1] = scale * shc * d01
    out[..., 1, 0] = scale * shc * d10
    out[..., 1, 1] = scale * (ch - shc * d00)
    return out


def transition_matrices(model: PoolLinearModel, grid: FrequencyGrid, substeps: int = 1) -> np.ndarray:
    """Psi(i w) mapping upstream (area, flow) deviations to downstream ones.

    Frozen-coefficient exponentials cell by cell: Phi(x, s) = B^-1 (C - s I)
    averaged linearly inside each steady-profile cell, `substeps` exponentials
    per cell.
    """
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    b, c = model.b, model.c
    b21 = b[:, 1, 0]
    b22 = b[:, 1, 1]
    # B^-1 = [[-b22/b21, 1/b21], [1, 0]] for B = [[0, 1], [b21, b22]]
    binv = np.zeros_like(b)
    binv[:, 0, 0] = -b22 / b21
    binv[:, 0, 1] = 1.0 / b21
    binv[:, 1, 0] = 1.0

    binv_c = binv @ c
    s = 1j * grid.omega  # (K,)
    # Phi at nodes: (K, nodes, 2, 2)
    phi = binv_c[None, :, :, :] - s[:, None, None, None] * binv[None, :, :, :]

    dx = model.profile.dx / substeps
    n_cells = b.shape[0] - 1
    psi = np.broadcast_to(np.eye(2, dtype=complex), (grid.n, 2, 2)).copy()
    for i in range(n_cells):
        lo, hi = phi[:, i], phi[:, i + 1]
        for j in range(substeps):
            frac = (j + 0.5) / substeps
            cell = (1.0 - frac) * lo + frac * hi
            psi = _expm_2x2(cell * dx) @ psi
    return psi


def two_point_integrator_gain(values: np.ndarray, grid: FrequencyGrid) -> float:
    """lim s G(s), estimated from the two lowest grid frequencies.

    Averages Re(i w G(i w)); requires the imaginary residual to stay under 5%
    of the real part at both points, else the grid does not reach the
    integrator-dominated region and the estimate is rejected.
    """
    sg = 1j * grid.omega[:2] * values[:2]
    if np.any(np.abs(sg.imag) > 0.05 * np.abs(sg.real)):
        raise NumericalError(
            "integrator-gain extraction: imaginary residual above 5% at the lowest frequencies"
        )
    return float(np.mean(sg.real))


def pool_frequency_response(
    profile: SteadyProfile, grid: FrequencyGrid, substeps: int = 1
) -> PoolFrequencyResponse:
    """Boundary-flow to downstream-level responses of one pool on a grid.

    With Psi the upstream-to-downstream transition matrix and flows imposed
    at both ends, the downstream area deviation is
    (Psi12 - Psi11 Psi22 / Psi21) q_in + (Psi11 / Psi21) q_out, divided by
    the local surface width to convert to level.
    """
    model = linearize_pool(profile)
    psi = transition_matrices(model, grid, substeps=substeps)
    p11, p12 = psi[:, 0, 0], psi[:, 0, 1]
    p21, p22 = psi[:, 1, 0], psi[:, 1, 1]
    bad = np.abs(p21) < 1e-14
    if np.any(bad):
        w_bad = grid.omega[np.argmax(bad)]
        raise BoundarySingularityError(
            f"boundary solve singular at omega={w_bad:.3e} rad/s (|Psi21| < 1e-14)"
        )
    w_surf = top_width(profile.params, level_from_area(profile.params, profile.a0[-1]))
    gin_vals = (p12 - p11 * p22 / p21) / w_surf
    gout_vals = p11 / (p21 * w_surf)

    gain_in = two_point_integrator_gain(gin_vals, grid)
    gain_out = two_point_integrator_gain(gout_vals, grid)
    if gain_in <= 0 or gain_out >= 0:
        raise NumericalError("integrator residues have the wrong sign; model invalid")
    return PoolFrequencyResponse(
        params=profile.params,
        grid=grid,
        g_in=FrequencyResponse(grid=grid, values=gin_vals, integrator_gain=gain_in),
        g_out=FrequencyResponse(grid=grid, values=gout_vals, integrator_gain=gain_out),
        capacity=1.0 / gain_in,
    )


def phase_and_magnitude(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(magnitude in dB, unwrapped phase in degrees)."""
    mags = np.abs(values)
    if np.any(mags == 0.0):
        raise NumericalError("zero-magnitude sample has no dB/phase representation")
    mag_db = 20.0 * np.log10(mags)
    phase_deg = np.degrees(np.unwrap(np.angle(values)))
    return mag_db, phase_deg


def interpolate_response(values: np.ndarray, grid: FrequencyGrid, omega: float) -> complex:
    """Evaluate a sampled response between grid points.

    Log-log interpolation of magnitude and linear-in-log-frequency
    interpolation of the unwrapped phase; matches how Bode data is read.
    """
    w = grid.omega
    if not (w[0] <= omega <= w[-1]):
        raise ConfigError(f"omega {omega:.3e} outside the grid [{w[0]:.3e}, {w[-1]:.3e}]")
    logw = np.log(w)
    mag = np.interp(np.log(omega), logw, np.log(np.abs(values)))
    ph = np.interp(np.log(omega), logw, np.unwrap(np.angle(values)))
    return complex(np.exp(mag) * np.exp(1j * ph))


def write_bode_csv(path, values: np.ndarray, grid: FrequencyGrid) -> None:
    """CSV with columns omega_rad_s, mag_db, phase_deg."""
    mag_db, phase_deg = phase_and_magnitude(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega_rad_s", "mag_db", "phase_deg"])
        for w, m, ph in zip(grid.omega, mag_db, phase_deg):
            writer.writerow([f"{w:.10e}", f"{m:.10e}", f"{ph:.10e}"])
