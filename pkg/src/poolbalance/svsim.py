"""Nonlinear shallow-water simulation of a chain of pools.

Semi-discrete (method-of-lines) form of the mass/momentum equations on a
collocated grid per pool, advanced with classical RK4 under a wave-speed CFL
bound. Flows are the boundary conditions: each pool is driven by its inflow
and outflow, which is how gates and offtakes act on the channel.

Discretization: mass in finite-volume form (centered interface fluxes of Q,
one-sided at the two boundary nodes), so trapezoid-rule volume obeys
dV/dt = q_in - q_out exactly; momentum in non-conservative form with
first-order upwind convection, centered pressure term, and pointwise
friction/bed-slope source. Boundary Q values are pinned to the imposed flows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CFLError, ConfigError, NumericalError, TranscriticalError
from .hydraulics import GRAVITY, PoolParams, SteadyProfile

CFL_SAFETY = 0.5  # dt <= CFL_SAFETY * dx / max wave speed


@dataclass(frozen=True)
class FlowField:
    """State of one pool: wetted area and discharge on the pool grid at time t."""

    x: np.ndarray
    a: np.ndarray
    q: np.ndarray
    t: float


@dataclass(frozen=True)
class BoundaryFlows:
    """Imposed pool boundary flows, one entry per pool (m^3/s, >= 0)."""

    q_in: np.ndarray
    q_out: np.ndarray


@dataclass(frozen=True)
class ChannelState:
    """States of all pools, stacked as (n_pools, n_nodes) arrays."""

    pools: tuple[PoolParams, ...]
    x: np.ndarray
    a: np.ndarray
    q: np.ndarray
    t: float

    @property
    def n_pools(self) -> int:
        return len(self.pools)

    def pool(self, i: int) -> FlowField:
        return FlowField(x=self.x[i], a=self.a[i], q=self.q[i], t=self.t)

    def ds_levels(self) -> np.ndarray:
        """Water level at the downstream end of each pool."""
        geo = _geom(self.pools)
        return _level(self.a[:, -1:], geo)[:, 0]

    def volumes(self) -> np.ndarray:
        return np.trapezoid(self.a, self.x, axis=1)


def _geom(pools) -> dict:
    wb = np.array([p.w_bed for p in pools])[:, None]
    ss = np.array([p.s_side for p in pools])[:, None]
    return {
        "wb": wb,
        "ss": ss,
        "s0": np.array([p.s0 for p in pools])[:, None],
        "nm": np.array([p.n_manning for p in pools])[:, None],
        "dx": np.array([p.length for p in pools])[:, None],  # scaled by cells below
        "slant": np.sqrt(1.0 + ss**2),
    }


def _level(a, geo):
    wb, ss = geo["wb"], geo["ss"]
    with np.errstate(invalid="ignore"):
        quad = (-wb + np.sqrt(wb * wb + 4.0 * ss * a)) / np.where(ss > 0, 2.0 * ss, 1.0)
    return np.where(ss > 0, quad, a / wb)


def _top_width(a, geo):
    return geo["wb"] + 2.0 * geo["ss"] * _level(a, geo)


def _friction(a, q, geo):
    h = _level(a, geo)
    r = a / (geo["wb"] + 2.0 * h * geo["slant"])
    return geo["nm"] ** 2 * q * q / (a * a * r ** (4.0 / 3.0))


def _rhs(a, q, qin, qout, geo, dx):
    """Semi-discrete time derivatives; q must already carry the pinned boundaries."""
    # mass: finite-volume, centered interface fluxes, half cells at the ends
    flux = 0.5 * (q[:, :-1] + q[:, 1:])
    da = np.empty_like(a)
    da[:, 0] = -(flux[:, 0] - qin) / (0.5 * dx[:, 0])
    da[:, 1:-1] = -(flux[:, 1:] - flux[:, :-1]) / dx
    da[:, -1] = -(qout - flux[:, -1]) / (0.5 * dx[:, 0])

    # momentum, interior nodes only
    phi = q * q / a
    back = (phi[:, 1:-1] - phi[:, :-2]) / dx
    fwd = (phi[:, 2:] - phi[:, 1:-1]) / dx
    conv = np.where(q[:, 1:-1] >= 0.0, back, fwd)
    ai = a[:, 1:-1]
    pres = GRAVITY * (ai / _top_width(ai, geo)) * (a[:, 2:] - a[:, :-2]) / (2.0 * dx)
    src = GRAVITY * ai * (geo["s0"] - _friction(ai, q[:, 1:-1], geo))
    dq = np.zeros_like(q)
    dq[:, 1:-1] = -conv - pres + src
    return da, dq


def cfl_limit(state: ChannelState) -> float:
    """Largest stable time step: CFL_SAFETY * min(dx / (|v| + sqrt(g A / w)))."""
    geo = _geom(state.pools)
    dx = geo["dx"] / (state.a.shape[1] - 1)
    speed = np.abs(state.q / state.a) + np.sqrt(GRAVITY * state.a / _top_width(state.a, geo))
    return float(CFL_SAFETY * np.min(dx / speed))


def _check_regime(state: ChannelState) -> None:
    if np.any(state.a <= 0):
        i, j = np.unravel_index(int(np.argmin(state.a)), state.a.shape)
        raise TranscriticalError(f"pool {i + 1} dried out at x={state.x[i, j]:.0f} m, t={state.t:.0f} s")
    geo = _geom(state.pools)
    margin = GRAVITY * state.a / _top_width(state.a, geo) - (state.q / state.a) ** 2
    if np.any(margin <= 0):
        i, j = np.unravel_index(int(np.argmin(margin)), margin.shape)
        raise TranscriticalError(
            f"supercritical point in pool {i + 1} at x={state.x[i, j]:.0f} m, t={state.t:.0f} s"
        )


def semidiscrete_rhs(f: FlowField, q_in: float, q_out: float, p: PoolParams):
    """Time derivatives (dA/dt, dQ/dt) of a single pool with pinned boundary flows."""
    if q_in < 0 or q_out < 0:
        raise NumericalError("reverse boundary flow is outside the model's validity")
    geo = _geom([p])
    dx = np.array([[p.length / (len(f.x) - 1)]])
    q = f.q[None, :].copy()
    q[0, 0], q[0, -1] = q_in, q_out
    da, dq = _rhs(f.a[None, :], q, np.array([q_in]), np.array([q_out]), geo, dx)
    return da[0], dq[0]


def step_channel(state: ChannelState, b: BoundaryFlows, dt: float) -> ChannelState:
    """One RK4 step of the whole channel under constant boundary flows."""
    if np.any(b.q_in < 0) or np.any(b.q_out < 0):
        raise NumericalError("reverse boundary flow is outside the model's validity")
    _check_regime(state)
    limit = cfl_limit(state)
    if dt > limit * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:.3f} s exceeds the stability bound {limit:.3f} s")

    geo = _geom(state.pools)
    dx = geo["dx"] / (state.a.shape[1] - 1)
    qin, qout = np.asarray(b.q_in, dtype=float), np.asarray(b.q_out, dtype=float)

    a0 = state.a
    q0 = state.q.copy()
    q0[:, 0], q0[:, -1] = qin, qout  # gate flows change stepwise between intervals

    k1a, k1q = _rhs(a0, q0, qin, qout, geo, dx)
    k2a, k2q = _rhs(a0 + 0.5 * dt * k1a, q0 + 0.5 * dt * k1q, qin, qout, geo, dx)
    k3a, k3q = _rhs(a0 + 0.5 * dt * k2a, q0 + 0.5 * dt * k2q, qin, qout, geo, dx)
    k4a, k4q = _rhs(a0 + dt * k3a, q0 + dt * k3q, qin, qout, geo, dx)

    a1 = a0 + (dt / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    q1 = q0 + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    return replace(state, a=a1, q=q1, t=state.t + dt)


def advance(state: ChannelState, b: BoundaryFlows, duration: float) -> ChannelState:
    """Advance by `duration` seconds with automatically chosen CFL-safe substeps."""
    remaining = float(duration)
    while remaining > 1e-9:
        dt = min(0.95 * cfl_limit(state), remaining)
        # avoid a tiny trailing sliver: split the remainder evenly
        n = max(1, int(np.ceil(remaining / dt)))
        dt = remaining / n
        state = step_channel(state, b, dt)
        remaining -= dt
    return state


def volume_mismatch(state: ChannelState, reference_volumes: np.ndarray) -> float:
    """Total stored volume minus a reference, summed over pools (m^3)."""
    return float(np.sum(state.volumes() - np.asarray(reference_volumes)))


def _balanced_areas(profile: SteadyProfile) -> np.ndarray:
    """Areas that zero the discrete momentum residual exactly at q = q0.

    The continuous steady profile sampled on the grid leaves an O(dx)
    momentum imbalance under the discrete operators. Marching upstream and
    solving each interior residual for the next area gives a state the
    semi-discrete system holds exactly, so simulations start truly at rest.
    """
    p, q0 = profile.params, profile.q0
    a = profile.a0.copy()
    m = len(a) - 1
    dx = profile.dx
    geo = _geom([p])

    def residual(a_im1, a_i, a_ip1):
        conv = (q0 * q0 / a_i - q0 * q0 / a_im1) / dx
        col = np.array([[a_i]])
        pres = GRAVITY * (a_i / _top_width(col, geo)[0, 0]) * (a_ip1 - a_im1) / (2.0 * dx)
        src = GRAVITY * a_i * (p.s0 - _friction(col, np.array([[q0]]), geo)[0, 0])
        return -conv - pres + src

    for i in range(m - 1, 0, -1):
        a_i, a_ip1 = a[i], a[i + 1]
        guess = a[i - 1]
        for _ in range(50):
            f = residual(guess, a_i, a_ip1)
            dfd = (-q0 * q0 / guess**2) / dx + GRAVITY * (a_i / _top_width(np.array([[a_i]]), geo)[0, 0]) / (2.0 * dx)
            step = f / dfd
            guess -= step
            if abs(step) < 1e-13 * max(1.0, abs(guess)):
                break
        else:
            raise NumericalError(f"discrete steady state solve stalled at node {i}")
        if guess <= 0:
            raise TranscriticalError("discrete steady state dried out")
        a[i - 1] = guess
    return a


def initial_state(profiles: list[SteadyProfile], cells: int | None = None) -> ChannelState:
    """Channel at rest: each pool's discretely balanced steady state.

    All profiles must share one grid size. `cells` only validates it.
    """
    sizes = {len(pr.x) for pr in profiles}
    if len(sizes) != 1:
        raise ConfigError("all pools must use the same grid size")
    if cells is not None and sizes.pop() != cells + 1:
        raise ConfigError("profile grid does not match the requested cell count")
    x = np.stack([pr.x for pr in profiles])
    a = np.stack([_balanced_areas(pr) for pr in profiles])
    q = np.stack([np.full(len(pr.x), pr.q0) for pr in profiles])
    return ChannelState(pools=tuple(pr.params for pr in profiles), x=x, a=a, q=q, t=0.0)
