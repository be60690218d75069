"""Sampled-data execution of the designed controllers on the nonlinear model.

Each gate runs its compensator bilinearly discretized at the control period,
with saturation and back-calculation anti-windup, plus static feedforward of
the measured top-inflow and bottom-outflow deviations. Between controller
ticks the channel is integrated with CFL-safe substeps and zero-order-held
flows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .compensator import CompensatorParams
from .errors import ConfigError
from .hydraulics import PoolParams, solve_steady_profile
from .svsim import BoundaryFlows, ChannelState, advance, initial_state, volume_mismatch


@dataclass(frozen=True)
class Scenario:
    """Piecewise-constant exogenous flows for one run.

    d has one row per segment and N+2 columns: top inflow d_0, the per-pool
    offtakes d_1..d_N, and the exogenous bottom outflow d_(N+1). t_breaks
    holds the segment start times, beginning at 0. balanced_pools says how
    many leading pools the gate controllers span (the full channel here;
    anything downstream of pool N is summarized by d_(N+1)).
    """

    n_pools: int
    horizon_s: float
    dt_ctrl_s: float
    t_breaks: np.ndarray
    d: np.ndarray
    balanced_pools: int = -1

    def __post_init__(self) -> None:
        if self.horizon_s <= 0 or self.dt_ctrl_s <= 0:
            raise ConfigError("horizon and control period must be positive")
        t = np.asarray(self.t_breaks, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if t.ndim != 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ConfigError("segment starts must ascend from 0")
        if d.shape != (len(t), self.n_pools + 2):
            raise ConfigError(f"d must be (segments, n_pools+2), got {d.shape}")
        if np.any(d < 0):
            raise ConfigError("exogenous flows must be >= 0")
        if self.balanced_pools == -1:
            object.__setattr__(self, "balanced_pools", self.n_pools)
        if self.balanced_pools != self.n_pools:
            raise ConfigError("gate controllers must span all modeled pools")

    def sample(self, t: float) -> np.ndarray:
        """Flows in effect at time t."""
        k = int(np.searchsorted(self.t_breaks, t, side="right")) - 1
        return self.d[max(k, 0)]

    def net_volume(self, t: float | None = None) -> float:
        """Integral of (d_0 - offtakes - d_(N+1)) up to t (default horizon), m^3."""
        if t is None:
            t = self.horizon_s
        edges = np.append(self.t_breaks, self.horizon_s)
        mismatch = self.d[:, 0] - self.d[:, 1:].sum(axis=1)
        spans = np.clip(np.minimum(edges[1:], t) - np.minimum(edges[:-1], t), 0.0, None)
        return float(np.sum(mismatch * spans))


@dataclass(frozen=True)
class FeedforwardGains:
    """Static distribution of measured end disturbances onto the gates."""

    d_in: np.ndarray
    d_out: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.d_in, self.d_out):
            if np.any((np.asarray(arr) <= 0) | (np.asarray(arr) >= 1)):
                raise ConfigError("feedforward gains must lie in (0, 1)")


def geometric_feedforward(n_pools: int, base: float = 0.85) -> FeedforwardGains:
    """Gate n gets base^n of a top-inflow change and base^(N-n) of a bottom one."""
    n = np.arange(1, n_pools)
    return FeedforwardGains(d_in=base**n, d_out=base ** (n_pools - n))


class GateController:
    """One gate's discrete compensator with saturation and anti-windup.

    Exact bilinear (Tustin) discretization of the PI and the low-pass filter
    at the control period. The integral state lives in flow units; when the
    commanded flow is clamped, the difference feeds back into that state with
    tracking time T_I (back-calculation), so the integrator never runs away
    while the gate is pinned at a limit.
    """

    def __init__(
        self,
        params: CompensatorParams,
        u_nominal: float,
        dt: float,
        u_min: float = 0.0,
        u_max: float = np.inf,
    ) -> None:
        if dt <= 0:
            raise ConfigError("controller period must be positive")
        if not u_min <= u_nominal <= u_max:
            raise ConfigError("nominal gate flow must sit inside the saturation limits")
        self.params = params
        self.u_nominal = float(u_nominal)
        self.dt = float(dt)
        self.u_min = float(u_min)
        self.u_max = float(u_max)
        self.s_i = 0.0  # integral state, m^3/s
        self.x_f = 0.0  # filter state, m^3/s
        self.y_prev = 0.0
        self.v_prev = 0.0

    def step(self, y: float, feedforward: float = 0.0) -> float:
        """Advance one control period; returns the clamped gate flow command."""
        p = self.params
        self.s_i += -(p.k_p * self.dt / (2.0 * p.t_i)) * (y + self.y_prev)
        v = -p.k_p * y + self.s_i
        self.x_f = ((2.0 * p.t_f - self.dt) * self.x_f + self.dt * (v + self.v_prev)) / (
            2.0 * p.t_f + self.dt
        )
        u_raw = self.u_nominal + self.x_f + feedforward
        u = min(max(u_raw, self.u_min), self.u_max)
        self.s_i += (self.dt / p.t_i) * (u - u_raw)
        self.y_prev = y
        self.v_prev = v
        return u


def weighted_outputs(h_ds: np.ndarray, h_ref: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """y_n = w_n e_n - w_(n+1) e_(n+1) with e = h_ref - h_ds."""
    e = np.asarray(h_ref) - np.asarray(h_ds)
    we = np.asarray(weights) * e
    return we[:-1] - we[1:]


@dataclass(frozen=True)
class SimulationResult:
    """Closed-loop trajectories sampled at the control period."""

    times: np.ndarray
    h_ds: np.ndarray  # (ticks, N)
    h_ref: np.ndarray  # (N,)
    y: np.ndarray  # (ticks, N-1)
    u: np.ndarray  # (ticks, N-1)
    d: np.ndarray  # (ticks, N+2)
    vol_mismatch: np.ndarray  # (ticks,)
    weights: np.ndarray
    final_state: ChannelState

    def level_errors(self) -> np.ndarray:
        """e = h_ref - h_ds per tick and pool."""
        return self.h_ref[None, :] - self.h_ds

    def to_csv(self, path) -> None:
        n = self.h_ds.shape[1]
        header = (
            ["time_s"]
            + [f"h_ds_{k + 1}" for k in range(n)]
            + [f"y_{k + 1}" for k in range(n - 1)]
            + [f"u_{k + 1}" for k in range(n - 1)]
            + [f"d_{k}" for k in range(n + 2)]
            + ["volume_mismatch_m3"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, t in enumerate(self.times):
                row = (
                    [f"{t:.3f}"]
                    + [f"{v:.9e}" for v in self.h_ds[i]]
                    + [f"{v:.9e}" for v in self.y[i]]
                    + [f"{v:.9e}" for v in self.u[i]]
                    + [f"{v:.9e}" for v in self.d[i]]
                    + [f"{self.vol_mismatch[i]:.6e}"]
                )
                writer.writerow(row)


def nominal_gate_flows(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """(per-pool steady discharge, per-gate nominal flow) from the t=0 segment.

    Water entering at d_0(0) loses each pool's initial offtake on the way
    down, so pool k carries q0[k] and gate k passes q0[k+1].
    """
    d0 = scenario.d[0]
    n = scenario.n_pools
    q0 = np.empty(n)
    q0[0] = d0[0]
    for k in range(1, n):
        q0[k] = q0[k - 1] - d0[k]
    if np.any(q0 <= 0):
        raise ConfigError("initial offtakes exceed the supplied flow somewhere")
    return q0, q0[1:]


def run_closed_loop(
    pools: list[PoolParams] | tuple[PoolParams, ...],
    compensators: dict[int, CompensatorParams],
    scenario: Scenario,
    weights: np.ndarray | None = None,
    feedforward: FeedforwardGains | None = None,
    cells: int = 100,
    sat_factor: float = 1.5,
    u_limits: tuple[float, float] | None = None,
) -> SimulationResult:
    """Simulate the balanced channel through a scenario.

    Starts every pool on its steady profile for the t=0 flows. At each tick:
    measure downstream levels, form the weighted outputs, step every gate
    controller (plus feedforward of the measured d_0 / d_(N+1) deviations),
    then integrate the channel one control period with the commanded flows.
    Saturation defaults to [0, sat_factor * top nominal inflow].
    """
    pools = tuple(pools)
    n = len(pools)
    if scenario.n_pools != n:
        raise ConfigError("scenario and channel disagree on the pool count")
    if sorted(compensators) != list(range(1, n)):
        raise ConfigError("need one compensator per gate 1..N-1")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ConfigError(f"weights must be {n} positive numbers")

    q0, u_nom = nominal_gate_flows(scenario)
    profiles = [solve_steady_profile(p, q0[k], cells) for k, p in enumerate(pools)]
    state = initial_state(profiles)
    ref_volumes = state.volumes()
    h_ref = np.array([p.h_ref for p in pools])

    if u_limits is None:
        u_limits = (0.0, sat_factor * scenario.d[0, 0])
    controllers = [
        GateController(compensators[k + 1], u_nom[k], scenario.dt_ctrl_s, *u_limits)
        for k in range(n - 1)
    ]

    d_nom = scenario.d[0]
    ticks = int(round(scenario.horizon_s / scenario.dt_ctrl_s))
    rec_t, rec_h, rec_y, rec_u, rec_d, rec_v = [], [], [], [], [], []
    u = u_nom.copy()
    for k_t in range(ticks + 1):
        t = k_t * scenario.dt_ctrl_s
        d_now = scenario.sample(t)
        h_ds = state.ds_levels()
        y = weighted_outputs(h_ds, h_ref, w)
        if k_t < ticks:
            ff = np.zeros(n - 1)
            if feedforward is not None:
                ff = feedforward.d_in * (d_now[0] - d_nom[0]) + feedforward.d_out * (
                    d_now[n + 1] - d_nom[n + 1]
                )
            u = np.array([controllers[i].step(y[i], ff[i]) for i in range(n - 1)])

        rec_t.append(t)
        rec_h.append(h_ds)
        rec_y.append(y)
        rec_u.append(u.copy())
        rec_d.append(d_now.copy())
        rec_v.append(volume_mismatch(state, ref_volumes))

        if k_t == ticks:
            break
        q_in = np.empty(n)
        q_out = np.empty(n)
        q_in[0] = d_now[0]
        q_in[1:] = u
        q_out[:-1] = u + d_now[1:n]
        q_out[-1] = d_now[n] + d_now[n + 1]
        state = advance(state, BoundaryFlows(q_in=q_in, q_out=q_out), scenario.dt_ctrl_s)

    return SimulationResult(
        times=np.array(rec_t),
        h_ds=np.array(rec_h),
        h_ref=h_ref,
        y=np.array(rec_y),
        u=np.array(rec_u),
        d=np.array(rec_d),
        vol_mismatch=np.array(rec_v),
        weights=w,
        final_state=state,
    )
