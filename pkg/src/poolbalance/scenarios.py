"""Channel presets, demand scenarios, equilibrium maps, and TOML configs.

Everything the command-line workflow needs to go from a declarative channel
description to runnable objects: preset geometries, the standard
supply-mismatch scenario, the map from stored-volume change to the balanced
level offsets, and a strict TOML reader/writer whose round trip is exact.
"""

from __future__ import annotations

import hashlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .compensator import CompensatorParams
from .errors import ConfigError, NumericalError
from .freqdom import FrequencyGrid, default_grid, pool_frequency_response
from .hydraulics import PoolParams, solve_steady_profile, top_width
from .network import ChannelLinearModel, assemble_channel
from .runtime import Scenario, nominal_gate_flows

CANONICAL_HORIZON_H = 132.0


@dataclass(frozen=True)
class ChannelConfig:
    """Declarative description of one balancing problem."""

    name: str
    pools: tuple[PoolParams, ...]
    weights: tuple[float, ...]
    phase_margin_deg: float = 50.0
    order: tuple[int, ...] | None = None
    q_top: float = 10.0
    horizon_h: float = CANONICAL_HORIZON_H
    dt_ctrl_s: float = 60.0
    use_feedforward: bool = True
    ff_base: float = 0.85
    offtake_fraction: float = 0.4

    def __post_init__(self) -> None:
        n = len(self.pools)
        if n < 2:
            raise ConfigError("a balancing problem needs at least two pools")
        if len(self.weights) != n:
            raise ConfigError(f"need {n} weights, got {len(self.weights)}")
        if any(w <= 0 for w in self.weights):
            raise ConfigError("weights must be positive")
        if self.order is not None and sorted(self.order) != list(range(1, n)):
            raise ConfigError(f"order must permute the gate indices 1..{n - 1}")
        if self.q_top <= 0:
            raise ConfigError("nominal top inflow must be positive")
        if not 0 < self.offtake_fraction < 1:
            raise ConfigError("offtake fraction must lie in (0, 1)")
        if not 0 < self.ff_base < 1:
            raise ConfigError("feedforward base must lie in (0, 1)")
        if self.phase_margin_deg <= 0 or self.phase_margin_deg >= 90:
            raise ConfigError("phase-margin target must lie in (0, 90) degrees")

    @property
    def n_pools(self) -> int:
        return len(self.pools)


def make_uniform_channel(
    n_pools: int = 5,
    *,
    length: float = 5000.0,
    w_bed: float = 10.0,
    s_side: float = 2.0 / 3.0,
    s0: float = 1e-4,
    n_manning: float = 0.0225,
    h_ref: float = 1.9,
    q_top: float = 10.0,
    weights: tuple[float, ...] | None = None,
    name: str | None = None,
) -> ChannelConfig:
    """N identical trapezoidal pools in series."""
    pool = PoolParams(length, w_bed, s_side, s0, n_manning, h_ref)
    return ChannelConfig(
        name=name or f"uniform-{n_pools}",
        pools=(pool,) * n_pools,
        weights=weights or (1.0,) * n_pools,
        q_top=q_top,
    )


def make_tapered_channel(
    n_pools: int = 6,
    *,
    q_top: float = 8.0,
    weights: tuple[float, ...] | None = None,
    name: str | None = None,
) -> ChannelConfig:
    """Channel that narrows and shallows toward its downstream end.

    Bed width tapers 13 m to 9 m and setpoint depth 1.9 m to 0.8 m along the
    channel, with pool lengths between 4.5 km and 16 km following a fixed
    long-short-long pattern, so no two pools share dynamics.
    """
    f = np.linspace(0.0, 1.0, n_pools)
    w_beds = 13.0 - 4.0 * f
    h_refs = 1.9 - 1.1 * f
    lengths = 1000.0 * np.interp(f, [0.0, 0.3, 0.6, 1.0], [16.0, 7.0, 4.5, 12.0])
    pools = tuple(
        PoolParams(lengths[k], w_beds[k], 2.0 / 3.0, 1e-4, 0.0225, h_refs[k])
        for k in range(n_pools)
    )
    return ChannelConfig(
        name=name or f"tapered-{n_pools}",
        pools=pools,
        weights=weights or (1.0,) * n_pools,
        q_top=q_top,
    )


def surface_area_estimate(config: ChannelConfig) -> float:
    """Static storage-area estimate: setpoint top width times length, summed.

    Overestimates the true capacities (backwater relaxation shrinks them) but
    sets the right scale for sizing disturbance volumes.
    """
    return float(
        sum(top_width(p, p.h_ref) * p.length for p in config.pools)
    )


def make_standard_scenario(
    config: ChannelConfig,
    horizon_h: float | None = None,
    dt_ctrl_s: float | None = None,
    drawdown_m: float = 0.05,
    refill_m: float = 0.09,
    offtake_step: float = 1.25,
    dv_drawdown_m3: float | None = None,
    dv_refill_m3: float | None = None,
) -> Scenario:
    """Supply-mismatch test pattern, time-scaled to the requested horizon.

    On a 132 h canonical clock: matched flows until 12 h, top under-supply
    until 48 h, over-supply until 108 h, then the inflow exactly matches the
    then-current total demand for the rest of the run. Each pool's offtake
    steps up for 12 h and back, staggered so all offtake activity lands in
    24..72 h; the supply always tracks the demand changes, so the net
    stored-volume trajectory is set purely by the drawdown/refill targets.
    Those are sized as level swings (meters) times the channel's static
    storage-area estimate, or given directly in m^3. Shrinking the horizon
    compresses the whole pattern proportionally.
    """
    n = config.n_pools
    horizon_s = 3600.0 * (horizon_h if horizon_h is not None else config.horizon_h)
    dt = dt_ctrl_s if dt_ctrl_s is not None else config.dt_ctrl_s
    scale = horizon_s / (3600.0 * CANONICAL_HORIZON_H)

    sigma = surface_area_estimate(config)
    dv_draw = dv_drawdown_m3 if dv_drawdown_m3 is not None else drawdown_m * sigma
    dv_fill = dv_refill_m3 if dv_refill_m3 is not None else refill_m * sigma
    marks = 3600.0 * scale * np.array([12.0, 48.0, 108.0])
    deficit_rate = dv_draw / (marks[1] - marks[0])
    surplus_rate = dv_fill / (marks[2] - marks[1])

    base = config.offtake_fraction * config.q_top / n
    d_bottom = (1.0 - config.offtake_fraction) * config.q_top
    step_up = 3600.0 * scale * (24.0 + 36.0 * np.arange(n) / max(n - 1, 1))
    step_down = step_up + 3600.0 * scale * 12.0

    breaks = np.unique(np.concatenate([[0.0], marks, step_up, step_down]))
    d = np.empty((len(breaks), n + 2))
    for i, t in enumerate(breaks):
        stepped = (t >= step_up - 1e-9) & (t < step_down - 1e-9)
        d[i, 1 : n + 1] = base * np.where(stepped, offtake_step, 1.0)
        d[i, n + 1] = d_bottom
        demand = d[i, 1:].sum()
        if t < marks[0] or t >= marks[2]:
            d[i, 0] = demand
        elif t < marks[1]:
            d[i, 0] = demand - deficit_rate
        else:
            d[i, 0] = demand + surplus_rate
    if np.any(d[:, 0] < 0):
        raise ConfigError("scenario drawdown exceeds the channel's supply")
    return Scenario(
        n_pools=n, horizon_s=horizon_s, dt_ctrl_s=dt, t_breaks=breaks, d=d
    )


def make_matched_scenario(
    config: ChannelConfig, horizon_h: float = 24.0, dt_ctrl_s: float | None = None
) -> Scenario:
    """Constant flows with supply exactly matching demand (zero mismatch)."""
    n = config.n_pools
    base = config.offtake_fraction * config.q_top / n
    d = np.empty((1, n + 2))
    d[0, 1 : n + 1] = base
    d[0, n + 1] = (1.0 - config.offtake_fraction) * config.q_top
    d[0, 0] = d[0, 1:].sum()
    return Scenario(
        n_pools=n,
        horizon_s=3600.0 * horizon_h,
        dt_ctrl_s=dt_ctrl_s if dt_ctrl_s is not None else config.dt_ctrl_s,
        t_breaks=np.array([0.0]),
        d=d,
    )


def make_step_scenario(
    config: ChannelConfig,
    flow_index: int,
    fraction: float = 0.1,
    t_step_h: float = 2.0,
    horizon_h: float = 72.0,
    dt_ctrl_s: float | None = None,
) -> Scenario:
    """Matched flows, then one boundary flow steps by fraction * q_top.

    flow_index 0 steps the top supply, 1..N a pool offtake, N+1 the
    exogenous bottom outflow. The step is permanent and unmatched, so the
    channel fills or drains at a constant rate afterwards; a balancing
    design spreads that rate evenly, driving the weighted differences back
    to zero while all levels move together.
    """
    n = config.n_pools
    if not 0 <= flow_index <= n + 1:
        raise ConfigError(f"flow_index must be in 0..{n + 1}")
    if t_step_h <= 0 or t_step_h >= horizon_h:
        raise ConfigError("step time must fall inside the horizon")
    base = config.offtake_fraction * config.q_top / n
    d = np.empty((2, n + 2))
    d[:, 1 : n + 1] = base
    d[:, n + 1] = (1.0 - config.offtake_fraction) * config.q_top
    d[:, 0] = config.q_top
    d[1, flow_index] += fraction * config.q_top
    if np.any(d < 0):
        raise ConfigError("step drives a boundary flow negative")
    return Scenario(
        n_pools=n,
        horizon_s=3600.0 * horizon_h,
        dt_ctrl_s=dt_ctrl_s if dt_ctrl_s is not None else config.dt_ctrl_s,
        t_breaks=np.array([0.0, 3600.0 * t_step_h]),
        d=d,
    )


def nominal_pool_flows(config: ChannelConfig) -> np.ndarray:
    """Steady discharge carried by each pool at the scenario's t=0 flows."""
    return nominal_gate_flows(make_standard_scenario(config))[0]


def build_linear_channel(
    config: ChannelConfig,
    grid: FrequencyGrid | None = None,
    grid_points: int = 100,
) -> ChannelLinearModel:
    """Steady profiles -> linearized pools -> assembled channel model."""
    grid = grid if grid is not None else default_grid()
    q0 = nominal_pool_flows(config)
    responses = []
    for k, p in enumerate(config.pools):
        profile = solve_steady_profile(p, q0[k], grid_points)
        responses.append(pool_frequency_response(profile, grid))
    return assemble_channel(responses, np.array(config.weights))


@dataclass(frozen=True)
class BalancedEquilibriumCurve:
    """Stored-volume change vs the balanced steady-state level offsets.

    In a balanced equilibrium every weighted error takes a common value z,
    so pool n sits at h_ref_n - z / w_n. The curve maps z to the total
    steady-profile volume shift that goes with those levels, and inverts
    that map to recover z (hence every level) from a known volume change.
    """

    pools: tuple[PoolParams, ...]
    weights: np.ndarray
    q0: np.ndarray
    grid_points: int = 100
    h_floor: float = 0.05

    def level_offsets(self, z: float) -> np.ndarray:
        """Per-pool downstream level deviation h - h_ref at consensus z."""
        return -z / self.weights

    def _volumes(self, z: float) -> float:
        total = 0.0
        for k, p in enumerate(self.pools):
            h = p.h_ref - z / self.weights[k]
            if h <= self.h_floor:
                raise NumericalError(
                    f"pool {k + 1} level {h:.3f} m is below the operating floor"
                )
            total += solve_steady_profile(p, self.q0[k], self.grid_points, h_ds=h).volume
        return total

    def volume_shift(self, z: float) -> float:
        """Channel volume at consensus z minus the setpoint volume, m^3."""
        return self._volumes(z) - self._volumes(0.0)

    def consensus_for_volume(self, dv: float) -> float:
        """Invert the curve: the z whose volume shift equals dv."""
        if dv == 0.0:
            return 0.0
        # first-order seed: dv ~= -z * sum(c_n / w_n) with c_n the surface area
        caps = []
        for k, p in enumerate(self.pools):
            prof = solve_steady_profile(p, self.q0[k], self.grid_points)
            caps.append(np.mean(top_width(p, prof.levels())) * p.length)
        z0 = -dv / float(np.sum(np.array(caps) / self.weights))
        v0 = self._volumes(0.0)
        lo, hi = sorted((0.5 * z0, 2.0 * z0))
        f = lambda z: self._volumes(z) - v0 - dv
        f_lo, f_hi = f(lo), f(hi)
        for _ in range(40):
            if f_lo * f_hi <= 0:
                break
            span = hi - lo
            if abs(f_lo) < abs(f_hi):
                lo -= span
                f_lo = f(lo)
            else:
                hi += span
                f_hi = f(hi)
        else:
            raise NumericalError("could not bracket the requested volume shift")
        return float(brentq(f, lo, hi, xtol=1e-10))


def balanced_equilibrium_map(
    config: ChannelConfig, grid_points: int = 100
) -> BalancedEquilibriumCurve:
    """Equilibrium curve for a channel at its nominal flows."""
    return BalancedEquilibriumCurve(
        pools=config.pools,
        weights=np.array(config.weights),
        q0=nominal_pool_flows(config),
        grid_points=grid_points,
    )


_POOL_FIELDS = ("length", "w_bed", "s_side", "s0", "n_manning", "h_ref")
_CHANNEL_SCALARS = {
    "phase_margin_deg": float,
    "q_top": float,
    "horizon_h": float,
    "dt_ctrl_s": float,
    "use_feedforward": bool,
    "ff_base": float,
    "offtake_fraction": float,
}


def serialize_config(config: ChannelConfig) -> str:
    """Write a config as TOML such that parse_config returns it exactly."""

    def scalar(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = ["[channel]", f'name = "{config.name}"']
    lines.append("weights = [" + ", ".join(repr(float(w)) for w in config.weights) + "]")
    if config.order is not None:
        lines.append("order = [" + ", ".join(str(int(m)) for m in config.order) + "]")
    for key in _CHANNEL_SCALARS:
        lines.append(f"{key} = {scalar(getattr(config, key))}")
    for pool in config.pools:
        lines.append("")
        lines.append("[[pool]]")
        for key in _POOL_FIELDS:
            lines.append(f"{key} = {scalar(float(getattr(pool, key)))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ChannelConfig:
    """Strict TOML reader: unknown keys are errors, not warnings."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML: {err}") from err
    unknown = set(doc) - {"channel", "pool"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    if "channel" not in doc or "pool" not in doc:
        raise ConfigError("config needs a [channel] section and [[pool]] entries")

    chan = dict(doc["channel"])
    if "name" not in chan:
        raise ConfigError("[channel] needs a name")
    kwargs = {"name": str(chan.pop("name"))}
    if "order" in chan:
        kwargs["order"] = tuple(int(m) for m in chan.pop("order"))
    for key, cast in _CHANNEL_SCALARS.items():
        if key in chan:
            kwargs[key] = cast(chan.pop(key))
    weights = chan.pop("weights", None)
    if chan:
        raise ConfigError(f"unknown [channel] keys: {sorted(chan)}")

    pools = []
    for i, entry in enumerate(doc["pool"]):
        entry = dict(entry)
        try:
            vals = {key: float(entry.pop(key)) for key in _POOL_FIELDS}
        except KeyError as err:
            raise ConfigError(f"pool {i + 1} is missing {err.args[0]}") from err
        if entry:
            raise ConfigError(f"pool {i + 1} has unknown keys: {sorted(entry)}")
        pools.append(PoolParams(**vals))
    kwargs["pools"] = tuple(pools)
    kwargs["weights"] = (
        tuple(float(w) for w in weights) if weights is not None else (1.0,) * len(pools)
    )
    return ChannelConfig(**kwargs)


def load_config(path) -> ChannelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_digest(text: str) -> str:
    """sha256 of the config text, for run manifests."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def serialize_compensators(
    compensators: dict[int, CompensatorParams],
    phase_margin_deg: float,
    order: tuple[int, ...],
) -> str:
    """Designed gate compensators as TOML, exact under parse_compensators."""
    lines = [
        f"phase_margin_deg = {repr(float(phase_margin_deg))}",
        "order = [" + ", ".join(str(int(m)) for m in order) + "]",
    ]
    for gate in sorted(compensators):
        c = compensators[gate]
        lines += [
            "",
            "[[compensator]]",
            f"gate = {gate}",
            f"k_p = {repr(float(c.k_p))}",
            f"t_i = {repr(float(c.t_i))}",
            f"t_f = {repr(float(c.t_f))}",
        ]
    return "\n".join(lines) + "\n"


def parse_compensators(text: str) -> dict[int, CompensatorParams]:
    """Read a compensator file written by serialize_compensators."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML: {err}") from err
    entries = doc.get("compensator")
    if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
        raise ConfigError("compensator file has no [[compensator]] entries")
    out: dict[int, CompensatorParams] = {}
    for entry in entries:
        try:
            gate = int(entry["gate"])
            out[gate] = CompensatorParams(
                gate=gate,
                k_p=float(entry["k_p"]),
                t_i=float(entry["t_i"]),
                t_f=float(entry["t_f"]),
            )
        except KeyError as err:
            raise ConfigError(f"compensator entry missing {err.args[0]}") from err
    return out
