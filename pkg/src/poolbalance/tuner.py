"""Sequential loop shaping for the gate compensators.

One SISO design per step: gate nu_m is tuned against the plant G^(m) it sees
with the previously designed loops active. The tuner picks the largest
crossover (from a capped log-spaced candidate list) at which a PI-plus-filter
compensator meets all three criteria:

  1. the loop -G^(m) C has a unique 0 dB crossing and its phase there equals
     -180 deg + the requested phase margin;
  2. beyond crossover the magnitude keeps rolling off until it falls below
     -20 dB and never comes back up;
  3. the Nyquist curve (with the double-pole indentation closure) does not
     encircle the critical point.

The crossover cap combines the inverse of the downstream pool's transport
delay, a fraction of the plant's first resonance peak, and a fixed margin to
the top of the grid, which keeps the wave resonances out of the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .compensator import CompensatorParams
from .errors import (
    ConfigError,
    InfeasibleDesignError,
    MarginalStabilityError,
    NumericalError,
)
from .freqdom import FrequencyGrid, FrequencyResponse, write_bode_csv
from .network import (
    ChannelLinearModel,
    PartialClosedLoop,
    close_one_loop,
    closed_loop_level_response,
    integrator_gain_at_wmin,
    closed_form_step_gain,
    open_partial,
)


@dataclass(frozen=True)
class TunerOptions:
    """Knobs of the loop-shaping search; defaults match the design recipe."""

    candidates: int = 40
    floor_multiple: float = 10.0  # lowest candidate = this x grid minimum
    cap_grid_divisor: float = 10.0  # default cap = grid maximum / this
    resonance_fraction: float = 0.3  # cap = this x first resonance frequency
    resonance_prominence: float = 1.25
    t_f_factor: float = 5.0  # filter pole sits this factor above crossover
    t_f_halvings: int = 4
    pm_tolerance_deg: float = 0.5
    delay_tau: float | None = None  # transport delay bound (s), if known


@dataclass(frozen=True)
class LoopReport:
    """Measured properties of one designed loop -G C on the grid."""

    gate: int
    omega_c: float
    phase_margin_deg: float
    gain_margin_db: float
    rolloff_ok: bool
    unique_crossing: bool
    encirclements: int


def _unwrapped_phase(values: np.ndarray) -> np.ndarray:
    ph = np.unwrap(np.angle(values))
    # the responses handled here all start integrator-dominated; pick the
    # branch that puts the first sample in (-pi, 0)
    if ph[0] > 0:
        ph = ph - 2.0 * np.pi
    return ph


def _interp_mag_phase(values: np.ndarray, grid: FrequencyGrid, omega: float) -> tuple[float, float]:
    logw = np.log(grid.omega)
    target = math.log(omega)
    mag = math.exp(float(np.interp(target, logw, np.log(np.abs(values)))))
    ph = float(np.interp(target, logw, _unwrapped_phase(values)))
    return mag, ph


def estimate_delay(values: np.ndarray, grid: FrequencyGrid) -> float:
    """Transport delay from the high-frequency phase slope (top grid decade)."""
    ph = _unwrapped_phase(values)
    sel = grid.omega >= grid.omega[-1] / 10.0
    slope = float(np.polyfit(grid.omega[sel], ph[sel], 1)[0])
    return max(-slope, 0.0)


def first_resonance(values: np.ndarray, grid: FrequencyGrid, prominence: float = 1.25) -> float | None:
    """Frequency of the first resonant bump of |values|, or None."""
    mag = np.abs(values)
    running_min = np.minimum.accumulate(mag)
    for k in range(1, len(mag) - 1):
        if mag[k] > mag[k - 1] and mag[k] >= mag[k + 1] and mag[k] > prominence * running_min[k - 1]:
            return float(grid.omega[k])
    return None


def nyquist_encirclements(loop_values: np.ndarray, grid: FrequencyGrid, arc_points: int = 720) -> int:
    """Signed clockwise encirclements of -1 by the closed Nyquist contour.

    The sampled positive-frequency branch is mirrored by conjugation; the
    indentation around the origin poles is closed with a synthesized
    constant-radius arc swept clockwise between the two low-frequency
    endpoints (just under a full turn for the double integrator carried by
    every loop here). Raises if the curve passes through the critical point.
    """
    z_pos = np.asarray(loop_values)
    z_neg = np.conj(z_pos)[::-1]  # from -i w_max up to -i w_min
    z1, z2 = z_neg[-1], z_pos[0]
    sweep = (np.angle(z1) - np.angle(z2)) % (2.0 * np.pi)
    if sweep < np.pi / 2:
        sweep += 2.0 * np.pi
    theta = np.angle(z1) - sweep * np.linspace(0.0, 1.0, arc_points)[1:-1]
    arc = np.abs(z1) * np.exp(1j * theta)
    pts = np.concatenate([z_neg, arc, z_pos, z_neg[:1]])

    shifted = pts + 1.0
    if np.min(np.abs(shifted)) < 1e-9:
        raise MarginalStabilityError("Nyquist curve touches the critical point")
    turns = float(np.sum(np.angle(shifted[1:] / shifted[:-1]))) / (2.0 * np.pi)
    n = int(np.round(turns))
    if abs(turns - n) > 0.1:
        raise NumericalError(f"winding count failed to close (residual {turns - n:.3f})")
    return -n


def _rolloff_ok(mag: np.ndarray) -> tuple[bool, bool]:
    """(unique 0 dB crossing, roll-off criterion) on the sampled loop gain."""
    above = mag > 1.0
    falls = np.nonzero(above[:-1] & ~above[1:])[0]
    rises = np.nonzero(~above[:-1] & above[1:])[0]
    unique = bool(above[0] and not above[-1] and len(falls) == 1 and len(rises) == 0)
    if not unique:
        return False, False
    tail = mag[falls[0] + 1 :]
    below = tail <= 0.1
    if not below.any():
        return True, False
    k20 = int(np.argmax(below))
    if np.any(tail[k20:] > 0.1):
        return True, False
    seg = tail[: k20 + 1]
    keeps_falling = not np.any(np.diff(seg) > 1e-9 * seg[:-1])
    return True, keeps_falling


def loop_report(gate: int, loop_values: np.ndarray, grid: FrequencyGrid) -> LoopReport:
    """Margins, roll-off verdict and encirclement count for -G C samples."""
    mag = np.abs(loop_values)
    ph = np.degrees(_unwrapped_phase(loop_values))
    logw = np.log(grid.omega)

    unique, rolloff = _rolloff_ok(mag)
    falls = np.nonzero((mag[:-1] >= 1.0) & (mag[1:] < 1.0))[0]
    if len(falls) == 0:
        omega_c, pm = math.nan, math.nan
    else:
        k = falls[0]
        lm = np.log(mag)
        t = (0.0 - lm[k]) / (lm[k + 1] - lm[k])
        omega_c = math.exp(logw[k] + t * (logw[k + 1] - logw[k]))
        pm = 180.0 + (ph[k] + t * (ph[k + 1] - ph[k]))

    gm = math.inf
    if len(falls) > 0:
        drops = np.nonzero((ph[:-1] >= -180.0) & (ph[1:] < -180.0))[0]
        drops = drops[drops >= falls[0]]
        if len(drops) > 0:
            k = drops[0]
            t = (-180.0 - ph[k]) / (ph[k + 1] - ph[k])
            lmag = np.log(mag[k]) + t * (np.log(mag[k + 1]) - np.log(mag[k]))
            gm = -20.0 * lmag / math.log(10.0)

    enc = nyquist_encirclements(loop_values, grid)
    return LoopReport(
        gate=gate,
        omega_c=omega_c,
        phase_margin_deg=pm,
        gain_margin_db=gm,
        rolloff_ok=rolloff,
        unique_crossing=unique,
        encirclements=enc,
    )


def nyquist_report(g: FrequencyResponse, comp: CompensatorParams) -> LoopReport:
    loop = -g.values * comp.frequency_response(g.grid.omega)
    return loop_report(comp.gate, loop, g.grid)


def tune_step(
    g: FrequencyResponse,
    gate: int,
    phi_pm: float,
    opts: TunerOptions = TunerOptions(),
    resonance_values: np.ndarray | None = None,
) -> tuple[CompensatorParams, LoopReport]:
    """Design one gate's compensator against its current plant samples.

    Walks the candidate crossovers from the cap downward. At each candidate
    the filter time constant starts at 1/(t_f_factor * w_c); T_I is then set
    so the loop phase at the candidate equals exactly -180 + phi_pm (the
    required PI lag must fit in (-90, 0) deg), and K_p normalizes the loop
    gain to one there. The first candidate that passes all criteria wins; if
    a candidate fails the roll-off test its filter constant is halved a few
    times before moving on.

    The resonance cap is scanned on resonance_values when given (the
    physical open-loop diagonal, whose first peak is the pools' wave
    resonance) rather than on the partially-closed target, which carries
    mild interaction bumps from the already-closed neighbors that would
    otherwise masquerade as resonances; the roll-off criterion still audits
    the actual target loop.
    """
    if not 0.0 < phi_pm < 90.0:
        raise ConfigError(f"phase margin must be in (0, 90) deg, got {phi_pm}")
    grid = g.grid
    w = grid.omega

    cap = w[-1] / opts.cap_grid_divisor
    scan = g.values if resonance_values is None else resonance_values
    res = first_resonance(scan, grid, opts.resonance_prominence)
    if res is not None:
        cap = min(cap, opts.resonance_fraction * res)
    if opts.delay_tau is not None and opts.delay_tau > 0:
        cap = min(cap, 1.0 / opts.delay_tau)
    floor = opts.floor_multiple * w[0]
    if cap <= floor:
        raise InfeasibleDesignError(
            f"gate {gate}: crossover cap {cap:.3e} rad/s sits below the search floor {floor:.3e}"
        )

    target = math.radians(-180.0 + phi_pm)
    for wc in np.geomspace(cap, floor, opts.candidates):
        mag_g, phase_g = _interp_mag_phase(g.values, grid, wc)
        t_f = 1.0 / (opts.t_f_factor * wc)
        for _ in range(opts.t_f_halvings + 1):
            chi = target - (phase_g - math.atan(wc * t_f))
            if -math.pi / 2 < chi < 0.0:
                t_i = 1.0 / (wc * math.tan(-chi))
                pi_mag = abs(1.0 + 1.0 / (1j * wc * t_i))
                lp_mag = abs(1.0 / (1.0 + 1j * wc * t_f))
                k_p = 1.0 / (mag_g * pi_mag * lp_mag)
                comp = CompensatorParams(gate=gate, k_p=k_p, t_i=t_i, t_f=t_f)
                loop = -g.values * comp.frequency_response(w)
                try:
                    report = loop_report(gate, loop, grid)
                except (MarginalStabilityError, NumericalError):
                    t_f *= 0.5
                    continue
                if (
                    report.unique_crossing
                    and report.rolloff_ok
                    and report.encirclements == 0
                    and report.phase_margin_deg >= phi_pm - opts.pm_tolerance_deg
                ):
                    return comp, report
            t_f *= 0.5
    raise InfeasibleDesignError(
        f"gate {gate}: no candidate crossover in [{floor:.3e}, {cap:.3e}] rad/s met the criteria"
    )


@dataclass(frozen=True)
class DesignStep:
    """Everything recorded about one step of the sequential design."""

    m: int
    gate: int
    comp: CompensatorParams
    report: LoopReport
    gain_measured: float
    gain_formula: float | None
    g_values: np.ndarray
    loop_values: np.ndarray


@dataclass(frozen=True)
class DesignResult:
    """Full design ledger: per-step records plus whole-channel checks."""

    channel: ChannelLinearModel
    order: tuple[int, ...]
    phi_pm: float
    compensators: dict[int, CompensatorParams]
    steps: tuple[DesignStep, ...]
    final: PartialClosedLoop
    h_residual: float
    j_origin_ok: bool
    steady_disturbance_gains: np.ndarray  # (N pools, N+2 disturbances), lim s T, NaN if unreadable


def _safe_gain(values: np.ndarray, grid: FrequencyGrid) -> float:
    try:
        return integrator_gain_at_wmin(values, grid)
    except NumericalError:
        return math.nan


def design_all(
    channel: ChannelLinearModel,
    order,
    phi_pm: float,
    opts: TunerOptions = TunerOptions(),
) -> DesignResult:
    """Run the whole sequential design and verify the bookkeeping.

    Per step: estimate the downstream transport delay, tune the gate, close
    its loop. The per-step ledger keeps the plant samples, the loop samples,
    the achieved margins, and the measured integrator residue next to its
    closed-form prediction (the latter only when the output weights are all
    equal, where the formula applies, scaled by that common weight).
    """
    pcl = open_partial(channel, order)
    order = pcl.order
    grid = channel.grid
    caps = channel.capacities
    w0 = channel.weights[0]
    uniform = bool(np.all(channel.weights == w0))

    steps: list[DesignStep] = []
    comps: dict[int, CompensatorParams] = {}
    for m in range(1, len(order) + 1):
        gate = pcl.next_gate
        g_vals = pcl.target_values().copy()
        tau = estimate_delay(channel.pools[gate].g_in.values, grid)
        comp, report = tune_step(
            FrequencyResponse(grid=grid, values=g_vals),
            gate,
            phi_pm,
            replace(opts, delay_tau=tau),
            resonance_values=channel.g[gate - 1, gate - 1],
        )
        gain_meas = integrator_gain_at_wmin(g_vals, grid)
        gain_form = w0 * closed_form_step_gain(order, m, caps) if uniform else None
        loop = -g_vals * comp.frequency_response(grid.omega)
        steps.append(
            DesignStep(
                m=m,
                gate=gate,
                comp=comp,
                report=report,
                gain_measured=gain_meas,
                gain_formula=gain_form,
                g_values=g_vals,
                loop_values=loop,
            )
        )
        comps[gate] = comp
        pcl = close_one_loop(pcl, comp.frequency_response(grid.omega))

    h_residual = float(np.max(np.abs(pcl.h)) / np.max(np.abs(channel.g)))
    k10 = int(np.searchsorted(grid.omega, 10.0 * grid.omega[0]))
    j0 = np.abs(pcl.j[:, :, 0])
    j10 = np.abs(pcl.j[:, :, k10])
    j_origin_ok = bool(np.all((j0 < j10) | (j0 < 1e-14 * np.max(j10))))

    t = closed_loop_level_response(channel, pcl.comp_values)
    n = channel.n_pools
    gains = np.full((n, n + 2), math.nan)
    for pool in range(n):
        for dist in range(n + 2):
            gains[pool, dist] = _safe_gain(t[pool, dist], grid)

    return DesignResult(
        channel=channel,
        order=order,
        phi_pm=phi_pm,
        compensators=comps,
        steps=tuple(steps),
        final=pcl,
        h_residual=h_residual,
        j_origin_ok=j_origin_ok,
        steady_disturbance_gains=gains,
    )


def format_ledger(result: DesignResult) -> str:
    """Human-readable one-record-per-step summary of a finished design."""
    lines = [
        "sequential design ledger",
        f"pools={result.channel.n_pools} order={','.join(map(str, result.order))} "
        f"phi_pm={result.phi_pm:g} weights={','.join(f'{v:g}' for v in result.channel.weights)}",
        f"capacities_m2={','.join(f'{v:.6g}' for v in result.channel.capacities)}",
    ]
    for s in result.steps:
        formula = "n/a" if s.gain_formula is None else f"{s.gain_formula:.6e}"
        lines.append(
            f"step m={s.m} gate={s.gate}: k_p={s.comp.k_p:.6g} t_i={s.comp.t_i:.6g} "
            f"t_f={s.comp.t_f:.6g} omega_c={s.report.omega_c:.6e} "
            f"pm_deg={s.report.phase_margin_deg:.3f} gm_db={s.report.gain_margin_db:.3f} "
            f"rolloff_ok={s.report.rolloff_ok} encirclements={s.report.encirclements} "
            f"gain_measured={s.gain_measured:.6e} gain_formula={formula}"
        )
    lines.append(
        f"final: closed-plant residual max|H|/max|G|={result.h_residual:.3e} "
        f"disturbance-responses-vanish-at-origin={'ok' if result.j_origin_ok else 'FAILED'}"
    )
    lines.append("steady disturbance-to-level gains (rows: pools; cols: d_0..d_N+1):")
    for pool in range(result.channel.n_pools):
        row = " ".join(f"{v:+.6e}" for v in result.steady_disturbance_gains[pool])
        lines.append(f"  pool {pool + 1}: {row}")
    return "\n".join(lines) + "\n"


def export_ledger(result: DesignResult, out_dir) -> list[str]:
    """Write ledger.txt plus per-step loop Bode CSVs; returns written names."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "ledger.txt")
    with open(path, "w") as fh:
        fh.write(format_ledger(result))
    written.append(path)
    for s in result.steps:
        name = os.path.join(out_dir, f"loop_step{s.m}_gate{s.gate}.csv")
        write_bode_csv(name, s.loop_values, result.channel.grid)
        written.append(name)
    return written
