"""Command-line workflow: config file in, CSV/TOML artifacts + manifest out.

Subcommands
    steady      backwater profile CSV per pool
    linearize   Bode CSVs and storage capacities
    design      sequential loop shaping; writes the design ledger and the
                compensator file that `simulate` consumes
    verify      stability and steady-state-gain audit of a design
    simulate    closed-loop nonlinear run through the standard scenario
    equilibrium volume-shift vs balanced-levels curve

Exit codes: 0 success, 2 bad configuration or arguments, 3 numerical failure.
Every run writes manifest.json (config digest, versions, seed, argv) next to
its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .errors import ConfigError, NumericalError
from .freqdom import default_grid, pool_frequency_response, write_bode_csv
from .hydraulics import solve_steady_profile, top_width
from .network import closed_loop_level_response, integrator_gain_at_wmin, closed_form_step_gain
from .runtime import geometric_feedforward, run_closed_loop
from .scenarios import (
    ChannelConfig,
    balanced_equilibrium_map,
    build_linear_channel,
    config_digest,
    make_standard_scenario,
    nominal_pool_flows,
    parse_compensators,
    parse_config,
    serialize_compensators,
)
from .tuner import TunerOptions, design_all, export_ledger, format_ledger


def _package_version() -> str:
    try:
        return metadata.version("poolbalance")
    except metadata.PackageNotFoundError:
        return "unknown"


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError as err:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from err


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as err:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}") from err


def _apply_overrides(config: ChannelConfig, args) -> ChannelConfig:
    """Fold command-line overrides into the loaded config."""
    pools = config.pools
    weights = config.weights
    order = config.order
    if args.pools is not None:
        n = args.pools
        if n < 2:
            raise ConfigError("--pools must be at least 2")
        if n <= len(pools):
            pools = pools[:n]
            weights = weights[:n]
        elif len(set(pools)) == 1:
            pools = pools + (pools[-1],) * (n - len(pools))
            weights = weights + (weights[-1],) * (n - len(weights))
        else:
            raise ConfigError(
                "--pools can only extend a channel whose pools are identical"
            )
        if order is not None and sorted(order) != list(range(1, n)):
            order = None
    if getattr(args, "weights", None) is not None:
        weights = _parse_float_list(args.weights)
    if getattr(args, "order", None) is not None:
        order = _parse_int_list(args.order)
    kwargs = {"pools": pools, "weights": weights, "order": order}
    if getattr(args, "phase_margin", None) is not None:
        kwargs["phase_margin_deg"] = args.phase_margin
    if getattr(args, "horizon_h", None) is not None:
        kwargs["horizon_h"] = args.horizon_h
    if getattr(args, "no_feedforward", False):
        kwargs["use_feedforward"] = False
    from dataclasses import replace

    return replace(config, **kwargs)


def _design_order(config: ChannelConfig) -> tuple[int, ...]:
    return config.order if config.order is not None else tuple(range(1, config.n_pools))


def _write_manifest(out_dir: Path, args, config_text: str, outputs: list[str]) -> None:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:] if sys.argv else [],
        "config": str(args.config),
        "config_sha256": config_digest(config_text),
        "package_version": _package_version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": sys.version.split()[0],
        "seed": args.seed,
        "unix_time": time.time(),
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _cmd_steady(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    q0 = nominal_pool_flows(config)
    outputs = []
    for k, p in enumerate(config.pools):
        profile = solve_steady_profile(p, q0[k], args.cells)
        name = f"steady_pool{k + 1}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_m", "area_m2", "discharge_m3_s", "level_m"])
            for x, a, h in zip(profile.x, profile.a0, profile.levels()):
                writer.writerow([f"{x:.3f}", f"{a:.10e}", f"{q0[k]:.10e}", f"{h:.10e}"])
        outputs.append(name)
        levels = profile.levels()
        print(
            f"pool {k + 1}: q0 = {q0[k]:.4f} m^3/s, "
            f"h_us = {levels[0]:.4f} m, h_ds = {levels[-1]:.4f} m, "
            f"volume = {profile.volume:.1f} m^3"
        )
    return outputs


def _cmd_linearize(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    grid = default_grid()
    q0 = nominal_pool_flows(config)
    outputs = []
    cap_rows = []
    for k, p in enumerate(config.pools):
        profile = solve_steady_profile(p, q0[k], args.cells)
        resp = pool_frequency_response(profile, grid)
        for tag, fr in (("in", resp.g_in), ("out", resp.g_out)):
            name = f"bode_pool{k + 1}_{tag}.csv"
            write_bode_csv(out_dir / name, fr.values, grid)
            outputs.append(name)
        cap_rows.append((k + 1, q0[k], resp.capacity))
        print(f"pool {k + 1}: capacity = {resp.capacity:.2f} m^2 at q0 = {q0[k]:.4f} m^3/s")
    name = "capacities.csv"
    with open(out_dir / name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pool", "q0_m3_s", "capacity_m2"])
        for row in cap_rows:
            writer.writerow([row[0], f"{row[1]:.10e}", f"{row[2]:.10e}"])
    outputs.append(name)
    return outputs


def _run_design(config: ChannelConfig):
    channel = build_linear_channel(config)
    order = _design_order(config)
    return design_all(channel, order, config.phase_margin_deg, TunerOptions()), order


def _cmd_design(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    result, order = _run_design(config)
    outputs = [Path(p).name for p in export_ledger(result, out_dir)]
    text = serialize_compensators(result.compensators, config.phase_margin_deg, order)
    with open(out_dir / "compensators.toml", "w", encoding="utf-8") as fh:
        fh.write(text)
    outputs.append("compensators.toml")
    for step in result.steps:
        r = step.report
        print(
            f"step {step.m} gate {step.gate}: "
            f"omega_c = {r.omega_c:.3e} rad/s, PM = {r.phase_margin_deg:.2f} deg, "
            f"encirclements = {r.encirclements}"
        )
    print(f"design complete: residual = {result.h_residual:.3e}")
    return outputs


def _cmd_verify(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    result, order = _run_design(config)
    channel = result.channel
    uniform = len(set(config.weights)) == 1
    lines = [f"verification report: {config.name}", ""]
    failures = []

    for step in result.steps:
        r = step.report
        ok = (
            r.encirclements == 0
            and r.unique_crossing
            and r.rolloff_ok
            and r.phase_margin_deg >= config.phase_margin_deg - 1.0
        )
        verdict = "PASS" if ok else "FAIL"
        if not ok:
            failures.append(f"loop {step.m} (gate {step.gate}) failed its stability audit")
        lines.append(
            f"[{verdict}] loop {step.m} gate {step.gate}: PM = {r.phase_margin_deg:.2f} deg, "
            f"encirclements = {r.encirclements}, rolloff = {r.rolloff_ok}"
        )
        if uniform and step.gain_formula is not None and np.isfinite(step.gain_measured):
            rel = abs(step.gain_measured - step.gain_formula) / abs(step.gain_formula)
            ok = rel < 0.01
            verdict = "PASS" if ok else "FAIL"
            if not ok:
                failures.append(
                    f"loop {step.m}: integrator gain off the closed form by {rel:.2%}"
                )
            lines.append(
                f"[{verdict}]   integrator gain {step.gain_measured:.6e} "
                f"vs closed form {step.gain_formula:.6e} (rel err {rel:.2e})"
            )

    if uniform:
        total_cap = float(np.sum(channel.capacities))
        expect = 1.0 / total_cap
        gains = result.steady_disturbance_gains
        worst = 0.0
        for k in range(gains.shape[0]):
            for l in range(gains.shape[1]):
                target = expect if l == 0 else -expect
                worst = max(worst, abs(gains[k, l] - target) / expect)
        ok = worst < 0.01
        verdict = "PASS" if ok else "FAIL"
        if not ok:
            failures.append(f"closed-loop steady gains off +-1/sum(c) by {worst:.2%}")
        lines.append(
            f"[{verdict}] closed-loop disturbance gains within {worst:.2e} of "
            f"+-1/sum(c) = {expect:.6e}"
        )
    else:
        lines.append("[note] non-uniform weights: closed-form gain checks not applicable")

    ok = result.h_residual < 1e-9
    lines.append(
        f"[{'PASS' if ok else 'FAIL'}] all-loops-closed residual = {result.h_residual:.3e}"
    )
    if not ok:
        failures.append("final partial-loop matrix did not vanish")
    lines.append(
        f"[{'PASS' if result.j_origin_ok else 'FAIL'}] "
        "disturbance map bounded near zero frequency"
    )
    if not result.j_origin_ok:
        failures.append("closed-loop disturbance map grows toward zero frequency")

    report = "\n".join(lines) + "\n"
    with open(out_dir / "verify.txt", "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    if failures:
        raise NumericalError("; ".join(failures))
    return ["verify.txt"]


def _cmd_simulate(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    if args.design is not None:
        with open(args.design, "r", encoding="utf-8") as fh:
            comps = parse_compensators(fh.read())
    else:
        result, _ = _run_design(config)
        comps = result.compensators
    scenario = make_standard_scenario(config)
    ff = (
        geometric_feedforward(config.n_pools, config.ff_base)
        if config.use_feedforward
        else None
    )
    sim = run_closed_loop(
        config.pools,
        comps,
        scenario,
        weights=np.array(config.weights),
        feedforward=ff,
        cells=args.cells,
    )
    sim.to_csv(out_dir / "trajectory.csv")
    peak_y = float(np.max(np.abs(sim.y))) if sim.y.size else 0.0
    final_err = sim.level_errors()[-1]
    print(
        f"simulated {scenario.horizon_s / 3600.0:.1f} h: "
        f"peak |y| = {peak_y * 1000.0:.2f} mm, "
        f"final level errors [{', '.join(f'{e * 1000.0:.1f}' for e in final_err)}] mm"
    )
    return ["trajectory.csv"]


def _cmd_equilibrium(config: ChannelConfig, args, out_dir: Path) -> list[str]:
    curve = balanced_equilibrium_map(config, grid_points=args.cells)
    z_cap = 0.25 * min(
        w * p.h_ref for w, p in zip(curve.weights, config.pools)
    )
    z_values = np.linspace(-z_cap, z_cap, args.points)
    name = "equilibrium.csv"
    n = config.n_pools
    with open(out_dir / name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["volume_shift_m3", "consensus_z_m"] + [f"h_ds_{k + 1}" for k in range(n)]
        )
        for z in z_values:
            dv = curve.volume_shift(z)
            levels = [
                p.h_ref + off for p, off in zip(config.pools, curve.level_offsets(z))
            ]
            writer.writerow(
                [f"{dv:.6e}", f"{z:.10e}"] + [f"{h:.10e}" for h in levels]
            )
    if args.delta_volume is not None:
        z = curve.consensus_for_volume(args.delta_volume)
        levels = [
            p.h_ref + off for p, off in zip(config.pools, curve.level_offsets(z))
        ]
        print(
            f"delta V = {args.delta_volume:.1f} m^3 -> z = {z:.6f} m, levels "
            f"[{', '.join(f'{h:.4f}' for h in levels)}] m"
        )
    return [name]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolbalance",
        description="design and test decentralized level-balancing controllers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, scenario_flags: bool = False) -> None:
        p.add_argument("--config", required=True, help="channel config TOML")
        p.add_argument("--out", default="poolbalance_out", help="output directory")
        p.add_argument("--pools", type=int, default=None, help="use only the first N pools")
        p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
        p.add_argument("--cells", type=int, default=100, help="spatial grid points per pool")
        if scenario_flags:
            p.add_argument("--order", default=None, help="loop-closing order, e.g. 2,1,3")
            p.add_argument("--weights", default=None, help="per-pool weights, e.g. 1,1,1.5")
            p.add_argument(
                "--phase-margin", type=float, default=None, help="target margin, degrees"
            )

    common(sub.add_parser("steady", help="solve and export backwater profiles"))
    common(sub.add_parser("linearize", help="export Bode CSVs and capacities"))
    common(sub.add_parser("design", help="run the sequential loop-shaping design"), True)
    common(sub.add_parser("verify", help="audit a design's stability and gains"), True)

    sim = sub.add_parser("simulate", help="closed-loop nonlinear scenario run")
    common(sim, True)
    sim.add_argument("--design", default=None, help="compensators.toml from `design`")
    sim.add_argument("--horizon-h", type=float, default=None, help="scenario length, hours")
    sim.add_argument(
        "--no-feedforward", action="store_true", help="disable disturbance feedforward"
    )

    eq = sub.add_parser("equilibrium", help="volume-shift vs balanced-levels curve")
    common(eq)
    eq.add_argument("--points", type=int, default=21, help="curve sample count")
    eq.add_argument(
        "--delta-volume", type=float, default=None, help="also invert this shift, m^3"
    )
    return parser


_COMMANDS = {
    "steady": _cmd_steady,
    "linearize": _cmd_linearize,
    "design": _cmd_design,
    "verify": _cmd_verify,
    "simulate": _cmd_simulate,
    "equilibrium": _cmd_equilibrium,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config_text = fh.read()
        config = _apply_overrides(parse_config(config_text), args)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    code = 0
    outputs: list[str] = []
    try:
        outputs = _COMMANDS[args.command](config, args, out_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        code = 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        code = 3
    _write_manifest(out_dir, args, config_text, outputs + ["manifest.json"])
    return code
