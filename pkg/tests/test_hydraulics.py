"""Trapezoidal geometry, friction, and steady backwater profiles.

Scalar expectations were frozen from an independent implementation of the
same formulas (geometry closed forms; backwater profile integrated with an
adaptive RK45 at rtol 1e-12).
"""

from __future__ import annotations

import numpy as np
import pytest

from poolbalance.errors import ConfigError, TranscriticalError
from poolbalance.hydraulics import (
    GRAVITY,
    PoolParams,
    area,
    friction_slope,
    friction_slope_gradients,
    level_from_area,
    pressure_coefficient,
    pressure_coefficient_derivative,
    solve_steady_profile,
    subcritical_margin,
    top_width,
    wetted_perimeter,
)


def test_trapezoid_area_closed_form(standard_pool):
    # h*(w_bed + s_side*h) = 1.5*(10 + 1.0) = 16.5
    assert area(standard_pool, 1.5) == pytest.approx(16.5, abs=1e-12)


def test_wetted_perimeter_value(standard_pool):
    assert wetted_perimeter(standard_pool, 1.5) == pytest.approx(
        13.60555127546399, rel=1e-12
    )


def test_top_width_value(standard_pool):
    assert top_width(standard_pool, 1.0) == pytest.approx(
        11.333333333333334, rel=1e-12
    )


def test_friction_slope_value(standard_pool):
    a = area(standard_pool, 1.5)
    assert friction_slope(standard_pool, a, 10.0) == pytest.approx(
        0.00014378273708947836, rel=1e-12
    )


def test_pressure_coefficient_is_area_over_width(standard_pool):
    a = area(standard_pool, 1.0)
    assert a == pytest.approx(10.666666666666666, rel=1e-12)
    expect = a / top_width(standard_pool, 1.0)
    assert pressure_coefficient(standard_pool, a) == pytest.approx(
        0.9411764705882352, rel=1e-12
    )
    assert pressure_coefficient(standard_pool, a) == pytest.approx(expect, rel=1e-14)


def test_level_area_round_trip(standard_pool):
    rng = np.random.default_rng(7)
    levels = rng.uniform(0.05, 4.0, size=1000)
    areas = area(standard_pool, levels)
    back = level_from_area(standard_pool, areas)
    assert np.allclose(back, levels, rtol=0.0, atol=1e-12)


def test_level_area_round_trip_rectangular():
    p = PoolParams(
        length=1000.0, w_bed=8.0, s_side=0.0, s0=1e-7, n_manning=0.0225, h_ref=2.0
    )
    rng = np.random.default_rng(11)
    levels = rng.uniform(0.05, 4.0, size=200)
    assert np.allclose(level_from_area(p, area(p, levels)), levels, atol=1e-12)


def test_level_from_area_rejects_negative(standard_pool):
    with pytest.raises(ConfigError):
        level_from_area(standard_pool, -1.0)


def test_pressure_coefficient_derivative_matches_fd(standard_pool):
    a = area(standard_pool, 1.9)
    da = 1e-5
    fd = (
        pressure_coefficient(standard_pool, a + da)
        - pressure_coefficient(standard_pool, a - da)
    ) / (2 * da)
    assert pressure_coefficient_derivative(standard_pool, a) == pytest.approx(
        fd, rel=1e-7
    )


def test_friction_slope_gradients_match_fd(standard_pool):
    a = area(standard_pool, 1.9)
    q = 10.0
    dsf_da, dsf_dq = friction_slope_gradients(standard_pool, a, q)
    da, dq = 1e-5, 1e-5
    fd_a = (
        friction_slope(standard_pool, a + da, q)
        - friction_slope(standard_pool, a - da, q)
    ) / (2 * da)
    fd_q = (
        friction_slope(standard_pool, a, q + dq)
        - friction_slope(standard_pool, a, q - dq)
    ) / (2 * dq)
    assert dsf_da == pytest.approx(fd_a, rel=1e-6)
    assert dsf_dq == pytest.approx(fd_q, rel=1e-6)
    assert dsf_da < 0.0  # deeper water lowers friction loss
    assert dsf_dq > 0.0


def test_subcritical_margin_sign(standard_pool):
    a = area(standard_pool, 1.9)
    assert subcritical_margin(standard_pool, a, 10.0) > 0.0
    # shallow fast flow goes supercritical
    a_thin = area(standard_pool, 0.05)
    assert subcritical_margin(standard_pool, a_thin, 10.0) < 0.0


class TestSteadyProfile:
    def test_upstream_level_frozen_value(self, standard_profile, standard_pool):
        h_us = level_from_area(standard_pool, standard_profile.a0[0])
        assert h_us == pytest.approx(1.773511034294935, abs=1e-9)
        assert standard_profile.a0[0] == pytest.approx(19.832004602126617, rel=1e-9)

    def test_midpoint_level_frozen_value(self, standard_profile, standard_pool):
        h_mid = np.interp(
            2500.0, standard_profile.x, standard_profile.levels()
        )
        assert h_mid == pytest.approx(1.826089408072812, abs=1e-9)

    def test_volume_frozen_value(self, standard_profile):
        assert standard_profile.volume == pytest.approx(102645.83200317547, rel=1e-9)

    def test_downstream_anchor(self, standard_profile, standard_pool):
        assert standard_profile.levels()[-1] == pytest.approx(1.9, abs=1e-12)
        assert standard_profile.a0[-1] == pytest.approx(
            area(standard_pool, 1.9), rel=1e-13
        )

    def test_grid_layout(self, standard_profile, standard_pool):
        x = standard_profile.x
        assert x[0] == 0.0
        assert x[-1] == standard_pool.length
        assert len(x) == 101
        assert np.allclose(np.diff(x), x[1] - x[0])
        assert standard_profile.dx == pytest.approx(x[1] - x[0])

    def test_backwater_monotone_above_normal_depth(
        self, standard_profile, standard_pool
    ):
        # h_ref=1.9 sits above normal depth, so depth decays upstream
        levels = standard_profile.levels()
        assert np.all(np.diff(levels) > 0.0)
        assert np.all(levels >= 1.6753761397842242 - 1e-6)

    def test_normal_depth_gives_flat_profile(self, standard_pool):
        h_n = 1.6753761397842242  # depth where friction slope equals bed slope
        a_n = area(standard_pool, h_n)
        assert friction_slope(standard_pool, a_n, 10.0) == pytest.approx(
            standard_pool.s0, rel=1e-10
        )
        prof = solve_steady_profile(standard_pool, q0=10.0, h_ds=h_n)
        assert np.all(np.abs(prof.levels() - h_n) < 1e-10)

    def test_zero_flow_profile_is_horizontal(self, standard_pool):
        prof = solve_steady_profile(standard_pool, q0=0.0)
        surface = prof.levels() + standard_pool.s0 * (
            standard_pool.length - prof.x
        )
        assert np.all(np.abs(surface - surface[-1]) < 1e-10)

    def test_grid_refinement_changes_levels_under_1mm(self, standard_pool):
        coarse = solve_steady_profile(standard_pool, q0=10.0, grid_points=100)
        fine = solve_steady_profile(standard_pool, q0=10.0, grid_points=991)
        h_fine = np.interp(coarse.x, fine.x, fine.levels())
        assert np.max(np.abs(coarse.levels() - h_fine)) < 1e-3

    def test_volume_grid_convergence(self, standard_pool):
        v1 = solve_steady_profile(standard_pool, q0=10.0, grid_points=200).volume
        v2 = solve_steady_profile(standard_pool, q0=10.0, grid_points=400).volume
        assert abs(v2 - v1) / v1 < 1e-4

    def test_a0_gradient_matches_grid_derivative(self, standard_profile):
        grad = standard_profile.a0_gradient()
        fd = np.gradient(standard_profile.a0, standard_profile.x)
        # interior points of a smooth profile
        assert np.allclose(grad[2:-2], fd[2:-2], rtol=1e-3)

    def test_negative_flow_rejected(self, standard_pool):
        with pytest.raises(ConfigError):
            solve_steady_profile(standard_pool, q0=-1.0)

    def test_tiny_grid_rejected(self, standard_pool):
        with pytest.raises(ConfigError):
            solve_steady_profile(standard_pool, q0=10.0, grid_points=3)

    def test_nonpositive_downstream_level_rejected(self, standard_pool):
        with pytest.raises(TranscriticalError):
            solve_steady_profile(standard_pool, q0=10.0, h_ds=0.0)

    def test_profile_drying_out_raises(self, standard_pool):
        # anchor far below normal depth: integration hits critical flow
        with pytest.raises(TranscriticalError):
            solve_steady_profile(standard_pool, q0=10.0, h_ds=0.3)


def test_pool_params_validation():
    with pytest.raises(ConfigError):
        PoolParams(length=-5.0, w_bed=10.0, s_side=0.5, s0=1e-4,
                   n_manning=0.0225, h_ref=1.9)
    with pytest.raises(ConfigError):
        PoolParams(length=5000.0, w_bed=0.0, s_side=0.5, s0=1e-4,
                   n_manning=0.0225, h_ref=1.9)
    with pytest.raises(ConfigError):
        PoolParams(length=5000.0, w_bed=10.0, s_side=-0.1, s0=1e-4,
                   n_manning=0.0225, h_ref=1.9)
    with pytest.raises(ConfigError):
        PoolParams(length=5000.0, w_bed=10.0, s_side=0.5, s0=1e-4,
                   n_manning=0.0, h_ref=1.9)
    with pytest.raises(ConfigError):
        PoolParams(length=5000.0, w_bed=10.0, s_side=0.5, s0=1e-4,
                   n_manning=0.0225, h_ref=0.0)


def test_gravity_constant():
    assert GRAVITY == 9.81
