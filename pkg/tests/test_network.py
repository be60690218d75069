"""Channel-level MIMO assembly and sequential loop closing."""

from __future__ import annotations

import numpy as np
import pytest

from poolbalance import (
    assemble_channel,
    close_one_loop,
    closed_form_step_gain,
    make_uniform_channel,
    open_partial,
    pool_frequency_response,
    solve_steady_profile,
)
from poolbalance.errors import ConfigError, MarginalStabilityError
from poolbalance.network import (
    closed_loop_disturbance_gain,
    closed_loop_level_response,
    integrator_gain_at_wmin,
    level_maps,
    partial_closed_loop_direct,
)
from poolbalance.scenarios import build_linear_channel, nominal_pool_flows


def comp_samples(ns, gates=None):
    """Frequency samples of a design's compensators, keyed by gate."""
    omega = ns.channel.grid.omega
    gates = gates or sorted(ns.design.compensators)
    return {g: ns.design.compensators[g].frequency_response(omega) for g in gates}


class TestAssembly:
    def test_two_pool_structure(self, uniform2):
        ch = uniform2.channel
        assert ch.g.shape == (1, 1, 240)
        assert ch.g_d.shape == (1, 4, 240)
        p1, p2 = ch.pools
        expect = p2.g_in.values - p1.g_out.values
        assert np.allclose(ch.g[0, 0], expect, rtol=1e-12)

    def test_two_pool_open_loop_gain(self, uniform2):
        ch = uniform2.channel
        c1, c2 = ch.capacities
        kappa = integrator_gain_at_wmin(ch.g[0, 0], ch.grid)
        assert kappa == pytest.approx(1.0 / c1 + 1.0 / c2, rel=0.01)

    def test_doubling_weights_doubles_entries(self, uniform2):
        responses = [p for p in uniform2.channel.pools]
        base = assemble_channel(responses)
        dbl = assemble_channel(responses, weights=np.full(2, 2.0))
        assert np.allclose(dbl.g, 2.0 * base.g, rtol=1e-12)
        assert np.allclose(dbl.g_d, 2.0 * base.g_d, rtol=1e-12)

    def test_three_pool_disturbance_sparsity(self, uniform3):
        gd = uniform3.channel.g_d
        nonzero = {
            (r, c)
            for r in range(gd.shape[0])
            for c in range(gd.shape[1])
            if np.any(gd[r, c] != 0.0)
        }
        assert nonzero == {(0, 0), (0, 1), (0, 2), (1, 2), (1, 3), (1, 4)}

    def test_tridiagonal_gate_map(self, uniform5):
        g = uniform5.channel.g
        n = g.shape[0]
        for r in range(n):
            for c in range(n):
                if abs(r - c) > 1:
                    assert np.all(g[r, c] == 0.0)
                else:
                    assert np.any(g[r, c] != 0.0)

    def test_rejects_single_pool(self, standard_response):
        with pytest.raises(ConfigError):
            assemble_channel([standard_response])

    def test_rejects_bad_weights(self, uniform2):
        pools = uniform2.channel.pools
        with pytest.raises(ConfigError):
            assemble_channel(pools, weights=np.array([1.0, -1.0]))
        with pytest.raises(ConfigError):
            assemble_channel(pools, weights=np.ones(3))

    def test_rejects_mismatched_grids(self, standard_profile):
        from poolbalance.freqdom import FrequencyGrid

        g1 = FrequencyGrid(np.geomspace(1e-6, 1e-1, 240))
        g2 = FrequencyGrid(np.geomspace(1e-6, 1e-1, 120))
        r1 = pool_frequency_response(standard_profile, g1)
        r2 = pool_frequency_response(standard_profile, g2)
        with pytest.raises(ConfigError):
            assemble_channel([r1, r2])


class TestStepGainFormula:
    def test_first_step_uses_adjacent_pools(self):
        caps = [1e4, 2e4, 3e4, 4e4]
        assert closed_form_step_gain((2, 1, 3), 1, caps) == pytest.approx(
            1.0 / 2e4 + 1.0 / 3e4
        )

    def test_contiguous_runs_merge(self):
        caps = [1e4, 2e4, 3e4, 4e4]
        # closing gate 2 after gate 1: pools {1,2} upstream, {3} downstream
        assert closed_form_step_gain((1, 2, 3), 2, caps) == pytest.approx(
            1.0 / (1e4 + 2e4) + 1.0 / 3e4
        )
        # last step joins everything
        assert closed_form_step_gain((1, 2, 3), 3, caps) == pytest.approx(
            1.0 / (1e4 + 2e4 + 3e4) + 1.0 / 4e4
        )

    def test_isolated_middle_gate(self):
        caps = [1e4, 2e4, 3e4, 4e4]
        # gate 2 first: no neighbors closed yet
        assert closed_form_step_gain((2, 1, 3), 1, caps) == pytest.approx(
            1.0 / 2e4 + 1.0 / 3e4
        )
        # then gate 1: downstream run is {2,3} through closed gate 2
        assert closed_form_step_gain((2, 1, 3), 2, caps) == pytest.approx(
            1.0 / 1e4 + 1.0 / (2e4 + 3e4)
        )

    def test_measured_gain_tracks_formula(self, uniform3):
        ch = uniform3.channel
        caps = ch.capacities
        part = open_partial(ch, (1, 2))
        k1 = integrator_gain_at_wmin(part.target_values(), ch.grid)
        assert k1 == pytest.approx(
            closed_form_step_gain((1, 2), 1, caps), rel=0.01
        )
        cv = comp_samples(uniform3)
        part = close_one_loop(part, cv[1])
        k2 = integrator_gain_at_wmin(part.target_values(), ch.grid)
        assert k2 == pytest.approx(
            closed_form_step_gain((1, 2), 2, caps), rel=0.01
        )


class TestPartialClosedLoop:
    def test_opening_exposes_the_full_plant(self, uniform3):
        part = open_partial(uniform3.channel, (1, 2))
        assert part.m == 0
        assert part.next_gate == 1
        assert np.allclose(part.target_values(), uniform3.channel.g[0, 0])

    def test_recursion_matches_block_formula(self, uniform5):
        ch = uniform5.channel
        order = (2, 4, 1, 3)
        design = __import__("poolbalance").design_all(ch, order, 50.0)
        omega = ch.grid.omega
        cv = {g: design.compensators[g].frequency_response(omega) for g in order}
        part = open_partial(ch, order)
        for k, g in enumerate(order):
            part = close_one_loop(part, cv[g])
            closed = {gg: cv[gg] for gg in order[: k + 1]}
            h_d, j_d = partial_closed_loop_direct(ch, closed)
            scale_h = np.max(np.abs(h_d))
            scale_j = np.max(np.abs(j_d))
            assert np.max(np.abs(part.h - h_d)) <= 1e-8 * scale_h
            assert np.max(np.abs(part.j - j_d)) <= 1e-8 * scale_j

    def test_all_loops_closed_leaves_no_free_plant(self, uniform3):
        cv = comp_samples(uniform3)
        part = open_partial(uniform3.channel, (1, 2))
        for g in (1, 2):
            part = close_one_loop(part, cv[g])
        assert np.max(np.abs(part.h)) == 0.0
        with pytest.raises(ConfigError):
            part.next_gate

    def test_disturbance_path_vanishes_at_origin(self, uniform3):
        cv = comp_samples(uniform3)
        part = open_partial(uniform3.channel, (1, 2))
        for g in (1, 2):
            part = close_one_loop(part, cv[g])
        jmag = np.abs(part.j)
        assert np.all(jmag[:, :, 0] < jmag[:, :, 8])

    def test_remaining_target_is_integrator_like(self, uniform3):
        cv = comp_samples(uniform3)
        part = open_partial(uniform3.channel, (1, 2))
        part = close_one_loop(part, cv[1])
        vals = np.abs(part.target_values())
        w = uniform3.channel.grid.omega
        slope = (np.log(vals[8]) - np.log(vals[0])) / (np.log(w[8]) - np.log(w[0]))
        assert -1.1 < slope < -0.9

    def test_two_pool_scalar_oracle(self, uniform2):
        ch = uniform2.channel
        cv = comp_samples(uniform2)
        part = close_one_loop(open_partial(ch, (1,)), cv[1])
        denom = 1.0 - ch.g[0, 0] * cv[1]
        assert np.allclose(part.j[0], ch.g_d[0] / denom[None, :], rtol=1e-10)

    def test_marginal_compensator_rejected(self, uniform2):
        ch = uniform2.channel
        inverse = 1.0 / ch.g[0, 0]  # makes 1 - G C exactly zero
        with pytest.raises(MarginalStabilityError):
            close_one_loop(open_partial(ch, (1,)), inverse)

    def test_sample_shape_checked(self, uniform2):
        with pytest.raises(ConfigError):
            close_one_loop(open_partial(uniform2.channel, (1,)), np.ones(7))

    def test_bad_order_rejected(self, uniform3):
        with pytest.raises(ConfigError):
            open_partial(uniform3.channel, (1, 1))
        with pytest.raises(ConfigError):
            open_partial(uniform3.channel, (1, 2, 3))


class TestClosedLoopLevels:
    def test_level_map_shapes(self, uniform3):
        gh_u, gh_d = level_maps(uniform3.channel)
        assert gh_u.shape == (3, 2, 240)
        assert gh_d.shape == (3, 5, 240)

    def test_supply_gain_is_shared_capacity(self, uniform3):
        ch = uniform3.channel
        cv = comp_samples(uniform3)
        total = np.sum(ch.capacities)
        for pool in (1, 2, 3):
            gain = closed_loop_disturbance_gain(ch, cv, 0, pool)
            assert gain == pytest.approx(1.0 / total, rel=0.01)

    def test_offtake_gain_is_negative_shared_capacity(self, uniform3):
        ch = uniform3.channel
        cv = comp_samples(uniform3)
        total = np.sum(ch.capacities)
        for dist in (1, 2, 3, 4):
            gain = closed_loop_disturbance_gain(ch, cv, dist, 2)
            assert gain == pytest.approx(-1.0 / total, rel=0.01)

    def test_design_report_gains(self, uniform3):
        gains = uniform3.design.steady_disturbance_gains
        total = np.sum(uniform3.channel.capacities)
        assert gains.shape == (3, 5)
        assert np.allclose(gains[:, 0], 1.0 / total, rtol=0.01)
        assert np.allclose(gains[:, 1:], -1.0 / total, rtol=0.01)

    def test_requires_every_gate(self, uniform3):
        cv = comp_samples(uniform3)
        del cv[2]
        with pytest.raises(ConfigError):
            closed_loop_level_response(uniform3.channel, cv)

    def test_disturbance_index_bounds(self, uniform3):
        cv = comp_samples(uniform3)
        with pytest.raises(ConfigError):
            closed_loop_disturbance_gain(uniform3.channel, cv, 6, 1)
        with pytest.raises(ConfigError):
            closed_loop_disturbance_gain(uniform3.channel, cv, 0, 0)


def test_nominal_pool_flows_match_offtakes():
    cfg = make_uniform_channel(3, q_top=10.0)
    flows = nominal_pool_flows(cfg)
    profs = [
        solve_steady_profile(p, q, grid_points=40)
        for p, q in zip(cfg.pools, flows)
    ]
    assert all(pr.q0 > 0 for pr in profs)
    assert flows[0] == pytest.approx(10.0)
    assert np.all(np.diff(flows) <= 0.0)  # offtakes only remove water
