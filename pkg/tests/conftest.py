"""Shared fixtures.

The expensive objects (steady profiles, frequency sweeps, full channel
designs) are built once per session; tests treat them as read-only.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from poolbalance import (
    ChannelConfig,
    default_grid,
    design_all,
    linearize_pool,
    make_tapered_channel,
    make_uniform_channel,
    pool_frequency_response,
    solve_steady_profile,
)
from poolbalance.hydraulics import PoolParams
from poolbalance.scenarios import build_linear_channel


STANDARD_POOL = PoolParams(
    length=5000.0,
    w_bed=10.0,
    s_side=2.0 / 3.0,
    s0=1e-4,
    n_manning=0.0225,
    h_ref=1.9,
)


@pytest.fixture(scope="session")
def standard_pool() -> PoolParams:
    return STANDARD_POOL


@pytest.fixture(scope="session")
def standard_profile():
    return solve_steady_profile(STANDARD_POOL, q0=10.0)


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def standard_response(standard_profile, grid):
    return pool_frequency_response(standard_profile, grid)


@pytest.fixture(scope="session")
def standard_model(standard_profile):
    return linearize_pool(standard_profile)


def _built(config: ChannelConfig, phi_pm: float = 50.0):
    channel = build_linear_channel(config)
    design = design_all(channel, tuple(range(1, config.n_pools)), phi_pm)
    return SimpleNamespace(config=config, channel=channel, design=design)


@pytest.fixture(scope="session")
def uniform2():
    return _built(make_uniform_channel(2))


@pytest.fixture(scope="session")
def uniform3():
    return _built(make_uniform_channel(3))


@pytest.fixture(scope="session")
def uniform5():
    return _built(make_uniform_channel(5))


@pytest.fixture(scope="session")
def tapered6():
    return _built(make_tapered_channel(6))
