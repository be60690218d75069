"""Channel-level frequency-domain model and the sequential loop-closing algebra.

The regulated outputs are weighted differences of neighboring pool level
errors: y_n = w_n (href_n - h_n) - w_(n+1) (href_(n+1) - h_(n+1)), n = 1..N-1,
paired with the gate flows u_n. Driving every y_n to zero balances the stored
water: all w_n-scaled errors equalize, so supply-demand mismatch is shared
across pools instead of draining the one that happens to sit next to it.

The plant seen by gate nu_m after the gates closed before it are active is
tracked with the pair (H, J): y = H u_open + J d, updated one rank-one step
per closed loop. The diagonal entry H[nu_m, nu_m] is the design plant G^(m)
for the next tuning step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MarginalStabilityError, NumericalError
from .freqdom import FrequencyGrid, FrequencyResponse, PoolFrequencyResponse


@dataclass(frozen=True)
class ChannelLinearModel:
    """Assembled MIMO response data of an N-pool channel on a shared grid.

    g:  (N-1, N-1, K) gate-flow to weighted-output responses (tridiagonal).
    g_d: (N-1, N+2, K) disturbance to weighted-output responses; disturbance
         l runs over (d_0, d_1, ..., d_N, d_(N+1)) = top inflow, per-pool
         offtakes, bottom outflow.
    """

    pools: tuple[PoolFrequencyResponse, ...]
    weights: np.ndarray
    grid: FrequencyGrid
    g: np.ndarray
    g_d: np.ndarray

    @property
    def n_pools(self) -> int:
        return len(self.pools)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([p.capacity for p in self.pools])


def integrator_gain_at_wmin(values: np.ndarray, grid: FrequencyGrid) -> float:
    """Numeric stand-in for lim s G(s): Re(i w G) at the lowest grid frequency.

    The imaginary residual must stay below 5% of the real part, otherwise the
    response is not integrator-dominated at the bottom of the grid and the
    limit read-off is meaningless.
    """
    sg = 1j * grid.omega[0] * values[0]
    if abs(sg.imag) > 0.05 * abs(sg.real):
        raise NumericalError(
            f"not integrator-dominated at omega_min: s*G = {sg:.6e}"
        )
    return float(sg.real)


def assemble_channel(
    pool_responses: list[PoolFrequencyResponse] | tuple[PoolFrequencyResponse, ...],
    weights: np.ndarray | None = None,
) -> ChannelLinearModel:
    """Build the weighted MIMO model from per-pool boundary responses.

    Gate n moves pool n's outflow and pool n+1's inflow, so row n of g has
    w_(n+1) G_in,(n+1) - w_n G_out,n on the diagonal and couples only to the
    neighboring gates. Disturbances enter each pool the same way the gate
    flows do, giving g_d its three-band structure.
    """
    pools = tuple(pool_responses)
    n = len(pools)
    if n < 2:
        raise ConfigError("a channel needs at least 2 pools")
    base = pools[0].grid.omega
    for pr in pools[1:]:
        if not np.array_equal(pr.grid.omega, base):
            raise ConfigError("all pool responses must share one frequency grid")
    if weights is None:
        weights = np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ConfigError(f"weights must be {n} positive numbers")

    grid = pools[0].grid
    k = grid.n
    gin = [pr.g_in.values for pr in pools]
    gout = [pr.g_out.values for pr in pools]

    g = np.zeros((n - 1, n - 1, k), dtype=complex)
    g_d = np.zeros((n - 1, n + 2, k), dtype=complex)
    for i in range(n - 1):  # gate i+1, 1-indexed
        g[i, i] = w[i + 1] * gin[i + 1] - w[i] * gout[i]
        if i + 1 <= n - 2:
            g[i, i + 1] = w[i + 1] * gout[i + 1]
        if i - 1 >= 0:
            g[i, i - 1] = -w[i] * gin[i]
        if i == 0:
            g_d[0, 0] = -w[0] * gin[0]
        g_d[i, i + 1] = -w[i] * gout[i]
        g_d[i, i + 2] = w[i + 1] * gout[i + 1]
        if i == n - 2:
            g_d[i, n + 1] = w[i + 1] * gout[i + 1]
    return ChannelLinearModel(pools=pools, weights=w, grid=grid, g=g, g_d=g_d)


def _check_order(order, n_gates: int) -> tuple[int, ...]:
    order = tuple(int(v) for v in order)
    if sorted(order) != list(range(1, n_gates + 1)):
        raise ConfigError(f"order must be a permutation of 1..{n_gates}, got {order}")
    return order


def closed_form_step_gain(order, m: int, capacities: np.ndarray) -> float:
    """Closed-form integrator residue of the step-m design plant G^(m).

    With unit weights, closing loops spreads each gate's action over the
    maximal contiguous runs of already-designed gates on either side:
    1/sum(c_us..c_num) + 1/sum(c_(num+1)..c_(mds+1)). Gate indices and m are
    1-based; capacities has one entry per pool.
    """
    caps = np.asarray(capacities, dtype=float)
    order = _check_order(order, len(caps) - 1)
    if not 1 <= m <= len(order):
        raise ConfigError(f"step m must be in 1..{len(order)}")
    nu_m = order[m - 1]
    closed = set(order[:m])
    mu_us = nu_m
    while mu_us - 1 in closed:
        mu_us -= 1
    mu_ds = nu_m
    while mu_ds + 1 in closed:
        mu_ds += 1
    upstream = float(np.sum(caps[mu_us - 1 : nu_m]))
    downstream = float(np.sum(caps[nu_m : mu_ds + 1]))
    return 1.0 / upstream + 1.0 / downstream


@dataclass(frozen=True)
class PartialClosedLoop:
    """(H, J) response pair after the first m loops of the order are closed."""

    channel: ChannelLinearModel
    order: tuple[int, ...]
    m: int
    h: np.ndarray
    j: np.ndarray
    comp_values: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def next_gate(self) -> int:
        if self.m >= len(self.order):
            raise ConfigError("all loops are already closed")
        return self.order[self.m]

    def target_values(self) -> np.ndarray:
        """G^(m+1): the plant the next gate in the order sees."""
        i = self.next_gate - 1
        return self.h[i, i]

    def target_response(self) -> FrequencyResponse:
        vals = self.target_values()
        return FrequencyResponse(
            grid=self.channel.grid,
            values=vals,
            integrator_gain=integrator_gain_at_wmin(vals, self.channel.grid),
        )


def open_partial(channel: ChannelLinearModel, order) -> PartialClosedLoop:
    order = _check_order(order, channel.n_pools - 1)
    return PartialClosedLoop(
        channel=channel, order=order, m=0, h=channel.g.copy(), j=channel.g_d.copy()
    )


def close_one_loop(p: PartialClosedLoop, comp_values: np.ndarray) -> PartialClosedLoop:
    """Close the next loop in the order with the given compensator samples.

    Rank-one update per frequency: with S = 1/(1 - G^(m) C), the closed row
    becomes S times itself, every other row k gains H[k, gate] C times the
    new row, and the gate's column is zeroed (that input is no longer free).
    """
    gate = p.next_gate
    i = gate - 1
    c = np.asarray(comp_values)
    if c.shape != (p.channel.grid.n,):
        raise ConfigError("compensator samples must match the channel grid")

    den = 1.0 - p.h[i, i] * c
    scale = 1.0 + np.abs(p.h[i, i] * c)
    if np.any(np.abs(den) < 1e-12 * scale):
        raise MarginalStabilityError(
            f"loop {gate}: 1 - G C vanishes on the grid; closed loop is marginal"
        )
    s_fac = 1.0 / den
    # feedback enters every row through the gate's INPUT column of H,
    # regardless of which matrix is being updated
    mult = p.h[:, i] * c  # (rows, K)

    def update(mat: np.ndarray) -> np.ndarray:
        new_row = s_fac * mat[i]  # (cols, K)
        out = mat + mult[:, None, :] * new_row[None, :, :]
        out[i] = new_row
        return out

    h_new = update(p.h)
    j_new = update(p.j)
    h_new[:, i, :] = 0.0
    comps = dict(p.comp_values)
    comps[gate] = c.copy()
    return PartialClosedLoop(
        channel=p.channel, order=p.order, m=p.m + 1, h=h_new, j=j_new, comp_values=comps
    )


def partial_closed_loop_direct(
    channel: ChannelLinearModel, comp_values: dict[int, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """(H, J) evaluated directly from the one-shot block formula.

    H = Gt + G[:, closed] C (I - G[closed, closed] C)^-1 Gt[closed, :], with
    Gt equal to G with the closed columns zeroed (same formula gives J from
    g_d without any zeroing). Exists to cross-check the recursion.
    """
    k = channel.grid.n
    idx = sorted(g - 1 for g in comp_values)
    c_arr = np.stack([comp_values[g + 1] for g in idx])  # (m, K)

    g = channel.g
    gt = g.copy()
    gt[:, idx, :] = 0.0

    # batched over frequency: (K, m, m) inner inverse
    gcc = np.transpose(g[np.ix_(idx, idx)], (2, 0, 1))
    cmat = np.zeros((k, len(idx), len(idx)), dtype=complex)
    for a, _ in enumerate(idx):
        cmat[:, a, a] = c_arr[a]
    inner = np.eye(len(idx)) - gcc @ cmat

    gcols = np.transpose(g[:, idx, :], (2, 0, 1))  # (K, n-1, m)
    gt_rows = np.transpose(gt[idx, :, :], (2, 0, 1))  # (K, m, n-1)
    jd_rows = np.transpose(channel.g_d[idx, :, :], (2, 0, 1))

    lead = gcols @ cmat @ np.linalg.inv(inner)
    h = np.transpose(np.transpose(gt, (2, 0, 1)) + lead @ gt_rows, (1, 2, 0))
    j = np.transpose(np.transpose(channel.g_d, (2, 0, 1)) + lead @ jd_rows, (1, 2, 0))
    return h, j


def level_maps(channel: ChannelLinearModel) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted pool-level responses: (to gate flows, to disturbances).

    Returns (gh_u, gh_d) with shapes (N, N-1, K) and (N, N+2, K). These are
    physical levels, independent of the output weights.
    """
    n = channel.n_pools
    k = channel.grid.n
    gin = [pr.g_in.values for pr in channel.pools]
    gout = [pr.g_out.values for pr in channel.pools]
    gh_u = np.zeros((n, n - 1, k), dtype=complex)
    gh_d = np.zeros((n, n + 2, k), dtype=complex)
    for pool in range(n):
        if pool >= 1:
            gh_u[pool, pool - 1] = gin[pool]
        if pool <= n - 2:
            gh_u[pool, pool] = gout[pool]
        gh_d[pool, pool + 1] = gout[pool]  # offtake draws at the pool's downstream end
    gh_d[0, 0] = gin[0]
    gh_d[n - 1, n + 1] = gout[n - 1]
    return gh_u, gh_d


def closed_loop_level_response(
    channel: ChannelLinearModel, comp_values: dict[int, np.ndarray]
) -> np.ndarray:
    """Disturbance-to-level responses with every loop closed: (N, N+2, K).

    h = gh_d + gh_u C (I - G C)^-1 g_d, solved frequency by frequency.
    Requires a compensator for every gate.
    """
    n = channel.n_pools
    if sorted(comp_values) != list(range(1, n)):
        raise ConfigError("need compensator samples for every gate 1..N-1")
    k = channel.grid.n
    c_arr = np.stack([comp_values[g] for g in range(1, n)])  # (N-1, K)

    gc = channel.g * c_arr[None, :, :]  # column j scaled by C_j
    m = np.eye(n - 1)[None, :, :] - np.transpose(gc, (2, 0, 1))  # (K, N-1, N-1)
    rhs = np.transpose(channel.g_d, (2, 0, 1))  # (K, N-1, N+2)
    x = np.linalg.solve(m, rhs)  # closed-loop y response to d
    u = np.transpose(x, (1, 2, 0)) * c_arr[:, None, :]  # gate responses (N-1, N+2, K)

    gh_u, gh_d = level_maps(channel)
    t = gh_d + np.einsum("pgk,gdk->pdk", gh_u, u)
    return t


def closed_loop_disturbance_gain(
    channel: ChannelLinearModel,
    comp_values: dict[int, np.ndarray],
    disturbance: int,
    pool: int,
) -> float:
    """lim s T(s) from disturbance l (0..N+1) to pool level k (1..N)."""
    n = channel.n_pools
    if not 0 <= disturbance <= n + 1:
        raise ConfigError(f"disturbance index must be 0..{n + 1}")
    if not 1 <= pool <= n:
        raise ConfigError(f"pool index must be 1..{n}")
    t = closed_loop_level_response(channel, comp_values)
    return integrator_gain_at_wmin(t[pool - 1, disturbance], channel.grid)
