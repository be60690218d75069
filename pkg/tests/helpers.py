"""Reference implementations shared by several test modules.

These are deliberately independent of the package internals: the linear
simulator integrates the linearized wave model with scipy's generic ODE
solver rather than reusing the package's stepping code.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from poolbalance.hydraulics import top_width


def linear_level_deviation(model, q_in_dev, q_out_dev, t_eval):
    """Downstream-level deviation of one pool's linearized dynamics.

    Method-of-lines integration: finite-volume mass balance with half
    cells at the ends, centered differences for the momentum row, and
    boundary discharges pinned to the given step deviations.
    """
    b, c = model.b, model.c
    dx = model.profile.dx
    n = b.shape[0]

    def rhs(t, z):
        a = z[:n]
        q = z[n:].copy()
        q[0], q[-1] = q_in_dev, q_out_dev
        flux = 0.5 * (q[:-1] + q[1:])
        da = np.empty_like(a)
        da[0] = -(flux[0] - q[0]) / (0.5 * dx)
        da[1:-1] = -(flux[1:] - flux[:-1]) / dx
        da[-1] = -(q[-1] - flux[-1]) / (0.5 * dx)
        dadx = (a[2:] - a[:-2]) / (2.0 * dx)
        dqdx = (q[2:] - q[:-2]) / (2.0 * dx)
        dq = np.zeros_like(q)
        dq[1:-1] = (
            -b[1:-1, 1, 0] * dadx
            - b[1:-1, 1, 1] * dqdx
            + c[1:-1, 1, 0] * a[1:-1]
            + c[1:-1, 1, 1] * q[1:-1]
        )
        return np.concatenate([da, dq])

    z0 = np.zeros(2 * n)
    sol = solve_ivp(
        rhs,
        (float(t_eval[0]), float(t_eval[-1])),
        z0,
        t_eval=t_eval,
        method="RK45",
        rtol=1e-7,
        atol=1e-10,
    )
    a_ds = sol.y[n - 1]
    w_surf = top_width(model.profile.params, model.profile.levels()[-1])
    return a_ds / w_surf
