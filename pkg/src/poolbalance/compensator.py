"""PI-with-filter compensator shared by the designer and the runtime.

C(s) = -K_p (1 + 1/(T_I s)) / (1 + T_F s): proportional-integral action with
a first-order low-pass, negated because opening a gate further (more flow
downstream) lowers the upstream level that feeds its error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CompensatorParams:
    """Tuned parameters of one gate's water-level controller.

    gate is 1-indexed: gate n sits between pool n and pool n+1.
    """

    gate: int
    k_p: float
    t_i: float
    t_f: float

    def __post_init__(self) -> None:
        if self.gate < 1:
            raise ConfigError(f"gate index must be >= 1, got {self.gate}")
        for name in ("k_p", "t_i", "t_f"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def frequency_response(self, omega: np.ndarray) -> np.ndarray:
        """C(i omega) on the given frequencies (rad/s)."""
        s = 1j * np.asarray(omega, dtype=float)
        return -self.k_p * (1.0 + 1.0 / (self.t_i * s)) / (1.0 + self.t_f * s)
