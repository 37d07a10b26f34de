"""Phase trajectories: T x M matrices of RIS phases in [0, 2*pi)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ris_link import wrap_phase

ORIGINS = ("oracle", "synthetic", "external")


@dataclass
class PhaseTrajectory:
    phases: np.ndarray
    slot_interval: float = 1.0
    origin: str = "synthetic"

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float)
        if phases.ndim == 1:
            phases = phases[:, None]
        if phases.ndim != 2 or phases.shape[0] < 1:
            raise ValueError("trajectory must be a non-empty T x M matrix")
        if not np.all(np.isfinite(phases)):
            raise ValueError("trajectory contains non-finite phases")
        self.phases = wrap_phase(phases)
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")

    def __len__(self) -> int:
        return self.phases.shape[0]

    @property
    def n_elements(self) -> int:
        return self.phases.shape[1]

    def __getitem__(self, item) -> "PhaseTrajectory":
        return PhaseTrajectory(self.phases[item], self.slot_interval, self.origin)

    def extended(self, rows) -> "PhaseTrajectory":
        rows = np.atleast_2d(rows)
        return PhaseTrajectory(np.vstack([self.phases, rows]), self.slot_interval, self.origin)


def as_phases(x) -> np.ndarray:
    """Accept a PhaseTrajectory or a T x M array."""
    if isinstance(x, PhaseTrajectory):
        return x.phases
    arr = np.asarray(x, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr
