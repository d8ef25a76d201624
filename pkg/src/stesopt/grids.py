"""Fine (hourly) and coarse (daily) discretization grids."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class GridSpec:
    """Fine grid for controls and battery, coarse grid for slow thermal states.

    The averaging window equals the coarse step, so the fine count must be
    a whole multiple of the fine-per-coarse factor.
    """

    n_fine: int = 8760
    fine_step_s: float = 3600.0
    fine_per_coarse: int = 24

    def __post_init__(self):
        if self.n_fine < 1 or self.fine_step_s <= 0.0 or self.fine_per_coarse < 1:
            raise ConfigError("grid sizes must be positive")
        if self.n_fine % self.fine_per_coarse != 0:
            raise ConfigError(
                f"fine grid ({self.n_fine}) must be divisible by the averaging "
                f"window ({self.fine_per_coarse})")

    @property
    def n_coarse(self) -> int:
        return self.n_fine // self.fine_per_coarse

    @property
    def coarse_step_s(self) -> float:
        return self.fine_step_s * self.fine_per_coarse

    @property
    def horizon_s(self) -> float:
        return self.n_fine * self.fine_step_s

    @property
    def hours(self) -> float:
        return self.horizon_s / 3600.0
