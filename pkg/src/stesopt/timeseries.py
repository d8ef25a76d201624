"""Hourly exogenous data: ingestion, PV conversion, and heat-load synthesis.

All series live on a fixed hourly grid covering one periodic cycle
(8760 samples for a full year). The heating demand is synthesized from
ambient temperature: space heating follows the shortfall of a 1-day
moving-average "effective" temperature below a threshold, and domestic
hot water follows a repeated daily double-Gaussian tap profile. Both are
rescaled linearly so their annual integrals hit configured energy targets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError

HOURS_PER_YEAR = 8760
HOURS_PER_DAY = 24
SECONDS_PER_HOUR = 3600.0

VALID_UNITS = ("W", "degC", "W/m2")

TEMP_MIN_C = -60.0
TEMP_MAX_C = 60.0


@dataclass(frozen=True)
class HourlySeries:
    """Fixed-step hourly sample sequence with a declared unit."""

    values: np.ndarray
    unit: str
    start: str = "1970-01-01T00:00"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.unit not in VALID_UNITS:
            raise ConfigError(f"unknown unit {self.unit!r}, expected one of {VALID_UNITS}")
        if vals.ndim != 1 or vals.size == 0:
            raise DataError("series must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise DataError(f"non-finite sample at index {bad}")
        if self.unit == "degC":
            if vals.min() < TEMP_MIN_C or vals.max() > TEMP_MAX_C:
                bad = int(np.flatnonzero((vals < TEMP_MIN_C) | (vals > TEMP_MAX_C))[0])
                raise DataError(
                    f"temperature sample {vals[bad]:.2f} degC at index {bad} outside "
                    f"[{TEMP_MIN_C}, {TEMP_MAX_C}]"
                )
        else:
            if vals.min() < 0.0:
                bad = int(np.flatnonzero(vals < 0.0)[0])
                raise DataError(f"negative power sample at index {bad}")

    def __len__(self):
        return self.values.size

    def with_values(self, values: np.ndarray) -> "HourlySeries":
        return replace(self, values=values)


@dataclass(frozen=True)
class PvModuleParams:
    """Flat-plate PV module parameters (per m2 of module area)."""

    eta_ref: float = 0.232
    beta_ref: float = -0.0029          # 1/degC, negative: output drops when hot
    t_ref: float = 25.0                # degC
    performance_ratio: float = 0.9
    tilt_deg: float = 30.0
    c1: float = -3.75                  # degC
    c2: float = 1.14
    c3: float = 0.0175                 # degC m2 / W

    def __post_init__(self):
        if not 0.0 < self.eta_ref < 1.0:
            raise ConfigError("eta_ref must be in (0, 1)")
        if not 0.0 < self.performance_ratio <= 1.0:
            raise ConfigError("performance_ratio must be in (0, 1]")
        if self.beta_ref >= 0.0:
            raise ConfigError("beta_ref must be negative")


@dataclass(frozen=True)
class HeatLoadParams:
    """Space-heating and domestic-hot-water demand parameters.

    ``sh_scale`` (W/K) and ``dhw_scale`` (W) may be given explicitly;
    when ``None`` they are calibrated so the annual integrals match
    ``annual_sh_target_wh`` / ``annual_dhw_target_wh``.
    """

    border_temp_c: float = 12.0
    room_temp_c: float = 20.0
    sh_scale: float | None = None
    dhw_scale: float | None = None
    morning_peak_hour: float = 7.0
    morning_sigma_h: float = 1.5
    evening_peak_hour: float = 19.0
    evening_sigma_h: float = 2.0
    annual_sh_target_wh: float = 34e9
    annual_dhw_target_wh: float = 17e9

    def __post_init__(self):
        if self.border_temp_c >= self.room_temp_c:
            raise ConfigError("border temperature must lie below room temperature")
        if self.morning_sigma_h <= 0 or self.evening_sigma_h <= 0:
            raise ConfigError("peak widths must be positive")
        if self.annual_sh_target_wh <= 0 or self.annual_dhw_target_wh <= 0:
            raise ConfigError("annual energy targets must be positive")


def load_csv(path, unit: str, expected_len: int = HOURS_PER_YEAR) -> HourlySeries:
    """Read a ``timestamp,value`` CSV into a validated series.

    Errors carry 1-based file row numbers (the header is row 1).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        cols = [c.strip().lower() for c in header]
        if "timestamp" not in cols or "value" not in cols:
            raise DataError(f"{path}: header must declare 'timestamp' and 'value' columns")
        t_col, v_col = cols.index("timestamp"), cols.index("value")
        stamps, values = [], []
        for i, row in enumerate(reader):
            rowno = i + 2
            if len(row) <= max(t_col, v_col):
                raise DataError(f"{path}: row {rowno}: expected {len(cols)} columns")
            raw = row[v_col].strip()
            try:
                val = float(raw)
            except ValueError:
                raise DataError(f"{path}: row {rowno}: non-numeric value {raw!r}") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: row {rowno}: non-finite value {raw!r}")
            stamps.append(row[t_col].strip())
            values.append(val)
    if len(values) != expected_len:
        raise DataError(f"{path}: expected {expected_len} samples, found {len(values)}")
    vals = np.asarray(values)
    try:
        return HourlySeries(vals, unit, start=stamps[0] if stamps else "")
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_csv(path, series: HourlySeries, start_hour: int = 0) -> None:
    """Emit a series in the same ``timestamp,value`` layout ``load_csv`` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for k, v in enumerate(series.values):
            writer.writerow([f"{start_hour + k}h", repr(float(v))])


def pv_power(ghi: HourlySeries, t_amb: HourlySeries, params: PvModuleParams) -> HourlySeries:
    """Module-area-specific PV output (W/m2) from horizontal irradiance.

    Tilted-plane irradiance is approximated by dividing GHI by the cosine
    of the tilt angle; the cell temperature model is linear in ambient
    temperature and irradiance.
    """
    if len(ghi) != len(t_amb):
        raise DataError(f"length mismatch: ghi has {len(ghi)}, t_amb has {len(t_amb)}")
    gsi = ghi.values / math.cos(math.radians(params.tilt_deg))
    t_cell = params.c1 + params.c2 * t_amb.values + params.c3 * gsi
    out = gsi * params.eta_ref * (1.0 + params.beta_ref * (t_cell - params.t_ref))
    out = np.maximum(out * params.performance_ratio, 0.0)
    return HourlySeries(out, "W/m2", start=ghi.start)


def effective_temperature(t_amb: HourlySeries) -> HourlySeries:
    """Trailing 24 h moving average, wrapping periodically at the cycle edge."""
    n = len(t_amb)
    if n < HOURS_PER_DAY:
        raise DataError(f"need at least {HOURS_PER_DAY} samples, got {n}")
    x = t_amb.values
    padded = np.concatenate([x[-(HOURS_PER_DAY - 1):], x])
    kernel = np.full(HOURS_PER_DAY, 1.0 / HOURS_PER_DAY)
    out = np.convolve(padded, kernel, mode="valid")
    return t_amb.with_values(out)


def space_heating_scale(t_eff: HourlySeries, params: HeatLoadParams) -> float:
    """Linear scale (W/K) making the annual space-heating integral hit target."""
    shortfall = _sh_shortfall(t_eff.values, params)
    raw_wh = shortfall.sum()  # 1 h steps: W * h = Wh
    if raw_wh <= 0.0:
        raise DataError(
            "space-heating calibration impossible: effective temperature never "
            f"falls below {params.border_temp_c} degC"
        )
    return params.annual_sh_target_wh / raw_wh


def _sh_shortfall(t_eff: np.ndarray, params: HeatLoadParams) -> np.ndarray:
    return np.where(t_eff < params.border_temp_c, params.room_temp_c - t_eff, 0.0)


def space_heating(t_eff: HourlySeries, params: HeatLoadParams) -> HourlySeries:
    """Space-heating demand (W): scale times room-temperature shortfall."""
    scale = params.sh_scale if params.sh_scale is not None else space_heating_scale(t_eff, params)
    return HourlySeries(scale * _sh_shortfall(t_eff.values, params), "W", start=t_eff.start)


def dhw_daily_profile(params: HeatLoadParams, n_hours: int = HOURS_PER_DAY) -> np.ndarray:
    """Unscaled daily tap profile sampled at interval midpoints."""
    tau = np.arange(n_hours) + 0.5
    morning = np.exp(-((tau - params.morning_peak_hour) ** 2) / (2 * params.morning_sigma_h**2))
    evening = np.exp(-((tau - params.evening_peak_hour) ** 2) / (2 * params.evening_sigma_h**2))
    return morning + evening


def dhw_demand(params: HeatLoadParams, n_hours: int = HOURS_PER_YEAR) -> HourlySeries:
    """Domestic hot water demand (W), daily profile tiled over the cycle."""
    if n_hours % HOURS_PER_DAY != 0:
        raise ConfigError("cycle length must be whole days")
    day = dhw_daily_profile(params)
    profile = np.tile(day, n_hours // HOURS_PER_DAY)
    if params.dhw_scale is not None:
        scale = params.dhw_scale
    else:
        scale = params.annual_dhw_target_wh / profile.sum()
    return HourlySeries(scale * profile, "W")


def total_heat_load(sh: HourlySeries, dhw: HourlySeries) -> HourlySeries:
    """Pointwise sum of space heating and hot-water demand."""
    if len(sh) != len(dhw):
        raise DataError(f"length mismatch: sh has {len(sh)}, dhw has {len(dhw)}")
    return HourlySeries(sh.values + dhw.values, "W", start=sh.start)


def annual_energy_wh(series: HourlySeries) -> float:
    """Integral of an hourly power series over its cycle, in Wh."""
    return float(series.values.sum())
