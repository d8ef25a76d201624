"""Continuous-time system model: storage/ground thermals, battery, heat pump, grid.

State layout for the thermal part is ``[T_s,1 .. T_s,M, T_g,1 .. T_g,N]``
in degC with layer 1 on top; the battery state of charge is handled
separately since its dynamics are decoupled and exact under piecewise
constant controls. Temperatures enter the heat-transfer terms only as
differences, so degC and kelvin are interchangeable there; the heat-pump
coefficient of performance is evaluated on absolute temperatures.

Evaluators accept a single state ``(nx,)`` or a batch ``(B, nx)`` and are
pure functions of immutable parameter objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import DynCoeffs

KELVIN_OFFSET = 273.15
LOAD_DELTA_T = 20.0       # K, fixed spread between heating supply and return
SINK_MARGIN_K = 0.5       # evaluation refused closer to the sink temperature


@dataclass(frozen=True)
class HeatPumpParams:
    """Air-source heat pump with a Lorenz-cycle efficiency factor."""

    eta_lorenz: float = 0.5
    sink_temp_c: float = 86.0
    capacity_w: float = 20e6     # thermal, at unit scale

    def __post_init__(self):
        if not 0.0 < self.eta_lorenz <= 1.0:
            raise ConfigError("eta_lorenz must be in (0, 1]")
        if self.capacity_w <= 0.0:
            raise ConfigError("heat pump capacity must be positive")


@dataclass(frozen=True)
class BatteryParams:
    capacity_wh: float = 10e6    # at unit scale
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    c_rate_hours: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.eta_charge <= 1.0 and 0.0 < self.eta_discharge <= 1.0):
            raise ConfigError("battery efficiencies must be in (0, 1]")
        if self.c_rate_hours <= 0.0:
            raise ConfigError("c_rate_hours must be positive")
        if self.capacity_wh <= 0.0:
            raise ConfigError("battery capacity must be positive")

    @property
    def power_limit_per_scale_w(self) -> float:
        """Charge/discharge power bound per unit of the sizing factor."""
        return self.capacity_wh / self.c_rate_hours


@dataclass(frozen=True)
class SystemState:
    """Storage-layer temperatures, ground temperatures, battery state of charge."""

    t_storage: np.ndarray   # (M,) degC, index 0 = top
    t_ground: np.ndarray    # (N,) degC
    soc: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "t_storage", np.asarray(self.t_storage, dtype=float))
        object.__setattr__(self, "t_ground", np.asarray(self.t_ground, dtype=float))

    @property
    def thermal(self) -> np.ndarray:
        return np.concatenate([self.t_storage, self.t_ground])

    @classmethod
    def from_thermal(cls, x: np.ndarray, m: int, soc: float = 0.0) -> "SystemState":
        x = np.asarray(x, dtype=float)
        return cls(t_storage=x[:m], t_ground=x[m:], soc=soc)


@dataclass(frozen=True)
class ControlVector:
    """Five non-negative power flows for one interval (W)."""

    p_hp: float = 0.0
    p_batt_charge: float = 0.0
    p_batt_discharge: float = 0.0
    p_grid_buy: float = 0.0
    p_grid_sell: float = 0.0

    def __post_init__(self):
        if min(self.p_hp, self.p_batt_charge, self.p_batt_discharge,
               self.p_grid_buy, self.p_grid_sell) < 0.0:
            raise ConfigError("control powers must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_hp, self.p_batt_charge, self.p_batt_discharge,
                         self.p_grid_buy, self.p_grid_sell])


N_CONTROLS = 5
IDX_P_HP, IDX_P_BC, IDX_P_BD, IDX_P_GB, IDX_P_GS = range(N_CONTROLS)


def cop(t_amb_c, hp: HeatPumpParams):
    """Coefficient of performance at ambient source temperature (absolute-temperature ratio)."""
    t_amb_c = np.asarray(t_amb_c, dtype=float)
    lift = hp.sink_temp_c - t_amb_c
    if np.any(lift <= 0.0):
        bad = float(np.atleast_1d(t_amb_c)[np.argmax(np.atleast_1d(-lift))])
        raise DomainError(f"ambient temperature {bad:.2f} degC reaches the "
                          f"{hp.sink_temp_c} degC sink")
    out = hp.eta_lorenz * (hp.sink_temp_c + KELVIN_OFFSET) / lift
    return float(out) if out.ndim == 0 else out


def _check_thermal_inputs(x, q_hp, q_load, m, t_hp_c):
    bottom = np.asarray(x)[..., m - 1]
    limit = t_hp_c - SINK_MARGIN_K
    if np.any(bottom > limit):
        worst = float(np.max(bottom))
        raise DomainError(
            f"bottom storage layer at {worst:.2f} degC is within {SINK_MARGIN_K} K "
            f"of the {t_hp_c} degC charging temperature")
    if np.any(np.asarray(q_hp) < 0.0) or np.any(np.asarray(q_load) < 0.0):
        raise DomainError("heat flows must be non-negative")


def hp_flow_shape(x, m: int, t_hp_c: float):
    """Charge-loop temperature shape per storage row and inverse driving gap.

    Returns ``(rho, e)`` with ``rho[..., i]`` multiplying the delivered heat
    rate in storage row ``i`` and ``e = 1/(t_hp - T_bottom)``. For a fully
    mixed store the shape collapses to exactly one.
    """
    x = np.asarray(x, dtype=float)
    e = 1.0 / (t_hp_c - x[..., m - 1])
    rho = np.empty(x.shape[:-1] + (m,))
    if m == 1:
        rho[..., 0] = 1.0
    else:
        rho[..., 0] = (t_hp_c - x[..., 0]) * e
        for i in range(1, m):
            rho[..., i] = (x[..., i - 1] - x[..., i]) * e
    return rho, e


def storage_rhs(x, q_hp, q_load, t_amb_c, co: DynCoeffs, t_hp_c: float,
                check: bool = True) -> np.ndarray:
    """Temperature rates (K/s) for the storage and ground nodes.

    ``x``: (..., m+n) thermal state; ``q_hp``/``q_load``: delivered heat
    rates in W; ``t_amb_c``: lid-side ambient temperature.
    """
    x = np.asarray(x, dtype=float)
    m, n = co.m, co.n
    if check:
        _check_thermal_inputs(x, q_hp, q_load, m, t_hp_c)
    q_hp = np.asarray(q_hp, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    t_amb_c = np.asarray(t_amb_c, dtype=float)

    out = np.zeros_like(x)
    ts = x[..., :m]
    tg0 = x[..., m]
    rho, _ = hp_flow_shape(x, m, t_hp_c)
    w = q_load / LOAD_DELTA_T   # c_p * m_dot of the load loop, W/K

    for i in range(m):
        acc = co.inv_c[i] * q_hp * rho[..., i]
        if i < m - 1:
            acc = acc + co.inv_c[i] * w * (ts[..., i + 1] - ts[..., i])
            acc = acc + co.p_if_dn[i] * (ts[..., i + 1] - ts[..., i])
        else:
            ret = ts[..., 0] - LOAD_DELTA_T  # return enters the bottom layer
            acc = acc + co.inv_c[i] * w * (ret - ts[..., i])
        if i > 0:
            acc = acc + co.p_if_up[i] * (ts[..., i - 1] - ts[..., i])
        if i == 0:
            acc = acc + co.p_top * (t_amb_c - ts[..., 0])
        acc = acc + co.p_sg_s[i] * (tg0 - ts[..., i])
        out[..., i] = acc

    for j in range(n):
        idx = m + j
        nxt = co.t_bc_c if j == n - 1 else x[..., idx + 1]
        acc = co.p_ch_dn[j] * (nxt - x[..., idx])
        if j > 0:
            acc = acc + co.p_ch_up[j] * (x[..., idx - 1] - x[..., idx])
        else:
            for i in range(m):
                acc = acc + co.p_sg_g[i] * (ts[..., i] - tg0)
        out[..., idx] = acc
    return out


def storage_jac_x(x, q_hp, q_load, co: DynCoeffs, t_hp_c: float) -> np.ndarray:
    """State Jacobian of :func:`storage_rhs`, shape (..., m+n, m+n)."""
    x = np.asarray(x, dtype=float)
    m, n = co.m, co.n
    nx = m + n
    q_hp = np.asarray(q_hp, dtype=float)
    w = np.asarray(q_load, dtype=float) / LOAD_DELTA_T
    rho, e = hp_flow_shape(x, m, t_hp_c)

    jac = np.zeros(x.shape[:-1] + (nx, nx))
    for i in range(m):
        # conduction and wall coupling
        if i > 0:
            jac[..., i, i - 1] += co.p_if_up[i]
            jac[..., i, i] -= co.p_if_up[i]
        if i < m - 1:
            jac[..., i, i + 1] += co.p_if_dn[i]
            jac[..., i, i] -= co.p_if_dn[i]
        jac[..., i, m] += co.p_sg_s[i]
        jac[..., i, i] -= co.p_sg_s[i]
        if i == 0:
            jac[..., 0, 0] -= co.p_top
        # load loop (for m == 1 the two terms cancel: fixed 20 K extraction)
        if i < m - 1:
            jac[..., i, i + 1] += co.inv_c[i] * w
            jac[..., i, i] -= co.inv_c[i] * w
        else:
            jac[..., i, 0] += co.inv_c[i] * w
            jac[..., i, i] -= co.inv_c[i] * w
        # charge loop
        if m > 1:
            scale = co.inv_c[i] * q_hp
            if i == 0:
                jac[..., 0, 0] += scale * (-e)
            else:
                jac[..., i, i - 1] += scale * e
                jac[..., i, i] += scale * (-e)
            jac[..., i, m - 1] += scale * rho[..., i] * e
    for j in range(n):
        idx = m + j
        jac[..., idx, idx] -= co.p_ch_dn[j]
        if j < n - 1:
            jac[..., idx, idx + 1] += co.p_ch_dn[j]
        if j > 0:
            jac[..., idx, idx - 1] += co.p_ch_up[j]
            jac[..., idx, idx] -= co.p_ch_up[j]
        else:
            for i in range(m):
                jac[..., idx, i] += co.p_sg_g[i]
                jac[..., idx, idx] -= co.p_sg_g[i]
    return jac


def storage_jac_qhp(x, co: DynCoeffs, t_hp_c: float) -> np.ndarray:
    """Derivative of :func:`storage_rhs` in the delivered heat rate, (..., m+n)."""
    x = np.asarray(x, dtype=float)
    m, n = co.m, co.n
    rho, _ = hp_flow_shape(x, m, t_hp_c)
    out = np.zeros(x.shape[:-1] + (m + n,))
    out[..., :m] = co.inv_c[:m] * rho
    return out


def boundary_heat_flows(x, t_amb_c, co: DynCoeffs):
    """Heat flows (W) into the store through lid and outer ground boundary."""
    x = np.asarray(x, dtype=float)
    g_top = co.p_top / co.inv_c[0]
    g_bc = co.p_ch_dn[co.n - 1] / co.inv_c[co.m + co.n - 1]
    q_top = g_top * (np.asarray(t_amb_c) - x[..., 0])
    q_bc = g_bc * (co.t_bc_c - x[..., co.m + co.n - 1])
    return q_top, q_bc


def stored_energy(x, co: DynCoeffs) -> np.ndarray:
    """Capacity-weighted thermal energy content (J) relative to 0 degC."""
    caps = co.node_capacities()
    return np.asarray(x) @ caps


def battery_rate(p_charge, p_discharge, bp: BatteryParams, scale: float):
    """State-of-charge rate (1/s) for charge/discharge powers in W."""
    cap_j = scale * bp.capacity_wh * 3600.0
    if cap_j <= 0.0:
        raise DomainError("battery capacity must be positive")
    return (bp.eta_charge * np.asarray(p_charge)
            - np.asarray(p_discharge) / bp.eta_discharge) / cap_j


def power_balance_residual(u, p_re, p_load):
    """Bus balance: renewables minus loads, heat pump, battery and grid terms (W)."""
    u = np.asarray(u, dtype=float)
    return (np.asarray(p_re) - np.asarray(p_load) - u[..., IDX_P_HP]
            - u[..., IDX_P_BC] + u[..., IDX_P_BD]
            + u[..., IDX_P_GB] - u[..., IDX_P_GS])
