"""Time stepping, periodic steady states, and the ground-mesh refinement study.

The integrator is a single implicit-Euler step per interval, solved by a
damped Newton iteration with the analytic state Jacobian. The battery
state of charge updates exactly (its rate is constant over an interval).
For a fully mixed store the thermal right-hand side is affine in the
state, so year simulations reduce to one banded factorization reused for
all steps; that path makes the benchmark run of the refinement study cheap
even with hundreds of ground shells.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import lu_factor, lu_solve

from . import model
from .errors import DataError, SolverError
from .geometry import DynCoeffs, GroundMesh, StorageGeometry, ThermalParams, dyn_coeffs
from .model import BatteryParams, HeatPumpParams, SystemState

SANITY_BAND_C = (-60.0, 120.0)
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 8


@dataclass
class Trajectory:
    """States at grid nodes plus the interval inputs that produced them."""

    times_s: np.ndarray        # (K+1,)
    thermal: np.ndarray        # (K+1, m+n) degC
    soc: np.ndarray            # (K+1,)
    q_hp: np.ndarray           # (K,) W
    q_load: np.ndarray         # (K,) W
    t_amb: np.ndarray          # (K,) degC
    q_top: np.ndarray = field(default=None)   # (K,) W into store through lid
    q_bc: np.ndarray = field(default=None)    # (K,) W into ground from boundary

    def __post_init__(self):
        if self.thermal.shape[0] != self.times_s.size:
            raise DataError("node count must be interval count + 1")
        lo, hi = SANITY_BAND_C
        if self.thermal.min() < lo or self.thermal.max() > hi:
            raise DataError("trajectory leaves the physical sanity band")

    def energy_audit(self, co: DynCoeffs) -> dict:
        """Stored-energy change versus integrated boundary and loop flows."""
        h = np.diff(self.times_s)
        stored = model.stored_energy(self.thermal, co)
        gains = (self.q_hp - self.q_load + self.q_top + self.q_bc) * h
        delta = stored[-1] - stored[0]
        integral = gains.sum()
        ref = max(abs(delta), abs(integral), np.abs(gains).sum(), 1.0)
        return {"delta_stored_j": float(delta), "integrated_flows_j": float(integral),
                "relative_mismatch": float(abs(delta - integral) / ref)}


def implicit_euler_step(x, q_hp, q_load, t_amb, h, co: DynCoeffs, t_hp_c,
                        lu=None) -> np.ndarray:
    """One implicit-Euler step of the thermal state.

    Solves ``y - x - h f(y) = 0`` by Newton iteration with step halving on
    residual growth. ``lu`` may carry a prefactored iteration matrix for
    the affine (fully mixed) case.
    """
    x = np.asarray(x, dtype=float)
    if h <= 0.0:
        raise SolverError("step size must be positive")
    scale = max(1.0, float(np.max(np.abs(x))))

    if lu is not None:  # affine dynamics: one linear solve is exact
        fx = model.storage_rhs(x, q_hp, q_load, t_amb, co, t_hp_c)
        return x + lu_solve(lu, h * fx)

    y = x.copy()
    r = y - x - h * model.storage_rhs(y, q_hp, q_load, t_amb, co, t_hp_c)
    rnorm = np.max(np.abs(r))
    for _ in range(NEWTON_MAX_ITER):
        if rnorm <= NEWTON_TOL * scale:
            return y
        jac = np.eye(x.size) - h * model.storage_jac_x(y, q_hp, q_load, co, t_hp_c)
        step = np.linalg.solve(jac, -r)
        alpha = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            y_try = y + alpha * step
            r_try = y_try - x - h * model.storage_rhs(y_try, q_hp, q_load, t_amb, co,
                                                      t_hp_c, check=False)
            if np.max(np.abs(r_try)) < rnorm or alpha <= 1.0 / 2**NEWTON_MAX_HALVINGS:
                break
            alpha *= 0.5
        y, r = y_try, r_try
        rnorm = np.max(np.abs(r))
    raise SolverError(f"implicit Euler Newton stalled at residual {rnorm:.3e}")


def _affine_lu(co: DynCoeffs, h: float, t_hp_c: float):
    """Prefactored ``I - h A`` when the dynamics are state-affine (m == 1)."""
    if co.m != 1:
        return None
    nx = co.m + co.n
    probe = np.zeros(nx)
    a = model.storage_jac_x(probe, 0.0, 0.0, co, t_hp_c)
    return lu_factor(np.eye(nx) - h * a)


def simulate_thermal(x0, q_hp, q_load, t_amb, h, co: DynCoeffs, t_hp_c) -> Trajectory:
    """Chain implicit-Euler steps over prescribed heat flows and weather."""
    q_hp = np.asarray(q_hp, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    t_amb = np.asarray(t_amb, dtype=float)
    n_k = q_hp.size
    if not (q_load.size == n_k and t_amb.size == n_k):
        raise DataError("input series must share one grid")
    nx = co.m + co.n
    x0 = np.asarray(x0, dtype=float)
    if x0.size != nx:
        raise DataError(f"state has {x0.size} entries, model needs {nx}")
    lu = _affine_lu(co, h, t_hp_c)
    if lu is not None:
        out = np.empty((n_k + 1, nx))
        out[0] = x0
        for k in range(n_k):
            out[k + 1] = implicit_euler_step(out[k], q_hp[k], q_load[k], t_amb[k],
                                             h, co, t_hp_c, lu=lu)
    else:
        out, code, where = _implicit_year_kernel(
            x0, q_hp, q_load, t_amb, float(h), co.m, co.n, co.inv_c, co.p_if_up,
            co.p_if_dn, co.p_top, co.p_sg_s, co.p_sg_g, co.p_ch_up, co.p_ch_dn,
            co.t_bc_c, float(t_hp_c))
        if code == 1:
            raise SolverError(f"interval {where}: implicit Euler Newton stalled")
        if code == 2:
            raise SolverError(f"interval {where}: bottom layer within "
                              f"{SINK_MARGIN} K of the charging temperature")
    q_top, q_bc = model.boundary_heat_flows(out[1:], t_amb, co)
    return Trajectory(times_s=h * np.arange(n_k + 1), thermal=out,
                      soc=np.zeros(n_k + 1),
                      q_hp=q_hp, q_load=q_load, t_amb=t_amb, q_top=q_top, q_bc=q_bc)


def simulate_year(x0: SystemState, controls: np.ndarray, q_load, t_amb, h,
                  co: DynCoeffs, hp: HeatPumpParams, bp: BatteryParams,
                  batt_scale: float = 1.0) -> Trajectory:
    """Simulate thermal state and battery under a control schedule.

    ``controls`` is ``(K, 5)`` in the order (heat pump, battery charge,
    battery discharge, grid buy, grid sell); heat delivered to the store is
    the heat-pump electric power times the ambient-dependent COP.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    t_amb = np.asarray(t_amb, dtype=float)
    q_hp = model.cop(t_amb, hp) * controls[:, model.IDX_P_HP]
    traj = simulate_thermal(x0.thermal, q_hp, np.asarray(q_load, dtype=float),
                            t_amb, h, co, hp.sink_temp_c)
    rates = model.battery_rate(controls[:, model.IDX_P_BC],
                               controls[:, model.IDX_P_BD], bp, batt_scale)
    soc = np.concatenate([[x0.soc], x0.soc + np.cumsum(rates * h)])
    traj.soc = soc
    return traj


def periodic_steady_state(x0: SystemState, controls, q_load, t_amb, h,
                          co: DynCoeffs, hp: HeatPumpParams, bp: BatteryParams,
                          batt_scale: float = 1.0, tol: float = 1e-3,
                          max_years: int = 100) -> tuple[SystemState, int]:
    """Fixed-point iteration on the year map until start and end states agree.

    Returns the periodic state and the number of simulated years. The
    battery drift per year is independent of its start value, so a
    non-zero net throughput cannot be made periodic and is reported.
    """
    if tol <= 0.0:
        raise SolverError("tolerance must be positive")
    state = x0
    for it in range(1, max_years + 1):
        traj = simulate_year(state, controls, q_load, t_amb, h, co, hp, bp, batt_scale)
        end = SystemState.from_thermal(traj.thermal[-1], co.m, soc=float(traj.soc[-1]))
        gap_thermal = float(np.max(np.abs(end.thermal - state.thermal)))
        gap_soc = abs(end.soc - state.soc)
        if gap_thermal <= tol and gap_soc <= tol:
            return end, it
        if gap_soc > tol and it >= 2:
            raise SolverError(
                f"battery throughput is not periodic: net drift {gap_soc:.3e} per year")
        state = end
    raise SolverError(f"no periodic steady state within {max_years} years "
                      f"(last gap {gap_thermal:.3e} K)")


def rmsle(candidate, reference) -> float:
    """Root-mean-square error of base-10 logarithms of two temperature series."""
    a = np.asarray(candidate, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise DataError("log-scale error needs strictly positive temperatures")
    d = np.log10(a) - np.log10(b)
    return float(np.sqrt(np.mean(d * d)))


def discretization_study(geom: StorageGeometry, tp: ThermalParams,
                         q_hp, q_load, t_amb, h, t_hp_c,
                         n_values, d_values,
                         benchmark_n: int = 500, benchmark_d: float = 100.0,
                         t_storage0: float = 13.5, boundary_temp_c: float = 13.5,
                         scale: float = 1.0, workers: int = 4) -> dict:
    """Ground-mesh refinement error grid for the fully mixed storage model.

    Simulates one cycle for every (layer count, boundary distance) pair and
    reports the log-scale error of the storage temperature against a
    high-resolution benchmark mesh. The default start is a commissioning
    year: storage and ground both at the undisturbed ground temperature.
    """
    mixed = StorageGeometry(top_side_m=geom.top_side_m, bottom_side_m=geom.bottom_side_m,
                            height_m=geom.height_m, n_layers=1)

    def run(n, d):
        mesh = GroundMesh(n_layers=int(n), boundary_distance_m=float(d),
                          boundary_temp_c=boundary_temp_c)
        co = dyn_coeffs(mixed, mesh, tp, scale)
        x0 = np.full(1 + int(n), boundary_temp_c)
        x0[0] = t_storage0
        traj = simulate_thermal(x0, q_hp, q_load, t_amb, h, co, t_hp_c)
        return traj.thermal[:, 0]

    reference = run(benchmark_n, benchmark_d)
    grid = np.empty((len(n_values), len(d_values)))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {(i, j): pool.submit(run, n, d)
                   for i, n in enumerate(n_values) for j, d in enumerate(d_values)}
        for (i, j), fut in futures.items():
            grid[i, j] = rmsle(fut.result(), reference)
    return {"n_values": list(n_values), "d_values": list(d_values),
            "rmsle": grid, "benchmark": (benchmark_n, benchmark_d)}


def load_measured_csv(path, n_layers: int):
    """Read a validation dataset: per-layer temperatures plus loop flows."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = [c.strip().lower() for c in next(reader)]
        layer_cols = [c for c in header if c.startswith("t_layer_")]
        if len(layer_cols) != n_layers:
            raise DataError(f"layer count mismatch: file has {len(layer_cols)} "
                            f"temperature columns, model has {n_layers} layers")
        need = ["q_charge_w", "q_discharge_w", "t_amb_c"] + [f"t_layer_{i+1}"
                                                             for i in range(n_layers)]
        try:
            idx = [header.index(c) for c in need]
        except ValueError as exc:
            raise DataError(f"{path}: missing column: {exc}") from None
        rows = []
        for i, row in enumerate(reader):
            try:
                rows.append([float(row[j]) for j in idx])
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {i + 2}: malformed record") from None
    data = np.asarray(rows)
    if data.shape[0] < 2:
        raise DataError(f"{path}: need at least two rows")
    return {"q_charge": data[:, 0], "q_discharge": data[:, 1],
            "t_amb": data[:, 2], "t_layers": data[:, 3:]}


def validate_against_measurements(measured: dict, h, geom: StorageGeometry,
                                  mesh: GroundMesh, tp: ThermalParams,
                                  t_hp_c: float, scale: float = 1.0) -> dict:
    """Replay measured charge/discharge flows and report per-layer RMSE.

    The simulation starts from the measured initial stratification with
    ground layers at the boundary temperature. No pass/fail threshold is
    applied; the caller judges the residuals.
    """
    t_meas = measured["t_layers"]
    m = geom.n_layers
    if t_meas.shape[1] != m:
        raise DataError(f"layer count mismatch: {t_meas.shape[1]} measured vs {m} modeled")
    co = dyn_coeffs(geom, mesh, tp, scale)
    x0 = np.concatenate([t_meas[0], np.full(mesh.n_layers, mesh.boundary_temp_c)])
    n_k = t_meas.shape[0] - 1
    traj = simulate_thermal(x0, measured["q_charge"][:n_k], measured["q_discharge"][:n_k],
                            measured["t_amb"][:n_k], h, co, t_hp_c)
    sim_layers = traj.thermal[:, :m]
    err = sim_layers - t_meas
    rmse = np.sqrt(np.mean(err[1:] ** 2, axis=0))  # initial node is exact by setup
    return {"rmse_per_layer_k": rmse, "simulated": sim_layers, "measured": t_meas}


# ---------------------------------------------------------------------------
# Compiled kernels: implicit-Euler year loop and the explicit high-resolution
# reference integrator used as the integrator-accuracy oracle.

SINK_MARGIN = model.SINK_MARGIN_K


@njit(cache=True)
def _rhs_kernel(x, q_hp, q_load, t_amb, m, n, inv_c, p_if_up, p_if_dn, p_top,
                p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_bc, t_hp, out):
    w = q_load / 20.0
    e = 1.0 / (t_hp - x[m - 1])
    tg0 = x[m]
    for i in range(m):
        if m == 1:
            rho = 1.0
        elif i == 0:
            rho = (t_hp - x[0]) * e
        else:
            rho = (x[i - 1] - x[i]) * e
        acc = inv_c[i] * q_hp * rho
        if i < m - 1:
            acc += inv_c[i] * w * (x[i + 1] - x[i])
            acc += p_if_dn[i] * (x[i + 1] - x[i])
        else:
            acc += inv_c[i] * w * (x[0] - 20.0 - x[i])
        if i > 0:
            acc += p_if_up[i] * (x[i - 1] - x[i])
        if i == 0:
            acc += p_top * (t_amb - x[0])
        acc += p_sg_s[i] * (tg0 - x[i])
        out[i] = acc
    for j in range(n):
        idx = m + j
        nxt = t_bc if j == n - 1 else x[idx + 1]
        acc = p_ch_dn[j] * (nxt - x[idx])
        if j > 0:
            acc += p_ch_up[j] * (x[idx - 1] - x[idx])
        else:
            for i in range(m):
                acc += p_sg_g[i] * (x[i] - tg0)
        out[idx] = acc


@njit(cache=True)
def _jac_kernel(x, q_hp, q_load, m, n, inv_c, p_if_up, p_if_dn, p_top,
                p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_hp, jac):
    jac[:, :] = 0.0
    w = q_load / 20.0
    e = 1.0 / (t_hp - x[m - 1])
    for i in range(m):
        if i > 0:
            jac[i, i - 1] += p_if_up[i]
            jac[i, i] -= p_if_up[i]
        if i < m - 1:
            jac[i, i + 1] += p_if_dn[i]
            jac[i, i] -= p_if_dn[i]
        jac[i, m] += p_sg_s[i]
        jac[i, i] -= p_sg_s[i]
        if i == 0:
            jac[0, 0] -= p_top
        if i < m - 1:
            jac[i, i + 1] += inv_c[i] * w
            jac[i, i] -= inv_c[i] * w
        else:
            jac[i, 0] += inv_c[i] * w
            jac[i, i] -= inv_c[i] * w
        if m > 1:
            scale = inv_c[i] * q_hp
            if i == 0:
                rho = (t_hp - x[0]) * e
                jac[0, 0] += scale * (-e)
            else:
                rho = (x[i - 1] - x[i]) * e
                jac[i, i - 1] += scale * e
                jac[i, i] += scale * (-e)
            jac[i, m - 1] += scale * rho * e
    for j in range(n):
        idx = m + j
        jac[idx, idx] -= p_ch_dn[j]
        if j < n - 1:
            jac[idx, idx + 1] += p_ch_dn[j]
        if j > 0:
            jac[idx, idx - 1] += p_ch_up[j]
            jac[idx, idx] -= p_ch_up[j]
        else:
            for i in range(m):
                jac[idx, i] += p_sg_g[i]
                jac[idx, idx] -= p_sg_g[i]


@njit(cache=True)
def _implicit_year_kernel(x0, q_hp, q_load, t_amb, h, m, n, inv_c, p_if_up,
                          p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn,
                          t_bc, t_hp):
    n_k = q_hp.size
    nx = x0.size
    out = np.empty((n_k + 1, nx))
    out[0] = x0
    x = x0.copy()
    f = np.empty(nx)
    jac = np.empty((nx, nx))
    eye = np.eye(nx)
    limit = t_hp - SINK_MARGIN
    for k in range(n_k):
        y = x.copy()
        _rhs_kernel(y, q_hp[k], q_load[k], t_amb[k], m, n, inv_c, p_if_up, p_if_dn,
                    p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_bc, t_hp, f)
        r = y - x - h * f
        rnorm = np.max(np.abs(r))
        scale = max(1.0, np.max(np.abs(x)))
        converged = rnorm <= NEWTON_TOL * scale
        for _ in range(NEWTON_MAX_ITER):
            if converged:
                break
            _jac_kernel(y, q_hp[k], q_load[k], m, n, inv_c, p_if_up, p_if_dn,
                        p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_hp, jac)
            a = eye - h * jac
            step = np.linalg.solve(a, -r)
            alpha = 1.0
            for halve in range(NEWTON_MAX_HALVINGS + 1):
                y_try = y + alpha * step
                _rhs_kernel(y_try, q_hp[k], q_load[k], t_amb[k], m, n, inv_c,
                            p_if_up, p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up,
                            p_ch_dn, t_bc, t_hp, f)
                r_try = y_try - x - h * f
                if np.max(np.abs(r_try)) < rnorm or alpha <= 1.0 / 2**NEWTON_MAX_HALVINGS:
                    break
                alpha *= 0.5
            y = y_try
            r = r_try
            rnorm = np.max(np.abs(r))
            converged = rnorm <= NEWTON_TOL * scale
        if not converged:
            return out, 1, k
        if y[m - 1] > limit:
            return out, 2, k
        x = y
        out[k + 1] = x
    return out, 0, -1


@njit(cache=True)
def _rk4_kernel(x0, q_hp, q_load, t_amb, h, substeps, m, n, inv_c, p_if_up,
                p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_bc, t_hp):
    n_k = q_hp.size
    nx = x0.size
    out = np.empty((n_k + 1, nx))
    out[0] = x0
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    dt = h / substeps
    for k in range(n_k):
        for _ in range(substeps):
            _rhs_kernel(x, q_hp[k], q_load[k], t_amb[k], m, n, inv_c, p_if_up,
                        p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn, t_bc, t_hp, k1)
            _rhs_kernel(x + 0.5 * dt * k1, q_hp[k], q_load[k], t_amb[k], m, n, inv_c,
                        p_if_up, p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn,
                        t_bc, t_hp, k2)
            _rhs_kernel(x + 0.5 * dt * k2, q_hp[k], q_load[k], t_amb[k], m, n, inv_c,
                        p_if_up, p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn,
                        t_bc, t_hp, k3)
            _rhs_kernel(x + dt * k3, q_hp[k], q_load[k], t_amb[k], m, n, inv_c,
                        p_if_up, p_if_dn, p_top, p_sg_s, p_sg_g, p_ch_up, p_ch_dn,
                        t_bc, t_hp, k4)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def rk4_reference(x0, q_hp, q_load, t_amb, h, co: DynCoeffs, t_hp_c,
                  substeps: int = 60) -> np.ndarray:
    """Explicit RK4 trajectory with ``substeps`` stages per interval.

    Independent of the implicit path; the go-to oracle for integrator
    accuracy checks.
    """
    return _rk4_kernel(np.asarray(x0, dtype=float), np.asarray(q_hp, dtype=float),
                       np.asarray(q_load, dtype=float), np.asarray(t_amb, dtype=float),
                       float(h), int(substeps), co.m, co.n, co.inv_c,
                       co.p_if_up, co.p_if_dn, co.p_top, co.p_sg_s, co.p_sg_g,
                       co.p_ch_up, co.p_ch_dn, co.t_bc_c, float(t_hp_c))
