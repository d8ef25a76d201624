"""Transcription of the periodic design-and-operation problem into sparse NLPs.

Two problem forms share one machinery. The full form carries thermal
states at every fine node and ties consecutive nodes with one implicit
Euler step each. The reduced form keeps thermal states on a daily grid
and drives each daily step with day-averaged inputs; since the thermal
right-hand side is affine in its inputs, the day average of the delivered
heat is an exact linear form in that day's fine heat-pump controls with
fixed per-hour coefficients. Battery states, controls, bounds, and the
objective always live on the fine grid, so both forms price the same
operating decisions.

Variables are interleaved per grid node (state block, then that
interval's controls) for a banded constraint structure; sizing factors
come last as dense columns. All evaluators are pure and reentrant with
fixed sparsity patterns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import econ, model
from .errors import ConfigError
from .geometry import (GroundMesh, StorageGeometry, ThermalParams,
                       derive_network, dyn_coeffs_with_sens)
from .grids import GridSpec
from .model import BatteryParams, HeatPumpParams
from .scenario import ExogenousData

# Fixed, documented scaling so problem files reproduce bit-for-bit.
TEMP_SCALE = 100.0
POWER_SCALE = 1e6
OBJ_SCALE = 1e-6

T_STORAGE_TOP_MIN_C = 40.0
T_STORAGE_MIN_C = 10.0
T_STORAGE_MAX_C = 85.0
T_GROUND_BAND_C = (-60.0, 120.0)
THETA_MIN = 0.1
THETA_MAX = 10.0
DIRECT_SUPPLY_TEMP_C = 40.0
DIRECT_SUPPLY_AMBIENT_MARGIN_K = 5.0

VARIANTS = ("full", "no-ptes", "no-wind", "only-hp")
THETA_ORDER = ("pv", "wind", "battery", "storage", "heatpump")


@dataclass(frozen=True)
class ProblemSetup:
    """Everything needed to transcribe one scenario."""

    grid: GridSpec
    data: ExogenousData
    geometry: StorageGeometry
    ground: GroundMesh
    thermal: ThermalParams
    heat_pump: HeatPumpParams
    battery: BatteryParams
    costs: econ.CostTable
    pv_capacity_w: float
    wind_capacity_w: float
    battery_capacity_wh: float
    hp_capacity_w: float
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected {VARIANTS}")
        if self.data.n_fine != self.grid.n_fine:
            raise ConfigError(
                f"series length {self.data.n_fine} does not match grid {self.grid.n_fine}")

    @property
    def with_storage(self) -> bool:
        return self.variant in ("full", "no-wind")

    @property
    def with_battery(self) -> bool:
        return self.variant != "only-hp"

    @property
    def with_wind(self) -> bool:
        return self.variant == "full" or self.variant == "no-ptes"

    @property
    def with_pv(self) -> bool:
        return self.variant != "only-hp"

    def theta_names(self) -> list[str]:
        names = []
        if self.with_pv:
            names.append("pv")
        if self.with_wind:
            names.append("wind")
        if self.with_battery:
            names.append("battery")
        if self.with_storage:
            names.append("storage")
        names.append("heatpump")
        return names

    def reference_capacity(self, component: str) -> float:
        if component == "pv":
            return self.pv_capacity_w
        if component == "wind":
            return self.wind_capacity_w
        if component == "battery":
            return self.battery_capacity_wh
        if component == "heatpump":
            return self.hp_capacity_w
        raise ConfigError(f"no reference capacity for {component!r}")


@dataclass
class AveragedInputs:
    """Day-averaged forcing plus the fixed per-hour heat conversion factors.

    The averaged delivered heat of day ``j`` is
    ``mean(cop_fine[jK:(j+1)K] * p_hp[jK:(j+1)K])``, linear in the fine
    heat-pump powers.
    """

    qbar_load_w: np.ndarray   # (n_coarse,)
    tbar_amb_c: np.ndarray    # (n_coarse,)
    cop_fine: np.ndarray      # (n_fine,)
    fine_per_coarse: int

    def qbar_hp(self, p_hp_fine: np.ndarray) -> np.ndarray:
        k = self.fine_per_coarse
        prod = self.cop_fine * np.asarray(p_hp_fine)
        return prod.reshape(-1, k).mean(axis=1)


def average_inputs(q_load_w: np.ndarray, t_amb_c: np.ndarray,
                   hp: HeatPumpParams, grid: GridSpec) -> AveragedInputs:
    """Arithmetic day means of the forcing and per-hour COP coefficients."""
    k = grid.fine_per_coarse
    q_load_w = np.asarray(q_load_w, dtype=float)
    t_amb_c = np.asarray(t_amb_c, dtype=float)
    if q_load_w.size % k != 0:
        raise ConfigError("averaging window must divide the series length")
    return AveragedInputs(
        qbar_load_w=q_load_w.reshape(-1, k).mean(axis=1),
        tbar_amb_c=t_amb_c.reshape(-1, k).mean(axis=1),
        cop_fine=model.cop(t_amb_c, hp),
        fine_per_coarse=k)


@dataclass
class SparseNlp:
    """A transcribed problem with bounds, evaluators, and fixed patterns.

    Constraint rows with ``cl == cu`` are equalities. ``jac_rows/cols``
    and ``hess_rows/cols`` (lower triangle) never change; the evaluators
    return matching data arrays. Scales map the problem to solver units.
    """

    n: int
    m: int
    lb: np.ndarray
    ub: np.ndarray
    cl: np.ndarray
    cu: np.ndarray
    var_scale: np.ndarray
    con_scale: np.ndarray
    obj_scale: float
    grad_vector: np.ndarray
    jac_rows: np.ndarray
    jac_cols: np.ndarray
    hess_rows: np.ndarray
    hess_cols: np.ndarray
    _constraints: object
    _jacobian: object
    _hessian: object
    meta: dict = field(default_factory=dict)
    name_of: object = None

    def objective(self, v: np.ndarray) -> float:
        return float(self.grad_vector @ v)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.grad_vector.copy()

    def constraints(self, v: np.ndarray) -> np.ndarray:
        return self._constraints(v)

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        return self._jacobian(v)

    def hessian(self, v: np.ndarray, lam: np.ndarray,
                obj_factor: float = 1.0) -> np.ndarray:
        return self._hessian(v, lam, obj_factor)

    def jacobian_matrix(self, v):
        from scipy.sparse import coo_matrix
        return coo_matrix((self.jacobian(v), (self.jac_rows, self.jac_cols)),
                          shape=(self.m, self.n)).tocsr()

    def hessian_matrix(self, v, lam, obj_factor=1.0):
        from scipy.sparse import coo_matrix
        h = coo_matrix((self.hessian(v, lam, obj_factor),
                        (self.hess_rows, self.hess_cols)),
                       shape=(self.n, self.n)).tocsr()
        return h

    def summary(self) -> dict:
        """Deterministic problem digest for regression comparisons."""
        counts = dict(self.meta.get("counts", {}))
        return {
            "variant": self.meta.get("variant"),
            "form": self.meta.get("form"),
            "variables_total": int(self.n),
            "variables_periodic_identified": int(
                self.n - self.meta.get("duplicated_node_vars", 0)),
            "constraints_total": int(self.m),
            "equality_rows": int(np.sum(self.cl == self.cu)),
            "inequality_rows": int(np.sum(self.cl < self.cu)),
            "jacobian_nonzeros": int(self.jac_rows.size),
            "hessian_nonzeros": int(self.hess_rows.size),
            "constraint_groups": counts,
            "grid": {"n_fine": self.meta.get("n_fine"),
                     "n_coarse": self.meta.get("n_coarse")},
            "scaling": {"temperature": TEMP_SCALE, "power": POWER_SCALE,
                        "objective": OBJ_SCALE},
        }


class _Layout:
    """Index bookkeeping for one variable ordering."""

    def __init__(self, setup: ProblemSetup, averaged: bool):
        grid = setup.grid
        nf = grid.n_fine
        self.nxs = (setup.geometry.n_layers + setup.ground.n_layers
                    if setup.with_storage else 0)
        self.n_u = 5 if setup.with_battery else 3
        self.with_battery = setup.with_battery
        self.with_storage = setup.with_storage
        self.averaged = averaged and setup.with_storage
        nxb = 1 if setup.with_battery else 0
        self.u_cols = {"p_hp": 0}
        if setup.with_battery:
            self.u_cols.update({"p_bc": 1, "p_bd": 2, "p_gb": 3, "p_gs": 4})
        else:
            self.u_cols.update({"p_gb": 1, "p_gs": 2})

        fine_block = nxb + self.n_u
        if not self.averaged:
            stride = self.nxs + fine_block
            base = np.arange(nf) * stride
            if self.with_storage:
                self.idx_xs = np.concatenate(
                    [base[:, None] + np.arange(self.nxs)[None, :],
                     [nf * stride + np.arange(self.nxs)]], axis=0)
            else:
                self.idx_xs = None
            off = self.nxs
            if setup.with_battery:
                self.idx_xb = np.concatenate([base + off, [nf * stride + self.nxs]])
                off += 1
            else:
                self.idx_xb = None
            self.idx_u = base[:, None] + off + np.arange(self.n_u)[None, :]
            tail = nf * stride + self.nxs + nxb
        else:
            k = grid.fine_per_coarse
            nc = grid.n_coarse
            block = self.nxs + k * fine_block
            day = np.arange(nc) * block
            self.idx_xs = np.concatenate(
                [day[:, None] + np.arange(self.nxs)[None, :],
                 [nc * block + np.arange(self.nxs)]], axis=0)
            fine_base = (day[:, None] + self.nxs
                         + np.arange(k)[None, :] * fine_block).reshape(-1)
            if setup.with_battery:
                self.idx_xb = np.concatenate([fine_base, [nc * block + self.nxs]])
                u_off = 1
            else:
                self.idx_xb = None
                u_off = 0
            self.idx_u = fine_base[:, None] + u_off + np.arange(self.n_u)[None, :]
            tail = nc * block + self.nxs + nxb

        self.theta_names = setup.theta_names()
        self.idx_theta = {name: tail + i for i, name in enumerate(self.theta_names)}
        self.n = tail + len(self.theta_names)

    def name_of(self, i: int) -> str:
        for name, j in self.idx_theta.items():
            if i == j:
                return f"scale[{name}]"
        if self.idx_xs is not None:
            node, comp = np.divmod(np.flatnonzero(self.idx_xs == i), self.nxs)
            if node.size:
                return f"x_s[{node[0]},{comp[0]}]"
        if self.idx_xb is not None:
            node = np.flatnonzero(self.idx_xb == i)
            if node.size:
                return f"x_b[{node[0]}]"
        k, col = np.divmod(np.flatnonzero(self.idx_u == i), self.n_u)
        if k.size:
            names = {v: n for n, v in self.u_cols.items()}
            return f"u[{k[0]},{names[col[0]]}]"
        return f"v[{i}]"


def build_full_nlp(setup: ProblemSetup) -> SparseNlp:
    """Transcribe with thermal states at every fine node."""
    return _build(setup, averaged=False)


def build_averaged_nlp(setup: ProblemSetup) -> SparseNlp:
    """Transcribe with thermal states on the daily grid and averaged forcing."""
    if not setup.with_storage:
        raise ConfigError("the averaged form only differs when storage is present")
    return _build(setup, averaged=True)


def initial_guess(setup: ProblemSetup, nlp: SparseNlp) -> np.ndarray:
    """Flat-profile start: storage 30 degC, ground at boundary temperature,
    half-charged battery, zero controls, unit sizing factors; clipped into
    the variable bounds."""
    v = np.zeros(nlp.n)
    lay: _Layout = nlp.meta["layout"]
    if lay.idx_xs is not None:
        m = setup.geometry.n_layers
        v[lay.idx_xs[:, :m]] = 30.0
        v[lay.idx_xs[:, m:]] = setup.ground.boundary_temp_c
    if lay.idx_xb is not None:
        v[lay.idx_xb] = 0.5
    for name, i in lay.idx_theta.items():
        v[i] = 1.0
    return np.clip(v, nlp.lb, nlp.ub)


def _objective_vector(setup: ProblemSetup, lay: _Layout) -> np.ndarray:
    """Linear cost vector: grid energy prices plus pro-rata yearly fixed cost.

    Fixed costs (investment annuity and yearly upkeep) accrue per unit of
    time, so a cycle shorter than a year carries its fraction of them; on
    the full 8760 h grid this is exactly the yearly fixed cost.
    """
    grid, table = setup.grid, setup.costs
    g = np.zeros(lay.n)
    kwh_per_w = grid.fine_step_s / 3600.0 / 1000.0
    g[lay.idx_u[:, lay.u_cols["p_gb"]]] = table.price_buy_eur_per_kwh * kwh_per_w
    g[lay.idx_u[:, lay.u_cols["p_gs"]]] = -table.price_sell_eur_per_kwh * kwh_per_w
    anf = econ.annuity_factor(table.interest_rate, table.horizon_years)
    year_fraction = grid.horizon_s / (8760.0 * 3600.0)
    for name, i in lay.idx_theta.items():
        if name == "storage":
            vol = derive_network(setup.geometry, setup.ground, setup.thermal).volume_total
            base = econ.capex_eur("storage", vol, table)
        else:
            base = econ.capex_eur(name, setup.reference_capacity(name), table)
        g[i] = (anf + table.opex_fraction[name]) * base * year_fraction
    return g


def _build(setup: ProblemSetup, averaged: bool) -> SparseNlp:
    grid = setup.grid
    nf = grid.n_fine
    lay = _Layout(setup, averaged)
    nxs = lay.nxs
    m_layers = setup.geometry.n_layers if setup.with_storage else 0

    # --- per-defect forcing -------------------------------------------------
    avg = average_inputs(setup.data.q_load_w, setup.data.t_amb_c,
                         setup.heat_pump, grid)
    if setup.with_storage:
        if averaged:
            n_def = grid.n_coarse
            h_def = grid.coarse_step_s
            q_load_def = avg.qbar_load_w
            t_amb_def = avg.tbar_amb_c
            hp_idx = np.arange(nf).reshape(n_def, grid.fine_per_coarse)
            hp_w = avg.cop_fine.reshape(n_def, -1) / grid.fine_per_coarse
        else:
            n_def = nf
            h_def = grid.fine_step_s
            q_load_def = setup.data.q_load_w
            t_amb_def = setup.data.t_amb_c
            hp_idx = np.arange(nf)[:, None]
            hp_w = avg.cop_fine[:, None]
    else:
        n_def = 0
        h_def = 0.0
        hp_idx = hp_w = q_load_def = t_amb_def = None

    # capacity/balance coefficients on the fine grid
    if setup.with_storage:
        cop_cap = avg.cop_fine
    else:
        t_sup = DIRECT_SUPPLY_TEMP_C
        worst = float(np.max(setup.data.t_amb_c))
        if worst > t_sup - DIRECT_SUPPLY_AMBIENT_MARGIN_K:
            raise ConfigError(
                f"direct-supply variant needs ambient below "
                f"{t_sup - DIRECT_SUPPLY_AMBIENT_MARGIN_K} degC, data peaks at {worst:.1f}")
        direct_hp = HeatPumpParams(eta_lorenz=setup.heat_pump.eta_lorenz,
                                   sink_temp_c=t_sup,
                                   capacity_w=setup.heat_pump.capacity_w)
        cop_cap = model.cop(setup.data.t_amb_c, direct_hp)

    # --- constraint blocks ---------------------------------------------------
    counts = {}
    row0 = {}
    r = 0
    if setup.with_storage:
        row0["defect"] = r
        counts["storage_defects"] = n_def * nxs
        r += n_def * nxs
    if setup.with_battery:
        row0["batt"] = r
        counts["battery_defects"] = nf
        r += nf
    row0["balance"] = r
    counts["power_balance"] = nf
    r += nf
    if not setup.with_storage:
        row0["heat"] = r
        counts["heat_balance"] = nf
        r += nf
    row0["hp_cap"] = r
    counts["hp_capacity"] = nf
    r += nf
    if setup.with_battery:
        row0["bc_cap"] = r
        row0["bd_cap"] = r + nf
        counts["battery_capacity"] = 2 * nf
        r += 2 * nf
    if setup.with_storage:
        row0["per_s"] = r
        counts["periodicity_storage"] = nxs
        r += nxs
    if setup.with_battery:
        row0["per_b"] = r
        counts["periodicity_battery"] = 1
        r += 1
    m_total = r

    # --- bounds ---------------------------------------------------------------
    lb = np.full(lay.n, -np.inf)
    ub = np.full(lay.n, np.inf)
    var_scale = np.ones(lay.n)
    if setup.with_storage:
        xs = lay.idx_xs
        lb[xs[:, 0]] = T_STORAGE_TOP_MIN_C
        ub[xs[:, 0]] = T_STORAGE_MAX_C
        lb[xs[:, 1:m_layers]] = T_STORAGE_MIN_C
        ub[xs[:, 1:m_layers]] = T_STORAGE_MAX_C
        lb[xs[:, m_layers:]] = T_GROUND_BAND_C[0]
        ub[xs[:, m_layers:]] = T_GROUND_BAND_C[1]
        var_scale[xs] = TEMP_SCALE
    if setup.with_battery:
        lb[lay.idx_xb] = 0.0
        ub[lay.idx_xb] = 1.0
    lb[lay.idx_u] = 0.0
    var_scale[lay.idx_u] = POWER_SCALE
    for i in lay.idx_theta.values():
        lb[i], ub[i] = THETA_MIN, THETA_MAX

    cl = np.zeros(m_total)
    cu = np.zeros(m_total)
    con_scale = np.ones(m_total)
    if setup.with_storage:
        con_scale[row0["defect"]:row0["defect"] + n_def * nxs] = TEMP_SCALE
        con_scale[row0["per_s"]:row0["per_s"] + nxs] = TEMP_SCALE
    con_scale[row0["balance"]:row0["balance"] + nf] = POWER_SCALE
    if not setup.with_storage:
        con_scale[row0["heat"]:row0["heat"] + nf] = POWER_SCALE
    con_scale[row0["hp_cap"]:row0["hp_cap"] + nf] = POWER_SCALE
    cl[row0["hp_cap"]:row0["hp_cap"] + nf] = -np.inf
    if setup.with_battery:
        con_scale[row0["bc_cap"]:row0["bd_cap"] + nf] = POWER_SCALE
        cl[row0["bc_cap"]:row0["bd_cap"] + nf] = -np.inf

    # --- fixed data for evaluators ---------------------------------------------
    i_ss = lay.idx_theta.get("storage")
    i_sb = lay.idx_theta.get("battery")
    i_shp = lay.idx_theta["heatpump"]
    i_spv = lay.idx_theta.get("pv")
    i_swd = lay.idx_theta.get("wind")
    bp = setup.battery
    cb_j = setup.battery_capacity_wh * 3600.0  # J per unit scale
    p_lim = setup.battery_capacity_wh / bp.c_rate_hours
    geom, mesh, tp = setup.geometry, setup.ground, setup.thermal
    t_hp = setup.heat_pump.sink_temp_c
    u = lay.idx_u
    ucol = lay.u_cols
    p_re_fixed = np.zeros(nf)
    p_load = setup.data.p_load_w

    jac_blocks = []   # (rows, cols, const_data or None, tag)

    def _add(rows, cols, tag):
        jac_blocks.append((np.asarray(rows, dtype=np.int64).ravel(),
                           np.asarray(cols, dtype=np.int64).ravel(), tag))

    if setup.with_storage:
        mask = _jac_structure_mask(m_layers, setup.ground.n_layers)
        d_rows = (row0["defect"] + np.arange(n_def * nxs)).reshape(n_def, nxs)
        # previous-node identity
        _add(d_rows, lay.idx_xs[:-1], "defect_prev")
        # next-node entries per structural pair
        pairs = np.argwhere(mask)
        for a, b in pairs:
            _add(d_rows[:, a], lay.idx_xs[1:, b], ("defect_next", a, b))
        # heat-pump controls
        for m_row in range(m_layers):
            for i_col in range(hp_idx.shape[1]):
                _add(d_rows[:, m_row], u[hp_idx[:, i_col], ucol["p_hp"]],
                     ("defect_php", m_row, i_col))
        # storage scale column
        for a in range(nxs):
            _add(d_rows[:, a], np.full(n_def, i_ss), ("defect_ss", a))

    if setup.with_battery:
        b_rows = row0["batt"] + np.arange(nf)
        _add(b_rows, lay.idx_xb[:-1], "batt_prev")
        _add(b_rows, lay.idx_xb[1:], "batt_next")
        _add(b_rows, u[:, ucol["p_bc"]], "batt_pc")
        _add(b_rows, u[:, ucol["p_bd"]], "batt_pd")
        _add(b_rows, np.full(nf, i_sb), "batt_sb")

    bal_rows = row0["balance"] + np.arange(nf)
    _add(bal_rows, u[:, ucol["p_hp"]], "bal_php")
    _add(bal_rows, u[:, ucol["p_gb"]], "bal_pgb")
    _add(bal_rows, u[:, ucol["p_gs"]], "bal_pgs")
    if setup.with_battery:
        _add(bal_rows, u[:, ucol["p_bc"]], "bal_pbc")
        _add(bal_rows, u[:, ucol["p_bd"]], "bal_pbd")
    # sizing columns only where the reference output is nonzero (PV is dark
    # at night; those entries would be structurally dead)
    pv_nz = np.flatnonzero(setup.data.p_pv0_w != 0.0)
    wd_nz = np.flatnonzero(setup.data.p_wind0_w != 0.0)
    if i_spv is not None and pv_nz.size:
        _add(bal_rows[pv_nz], np.full(pv_nz.size, i_spv), "bal_spv")
    if i_swd is not None and wd_nz.size:
        _add(bal_rows[wd_nz], np.full(wd_nz.size, i_swd), "bal_swd")

    if not setup.with_storage:
        h_rows = row0["heat"] + np.arange(nf)
        _add(h_rows, u[:, ucol["p_hp"]], "heat_php")

    cap_rows = row0["hp_cap"] + np.arange(nf)
    _add(cap_rows, u[:, ucol["p_hp"]], "cap_php")
    _add(cap_rows, np.full(nf, i_shp), "cap_shp")
    if setup.with_battery:
        _add(row0["bc_cap"] + np.arange(nf), u[:, ucol["p_bc"]], "bc_p")
        _add(row0["bc_cap"] + np.arange(nf), np.full(nf, i_sb), "bc_s")
        _add(row0["bd_cap"] + np.arange(nf), u[:, ucol["p_bd"]], "bd_p")
        _add(row0["bd_cap"] + np.arange(nf), np.full(nf, i_sb), "bd_s")

    if setup.with_storage:
        _add(row0["per_s"] + np.arange(nxs), lay.idx_xs[0], "per_s0")
        _add(row0["per_s"] + np.arange(nxs), lay.idx_xs[-1], "per_s1")
    if setup.with_battery:
        _add([row0["per_b"]], [lay.idx_xb[0]], "per_b0")
        _add([row0["per_b"]], [lay.idx_xb[-1]], "per_b1")

    jac_rows = np.concatenate([b[0] for b in jac_blocks])
    jac_cols = np.concatenate([b[1] for b in jac_blocks])
    tags = [b[2] for b in jac_blocks]
    sizes = [b[0].size for b in jac_blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    slot = {tag: slice(offsets[i], offsets[i + 1]) for i, tag in enumerate(tags)}

    # --- Hessian pattern --------------------------------------------------------
    hess_blocks = []

    def _hadd(rows, cols, tag):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        rr = np.maximum(rows, cols)
        cc = np.minimum(rows, cols)
        hess_blocks.append((rr, cc, tag))

    if setup.with_storage:
        k_eff = hp_idx.shape[1]
        if m_layers >= 2:
            for a in range(m_layers):
                _hadd(lay.idx_xs[1:, m_layers - 1], lay.idx_xs[1:, a], ("h_xx", a))
            for a in range(m_layers):
                for i_col in range(k_eff):
                    _hadd(lay.idx_xs[1:, a], u[hp_idx[:, i_col], ucol["p_hp"]],
                          ("h_xp", a, i_col))
        for a in range(nxs):
            _hadd(np.full(n_def, i_ss), lay.idx_xs[1:, a], ("h_xs", a))
        for i_col in range(k_eff):
            _hadd(np.full(n_def, i_ss), u[hp_idx[:, i_col], ucol["p_hp"]],
                  ("h_ps", i_col))
        _hadd([i_ss], [i_ss], "h_ss")
    if setup.with_battery:
        _hadd(np.full(nf, i_sb), u[:, ucol["p_bc"]], "h_bcs")
        _hadd(np.full(nf, i_sb), u[:, ucol["p_bd"]], "h_bds")
        _hadd([i_sb], [i_sb], "h_sbsb")

    if hess_blocks:
        hess_rows = np.concatenate([b[0] for b in hess_blocks])
        hess_cols = np.concatenate([b[1] for b in hess_blocks])
        h_sizes = [b[0].size for b in hess_blocks]
        h_off = np.concatenate([[0], np.cumsum(h_sizes)])
        h_slot = {b[2]: slice(h_off[i], h_off[i + 1]) for i, b in enumerate(hess_blocks)}
    else:
        hess_rows = np.zeros(0, dtype=np.int64)
        hess_cols = np.zeros(0, dtype=np.int64)
        h_slot = {}

    grad = _objective_vector(setup, lay)

    # --- evaluators ---------------------------------------------------------------
    def _coeffs(s_s: float):
        return dyn_coeffs_with_sens(geom, mesh, tp, float(s_s))

    def _p_re(v):
        acc = p_re_fixed
        if i_spv is not None:
            acc = acc + v[i_spv] * setup.data.p_pv0_w
        if i_swd is not None:
            acc = acc + v[i_swd] * setup.data.p_wind0_w
        return acc

    def constraints(v: np.ndarray) -> np.ndarray:
        c = np.empty(m_total)
        if setup.with_storage:
            co, _, _ = _coeffs(v[i_ss])
            xs0 = v[lay.idx_xs[:-1]]
            xs1 = v[lay.idx_xs[1:]]
            q_hp = (v[u[hp_idx, ucol["p_hp"]]] * hp_w).sum(axis=1)
            f = model.storage_rhs(xs1, q_hp, q_load_def, t_amb_def, co, t_hp)
            c[row0["defect"]:row0["defect"] + n_def * nxs] = (
                xs1 - xs0 - h_def * f).ravel()
            c[row0["per_s"]:row0["per_s"] + nxs] = v[lay.idx_xs[0]] - v[lay.idx_xs[-1]]
        if setup.with_battery:
            rate = model.battery_rate(v[u[:, ucol["p_bc"]]], v[u[:, ucol["p_bd"]]],
                                      bp, float(v[i_sb]))
            c[row0["batt"]:row0["batt"] + nf] = (
                v[lay.idx_xb[1:]] - v[lay.idx_xb[:-1]] - grid.fine_step_s * rate)
            c[row0["per_b"]] = v[lay.idx_xb[0]] - v[lay.idx_xb[-1]]
            p_b = v[u[:, ucol["p_bc"]]] - v[u[:, ucol["p_bd"]]]
        else:
            p_b = 0.0
        c[row0["balance"]:row0["balance"] + nf] = (
            _p_re(v) - p_load - v[u[:, ucol["p_hp"]]] - p_b
            + v[u[:, ucol["p_gb"]]] - v[u[:, ucol["p_gs"]]])
        if not setup.with_storage:
            c[row0["heat"]:row0["heat"] + nf] = (
                cop_cap * v[u[:, ucol["p_hp"]]] - setup.data.q_load_w)
        c[row0["hp_cap"]:row0["hp_cap"] + nf] = (
            cop_cap * v[u[:, ucol["p_hp"]]] - v[i_shp] * setup.hp_capacity_w)
        if setup.with_battery:
            c[row0["bc_cap"]:row0["bc_cap"] + nf] = (
                v[u[:, ucol["p_bc"]]] - v[i_sb] * p_lim)
            c[row0["bd_cap"]:row0["bd_cap"] + nf] = (
                v[u[:, ucol["p_bd"]]] - v[i_sb] * p_lim)
        return c

    def jacobian(v: np.ndarray) -> np.ndarray:
        data = np.empty(jac_rows.size)
        if setup.with_storage:
            co, co1, _ = _coeffs(v[i_ss])
            xs1 = v[lay.idx_xs[1:]]
            q_hp = (v[u[hp_idx, ucol["p_hp"]]] * hp_w).sum(axis=1)
            jf = model.storage_jac_x(xs1, q_hp, q_load_def, co, t_hp)
            jq = model.storage_jac_qhp(xs1, co, t_hp)
            f1 = model.storage_rhs(xs1, q_hp, q_load_def, t_amb_def, co1, t_hp,
                                   check=False)
            data[slot["defect_prev"]] = -1.0
            for a, b in pairs:
                eye = 1.0 if a == b else 0.0
                data[slot[("defect_next", a, b)]] = eye - h_def * jf[:, a, b]
            for m_row in range(m_layers):
                for i_col in range(hp_idx.shape[1]):
                    data[slot[("defect_php", m_row, i_col)]] = (
                        -h_def * jq[:, m_row] * hp_w[:, i_col])
            for a in range(nxs):
                data[slot[("defect_ss", a)]] = -h_def * f1[:, a]
            data[slot["per_s0"]] = 1.0
            data[slot["per_s1"]] = -1.0
        if setup.with_battery:
            s_b = float(v[i_sb])
            data[slot["batt_prev"]] = -1.0
            data[slot["batt_next"]] = 1.0
            data[slot["batt_pc"]] = -grid.fine_step_s * bp.eta_charge / (s_b * cb_j)
            data[slot["batt_pd"]] = grid.fine_step_s / (bp.eta_discharge * s_b * cb_j)
            rate = model.battery_rate(v[u[:, ucol["p_bc"]]], v[u[:, ucol["p_bd"]]],
                                      bp, s_b)
            data[slot["batt_sb"]] = grid.fine_step_s * rate / s_b
            data[slot["bal_pbc"]] = -1.0
            data[slot["bal_pbd"]] = 1.0
            data[slot["bc_p"]] = 1.0
            data[slot["bc_s"]] = -p_lim
            data[slot["bd_p"]] = 1.0
            data[slot["bd_s"]] = -p_lim
            data[slot["per_b0"]] = 1.0
            data[slot["per_b1"]] = -1.0
        data[slot["bal_php"]] = -1.0
        data[slot["bal_pgb"]] = 1.0
        data[slot["bal_pgs"]] = -1.0
        if i_spv is not None and pv_nz.size:
            data[slot["bal_spv"]] = setup.data.p_pv0_w[pv_nz]
        if i_swd is not None and wd_nz.size:
            data[slot["bal_swd"]] = setup.data.p_wind0_w[wd_nz]
        if not setup.with_storage:
            data[slot["heat_php"]] = cop_cap
        data[slot["cap_php"]] = cop_cap
        data[slot["cap_shp"]] = -setup.hp_capacity_w
        return data

    def hessian(v: np.ndarray, lam: np.ndarray, obj_factor: float = 1.0) -> np.ndarray:
        data = np.zeros(hess_rows.size)
        if setup.with_storage:
            co, co1, co2 = _coeffs(v[i_ss])
            xs1 = v[lay.idx_xs[1:]]
            q_hp = (v[u[hp_idx, ucol["p_hp"]]] * hp_w).sum(axis=1)
            lam_d = lam[row0["defect"]:row0["defect"] + n_def * nxs].reshape(n_def, nxs)
            wgt = -h_def * lam_d  # defect rows enter the Lagrangian as lam * c
            rho, e = model.hp_flow_shape(xs1, m_layers, t_hp)
            if m_layers >= 2:
                e2 = e * e
                # second derivative of the charge-shape term, contracted with
                # multipliers; only pairs (x_a, x_bottom) are nonzero
                wq = wgt[:, :m_layers] * co.inv_c[:m_layers] * q_hp[:, None]
                xx = np.zeros((n_def, m_layers))
                xx[:, m_layers - 1] += (2.0 * rho * e[:, None] ** 2 * wq).sum(axis=1)
                xx[:, m_layers - 1] += -2.0 * e2 * wq[:, m_layers - 1]
                xx[:, 0] += -e2 * wq[:, 0]
                for mm in range(1, m_layers):
                    xx[:, mm - 1] += e2 * wq[:, mm]
                    if mm < m_layers - 1:
                        xx[:, mm] += -e2 * wq[:, mm]
                for a in range(m_layers):
                    data[h_slot[("h_xx", a)]] += xx[:, a]
                # mixed control-state pairs: sum_m wgt_m * inv_c_m * drho_m/dx_a
                wp = wgt[:, :m_layers] * co.inv_c[:m_layers]
                g_x = np.zeros((n_def, m_layers))
                g_x -= e[:, None] * wp
                g_x[:, :m_layers - 1] += e[:, None] * wp[:, 1:]
                g_x[:, m_layers - 1] += (rho * e[:, None] * wp).sum(axis=1)
                for a in range(m_layers):
                    for i_col in range(hp_idx.shape[1]):
                        data[h_slot[("h_xp", a, i_col)]] += (
                            g_x[:, a] * hp_w[:, i_col])
            jf1 = model.storage_jac_x(xs1, q_hp, q_load_def, co1, t_hp)
            xs_col = np.einsum("jm,jma->ja", wgt, jf1)
            for a in range(nxs):
                data[h_slot[("h_xs", a)]] += xs_col[:, a]
            jq1 = model.storage_jac_qhp(xs1, co1, t_hp)
            ps = (wgt * jq1).sum(axis=1)
            for i_col in range(hp_idx.shape[1]):
                data[h_slot[("h_ps", i_col)]] += ps * hp_w[:, i_col]
            f2 = model.storage_rhs(xs1, q_hp, q_load_def, t_amb_def, co2, t_hp,
                                   check=False)
            data[h_slot["h_ss"]] = (wgt * f2).sum()
        if setup.with_battery:
            # defect is xb1 - xb0 - h*rate(s_b) with rate = base/(s_b*C):
            # d2/dP ds = +/- h*eta/(s^2 C), d2/ds2 = -2h*rate/s^2
            s_b = float(v[i_sb])
            lam_b = lam[row0["batt"]:row0["batt"] + nf]
            h_f = grid.fine_step_s
            data[h_slot["h_bcs"]] = lam_b * h_f * bp.eta_charge / (s_b**2 * cb_j)
            data[h_slot["h_bds"]] = -lam_b * h_f / (bp.eta_discharge * s_b**2 * cb_j)
            rate = model.battery_rate(v[u[:, ucol["p_bc"]]], v[u[:, ucol["p_bd"]]],
                                      bp, s_b)
            data[h_slot["h_sbsb"]] = float((-2.0 * h_f * lam_b * rate / s_b**2).sum())
        return data

    duplicated = (nxs + (1 if setup.with_battery else 0))

    meta = {
        "layout": lay,
        "variant": setup.variant,
        "form": "averaged" if lay.averaged else "full",
        "counts": counts,
        "row0": row0,
        "n_fine": nf,
        "n_coarse": grid.n_coarse if lay.averaged else None,
        "duplicated_node_vars": duplicated,
        "theta_names": lay.theta_names,
        "n_def": n_def,
        "h_def": h_def,
    }

    return SparseNlp(
        n=lay.n, m=m_total, lb=lb, ub=ub, cl=cl, cu=cu,
        var_scale=var_scale, con_scale=con_scale, obj_scale=OBJ_SCALE,
        grad_vector=grad, jac_rows=jac_rows, jac_cols=jac_cols,
        hess_rows=hess_rows, hess_cols=hess_cols,
        _constraints=constraints, _jacobian=jacobian, _hessian=hessian,
        meta=meta, name_of=lay.name_of)


def _jac_structure_mask(m: int, n: int) -> np.ndarray:
    """Structural nonzeros of the thermal state Jacobian (plus the diagonal)."""
    nxs = m + n
    mask = np.zeros((nxs, nxs), dtype=bool)
    for i in range(m):
        mask[i, i] = True
        if i > 0:
            mask[i, i - 1] = True
        if i < m - 1:
            mask[i, i + 1] = True
        mask[i, m] = True            # first ground node
        if m >= 2:
            mask[i, m - 1] = True    # charge-loop gap
            mask[i, 0] = True if i == m - 1 else mask[i, 0]  # load return
    for j in range(n):
        idx = m + j
        mask[idx, idx] = True
        if j > 0:
            mask[idx, idx - 1] = True
        if j < n - 1:
            mask[idx, idx + 1] = True
        if j == 0:
            mask[idx, :m] = True
    return mask


def variable_count(grid: GridSpec, m_layers: int = 4, n_ground: int = 2,
                   n_controls: int = 5, n_theta: int = 5,
                   averaged: bool = False) -> int:
    """Closed-form variable count with node-inclusive periodic endpoints."""
    nxs = m_layers + n_ground
    if averaged:
        return ((grid.n_coarse + 1) * nxs + (grid.n_fine + 1)
                + grid.n_fine * n_controls + n_theta)
    return (grid.n_fine + 1) * (nxs + 1) + grid.n_fine * n_controls + n_theta
