"""Investment annuities, operating cost, and solution economics reporting.

Component capital costs follow a fixed price table; dollar-priced rows are
converted once at a configured exchange rate. The optimizer's objective
uses the yearly view (annuity of investment plus yearly operating and grid
cost); reports additionally show 30-year discounted present values of the
recurring terms so both framings are available.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

WH_PER_KWH = 1000.0
SECONDS_PER_HOUR = 3600.0

COMPONENTS = ("pv", "wind", "battery", "storage", "heatpump")


@dataclass(frozen=True)
class CostTable:
    """Unit investment costs, operating-cost fractions, prices, and financing."""

    pv_cost_usd_per_kw: float = 1491.0
    wind_cost_usd_per_kw: float = 1569.0
    battery_cost_usd_per_kwh: float = 476.0
    storage_cost_eur_per_m3: float = 30.0
    hp_cost_eur_per_kw: float = 651.0
    opex_fraction: dict = field(default_factory=lambda: {
        "pv": 0.01, "wind": 0.02, "battery": 0.02, "storage": 0.01, "heatpump": 0.025})
    fx_usd_to_eur: float = 0.92
    price_buy_eur_per_kwh: float = 0.30
    price_sell_eur_per_kwh: float = 0.01
    horizon_years: int = 30
    interest_rate: float = 0.04
    gross_floor_area_m2: float = 1.1e6

    def __post_init__(self):
        if not 0.0 < self.interest_rate < 1.0:
            raise ConfigError("interest rate must be in (0, 1)")
        if self.horizon_years < 1:
            raise ConfigError("horizon must be at least one year")
        costs = (self.pv_cost_usd_per_kw, self.wind_cost_usd_per_kw,
                 self.battery_cost_usd_per_kwh, self.storage_cost_eur_per_m3,
                 self.hp_cost_eur_per_kw)
        if any(c < 0 for c in costs):
            raise ConfigError("unit costs must be non-negative")


def annuity_factor(rate: float, years: int) -> float:
    """Constant yearly payment per unit of capital over ``years`` at ``rate``."""
    if rate <= 0.0:
        raise ConfigError("annuity factor needs a positive rate")
    growth = (1.0 + rate) ** years
    return rate * growth / (growth - 1.0)


def present_value_factor(rate: float, years: int) -> float:
    """Sum of end-of-year discount factors, the inverse of the annuity factor."""
    return (1.0 - (1.0 + rate) ** (-years)) / rate


def capex_eur(component: str, capacity: float, table: CostTable) -> float:
    """Capital cost of one component; ``capacity`` in W, Wh, or m3 as appropriate."""
    if component == "pv":
        return table.pv_cost_usd_per_kw * table.fx_usd_to_eur * capacity / WH_PER_KWH
    if component == "wind":
        return table.wind_cost_usd_per_kw * table.fx_usd_to_eur * capacity / WH_PER_KWH
    if component == "battery":
        return table.battery_cost_usd_per_kwh * table.fx_usd_to_eur * capacity / WH_PER_KWH
    if component == "storage":
        return table.storage_cost_eur_per_m3 * capacity
    if component == "heatpump":
        return table.hp_cost_eur_per_kw * capacity / WH_PER_KWH
    raise ConfigError(f"unknown component {component!r}")


def fixed_cost(capacities: dict, table: CostTable) -> dict:
    """Yearly fixed cost of a sized system.

    ``capacities`` maps component names to installed capacity (W for pv,
    wind, heatpump; Wh for battery; m3 for storage); absent components
    cost nothing. Returns per-component capex/opex plus the annuity and
    total yearly fixed cost.
    """
    capex = {c: capex_eur(c, cap, table) for c, cap in capacities.items()}
    opex = {c: table.opex_fraction[c] * v for c, v in capex.items()}
    capex_sum = sum(capex.values())
    opex_sum = sum(opex.values())
    ani = annuity_factor(table.interest_rate, table.horizon_years) * capex_sum
    return {"capex": capex, "opex": opex, "capex_sum": capex_sum,
            "opex_sum": opex_sum, "ani": ani, "j_fix": ani + opex_sum}


def running_cost(grid_buy_w, grid_sell_w, table: CostTable,
                 step_s: float = SECONDS_PER_HOUR) -> float:
    """Yearly grid cost (EUR): purchases minus feed-in revenue."""
    buy = np.asarray(grid_buy_w, dtype=float)
    sell = np.asarray(grid_sell_w, dtype=float)
    if buy.shape != sell.shape:
        raise DataError("grid import/export series must share one grid")
    to_kwh = step_s / SECONDS_PER_HOUR / WH_PER_KWH
    return float(to_kwh * (table.price_buy_eur_per_kwh * buy.sum()
                           - table.price_sell_eur_per_kwh * sell.sum()))


def storage_efficiency(q_in_w, q_out_w, step_s: float = SECONDS_PER_HOUR):
    """Delivered over charged heat across one cycle; ``None`` when nothing charged."""
    e_in = float(np.sum(q_in_w)) * step_s
    e_out = float(np.sum(q_out_w)) * step_s
    if e_in <= 0.0:
        return None
    return e_out / e_in


def autonomy(p_hp_w, p_load_w, p_grid_buy_w, step_s: float = SECONDS_PER_HOUR) -> float:
    """Share of total electric demand (including heat pump) not bought from the grid."""
    e_tot = float(np.sum(np.asarray(p_hp_w) + np.asarray(p_load_w))) * step_s
    if e_tot <= 0.0:
        raise DataError("autonomy undefined: zero total electricity demand")
    e_buy = float(np.sum(p_grid_buy_w)) * step_s
    return 1.0 - e_buy / e_tot


@dataclass
class CostBreakdown:
    """Per-component economics of one solved scenario."""

    capacities: dict            # component -> installed capacity (W / Wh / m3)
    capex: dict                 # component -> EUR at t=0
    opex_yearly: dict           # component -> EUR per year
    grid_import_yearly: float   # EUR per year
    grid_export_yearly: float   # EUR per year (revenue, positive)
    ani: float                  # EUR per year
    table: CostTable

    @property
    def capex_sum(self):
        return sum(self.capex.values())

    @property
    def opex_sum(self):
        return sum(self.opex_yearly.values())

    @property
    def grid_net_yearly(self):
        return self.grid_import_yearly - self.grid_export_yearly

    @property
    def yearly_total(self):
        """Objective-equivalent yearly cost: annuity + opex + net grid."""
        return self.ani + self.opex_sum + self.grid_net_yearly

    @property
    def yearly_cost_per_m2(self):
        return self.yearly_total / self.table.gross_floor_area_m2

    def npv(self) -> dict:
        """30-year present values: capex up front, recurring terms discounted."""
        pv = present_value_factor(self.table.interest_rate, self.table.horizon_years)
        rows = {c: {"capex": self.capex.get(c, 0.0),
                    "opex_npv": pv * self.opex_yearly.get(c, 0.0)}
                for c in self.capex}
        total = (self.capex_sum + pv * self.opex_sum + pv * self.grid_net_yearly)
        return {"per_component": rows,
                "grid_import_npv": pv * self.grid_import_yearly,
                "grid_export_npv": pv * self.grid_export_yearly,
                "opex_npv_sum": pv * self.opex_sum,
                "total_npv": total,
                "pv_factor": pv}

    def as_dict(self) -> dict:
        npv = self.npv()
        return {
            "capacities": dict(self.capacities),
            "capex_eur": dict(self.capex),
            "opex_yearly_eur": dict(self.opex_yearly),
            "grid_import_yearly_eur": self.grid_import_yearly,
            "grid_export_yearly_eur": self.grid_export_yearly,
            "ani_eur": self.ani,
            "capex_sum_eur": self.capex_sum,
            "opex_sum_yearly_eur": self.opex_sum,
            "yearly_total_eur": self.yearly_total,
            "yearly_cost_per_m2_eur": self.yearly_cost_per_m2,
            "npv": npv,
        }


_UNITS = {"pv": "MW_p", "wind": "MW_p", "battery": "MWh", "storage": "m3",
          "heatpump": "MW_th"}
_LABELS = {"pv": "PV", "wind": "Wind", "battery": "Battery", "storage": "PTES",
           "heatpump": "Heatpump"}


def _fmt_cap(component, value):
    if component == "storage":
        return f"{value:,.0f}".replace(",", " ")
    return f"{value / 1e6:.2f}"


def render_breakdown_table(bd: CostBreakdown) -> str:
    """Aligned text table of the scenario economics (NPV view)."""
    npv = bd.npv()
    lines = []
    wid = (10, 10, 12, 8)

    def row(cat, metric, val, unit):
        lines.append(f"{cat:<{wid[0]}}{metric:<{wid[1]}}{val:>{wid[2]}}  {unit}")

    row("Category", "Metric", "Value", "Unit")
    lines.append("-" * (sum(wid) + 6))
    row("Grid", "Import", f"{npv['grid_import_npv'] / 1e6:.2f}", "MEUR")
    row("", "Export", f"{-npv['grid_export_npv'] / 1e6:.2f}", "MEUR")
    for comp in ("heatpump", "storage", "pv", "wind", "battery"):
        if comp not in bd.capex:
            continue
        row(_LABELS[comp], "Capacity", _fmt_cap(comp, bd.capacities[comp]), _UNITS[comp])
        row("", "CAPEX", f"{bd.capex[comp] / 1e6:.2f}", "MEUR")
        row("", "OPEX", f"{npv['per_component'][comp]['opex_npv'] / 1e6:.2f}", "MEUR")
    row("Total", "CAPEX", f"{bd.capex_sum / 1e6:.2f}", "MEUR")
    row("", "OPEX", f"{npv['opex_npv_sum'] / 1e6:.2f}", "MEUR")
    row("", "Total NPV", f"{npv['total_npv'] / 1e6:.2f}", "MEUR")
    row("", "Yearly", f"{bd.yearly_cost_per_m2:.2f}", "EUR/m2")
    return "\n".join(lines)
