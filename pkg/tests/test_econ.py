"""Annuity, cost, efficiency, and autonomy arithmetic checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stesopt import econ
from stesopt.errors import DataError


class TestAnnuity:
    def test_reference_value(self):
        assert econ.annuity_factor(0.04, 30) == pytest.approx(0.057830, abs=1e-6)

    def test_single_year(self):
        assert econ.annuity_factor(0.07, 1) == pytest.approx(1.07, rel=1e-12)

    def test_identity_with_discount_sum(self):
        anf = econ.annuity_factor(0.04, 30)
        assert anf * econ.present_value_factor(0.04, 30) == pytest.approx(1.0, abs=1e-12)

    @given(rate=st.floats(0.001, 0.5), years=st.integers(1, 100))
    @settings(max_examples=100, deadline=None)
    def test_identity_random(self, rate, years):
        anf = econ.annuity_factor(rate, years)
        pv = econ.present_value_factor(rate, years)
        assert abs(anf * pv - 1.0) <= 1e-12
        brute = sum((1.0 + rate) ** (-t) for t in range(1, years + 1))
        assert pv == pytest.approx(brute, rel=1e-10)


class TestFixedCost:
    TABLE = econ.CostTable()

    def test_battery_megawatt_hour(self):
        # 476 $/kWh * 0.92 EUR/$ * 1000 kWh
        out = econ.fixed_cost({"battery": 1e6}, self.TABLE)
        assert out["capex"]["battery"] == pytest.approx(437_920.0)
        assert out["opex"]["battery"] == pytest.approx(0.02 * 437_920.0)

    def test_heatpump_megawatt(self):
        out = econ.fixed_cost({"heatpump": 1e6}, self.TABLE)
        assert out["capex"]["heatpump"] == pytest.approx(651_000.0)  # EUR-priced row

    def test_storage_volume(self):
        out = econ.fixed_cost({"storage": 200_000.0}, self.TABLE)
        assert out["capex"]["storage"] == pytest.approx(6.0e6)
        assert out["opex"]["storage"] == pytest.approx(0.01 * 6.0e6)

    def test_linearity_in_capacity(self):
        small = econ.fixed_cost({"pv": 1e6, "wind": 2e6}, self.TABLE)
        big = econ.fixed_cost({"pv": 3e6, "wind": 6e6}, self.TABLE)
        assert big["j_fix"] == pytest.approx(3.0 * small["j_fix"], rel=1e-12)

    def test_j_fix_composition(self):
        caps = {"pv": 5e6, "wind": 3e6, "battery": 2e6, "storage": 1e5, "heatpump": 4e6}
        out = econ.fixed_cost(caps, self.TABLE)
        anf = econ.annuity_factor(0.04, 30)
        assert out["ani"] == pytest.approx(anf * out["capex_sum"], rel=1e-12)
        assert out["j_fix"] == pytest.approx(out["ani"] + out["opex_sum"], rel=1e-12)

    def test_monotone_in_each_component(self):
        base = {"pv": 1e6, "wind": 1e6, "battery": 1e6, "storage": 1e4, "heatpump": 1e6}
        ref = econ.fixed_cost(base, self.TABLE)["j_fix"]
        for comp in base:
            bumped = dict(base)
            bumped[comp] *= 1.5
            assert econ.fixed_cost(bumped, self.TABLE)["j_fix"] > ref


class TestRunningCost:
    TABLE = econ.CostTable()

    def test_zero_exchange(self):
        assert econ.running_cost(np.zeros(10), np.zeros(10), self.TABLE) == 0.0

    def test_constant_import(self):
        # 1 kW all year: 8760 kWh at 0.30 EUR
        buy = np.full(8760, 1000.0)
        assert econ.running_cost(buy, np.zeros(8760), self.TABLE) == pytest.approx(2628.0)

    def test_constant_export(self):
        sell = np.full(8760, 1000.0)
        assert econ.running_cost(np.zeros(8760), sell, self.TABLE) == pytest.approx(-87.60)


class TestEfficiencyAndAutonomy:
    def test_periodic_lossless_is_unity(self):
        q_in = np.array([1e6, 0.0, 1e6, 0.0])
        q_out = np.array([0.0, 1e6, 0.0, 1e6])
        assert econ.storage_efficiency(q_in, q_out) == pytest.approx(1.0)

    def test_zero_charge_undefined(self):
        assert econ.storage_efficiency(np.zeros(4), np.ones(4)) is None
        assert econ.storage_efficiency(np.zeros(4), np.zeros(4)) is None
        assert econ.storage_efficiency(np.ones(4), np.zeros(4)) == pytest.approx(0.0)

    def test_autonomy_extremes(self):
        p_hp = np.full(10, 1e6)
        p_load = np.full(10, 2e6)
        assert econ.autonomy(p_hp, p_load, np.zeros(10)) == pytest.approx(1.0)
        assert econ.autonomy(np.zeros(10), p_load, p_load) == pytest.approx(0.0)

    def test_autonomy_partial(self):
        p_hp = np.full(10, 1e6)
        p_load = np.full(10, 2e6)
        buy = np.full(10, 0.3e6)  # 10% of total
        assert econ.autonomy(p_hp, p_load, buy) == pytest.approx(0.9)

    def test_autonomy_zero_demand_rejected(self):
        with pytest.raises(DataError):
            econ.autonomy(np.zeros(4), np.zeros(4), np.zeros(4))


class TestBreakdown:
    def _make(self):
        table = econ.CostTable()
        caps = {"pv": 22.25e6, "wind": 13.1e6, "battery": 9.65e6,
                "storage": 261851.0, "heatpump": 13.86e6}
        fixed = econ.fixed_cost(caps, table)
        return econ.CostBreakdown(
            capacities=caps, capex=fixed["capex"], opex_yearly=fixed["opex"],
            grid_import_yearly=25.37e6 / econ.present_value_factor(0.04, 30),
            grid_export_yearly=1.63e6 / econ.present_value_factor(0.04, 30),
            ani=fixed["ani"], table=table)

    def test_npv_composition(self):
        bd = self._make()
        npv = bd.npv()
        pv = econ.present_value_factor(0.04, 30)
        assert npv["total_npv"] == pytest.approx(
            bd.capex_sum + pv * (bd.opex_sum + bd.grid_net_yearly), rel=1e-12)

    def test_yearly_equals_annuitized_npv(self):
        # the two report views agree: yearly total * discount sum = NPV
        bd = self._make()
        pv = econ.present_value_factor(0.04, 30)
        lhs = bd.yearly_total * pv
        rhs = bd.npv()["total_npv"] - bd.capex_sum + bd.ani * pv
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_render_contains_rows(self):
        text = econ.render_breakdown_table(self._make())
        for label in ("Grid", "Heatpump", "PTES", "PV", "Wind", "Battery",
                      "Total", "Yearly"):
            assert label in text
