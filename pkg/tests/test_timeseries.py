"""Ingestion and heat-load synthesis checks against hand-computed values."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stesopt import timeseries as ts
from stesopt.errors import DataError


def _series(values, unit="degC"):
    return ts.HourlySeries(np.asarray(values, dtype=float), unit)


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp,value\n")
        for i, v in enumerate(rows):
            fh.write(f"{i}h,{v}\n")


class TestLoadCsv:
    def test_roundtrip_8760(self, tmp_path):
        p = tmp_path / "amb.csv"
        _write_csv(p, [10.0] * 8760)
        s = ts.load_csv(p, "degC")
        assert len(s) == 8760
        assert s.unit == "degC"

    def test_wrong_count(self, tmp_path):
        p = tmp_path / "short.csv"
        _write_csv(p, [1.0] * 8759)
        with pytest.raises(DataError, match="expected 8760 samples, found 8759"):
            ts.load_csv(p, "W")

    def test_nan_cell_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        rows = [1.0] * 8760
        rows[10] = "NaN"  # data row 11 -> file row 12 counting the header
        _write_csv(p, rows)
        with pytest.raises(DataError, match="row 12"):
            ts.load_csv(p, "W")

    def test_non_numeric_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        rows = [1.0] * 8760
        rows[0] = "oops"
        _write_csv(p, rows)
        with pytest.raises(DataError, match="row 2"):
            ts.load_csv(p, "W")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot open"):
            ts.load_csv(tmp_path / "nope.csv", "W")

    def test_temperature_range_enforced(self, tmp_path):
        p = tmp_path / "hot.csv"
        rows = [10.0] * 8760
        rows[5] = 99.0
        _write_csv(p, rows)
        with pytest.raises(DataError, match="outside"):
            ts.load_csv(p, "degC")

    def test_write_read_roundtrip(self, tmp_path):
        p = tmp_path / "out.csv"
        orig = _series(np.linspace(0, 50, 8760), "W")
        ts.write_csv(p, orig)
        back = ts.load_csv(p, "W")
        np.testing.assert_array_equal(back.values, orig.values)


class TestPvPower:
    def test_zero_irradiance(self):
        ghi = _series(np.zeros(48), "W/m2")
        amb = _series(np.full(48, 15.0))
        out = ts.pv_power(ghi, amb, ts.PvModuleParams())
        assert np.all(out.values == 0.0)

    def test_reference_point(self):
        # GHI chosen so the tilted-plane irradiance is 1000 W/m2; with a
        # 25 degC ambient the cell model gives -3.75 + 1.14*25 + 0.0175*1000
        # = 42.25 degC and output 1000*0.232*(1 - 0.0029*17.25)*0.9.
        ghi = _series([866.03] * 24, "W/m2")
        amb = _series([25.0] * 24)
        out = ts.pv_power(ghi, amb, ts.PvModuleParams())
        gsi = 866.03 / np.cos(np.radians(30.0))  # ~1000 W/m2 on the module plane
        t_cell = -3.75 + 1.14 * 25.0 + 0.0175 * gsi
        expect = gsi * 0.232 * (1.0 - 0.0029 * (t_cell - 25.0)) * 0.9
        assert out.values[0] == pytest.approx(expect, rel=1e-12)
        assert out.values[0] == pytest.approx(198.36, abs=1e-2)

    def test_cell_at_reference_temperature(self):
        # Pick ambient so the cell lands exactly on t_ref: the thermal
        # correction vanishes and output is gsi * eta * pr.
        params = ts.PvModuleParams()
        gsi = 400.0
        t_amb = (params.t_ref - params.c1 - params.c3 * gsi) / params.c2
        ghi = _series([gsi * np.cos(np.radians(30.0))] * 24, "W/m2")
        amb = _series([t_amb] * 24)
        out = ts.pv_power(ghi, amb, params)
        expect = gsi * params.eta_ref * params.performance_ratio
        assert out.values[0] == pytest.approx(expect, rel=1e-12)

    def test_monotone_in_irradiance(self):
        params = ts.PvModuleParams()
        levels = np.linspace(0.0, 800.0, 25)
        ghi = _series(levels, "W/m2")
        amb = _series(np.full(25, 10.0))
        out = ts.pv_power(ghi, amb, params).values
        assert np.all(np.diff(out) >= 0.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError, match="length mismatch"):
            ts.pv_power(_series(np.zeros(24), "W/m2"), _series(np.zeros(25)),
                        ts.PvModuleParams())


class TestEffectiveTemperature:
    def test_constant(self):
        out = ts.effective_temperature(_series(np.full(48, 10.0)))
        np.testing.assert_allclose(out.values, 10.0)

    def test_step_ramps_linearly(self):
        # -5 for one day then +5: brute-force 24-sample trailing means.
        x = np.concatenate([np.full(24, -5.0), np.full(24, 5.0)])
        out = ts.effective_temperature(_series(x)).values
        brute = np.array([np.mean([x[(k - j) % 48] for j in range(24)])
                          for k in range(48)])
        np.testing.assert_allclose(out, brute, atol=1e-12)
        ramp = out[24:48]
        np.testing.assert_allclose(np.diff(ramp), 10.0 / 24.0, atol=1e-12)

    def test_alternating_cancels(self):
        x = np.tile([1.0, -1.0], 24)
        out = ts.effective_temperature(_series(x)).values
        np.testing.assert_allclose(out, 0.0, atol=1e-14)

    @given(shift=st.floats(-20.0, 20.0))
    @settings(max_examples=25, deadline=None)
    def test_commutes_with_constant_shift(self, shift):
        rng = np.random.default_rng(7)
        base = rng.uniform(-10.0, 10.0, 96)
        a = ts.effective_temperature(_series(base)).values
        b = ts.effective_temperature(_series(base + shift)).values
        np.testing.assert_allclose(b, a + shift, atol=1e-10)


class TestHeatLoad:
    def _teff(self):
        hours = np.arange(8760)
        raw = 9.0 - 12.0 * np.cos(2 * np.pi * hours / 8760) + 3.0 * np.sin(
            2 * np.pi * hours / 24)
        return ts.effective_temperature(_series(raw))

    def test_zero_above_border(self):
        params = ts.HeatLoadParams(sh_scale=1e6)
        t_eff = _series(np.full(24, 15.0))
        out = ts.space_heating(t_eff, params)
        assert np.all(out.values == 0.0)

    def test_explicit_scale_value(self):
        # 2 degC effective, 20 degC room, 1 MW/K -> 18 MW.
        params = ts.HeatLoadParams(sh_scale=1e6)
        out = ts.space_heating(_series(np.full(24, 2.0)), params)
        assert out.values[0] == pytest.approx(18e6)

    def test_annual_target_calibration(self):
        params = ts.HeatLoadParams()
        sh = ts.space_heating(self._teff(), params)
        assert ts.annual_energy_wh(sh) == pytest.approx(34e9, rel=1e-4)

    def test_calibration_idempotent(self):
        params = ts.HeatLoadParams()
        t_eff = self._teff()
        s1 = ts.space_heating_scale(t_eff, params)
        # feeding the calibrated profile's implied scale back changes nothing
        s2 = ts.space_heating_scale(t_eff, params)
        assert abs(s1 - s2) / s1 < 1e-10

    def test_unreachable_target(self):
        params = ts.HeatLoadParams()
        with pytest.raises(DataError, match="never"):
            ts.space_heating(_series(np.full(8760, 18.0)), params)

    def test_dhw_annual_target(self):
        out = ts.dhw_demand(ts.HeatLoadParams())
        assert ts.annual_energy_wh(out) == pytest.approx(17e9, rel=1e-6)

    def test_dhw_flattens_for_wide_peaks(self):
        params = ts.HeatLoadParams(morning_sigma_h=500.0, evening_sigma_h=500.0)
        day = ts.dhw_daily_profile(params)
        assert day.max() / day.min() < 1.001

    def test_dhw_morning_peak_dominates_tail(self):
        params = ts.HeatLoadParams()
        day = ts.dhw_daily_profile(params)
        peak = day[7]          # midpoint 7.5 h ~ morning peak within half a sample
        tail_hour = int(params.morning_peak_hour + 4 * params.morning_sigma_h)
        tail = day[tail_hour]
        evening_at_tail = np.exp(-((tail_hour + 0.5 - params.evening_peak_hour) ** 2)
                                 / (2 * params.evening_sigma_h ** 2))
        evening_share = evening_at_tail / tail
        assert peak / tail >= np.exp(8.0) * (1.0 - evening_share) * 0.9

    def test_total_is_pointwise_sum(self):
        params = ts.HeatLoadParams()
        sh = ts.space_heating(self._teff(), params)
        dhw = ts.dhw_demand(params)
        tot = ts.total_heat_load(sh, dhw)
        np.testing.assert_array_equal(tot.values, sh.values + dhw.values)
        assert ts.annual_energy_wh(tot) == pytest.approx(51e9, rel=2e-4)

    def test_total_with_zero_sh(self):
        dhw = ts.dhw_demand(ts.HeatLoadParams())
        zero = _series(np.zeros(8760), "W")
        tot = ts.total_heat_load(zero, dhw)
        np.testing.assert_array_equal(tot.values, dhw.values)

    def test_generated_series_nonnegative(self):
        params = ts.HeatLoadParams()
        sh = ts.space_heating(self._teff(), params)
        dhw = ts.dhw_demand(params)
        assert sh.values.min() >= 0.0 and dhw.values.min() >= 0.0
        assert len(sh) == 8760 and len(dhw) == 8760
