"""Transcription checks: counts, derivative exactness, averaging identities."""

import numpy as np
import pytest

from stesopt import econ, model, sim, transcribe
from stesopt.geometry import GroundMesh, StorageGeometry, ThermalParams, dyn_coeffs
from stesopt.grids import GridSpec
from stesopt.model import BatteryParams, HeatPumpParams
from stesopt.scenario import SyntheticSpec, synthetic_exogenous


def make_setup(n_fine=48, variant="full", district_scale=0.1, seed=2309):
    grid = GridSpec(n_fine=n_fine)
    data = synthetic_exogenous(grid, SyntheticSpec(district_scale=district_scale,
                                                   seed=seed))
    caps = data.capacities
    return transcribe.ProblemSetup(
        grid=grid, data=data, geometry=StorageGeometry(), ground=GroundMesh(),
        thermal=ThermalParams(), heat_pump=HeatPumpParams(capacity_w=caps["hp_w"]),
        battery=BatteryParams(capacity_wh=caps["battery_wh"]), costs=econ.CostTable(),
        pv_capacity_w=caps["pv_w"], wind_capacity_w=caps["wind_w"],
        battery_capacity_wh=caps["battery_wh"], hp_capacity_w=caps["hp_w"],
        variant=variant)


def random_point(nlp, rng, span=4e6):
    lo = np.where(np.isfinite(nlp.lb), nlp.lb, 0.0)
    hi = np.where(np.isfinite(nlp.ub), nlp.ub, lo + span)
    v = lo + (hi - lo) * rng.uniform(0.05, 0.95, nlp.n)
    return v


class TestCounts:
    def test_toy_24_interval_count(self):
        setup = make_setup(n_fine=24)
        nlp = transcribe.build_full_nlp(setup)
        assert nlp.n == 25 * 7 + 24 * 5 + 5 == 300
        assert nlp.n == transcribe.variable_count(setup.grid)

    def test_default_grid_counts(self):
        grid = GridSpec()
        assert transcribe.variable_count(grid) == 105_132
        assert abs(transcribe.variable_count(grid) - 105_130) <= 5
        assert transcribe.variable_count(grid, averaged=True) == 54_762

    def test_full_year_problem_counts(self):
        setup = make_setup(n_fine=8760)
        full = transcribe.build_full_nlp(setup)
        red = transcribe.build_averaged_nlp(setup)
        assert abs(full.n - 105_130) <= 5
        assert abs(red.n - 54_762) <= 2
        # roughly half the variables, as advertised
        assert red.n / full.n < 0.55
        assert full.summary()["variables_periodic_identified"] == full.n - 7

    def test_constraint_counts_full(self):
        setup = make_setup(n_fine=48)
        nlp = transcribe.build_full_nlp(setup)
        c = nlp.meta["counts"]
        assert c["storage_defects"] == 48 * 6
        assert c["battery_defects"] == 48
        assert c["power_balance"] == 48
        assert c["hp_capacity"] == 48
        assert c["battery_capacity"] == 96
        assert c["periodicity_storage"] == 6
        assert c["periodicity_battery"] == 1
        assert nlp.m == sum(c.values())

    def test_variant_no_wind_drops_theta(self):
        nlp = transcribe.build_full_nlp(make_setup(variant="no-wind"))
        assert "wind" not in nlp.meta["theta_names"]
        assert len(nlp.meta["theta_names"]) == 4

    def test_variant_no_ptes_has_no_thermal_states(self):
        nlp = transcribe.build_full_nlp(make_setup(variant="no-ptes"))
        assert nlp.meta["layout"].idx_xs is None
        assert "heat_balance" in nlp.meta["counts"]
        assert "storage" not in nlp.meta["theta_names"]

    def test_variant_only_hp(self):
        nlp = transcribe.build_full_nlp(make_setup(variant="only-hp"))
        assert nlp.meta["theta_names"] == ["heatpump"]
        assert nlp.meta["layout"].idx_xb is None
        assert nlp.meta["layout"].n_u == 3


class TestInitialGuess:
    def test_values_and_feasibility(self):
        setup = make_setup()
        nlp = transcribe.build_full_nlp(setup)
        v = transcribe.initial_guess(setup, nlp)
        lay = nlp.meta["layout"]
        # storage profile flat at 30 degC, clipped to the 40 degC top bound
        assert np.all(v[lay.idx_xs[:, 0]] == 40.0)
        np.testing.assert_array_equal(v[lay.idx_xs[:, 1:4]], 30.0)
        np.testing.assert_array_equal(v[lay.idx_xs[:, 4:]], 13.5)
        np.testing.assert_array_equal(v[lay.idx_xb], 0.5)
        np.testing.assert_array_equal(v[lay.idx_u], 0.0)
        for i in lay.idx_theta.values():
            assert v[i] == 1.0
        assert np.all(v >= nlp.lb) and np.all(v <= nlp.ub)


class TestObjective:
    def test_zero_controls_gives_fixed_cost_only(self):
        setup = make_setup()
        nlp = transcribe.build_full_nlp(setup)
        v = transcribe.initial_guess(setup, nlp)
        table = setup.costs
        anf = econ.annuity_factor(table.interest_rate, table.horizon_years)
        expect = 0.0
        from stesopt.geometry import derive_network
        vol = derive_network(setup.geometry, setup.ground, setup.thermal).volume_total
        for name in nlp.meta["theta_names"]:
            base = (econ.capex_eur("storage", vol, table) if name == "storage"
                    else econ.capex_eur(name, setup.reference_capacity(name), table))
            expect += (anf + table.opex_fraction[name]) * base
        expect *= setup.grid.horizon_s / (8760.0 * 3600.0)  # pro-rata fixed cost
        assert nlp.objective(v) == pytest.approx(expect, rel=1e-12)

    def test_grid_purchase_price(self):
        # buying 1 MW for one hour at 0.30 EUR/kWh costs 300 EUR
        setup = make_setup()
        nlp = transcribe.build_full_nlp(setup)
        lay = nlp.meta["layout"]
        v0 = transcribe.initial_guess(setup, nlp)
        v1 = v0.copy()
        v1[lay.idx_u[7, lay.u_cols["p_gb"]]] = 1e6
        assert nlp.objective(v1) - nlp.objective(v0) == pytest.approx(300.0)
        v2 = v0.copy()
        v2[lay.idx_u[3, lay.u_cols["p_gs"]]] = 1e6
        assert nlp.objective(v2) - nlp.objective(v0) == pytest.approx(-10.0)

    def test_gradient_is_constant_linear(self):
        setup = make_setup()
        nlp = transcribe.build_full_nlp(setup)
        rng = np.random.default_rng(0)
        v = random_point(nlp, rng)
        g = nlp.gradient(v)
        d = rng.standard_normal(nlp.n)
        eps = 1e-3
        fd = (nlp.objective(v + eps * d) - nlp.objective(v - eps * d)) / (2 * eps)
        assert fd == pytest.approx(float(g @ d), rel=1e-9)

    def test_full_and_averaged_objectives_agree(self):
        setup = make_setup(n_fine=96)
        full = transcribe.build_full_nlp(setup)
        red = transcribe.build_averaged_nlp(setup)
        rng = np.random.default_rng(5)
        vf = random_point(full, rng)
        vr = random_point(red, rng)
        lf, lr = full.meta["layout"], red.meta["layout"]
        # copy shared control/size assignment between layouts
        vr[lr.idx_u] = vf[lf.idx_u]
        for name, i in lf.idx_theta.items():
            vr[lr.idx_theta[name]] = vf[i]
        assert red.objective(vr) == pytest.approx(full.objective(vf), rel=1e-12)


class TestDefectConsistency:
    def test_simulated_trajectory_zeroes_defects(self):
        setup = make_setup(n_fine=72)
        nlp = transcribe.build_full_nlp(setup)
        lay = nlp.meta["layout"]
        rng = np.random.default_rng(3)
        v = transcribe.initial_guess(setup, nlp)
        s_s = 0.7
        v[lay.idx_theta["storage"]] = s_s
        p_hp = rng.uniform(0.0, 2e5, 72)
        v[lay.idx_u[:, 0]] = p_hp
        cop = model.cop(setup.data.t_amb_c, setup.heat_pump)
        co = dyn_coeffs(setup.geometry, setup.ground, setup.thermal, s_s)
        x0 = np.concatenate([[45.0, 40.0, 35.0, 30.0], [13.5, 13.5]])
        traj = sim.simulate_thermal(x0, cop * p_hp, setup.data.q_load_w,
                                    setup.data.t_amb_c, setup.grid.fine_step_s,
                                    co, setup.heat_pump.sink_temp_c)
        v[lay.idx_xs] = traj.thermal
        c = nlp.constraints(v)
        r0 = nlp.meta["row0"]["defect"]
        defects = c[r0:r0 + 72 * 6] / transcribe.TEMP_SCALE
        assert np.max(np.abs(defects)) <= 1e-8


def _dense_jac(nlp, v):
    return nlp.jacobian_matrix(v).toarray()


class TestDerivatives:
    @pytest.mark.parametrize("variant,averaged", [
        ("full", False), ("full", True), ("no-wind", False), ("no-wind", True),
        ("no-ptes", False), ("only-hp", False)])
    def test_jacobian_matches_directional_differences(self, variant, averaged):
        setup = make_setup(n_fine=48, variant=variant)
        nlp = (transcribe.build_averaged_nlp(setup) if averaged
               else transcribe.build_full_nlp(setup))
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(6):
            v = random_point(nlp, rng)
            jac = nlp.jacobian_matrix(v)
            for _ in range(4):
                d = rng.standard_normal(nlp.n) * nlp.var_scale * 1e-7
                cp = nlp.constraints(v + d)
                cm = nlp.constraints(v - d)
                fd = (cp - cm) / 2.0
                jd = jac @ d
                scale = np.max(np.abs(fd) / nlp.con_scale) + 1e-14
                err = np.max(np.abs(jd - fd) / nlp.con_scale) / scale
                worst = max(worst, err)
        assert worst <= 1e-6

    def test_hessian_matches_jacobian_differences(self):
        for variant, averaged in [("full", False), ("full", True)]:
            setup = make_setup(n_fine=48, variant=variant)
            nlp = (transcribe.build_averaged_nlp(setup) if averaged
                   else transcribe.build_full_nlp(setup))
            rng = np.random.default_rng(7)
            for _ in range(4):
                v = random_point(nlp, rng)
                lam = rng.standard_normal(nlp.m) / nlp.con_scale
                hmat = nlp.hessian_matrix(v, lam)
                hfull = hmat + hmat.T - __import__("scipy.sparse", fromlist=["s"]).diags(
                    hmat.diagonal())
                d = rng.standard_normal(nlp.n) * nlp.var_scale * 1e-6
                jp = nlp.jacobian_matrix(v + d)
                jm = nlp.jacobian_matrix(v - d)
                fd = (jp.T @ lam - jm.T @ lam) / 2.0
                hd = hfull @ d
                scale = np.max(np.abs(fd) * nlp.var_scale) + 1e-12
                err = np.max(np.abs(hd - fd) * nlp.var_scale) / scale
                assert err <= 5e-6

    def test_pattern_has_no_spurious_zeros(self):
        for averaged in (False, True):
            setup = make_setup(n_fine=48)
            nlp = (transcribe.build_averaged_nlp(setup) if averaged
                   else transcribe.build_full_nlp(setup))
            rng = np.random.default_rng(13)
            jmax = np.zeros(nlp.jac_rows.size)
            hmax = np.zeros(nlp.hess_rows.size)
            for _ in range(10):
                v = random_point(nlp, rng)
                jmax = np.maximum(jmax, np.abs(nlp.jacobian(v)))
                lam = rng.standard_normal(nlp.m)
                hmax = np.maximum(hmax, np.abs(nlp.hessian(v, lam)))
            assert np.all(jmax > 0.0), "jacobian pattern contains dead entries"
            assert np.all(hmax > 0.0), "hessian pattern contains dead entries"


class TestAveraging:
    def test_constant_day_is_exact(self):
        # constant ambient and controls over each day: averaged delivered heat
        # equals cop * p exactly
        grid = GridSpec(n_fine=96)
        t_amb = np.repeat([5.0, 9.0, -3.0, 14.0], 24)
        q_load = np.repeat([1e6, 2e6, 3e6, 0.5e6], 24)
        hp = HeatPumpParams()
        avg = transcribe.average_inputs(q_load, t_amb, hp, grid)
        p = np.repeat([1e5, 2e5, 0.0, 3e5], 24)
        qbar = avg.qbar_hp(p)
        expect = model.cop(np.array([5.0, 9.0, -3.0, 14.0]), hp) * np.array(
            [1e5, 2e5, 0.0, 3e5])
        np.testing.assert_allclose(qbar, expect, rtol=1e-12)
        np.testing.assert_allclose(avg.qbar_load_w, [1e6, 2e6, 3e6, 0.5e6], rtol=1e-12)

    def test_one_hot_load_mean(self):
        grid = GridSpec(n_fine=24)
        q = np.zeros(24)
        q[-1] = 24e6
        avg = transcribe.average_inputs(q, np.full(24, 10.0), HeatPumpParams(), grid)
        assert avg.qbar_load_w[0] == pytest.approx(1e6)

    def test_piecewise_constant_quadrature_oracle(self):
        # day mean of cop(t)*p(t) under piecewise-constant inputs equals the
        # weighted sum with fixed per-hour coefficients
        rng = np.random.default_rng(4)
        grid = GridSpec(n_fine=24)
        t_amb = rng.uniform(-10.0, 25.0, 24)
        p = rng.uniform(0.0, 5e6, 24)
        hp = HeatPumpParams()
        avg = transcribe.average_inputs(np.zeros(24), t_amb, hp, grid)
        oracle = np.mean([model.cop(t_amb[i], hp) * p[i] for i in range(24)])
        assert avg.qbar_hp(p)[0] == pytest.approx(oracle, rel=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(9)
        grid = GridSpec(n_fine=48)
        t_amb = rng.uniform(-5.0, 20.0, 48)
        hp = HeatPumpParams()
        avg = transcribe.average_inputs(np.zeros(48), t_amb, hp, grid)
        p1, p2 = rng.uniform(0, 1e6, 48), rng.uniform(0, 1e6, 48)
        a, b = 2.5, -1.25
        np.testing.assert_allclose(avg.qbar_hp(a * p1 + b * p2),
                                   a * avg.qbar_hp(p1) + b * avg.qbar_hp(p2),
                                   rtol=1e-12)

    def test_constant_inputs_collapse_to_original_dynamics(self):
        # with inputs constant over each day, the averaged step equals the
        # full-resolution step of the same dynamics to machine precision
        setup = make_setup(n_fine=48)
        co = dyn_coeffs(setup.geometry, setup.ground, setup.thermal, 1.0)
        hp = setup.heat_pump
        t_amb = np.repeat([8.0, 12.0], 24)
        q_load = np.repeat([2e6, 1e6], 24)
        p_hp = np.repeat([5e5, 2e5], 24)
        grid = setup.grid
        avg = transcribe.average_inputs(q_load, t_amb, hp, grid)
        qbar = avg.qbar_hp(p_hp)
        x = np.array([60.0, 55.0, 50.0, 45.0, 14.0, 13.5])
        f_avg = model.storage_rhs(x, qbar[0], avg.qbar_load_w[0], avg.tbar_amb_c[0],
                                  co, hp.sink_temp_c)
        f_fine = model.storage_rhs(x, model.cop(8.0, hp) * 5e5, 2e6, 8.0, co,
                                   hp.sink_temp_c)
        np.testing.assert_allclose(f_avg, f_fine, rtol=1e-12, atol=1e-18)


class TestScalingMeta:
    def test_summary_fields(self):
        nlp = transcribe.build_full_nlp(make_setup())
        s = nlp.summary()
        assert s["variables_total"] == nlp.n
        assert s["equality_rows"] + s["inequality_rows"] == nlp.m
        assert s["scaling"]["temperature"] == 100.0

    def test_name_map(self):
        nlp = transcribe.build_full_nlp(make_setup())
        lay = nlp.meta["layout"]
        assert nlp.name_of(lay.idx_theta["storage"]) == "scale[storage]"
        assert nlp.name_of(int(lay.idx_xs[0, 0])) == "x_s[0,0]"
        assert nlp.name_of(int(lay.idx_u[0, 0])) == "u[0,p_hp]"
        assert nlp.name_of(int(lay.idx_xb[3])) == "x_b[3]"
